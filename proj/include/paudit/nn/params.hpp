//
// Copyright 2026 The paudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "paudit/common.hpp"

namespace paudit::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NamedArray {
  std::string name;
  Matrix value;
};

// Ordered collection of named dense arrays. Models refer to their arrays by
// slot index; a gradient buffer is a ParamSet with the same layout.
class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    for (const auto& a : arrays_)
      if (a.name == name) throw Error("duplicate parameter " + name);
    arrays_.push_back({std::move(name), Matrix::Zero(rows, cols)});
    return arrays_.size() - 1;
  }

  Matrix& operator[](std::size_t slot) { return arrays_[slot].value; }
  const Matrix& operator[](std::size_t slot) const { return arrays_[slot].value; }

  std::size_t size() const { return arrays_.size(); }
  const std::string& name(std::size_t slot) const { return arrays_[slot].name; }
  std::vector<NamedArray>& arrays() { return arrays_; }
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < arrays_.size(); ++i)
      if (arrays_[i].name == name) return i;
    throw Error("no parameter named " + name);
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& a : arrays_) out.arrays_.push_back({a.name, Matrix::Zero(a.value.rows(), a.value.cols())});
    return out;
  }

  void set_zero() {
    for (auto& a : arrays_) a.value.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += static_cast<std::size_t>(a.value.size());
    return n;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& a : arrays_) s += a.value.squaredNorm();
    return s;
  }

  bool all_finite() const {
    for (const auto& a : arrays_)
      if (!a.value.allFinite()) return false;
    return true;
  }

  // Rescales so the global L2 norm is at most `max_norm`. Returns the norm
  // before clipping.
  double clip_global_norm(double max_norm) {
    const double norm = std::sqrt(squared_norm());
    if (norm > max_norm && norm > 0) {
      const double scale = max_norm / norm;
      for (auto& a : arrays_) a.value *= scale;
    }
    return norm;
  }

  void add_scaled(const ParamSet& other, double scale) {
    check_layout(other);
    for (std::size_t i = 0; i < arrays_.size(); ++i) arrays_[i].value += scale * other.arrays_[i].value;
  }

  void check_layout(const ParamSet& other) const {
    if (other.arrays_.size() != arrays_.size()) throw Error("parameter layout mismatch");
    for (std::size_t i = 0; i < arrays_.size(); ++i)
      if (other.arrays_[i].value.rows() != arrays_[i].value.rows() ||
          other.arrays_[i].value.cols() != arrays_[i].value.cols())
        throw Error("parameter shape mismatch for " + arrays_[i].name);
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.arrays_.size() != b.arrays_.size()) return false;
    for (std::size_t i = 0; i < a.arrays_.size(); ++i) {
      if (a.arrays_[i].name != b.arrays_[i].name) return false;
      if (a.arrays_[i].value.rows() != b.arrays_[i].value.rows() ||
          a.arrays_[i].value.cols() != b.arrays_[i].value.cols())
        return false;
      if (a.arrays_[i].value != b.arrays_[i].value) return false;
    }
    return true;
  }

 private:
  std::vector<NamedArray> arrays_;
};

inline void fill_uniform(Matrix& m, double scale, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-scale, scale);
}

}  // namespace paudit::nn
