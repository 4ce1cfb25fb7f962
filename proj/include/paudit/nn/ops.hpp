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

#include <algorithm>
#include <cmath>
#include <vector>

#include "paudit/nn/params.hpp"

namespace paudit::nn {

// Numerically stable softmax (max subtracted before exponentiation).
inline Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

// Column-wise softmax in place.
inline void softmax_columns(Matrix& logits) {
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    auto col = logits.col(j);
    const double mx = col.maxCoeff();
    col = (col.array() - mx).exp().matrix();
    col /= col.sum();
  }
}

// Inverted dropout. Writes the applied multiplier (0 or 1/(1-rate)) into
// `mask` when given, so the backward pass can reuse it.
inline Vector dropout(const Vector& v, double rate, Rng& rng, bool training,
                      Vector* mask = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    if (mask) *mask = Vector::Ones(v.size());
    return v;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Vector m(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) m(i) = rng.uniform() < rate ? 0.0 : keep_scale;
  Vector out = v.cwiseProduct(m);
  if (mask) *mask = std::move(m);
  return out;
}

inline Vector dropout(const Vector& v, double rate, std::uint64_t seed, bool training) {
  Rng rng(seed);
  return dropout(v, rate, rng, training);
}

struct AttentionResult {
  Vector context;
  Vector weights;
};

// Dot-product attention of one query over the columns of `keys`; keys double
// as values.
inline AttentionResult attention(const Vector& query, const Matrix& keys) {
  if (keys.cols() == 0) throw Error("attention over an empty encoder sequence");
  if (keys.rows() != query.size()) throw Error("attention width mismatch");
  AttentionResult r;
  r.weights = softmax(keys.transpose() * query);
  r.context = keys * r.weights;
  return r;
}

struct AttentionGrad {
  Vector dquery;
  Matrix dkeys;
};

inline AttentionGrad attention_backward(const Vector& query, const Matrix& keys,
                                        const AttentionResult& fwd, const Vector& dcontext) {
  AttentionGrad g;
  Vector dweights = keys.transpose() * dcontext;
  const double mean = fwd.weights.dot(dweights);
  Vector dscores = fwd.weights.cwiseProduct((dweights.array() - mean).matrix());
  g.dkeys = dcontext * fwd.weights.transpose();
  g.dkeys.noalias() += query * dscores.transpose();
  g.dquery = keys * dscores;
  return g;
}

// A fixed set of hidden units to zero out.
struct AblationMask {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  Eigen::Index hidden = 0;
  std::vector<Eigen::Index> units;

  static AblationMask sample(Eigen::Index hidden, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("ablation fraction must be in [0, 1]");
    AblationMask m{fraction, seed, hidden, {}};
    auto order = iota_indices(static_cast<std::size_t>(hidden));
    Rng rng(derive_seed(seed, "ablation"));
    rng.shuffle(order);
    const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(hidden)));
    for (std::size_t i = 0; i < count; ++i) m.units.push_back(static_cast<Eigen::Index>(order[i]));
    std::sort(m.units.begin(), m.units.end());
    return m;
  }

  bool empty() const { return units.empty(); }
};

}  // namespace paudit::nn
