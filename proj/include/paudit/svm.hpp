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

// Linear SVM trained by stochastic subgradient descent on the L2-regularized
// hinge loss
//
//   lambda/2 |w|^2 + 1/n sum_i max(0, 1 - y_i (w . z_i + b)),  lambda = 1/(C n)
//
// with step size lr / (1 + lambda lr t). Features are standardized
// internally and the affine map is folded back into (w, b), so callers score
// raw features.

#pragma once

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/common.hpp"

namespace paudit {

struct SvmParams {
  double C = 1.0;
  int epochs = 200;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const SvmParams& p) {
  j = nlohmann::json{{"C", p.C}, {"epochs", p.epochs}, {"learning_rate", p.learning_rate}, {"seed", p.seed}};
}

struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;

  double score(std::span<const double> x) const {
    if (x.size() != weights.size()) throw Error("feature dimension mismatch");
    double s = bias;
    for (std::size_t j = 0; j < x.size(); ++j) s += weights[j] * x[j];
    return s;
  }

  bool decide(std::span<const double> x) const { return score(x) >= 0.0; }
};

// `labels` are 0/1.
inline LinearModel fit_linear_svm(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels, const SvmParams& params) {
  const std::size_t n = features.size();
  if (n == 0 || labels.size() != n) throw Error("fit_linear_svm: features/labels mismatch");
  if (!(params.C > 0) || params.epochs < 1 || !(params.learning_rate > 0))
    throw Error("fit_linear_svm: invalid hyper-parameters");
  bool has_pos = false, has_neg = false;
  for (int l : labels) (l ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw Error("fit_linear_svm: training data has a single class");
  const std::size_t dim = features.front().size();
  for (const auto& f : features)
    if (f.size() != dim) throw Error("fit_linear_svm: ragged feature rows");

  std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
  for (const auto& f : features)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += f[j];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto& f : features)
    for (std::size_t j = 0; j < dim; ++j) scale[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
  for (auto& s : scale) {
    s = std::sqrt(s / static_cast<double>(n));
    s = s > 0 ? 1.0 / s : 0.0;  // constant features carry no signal
  }
  std::vector<std::vector<double>> z(n, std::vector<double>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) z[i][j] = (features[i][j] - mean[j]) * scale[j];

  const double lambda = 1.0 / (params.C * static_cast<double>(n));
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  double t = 0.0;
  for (int epoch = 1; epoch <= params.epochs; ++epoch) {
    auto order = iota_indices(n);
    Rng rng(derive_seed(params.seed, "svm_epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t i : order) {
      const double eta = params.learning_rate / (1.0 + lambda * params.learning_rate * t);
      const double y = labels[i] ? 1.0 : -1.0;
      double margin = b;
      for (std::size_t j = 0; j < dim; ++j) margin += w[j] * z[i][j];
      margin *= y;
      const double shrink = 1.0 - eta * lambda;
      for (auto& wj : w) wj *= shrink;
      if (margin < 1.0) {
        for (std::size_t j = 0; j < dim; ++j) w[j] += eta * y * z[i][j];
        b += eta * y;
      }
      t += 1.0;
    }
  }

  LinearModel out;
  out.weights.resize(dim);
  out.bias = b;
  for (std::size_t j = 0; j < dim; ++j) {
    out.weights[j] = w[j] * scale[j];
    out.bias -= out.weights[j] * mean[j];
  }
  return out;
}

}  // namespace paudit
