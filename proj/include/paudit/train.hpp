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
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/textgen.hpp"

namespace paudit {

enum class OptimizerKind { adam, momentum_sgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "momentum_sgd") return OptimizerKind::momentum_sgd;
  throw Error("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "momentum_sgd"; }

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 35;
  int epochs = 30;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0)) throw Error("learning_rate must be > 0");
    if (epochs < 1) throw Error("epochs must be >= 1");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (!(clip_norm > 0)) throw Error("clip_norm must be > 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"optimizer", to_string(c.optimizer)},
                     {"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"clip_norm", c.clip_norm},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"seed", c.seed}};
}

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(nn::ParamSet& params, const nn::ParamSet& grads) = 0;
};

class Adam : public Optimizer {
 public:
  Adam(const nn::ParamSet& like, double lr, double beta1, double beta2, double eps)
      : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(nn::ParamSet& params, const nn::ParamSet& grads) override {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = grads[i].array();
      m_[i] = (b1_ * m_[i].array() + (1.0 - b1_) * g).matrix();
      v_[i] = (b2_ * v_[i].array() + (1.0 - b2_) * g.square()).matrix();
      params[i].array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  nn::ParamSet m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

// Heavy-ball momentum: v <- mu*v - lr*g; p <- p + v.
class MomentumSgd : public Optimizer {
 public:
  MomentumSgd(const nn::ParamSet& like, double lr, double momentum)
      : velocity_(like.zeros_like()), lr_(lr), mu_(momentum) {}

  void step(nn::ParamSet& params, const nn::ParamSet& grads) override {
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i] = mu_ * velocity_[i] - lr_ * grads[i];
      params[i] += velocity_[i];
    }
  }

 private:
  nn::ParamSet velocity_;
  double lr_, mu_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, const nn::ParamSet& like) {
  if (cfg.optimizer == OptimizerKind::adam)
    return std::make_unique<Adam>(like, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  return std::make_unique<MomentumSgd>(like, cfg.learning_rate, cfg.momentum);
}

struct EpochMetrics {
  int epoch = 0;
  double loss = 0;  // mean per-token NLL
  double accuracy = 0;
  std::optional<double> validation_accuracy;
};

// epoch<TAB>loss<TAB>accuracy[<TAB>validation_accuracy]
inline std::string format_metrics_line(const EpochMetrics& m) {
  char buf[128];
  int n = std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f", m.epoch, m.loss, m.accuracy);
  std::string s(buf, static_cast<std::size_t>(n));
  if (m.validation_accuracy) {
    n = std::snprintf(buf, sizeof(buf), "\t%.6f", *m.validation_accuracy);
    s.append(buf, static_cast<std::size_t>(n));
  }
  return s;
}

struct EvalReport {
  double accuracy = 0;
  double perplexity = 1;
  std::size_t token_count = 0;
};

// Anything with `Matrix distributions(const Example&) const` can be evaluated.
template <class Model>
double evaluate_accuracy(const Model& model, std::span<const UserDataset> data) {
  std::size_t hits = 0, total = 0;
  for (const auto& user : data) {
    for (const auto& ex : user.examples) {
      const Matrix probs = model.distributions(ex);
      for (std::size_t j = 0; j < ex.y.size(); ++j) {
        Eigen::Index best;
        probs.col(static_cast<Eigen::Index>(j)).maxCoeff(&best);
        hits += (best == ex.y[j]);
      }
      total += ex.y.size();
    }
  }
  if (total == 0) throw Error("evaluate_accuracy: no targets");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// 2 ** (mean negative log2-probability of the targets).
template <class Model>
double evaluate_perplexity(const Model& model, std::span<const UserDataset> data) {
  double sum_log2 = 0.0;
  std::size_t total = 0;
  for (const auto& user : data) {
    for (const auto& ex : user.examples) {
      const Matrix probs = model.distributions(ex);
      for (std::size_t j = 0; j < ex.y.size(); ++j)
        sum_log2 += std::log2(std::max(probs(ex.y[j], static_cast<Eigen::Index>(j)), kProbFloor));
      total += ex.y.size();
    }
  }
  if (total == 0) throw Error("evaluate_perplexity: no targets");
  return std::exp2(-sum_log2 / static_cast<double>(total));
}

template <class Model>
EvalReport evaluate(const Model& model, std::span<const UserDataset> data) {
  EvalReport r;
  r.accuracy = evaluate_accuracy(model, data);
  r.perplexity = evaluate_perplexity(model, data);
  for (const auto& u : data) r.token_count += u.target_count();
  return r;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Mini-batch training with per-epoch shuffling. Each batch's gradient is the
// token-averaged NLL gradient, clipped to `clip_norm` in global L2 norm.
inline TextModel train_model(const ModelConfig& model_config, const TrainConfig& train_config,
                             std::span<const UserDataset> data,
                             const EpochCallback& on_epoch = {},
                             std::span<const UserDataset> validation = {}) {
  train_config.validate();
  std::vector<const Example*> examples;
  for (const auto& u : data)
    for (const auto& ex : u.examples) examples.push_back(&ex);
  if (examples.empty()) throw Error("train_model: empty training data");

  TextModel model(model_config);
  nn::ParamSet grads = model.params().zeros_like();
  auto optimizer = make_optimizer(train_config, model.params());
  const auto batch = static_cast<std::size_t>(train_config.batch_size);

  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    auto order = iota_indices(examples.size());
    Rng shuffle_rng(derive_seed(train_config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    Rng dropout_rng(derive_seed(train_config.seed, "dropout", static_cast<std::uint64_t>(epoch)));

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0, epoch_hits = 0;
    Matrix probs;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      grads.set_zero();
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < end; ++i) {
        const Example& ex = *examples[order[i]];
        epoch_loss += model.loss_and_gradient(ex, grads, &dropout_rng, &probs);
        for (std::size_t j = 0; j < ex.y.size(); ++j) {
          Eigen::Index best;
          probs.col(static_cast<Eigen::Index>(j)).maxCoeff(&best);
          epoch_hits += (best == ex.y[j]);
        }
        batch_tokens += ex.y.size();
      }
      epoch_tokens += batch_tokens;
      for (auto& a : grads.arrays()) a.value /= static_cast<double>(batch_tokens);
      grads.clip_global_norm(train_config.clip_norm);
      if (!grads.all_finite() || !std::isfinite(epoch_loss))
        throw Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      optimizer->step(model.params(), grads);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = epoch_loss / static_cast<double>(epoch_tokens);
    m.accuracy = static_cast<double>(epoch_hits) / static_cast<double>(epoch_tokens);
    if (!std::isfinite(m.loss) || !model.params().all_finite())
      throw Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    if (!validation.empty()) m.validation_accuracy = evaluate_accuracy(model, validation);
    if (on_epoch) on_epoch(m);
  }
  return model;
}

}  // namespace paudit
