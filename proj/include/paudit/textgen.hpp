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

// Text-generation models: a next-word language model and encoder-decoder
// models with and without dot-product attention, all with a single
// recurrent layer and a softmax classifier over the vocabulary.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/corpus.hpp"
#include "paudit/nn/cells.hpp"
#include "paudit/nn/ops.hpp"
#include "paudit/nn/params.hpp"

namespace paudit {

using nn::Matrix;
using nn::Vector;

enum class Task { next_word, seq2seq_attn, seq2seq_plain };

inline Task parse_task(const std::string& s) {
  if (s == "next_word") return Task::next_word;
  if (s == "seq2seq_attn") return Task::seq2seq_attn;
  if (s == "seq2seq_plain") return Task::seq2seq_plain;
  throw Error("unknown task '" + s + "'");
}

inline std::string to_string(Task t) {
  switch (t) {
    case Task::next_word: return "next_word";
    case Task::seq2seq_attn: return "seq2seq_attn";
    case Task::seq2seq_plain: return "seq2seq_plain";
  }
  return "?";
}

inline bool is_seq2seq(Task t) { return t != Task::next_word; }

struct ModelConfig {
  Task task = Task::next_word;
  nn::CellType cell = nn::CellType::lstm;
  int emb_dim = 128;
  int hidden_dim = 128;
  double dropout_rate = 0.5;
  int vocab_size = 0;
  double init_scale = 0.08;
  std::uint64_t seed = 1;

  void validate() const {
    if (emb_dim < 1 || hidden_dim < 1) throw Error("model dims must be >= 1");
    if (vocab_size < 1) throw Error("vocab_size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout_rate must be in [0, 1)");
    if (!(init_scale > 0.0)) throw Error("init_scale must be > 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"task", to_string(c.task)},         {"cell", nn::to_string(c.cell)},
                     {"emb_dim", c.emb_dim},              {"hidden_dim", c.hidden_dim},
                     {"dropout_rate", c.dropout_rate},    {"vocab_size", c.vocab_size},
                     {"init_scale", c.init_scale},        {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.task = parse_task(j.at("task").get<std::string>());
  c.cell = nn::parse_cell(j.at("cell").get<std::string>());
  c.emb_dim = j.at("emb_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.init_scale = j.value("init_scale", 0.08);
  c.seed = j.at("seed").get<std::uint64_t>();
}

// Ranking of a distribution: descending probability, ascending id on ties.
inline bool ranks_before(const Vector& probs, Eigen::Index a, Eigen::Index b) {
  return probs(a) > probs(b) || (probs(a) == probs(b) && a < b);
}

// 0-indexed rank of `token` (0 = likeliest).
inline std::size_t rank_of(const Vector& probs, TokenId token) {
  if (token < 0 || token >= probs.size()) throw Error("token id out of range");
  const double p = probs(token);
  std::size_t rank = 0;
  for (Eigen::Index j = 0; j < probs.size(); ++j)
    if (probs(j) > p || (probs(j) == p && j < token)) ++rank;
  return rank;
}

// The first k tokens of the full ranking.
inline TokenSeq truncate_topk(const Vector& probs, std::size_t k) {
  const auto n = static_cast<std::size_t>(probs.size());
  if (k < 1 || k > n) throw Error("top-k size must be in [1, |V|]");
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto cmp = [&](Eigen::Index a, Eigen::Index b) { return ranks_before(probs, a, b); };
  if (k == n) {
    std::sort(idx.begin(), idx.end(), cmp);
  } else {
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
  }
  return TokenSeq(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
}

inline constexpr double kProbFloor = 1e-12;

// Summed negative log-likelihood (natural log) of `targets`, one column of
// `distributions` per target.
inline double nll_loss(const Matrix& distributions, std::span<const TokenId> targets) {
  if (static_cast<std::size_t>(distributions.cols()) != targets.size())
    throw Error("nll_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t j = 0; j < targets.size(); ++j)
    loss -= std::log(std::max(distributions(targets[j], static_cast<Eigen::Index>(j)), kProbFloor));
  return loss;
}

class TextModel {
 public:
  explicit TextModel(ModelConfig config) : config_(config) {
    config_.validate();
    const Eigen::Index v = config_.vocab_size, e = config_.emb_dim, h = config_.hidden_dim;
    if (config_.task == Task::next_word) {
      slots_.emb = params_.add("emb", v, e);
      slots_.rnn = nn::add_cell(params_, "rnn", config_.cell, e, h);
    } else {
      slots_.enc_emb = params_.add("enc.emb", v, e);
      slots_.enc = nn::add_cell(params_, "enc", config_.cell, e, h);
      slots_.emb = params_.add("dec.emb", v, e);
      slots_.start = params_.add("dec.start", e, 1);
      slots_.rnn = nn::add_cell(params_, "dec", config_.cell, e, h);
      if (config_.task == Task::seq2seq_attn) {
        slots_.attn_w = params_.add("attn.w", h, 2 * h);
        slots_.attn_b = params_.add("attn.b", h, 1);
      }
    }
    slots_.out_w = params_.add("out.w", h, v);
    slots_.out_b = params_.add("out.b", v, 1);

    // Weights uniform in [-scale, scale]; biases start at zero.
    Rng rng(derive_seed(config_.seed, "init"));
    for (auto& a : params_.arrays()) {
      const bool bias = a.name.size() >= 2 && a.name.compare(a.name.size() - 2, 2, ".b") == 0;
      if (!bias) nn::fill_uniform(a.value, config_.init_scale, rng);
    }
  }

  TextModel(ModelConfig config, nn::ParamSet params) : TextModel(config) {
    params_.check_layout(params);
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params.name(i) != params_.name(i)) throw Error("parameter name mismatch: " + params.name(i));
    params_ = std::move(params);
  }

  const ModelConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(config_.vocab_size); }

  // Predicted distributions, one column per target of `ex` (teacher forced).
  // `mask` ablates units of every recurrent hidden state.
  Matrix distributions(const Example& ex, const nn::AblationMask* mask = nullptr) const {
    return run(ex, nullptr, mask).probs;
  }

  // Column j is the distribution over seq[j+1] given seq[0..j].
  Matrix forward_lm(std::span<const TokenId> seq) const {
    if (config_.task != Task::next_word) throw Error("forward_lm on a sequence-to-sequence model");
    if (seq.size() < 2) throw Error("forward_lm needs at least two tokens");
    Example ex{TokenSeq(seq.begin(), seq.end() - 1), TokenSeq(seq.begin() + 1, seq.end())};
    return distributions(ex);
  }

  // Teacher-forced decoder distributions, one column per target position.
  Matrix forward_seq2seq(std::span<const TokenId> x, std::span<const TokenId> y,
                         std::vector<Vector>* attention_weights = nullptr) const {
    if (!is_seq2seq(config_.task)) throw Error("forward_seq2seq on a language model");
    Example ex{TokenSeq(x.begin(), x.end()), TokenSeq(y.begin(), y.end())};
    Pass pass = run(ex, nullptr, nullptr);
    if (attention_weights) {
      attention_weights->clear();
      for (const auto& a : pass.attn) attention_weights->push_back(a.weights);
    }
    return pass.probs;
  }

  // The classifier inputs (one column per target), before dropout.
  Matrix hidden_states(const Example& ex, const nn::AblationMask* mask = nullptr) const {
    return run(ex, nullptr, mask).features;
  }

  // Summed NLL of `ex`; accumulates its gradient into `grads`. Dropout is
  // active when `dropout_rng` is given. `probs_out` receives the forward
  // distributions.
  double loss_and_gradient(const Example& ex, nn::ParamSet& grads, Rng* dropout_rng,
                           Matrix* probs_out = nullptr) const {
    Pass pass = run(ex, dropout_rng, nullptr);
    const double loss = nll_loss(pass.probs, ex.y);
    backward(ex, pass, grads);
    if (probs_out) *probs_out = std::move(pass.probs);
    return loss;
  }

 private:
  struct Slots {
    std::size_t emb = 0, enc_emb = 0, start = 0, out_w = 0, out_b = 0, attn_w = 0, attn_b = 0;
    nn::CellSlots rnn, enc;
  };

  struct Pass {
    std::vector<nn::StepCache> enc;
    Matrix enc_h;  // hidden x source_len
    std::vector<nn::StepCache> dec;
    std::vector<nn::AttentionResult> attn;
    Matrix features;       // hidden x target_len, before dropout
    Matrix classifier_in;  // what the output layer actually saw
    Matrix drop_mask;
    Matrix probs;
  };

  void check_tokens(std::span<const TokenId> seq) const {
    for (TokenId t : seq)
      if (t < 0 || t >= config_.vocab_size) throw Error("token id out of range");
  }

  // An ablated unit is removed from the recurrence: its output and, for
  // LSTMs, its memory cell are zeroed after every step.
  static void ablate(nn::CellState& state, const nn::AblationMask& mask) {
    for (auto u : mask.units) {
      if (u >= state.h.size()) throw Error("ablation unit out of range");
      state.h(u) = 0.0;
      if (state.c.size() > 0) state.c(u) = 0.0;
    }
  }

  Vector embed(std::size_t slot, TokenId t) const { return params_[slot].row(t).transpose(); }

  Pass run(const Example& ex, Rng* dropout_rng, const nn::AblationMask* mask) const {
    check_tokens(ex.x);
    check_tokens(ex.y);
    if (ex.y.empty()) throw Error("example has no targets");
    const Eigen::Index h = config_.hidden_dim;
    const auto steps = static_cast<Eigen::Index>(ex.y.size());
    Pass pass;
    pass.features.resize(h, steps);

    if (config_.task == Task::next_word) {
      if (ex.x.size() != ex.y.size()) throw Error("language-model example needs |x| == |y|");
      auto state = nn::CellState::zeros(config_.cell, h);
      for (Eigen::Index t = 0; t < steps; ++t) {
        pass.dec.push_back(nn::cell_step(config_.cell, params_, slots_.rnn, embed(slots_.emb, ex.x[static_cast<std::size_t>(t)]), state));
        state = pass.dec.back().next;
        if (mask) ablate(state, *mask);
        pass.features.col(t) = state.h;
      }
    } else {
      if (ex.x.empty()) throw Error("sequence-to-sequence example needs a source");
      auto state = nn::CellState::zeros(config_.cell, h);
      pass.enc_h.resize(h, static_cast<Eigen::Index>(ex.x.size()));
      for (std::size_t i = 0; i < ex.x.size(); ++i) {
        pass.enc.push_back(nn::cell_step(config_.cell, params_, slots_.enc, embed(slots_.enc_emb, ex.x[i]), state));
        state = pass.enc.back().next;
        if (mask) ablate(state, *mask);
        pass.enc_h.col(static_cast<Eigen::Index>(i)) = state.h;
      }
      for (Eigen::Index t = 0; t < steps; ++t) {
        Vector in = t == 0 ? Vector(params_[slots_.start].col(0))
                           : embed(slots_.emb, ex.y[static_cast<std::size_t>(t - 1)]);
        pass.dec.push_back(nn::cell_step(config_.cell, params_, slots_.rnn, in, state));
        state = pass.dec.back().next;
        if (mask) ablate(state, *mask);
        if (config_.task == Task::seq2seq_attn) {
          pass.attn.push_back(nn::attention(state.h, pass.enc_h));
          Vector joint(2 * h);
          joint << state.h, pass.attn.back().context;
          pass.features.col(t) =
              (params_[slots_.attn_w] * joint + params_[slots_.attn_b].col(0)).array().tanh().matrix();
        } else {
          pass.features.col(t) = state.h;
        }
      }
    }

    Matrix feats = pass.features;
    if (dropout_rng && config_.dropout_rate > 0) {
      pass.drop_mask.resize(h, steps);
      for (Eigen::Index t = 0; t < steps; ++t) {
        Vector m;
        feats.col(t) = nn::dropout(Vector(feats.col(t)), config_.dropout_rate, *dropout_rng, true, &m);
        pass.drop_mask.col(t) = m;
      }
    }
    pass.probs = params_[slots_.out_w].transpose() * feats;
    pass.probs.colwise() += params_[slots_.out_b].col(0);
    nn::softmax_columns(pass.probs);
    pass.classifier_in = std::move(feats);
    return pass;
  }

  void backward(const Example& ex, const Pass& pass, nn::ParamSet& g) const {
    const Eigen::Index h = config_.hidden_dim;
    const auto steps = static_cast<Eigen::Index>(ex.y.size());
    Matrix dlogits = pass.probs;
    for (Eigen::Index t = 0; t < steps; ++t) dlogits(ex.y[static_cast<std::size_t>(t)], t) -= 1.0;
    g[slots_.out_w].noalias() += pass.classifier_in * dlogits.transpose();
    g[slots_.out_b].col(0) += dlogits.rowwise().sum();
    Matrix dfeat = params_[slots_.out_w] * dlogits;
    if (pass.drop_mask.size() > 0) dfeat = dfeat.cwiseProduct(pass.drop_mask);

    const bool lstm = config_.cell == nn::CellType::lstm;
    Vector dh_next = Vector::Zero(h);
    Vector dc_next = lstm ? Vector::Zero(h) : Vector();

    if (config_.task == Task::next_word) {
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        Vector dh = dfeat.col(t) + dh_next;
        auto sg = nn::cell_step_backward(config_.cell, params_, g, slots_.rnn, pass.dec[static_cast<std::size_t>(t)], dh, dc_next);
        g[slots_.emb].row(ex.x[static_cast<std::size_t>(t)]) += sg.dx.transpose();
        dh_next = std::move(sg.dh_prev);
        dc_next = std::move(sg.dc_prev);
      }
      return;
    }

    Matrix denc = Matrix::Zero(h, static_cast<Eigen::Index>(ex.x.size()));
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
      const auto& step = pass.dec[static_cast<std::size_t>(t)];
      Vector dh = dh_next;
      if (config_.task == Task::seq2seq_attn) {
        const auto& att = pass.attn[static_cast<std::size_t>(t)];
        Vector pre_grad = dfeat.col(t).cwiseProduct((1.0 - pass.features.col(t).array().square()).matrix());
        Vector joint(2 * h);
        joint << step.next.h, att.context;
        g[slots_.attn_w].noalias() += pre_grad * joint.transpose();
        g[slots_.attn_b].col(0) += pre_grad;
        Vector djoint = params_[slots_.attn_w].transpose() * pre_grad;
        dh += djoint.head(h);
        auto ag = nn::attention_backward(step.next.h, pass.enc_h, att, djoint.tail(h));
        dh += ag.dquery;
        denc += ag.dkeys;
      } else {
        dh += dfeat.col(t);
      }
      auto sg = nn::cell_step_backward(config_.cell, params_, g, slots_.rnn, step, dh, dc_next);
      if (t == 0) {
        g[slots_.start].col(0) += sg.dx;
      } else {
        g[slots_.emb].row(ex.y[static_cast<std::size_t>(t - 1)]) += sg.dx.transpose();
      }
      dh_next = std::move(sg.dh_prev);
      dc_next = std::move(sg.dc_prev);
    }
    // The decoder starts from the encoder's final state.
    for (Eigen::Index i = static_cast<Eigen::Index>(ex.x.size()) - 1; i >= 0; --i) {
      Vector dh = denc.col(i) + dh_next;
      auto sg = nn::cell_step_backward(config_.cell, params_, g, slots_.enc, pass.enc[static_cast<std::size_t>(i)], dh, dc_next);
      g[slots_.enc_emb].row(ex.x[static_cast<std::size_t>(i)]) += sg.dx.transpose();
      dh_next = std::move(sg.dh_prev);
      dc_next = std::move(sg.dc_prev);
    }
  }

  ModelConfig config_;
  nn::ParamSet params_;
  Slots slots_;
};

}  // namespace paudit
