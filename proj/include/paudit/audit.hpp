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

// User-level membership auditing.
//
// A user's data is turned into a feature vector by querying a model with
// (a sample of) the user's sequences, collecting the 0-indexed ranks of the
// ground-truth tokens, and histogramming them into d bins of width
// ceil(|V|/d), plus a count of targets missing from truncated outputs.
// Shadow models trained on random halves of the auditor's reference users
// provide labeled features; a linear SVM over those is the audit model.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/blackbox.hpp"
#include "paudit/corpus.hpp"
#include "paudit/parallel.hpp"
#include "paudit/svm.hpp"
#include "paudit/textgen.hpp"
#include "paudit/train.hpp"

namespace paudit {

struct RankSet {
  std::vector<std::size_t> ranks;
  std::size_t out_of_list = 0;

  std::size_t total() const { return ranks.size() + out_of_list; }
};

// Queries `handle` once per example. Targets absent from a truncated
// position list are counted in `out_of_list`.
inline RankSet collect_ranks(TargetHandle& handle, std::span<const Example> data) {
  RankSet rs;
  const bool lm = handle.task() == Task::next_word;
  for (const auto& ex : data) {
    QueryResult r = lm ? handle.query(lm_sequence(ex)) : handle.query(ex.x, ex.y);
    if (r.positions.size() != ex.y.size()) throw QueryError("query returned the wrong number of positions");
    for (std::size_t j = 0; j < ex.y.size(); ++j) {
      const auto& list = r.positions[j];
      auto it = std::find(list.begin(), list.end(), ex.y[j]);
      if (it == list.end()) {
        ++rs.out_of_list;
      } else {
        rs.ranks.push_back(static_cast<std::size_t>(it - list.begin()));
      }
    }
  }
  return rs;
}

struct FeatureVector {
  std::vector<double> bins;
  double out_of_list = 0;
  std::size_t bin_width = 1;

  std::size_t d() const { return bins.size(); }

  // [bin_0, ..., bin_{d-1}, out_of_list]
  std::vector<double> row() const {
    std::vector<double> r(bins);
    r.push_back(out_of_list);
    return r;
  }
};

// Bin i counts ranks in [i*b, (i+1)*b), b = ceil(vocab_size / d). With
// `normalize` the counts become fractions of all targets queried.
inline FeatureVector histogram_feature(const RankSet& rs, std::size_t d, std::size_t vocab_size,
                                       bool normalize = false) {
  if (d < 1) throw Error("histogram needs d >= 1");
  if (vocab_size < 1) throw Error("histogram needs a non-empty vocabulary");
  FeatureVector f;
  f.bin_width = (vocab_size + d - 1) / d;
  f.bins.assign(d, 0.0);
  for (std::size_t r : rs.ranks) {
    if (r >= vocab_size) throw Error("rank exceeds vocabulary size");
    f.bins[r / f.bin_width] += 1.0;
  }
  f.out_of_list = static_cast<double>(rs.out_of_list);
  if (normalize && rs.total() > 0) {
    const double total = static_cast<double>(rs.total());
    for (auto& b : f.bins) b /= total;
    f.out_of_list /= total;
  }
  return f;
}

enum class QueryStrategy { random, frequency };

inline QueryStrategy parse_strategy(const std::string& s) {
  if (s == "random") return QueryStrategy::random;
  if (s == "frequency") return QueryStrategy::frequency;
  throw Error("unknown query strategy '" + s + "'");
}

inline std::string to_string(QueryStrategy s) { return s == QueryStrategy::random ? "random" : "frequency"; }

// Token counts over the labels (y) of `data`, indexed by token id.
inline std::vector<std::uint64_t> frequency_table(std::span<const UserDataset> data, std::size_t vocab_size) {
  std::vector<std::uint64_t> freq(vocab_size, 0);
  for (const auto& u : data)
    for (const auto& ex : u.examples)
      for (TokenId t : ex.y)
        if (t >= 0 && static_cast<std::size_t>(t) < vocab_size) ++freq[static_cast<std::size_t>(t)];
  return freq;
}

// Picks at most m examples (all when m is unset or m >= |data|). The
// frequency strategy takes the m smallest label-frequency sums, earliest
// index first on ties; tokens outside `freq` count as 0.
inline std::vector<Example> sample_queries(std::span<const Example> data, std::optional<std::size_t> m,
                                           QueryStrategy strategy, std::span<const std::uint64_t> freq,
                                           std::uint64_t seed) {
  if (m && *m < 1) throw Error("sample_queries needs m >= 1");
  if (!m || *m >= data.size()) return std::vector<Example>(data.begin(), data.end());
  auto order = iota_indices(data.size());
  if (strategy == QueryStrategy::frequency) {
    std::vector<std::uint64_t> cost(data.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i)
      for (TokenId t : data[i].y)
        if (t >= 0 && static_cast<std::size_t>(t) < freq.size()) cost[i] += freq[static_cast<std::size_t>(t)];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost[a] < cost[b]; });
  } else {
    Rng rng(derive_seed(seed, "sample_queries"));
    rng.shuffle(order);
  }
  std::vector<Example> out;
  for (std::size_t i = 0; i < *m; ++i) out.push_back(data[order[i]]);
  return out;
}

struct ShadowSpec {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::size_t> members;  // indices into the reference users
};

struct ShadowPlan {
  std::vector<ShadowSpec> shadows;

  std::size_t k() const { return shadows.size(); }

  // Each shadow independently takes a random half of the reference users as
  // its training members.
  static ShadowPlan random_halves(std::size_t n_ref_users, std::size_t k, const ModelConfig& model,
                                  const TrainConfig& train, std::uint64_t seed) {
    if (n_ref_users < 2) throw Error("shadow training needs at least two reference users");
    if (k < 1) throw Error("need at least one shadow model");
    ShadowPlan plan;
    for (std::size_t i = 0; i < k; ++i) {
      ShadowSpec s{model, train, {}};
      s.model.seed = derive_seed(seed, "shadow_model", i);
      s.train.seed = derive_seed(seed, "shadow_train", i);
      auto order = iota_indices(n_ref_users);
      Rng rng(derive_seed(seed, "shadow_split", i));
      rng.shuffle(order);
      s.members.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_ref_users / 2));
      std::sort(s.members.begin(), s.members.end());
      plan.shadows.push_back(std::move(s));
    }
    return plan;
  }

  nlohmann::json split_manifest(std::size_t i, std::span<const UserDataset> ref) const {
    std::vector<std::string> members, others;
    const auto& s = shadows.at(i);
    for (std::size_t u = 0; u < ref.size(); ++u)
      (std::binary_search(s.members.begin(), s.members.end(), u) ? members : others).push_back(ref[u].user_id);
    return {{"shadow", i}, {"members", members}, {"non_members", others}, {"model", s.model}, {"train", s.train}};
  }
};

struct AuditParams {
  std::size_t d = 100;
  std::optional<std::size_t> m;  // unset = every example
  QueryStrategy strategy = QueryStrategy::frequency;
  std::size_t output_k = 0;      // 0 = whole vocabulary
  bool normalize = false;
  SvmParams svm;
  std::uint64_t seed = 1;
};

struct AuditModel {
  LinearModel classifier;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t vocab_size = 0;
  std::size_t output_k = 0;
  std::optional<std::size_t> m;
  QueryStrategy strategy = QueryStrategy::frequency;
  bool normalize = false;

  double score(const FeatureVector& f) const {
    if (f.d() != d) throw Error("feature dimension mismatch");
    return classifier.score(f.row());
  }

  nlohmann::json to_json() const {
    return {{"format", "paudit-audit-model/1"},
            {"d", d},
            {"layout", "bins[0..d), out_of_list"},
            {"weights", classifier.weights},
            {"bias", classifier.bias},
            {"provenance",
             {{"shadows", k},
              {"vocab_size", vocab_size},
              {"output_k", output_k},
              {"m", m ? nlohmann::json(*m) : nlohmann::json(nullptr)},
              {"strategy", to_string(strategy)},
              {"normalize", normalize}}}};
  }

  static AuditModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "paudit-audit-model/1") throw Error("not a paudit-audit-model/1 document");
    AuditModel a;
    a.d = j.at("d").get<std::size_t>();
    a.classifier.weights = j.at("weights").get<std::vector<double>>();
    a.classifier.bias = j.at("bias").get<double>();
    if (a.classifier.weights.size() != a.d + 1) throw Error("audit model weights do not match d + 1");
    const auto& p = j.at("provenance");
    a.k = p.at("shadows").get<std::size_t>();
    a.vocab_size = p.at("vocab_size").get<std::size_t>();
    a.output_k = p.at("output_k").get<std::size_t>();
    if (!p.at("m").is_null()) a.m = p.at("m").get<std::size_t>();
    a.strategy = parse_strategy(p.at("strategy").get<std::string>());
    a.normalize = p.at("normalize").get<bool>();
    return a;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << to_json().dump(2) << '\n';
  }

  static AuditModel load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read audit model " + path);
    return from_json(nlohmann::json::parse(is));
  }
};

// Features of one user's data against one model (shadow or target).
inline FeatureVector user_feature(TargetHandle& handle, const UserDataset& user, const AuditParams& params,
                                  std::span<const std::uint64_t> freq) {
  auto queries = sample_queries(user.examples, params.m, params.strategy, freq,
                                derive_seed(params.seed, "user_queries:" + user.user_id));
  return histogram_feature(collect_ranks(handle, queries), params.d, handle.vocab_size(), params.normalize);
}

struct LabeledFeature {
  std::string user_id;
  std::size_t shadow = 0;
  int label = 0;
  FeatureVector feature;
};

// TSV rows: user_id, label, bin_0..bin_{d-1}, out_of_list.
inline void write_feature_dump(std::ostream& os, std::span<const LabeledFeature> rows) {
  if (rows.empty()) return;
  os << "user_id\tlabel";
  for (std::size_t i = 0; i < rows.front().feature.d(); ++i) os << "\tbin_" << i;
  os << "\tout_of_list\n";
  for (const auto& r : rows) {
    os << r.user_id << '\t' << r.label;
    for (double b : r.feature.bins) os << '\t' << b;
    os << '\t' << r.feature.out_of_list << '\n';
  }
}

using ShadowTrainer = std::function<std::shared_ptr<const TextModel>(
    std::size_t index, const ShadowSpec& spec, std::span<const UserDataset> members)>;

inline ShadowTrainer default_shadow_trainer() {
  return [](std::size_t, const ShadowSpec& spec, std::span<const UserDataset> members) {
    return std::make_shared<const TextModel>(train_model(spec.model, spec.train, members));
  };
}

struct AuditTraining {
  AuditModel model;
  std::vector<LabeledFeature> dataset;
};

// Trains every shadow, labels every reference user under every shadow (1 iff
// the user was in that shadow's training half), and fits the audit SVM on
// the pooled k * |ref| rows.
inline AuditTraining train_audit_model(std::span<const UserDataset> ref, const ShadowPlan& plan,
                                       const AuditParams& params, std::span<const std::uint64_t> freq,
                                       const ShadowTrainer& trainer = default_shadow_trainer()) {
  if (plan.k() == 0) throw Error("shadow plan is empty");
  if (ref.size() < 2) throw Error("need at least two reference users");
  std::vector<std::vector<LabeledFeature>> per_shadow(plan.k());
  std::vector<std::size_t> vocab(plan.k(), 0);
  parallel_for(plan.k(), [&](std::size_t i) {
    const auto& spec = plan.shadows[i];
    std::vector<int> label(ref.size(), 0);
    std::vector<UserDataset> members;
    for (std::size_t u : spec.members) {
      if (u >= ref.size()) throw Error("shadow " + std::to_string(i) + ": member index out of range");
      label[u] = 1;
      members.push_back(ref[u]);
    }
    std::shared_ptr<const TextModel> shadow;
    try {
      shadow = trainer(i, spec, members);
    } catch (const std::exception& e) {
      throw Error("shadow " + std::to_string(i) + " failed: " + e.what());
    }
    auto handle = TargetHandle::local(shadow, params.output_k);
    vocab[i] = handle.vocab_size();
    for (std::size_t u = 0; u < ref.size(); ++u)
      per_shadow[i].push_back({ref[u].user_id, i, label[u], user_feature(handle, ref[u], params, freq)});
  });

  AuditTraining out;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (auto& shadow_rows : per_shadow)
    for (auto& r : shadow_rows) {
      rows.push_back(r.feature.row());
      labels.push_back(r.label);
      out.dataset.push_back(std::move(r));
    }
  out.model.classifier = fit_linear_svm(rows, labels, params.svm);
  out.model.d = params.d;
  out.model.k = plan.k();
  out.model.vocab_size = vocab.front();
  out.model.output_k = params.output_k;
  out.model.m = params.m;
  out.model.strategy = params.strategy;
  out.model.normalize = params.normalize;
  return out;
}

struct AuditDecision {
  bool member = false;
  double score = 0;
  FeatureVector feature;
};

// Samples the user's queries, ranks them against the target, and classifies
// the histogram. `score` is the signed distance-like SVM output.
inline AuditDecision audit_membership(const AuditModel& model, TargetHandle& target, const UserDataset& user,
                                      const AuditParams& params, std::span<const std::uint64_t> freq) {
  if (params.d != model.d) throw Error("feature dimension mismatch: audit model has d=" + std::to_string(model.d));
  AuditDecision out;
  out.feature = user_feature(target, user, params, freq);
  out.score = model.score(out.feature);
  out.member = out.score >= 0.0;
  return out;
}

}  // namespace paudit
