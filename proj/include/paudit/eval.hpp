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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/audit.hpp"
#include "paudit/corpus.hpp"
#include "paudit/synthetic.hpp"
#include "paudit/train.hpp"

namespace paudit {

// ---------------------------------------------------------------------------
// Metrics

struct OutcomeRow {
  std::string user_id;
  bool label = false;     // true member
  bool decision = false;  // audited as member
  double score = 0.0;
};

using AuditOutcome = std::vector<OutcomeRow>;

struct ClassificationMetrics {
  double precision = 0;
  double recall = 0;
  double accuracy = 0;
  bool precision_defined = true;  // false when nothing was called a member
};

inline ClassificationMetrics classification_metrics(std::span<const OutcomeRow> outcomes) {
  if (outcomes.empty()) throw Error("classification_metrics: no outcomes");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& o : outcomes) {
    if (o.decision) (o.label ? tp : fp)++;
    else (o.label ? fn : tn)++;
  }
  ClassificationMetrics m;
  m.precision_defined = tp + fp > 0;
  m.precision = m.precision_defined ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(outcomes.size());
  return m;
}

// P(score of a random member > score of a random non-member), ties 1/2.
// Computed from mid-ranks, which is the same count as all-pairs comparison.
inline double auc(std::span<const OutcomeRow> outcomes) {
  std::size_t pos = 0;
  for (const auto& o : outcomes) pos += o.label;
  const std::size_t neg = outcomes.size() - pos;
  if (pos == 0 || neg == 0) throw Error("auc needs both members and non-members");
  auto order = iota_indices(outcomes.size());
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return outcomes[a].score < outcomes[b].score; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && outcomes[order[j]].score == outcomes[order[i]].score) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (outcomes[order[t]].label) rank_sum += mid;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// ---------------------------------------------------------------------------
// One experiment cell

// Shadows for the hyper-parameter mismatch setting: GRU cells, hidden sizes
// cycling hidden_start + hidden_step * (i mod cycle), momentum SGD.
struct MismatchRecipe {
  nn::CellType cell = nn::CellType::gru;
  int hidden_start = 64;
  int hidden_step = 32;
  int cycle = 10;
  double learning_rate = 0.01;
  double momentum = 0.9;

  void apply(std::size_t shadow_index, ModelConfig& model, TrainConfig& train) const {
    model.cell = cell;
    model.hidden_dim = hidden_start + hidden_step * static_cast<int>(shadow_index % static_cast<std::size_t>(cycle));
    model.emb_dim = model.hidden_dim;
    train.optimizer = OptimizerKind::momentum_sgd;
    train.learning_rate = learning_rate;
    train.momentum = momentum;
  }
};

inline void to_json(nlohmann::json& j, const MismatchRecipe& r) {
  j = nlohmann::json{{"cell", nn::to_string(r.cell)}, {"hidden_start", r.hidden_start},
                     {"hidden_step", r.hidden_step},  {"cycle", r.cycle},
                     {"learning_rate", r.learning_rate}, {"momentum", r.momentum}};
}

// A corpus file, or the synthetic generator when no path is given.
struct CorpusSource {
  std::optional<std::string> path;
  SyntheticConfig synthetic;
};

inline void to_json(nlohmann::json& j, const CorpusSource& c) {
  j = nlohmann::json{{"path", c.path ? nlohmann::json(*c.path) : nlohmann::json(nullptr)},
                     {"synthetic", c.synthetic}};
}

inline void to_json(nlohmann::json& j, const AuditParams& p) {
  j = nlohmann::json{{"d", p.d},
                     {"m", p.m ? nlohmann::json(*p.m) : nlohmann::json(nullptr)},
                     {"strategy", to_string(p.strategy)},
                     {"output_k", p.output_k},
                     {"normalize", p.normalize},
                     {"svm", p.svm},
                     {"seed", p.seed}};
}

inline CorpusSource default_reference_source() {
  CorpusSource ref;
  ref.synthetic.rank_shuffle = 0.5;
  ref.synthetic.user_prefix = "r";
  ref.synthetic.signature_prefix = "q";
  return ref;
}

struct ExperimentConfig {
  CorpusSource corpus;
  CorpusSource reference = default_reference_source();  // shadows' data when cross_domain
  bool cross_domain = false;
  std::size_t vocab_size = 5000;
  std::size_t max_len = 30;
  std::size_t n_train = 20;   // target members (audited as members)
  std::size_t n_test = 20;    // audited non-members
  std::size_t n_shadow = 40;  // auditor's reference users
  ModelConfig target_model;
  TrainConfig target_train;
  ModelConfig shadow_model;
  TrainConfig shadow_train;
  bool hyperparam_mismatch = false;
  MismatchRecipe mismatch;
  std::size_t k = 10;
  AuditParams audit;
  double noise_fraction = 0.0;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"corpus", c.corpus},
                     {"reference", c.reference},
                     {"cross_domain", c.cross_domain},
                     {"vocab_size", c.vocab_size},
                     {"max_len", c.max_len},
                     {"n_train", c.n_train},
                     {"n_test", c.n_test},
                     {"n_shadow", c.n_shadow},
                     {"target_model", c.target_model},
                     {"target_train", c.target_train},
                     {"shadow_model", c.shadow_model},
                     {"shadow_train", c.shadow_train},
                     {"hyperparam_mismatch", c.hyperparam_mismatch},
                     {"mismatch", c.mismatch},
                     {"k", c.k},
                     {"audit", c.audit},
                     {"noise_fraction", c.noise_fraction},
                     {"seed", c.seed}};
}

// FNV-1a over user ids and token ids; identifies training data in cache keys.
inline std::uint64_t fingerprint(std::span<const UserDataset> data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& u : data) {
    for (char ch : u.user_id) mix(static_cast<unsigned char>(ch));
    mix(u.examples.size());
    for (const auto& ex : u.examples) {
      mix(ex.x.size());
      for (TokenId t : ex.x) mix(static_cast<std::uint64_t>(t));
      mix(ex.y.size());
      for (TokenId t : ex.y) mix(static_cast<std::uint64_t>(t));
    }
  }
  return h;
}

// Trained models shared across cells and criteria. Concurrent requests for
// the same key train once; everyone else waits on the shared result.
class ModelCache {
 public:
  using ModelPtr = std::shared_ptr<const TextModel>;

  ModelPtr get_or_train(const std::string& key, const std::function<TextModel()>& train) {
    std::promise<ModelPtr> promise;
    std::shared_future<ModelPtr> future;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = entries_.find(key);
      if (it != entries_.end()) {
        ++hits_;
        future = it->second;
      } else {
        future = promise.get_future().share();
        entries_.emplace(key, future);
        owner = true;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const TextModel>(train()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return future.get();
  }

  static std::string key(const ModelConfig& m, const TrainConfig& t, std::span<const UserDataset> data) {
    nlohmann::json j{{"model", m}, {"train", t}, {"data", fingerprint(data)}};
    return j.dump();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
  }
  std::size_t hits() const {
    std::lock_guard<std::mutex> lock(mu_);
    return hits_;
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_future<ModelPtr>> entries_;
  std::size_t hits_ = 0;
};

inline std::vector<Record> load_source(const CorpusSource& src, std::uint64_t seed) {
  if (src.path) return read_corpus(*src.path);
  SyntheticConfig s = src.synthetic;
  s.seed = seed;
  return generate_synthetic(s);
}

// Everything derived from the config before any model is trained.
struct PreparedExperiment {
  Vocabulary vocab;
  CorpusSplit split{{}, {}, {}};
  std::vector<UserDataset> members;        // full data of target members
  std::vector<UserDataset> member_train;   // what the target trains on (after noise holdout)
  std::vector<UserDataset> non_members;
  std::vector<UserDataset> reference;      // auditor's shadow pool
  std::vector<std::uint64_t> freq;         // label-token counts over `reference`
  ModelConfig target_model;
  TrainConfig target_train;
  ShadowPlan plan;
  AuditParams audit;
};

inline PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  if (cfg.k < 1) throw Error("need at least one shadow model");
  PreparedExperiment p;
  const bool seq2seq = is_seq2seq(cfg.target_model.task);
  auto records = load_source(cfg.corpus, derive_seed(cfg.seed, "corpus"));
  auto users = group_by_user(std::move(records));
  p.vocab = build_vocabulary(users, cfg.vocab_size);
  auto encoded = encode_users(users, p.vocab, seq2seq, cfg.max_len);

  std::vector<std::string> ids;
  for (const auto& u : encoded) ids.push_back(u.user_id);
  const std::size_t own_shadow = cfg.cross_domain ? 0 : cfg.n_shadow;
  p.split = CorpusSplit::random(ids, cfg.n_train, cfg.n_test, own_shadow, derive_seed(cfg.seed, "split"));
  p.members = select_users(encoded, p.split.train());
  p.non_members = select_users(encoded, p.split.test());

  if (cfg.cross_domain) {
    auto ref_users = group_by_user(load_source(cfg.reference, derive_seed(cfg.seed, "reference_corpus")));
    auto ref_encoded = encode_users(ref_users, p.vocab, seq2seq, cfg.max_len);
    if (ref_encoded.size() < cfg.n_shadow)
      throw Error("reference corpus has " + std::to_string(ref_encoded.size()) + " users, need " +
                  std::to_string(cfg.n_shadow));
    auto order = iota_indices(ref_encoded.size());
    Rng rng(derive_seed(cfg.seed, "reference_pick"));
    rng.shuffle(order);
    for (std::size_t i = 0; i < cfg.n_shadow; ++i) p.reference.push_back(ref_encoded[order[i]]);
  } else {
    p.reference = select_users(encoded, p.split.shadow());
  }

  for (const auto& u : p.members) {
    if (cfg.noise_fraction > 0) {
      auto [clean, held] = noise_holdout(u, cfg.noise_fraction, derive_seed(cfg.seed, "noise"));
      if (clean.examples.empty()) throw Error("noise holdout left user " + u.user_id + " without data");
      p.member_train.push_back(std::move(clean));
    } else {
      p.member_train.push_back(u);
    }
  }

  const auto v = static_cast<int>(p.vocab.size());
  p.target_model = cfg.target_model;
  p.target_model.vocab_size = v;
  p.target_model.seed = derive_seed(cfg.seed, "target_model");
  p.target_train = cfg.target_train;
  p.target_train.seed = derive_seed(cfg.seed, "target_train");

  ModelConfig shadow_model = cfg.shadow_model;
  shadow_model.vocab_size = v;
  shadow_model.task = cfg.target_model.task;
  p.plan = ShadowPlan::random_halves(p.reference.size(), cfg.k, shadow_model, cfg.shadow_train,
                                     derive_seed(cfg.seed, "shadows"));
  if (cfg.hyperparam_mismatch)
    for (std::size_t i = 0; i < p.plan.k(); ++i) cfg.mismatch.apply(i, p.plan.shadows[i].model, p.plan.shadows[i].train);

  p.freq = frequency_table(p.reference, p.vocab.size());
  p.audit = cfg.audit;
  p.audit.seed = derive_seed(cfg.seed, "audit");
  return p;
}

inline ModelCache::ModelPtr train_target(const PreparedExperiment& p, ModelCache* cache = nullptr) {
  auto fn = [&] { return train_model(p.target_model, p.target_train, p.member_train); };
  if (!cache) return std::make_shared<const TextModel>(fn());
  return cache->get_or_train(ModelCache::key(p.target_model, p.target_train, p.member_train), fn);
}

inline ShadowTrainer cached_shadow_trainer(ModelCache* cache) {
  if (!cache) return default_shadow_trainer();
  return [cache](std::size_t, const ShadowSpec& spec, std::span<const UserDataset> members) {
    return cache->get_or_train(ModelCache::key(spec.model, spec.train, members),
                               [&] { return train_model(spec.model, spec.train, members); });
  };
}

struct ExperimentResult {
  AuditOutcome outcomes;
  ClassificationMetrics metrics;
  double auc = 0.5;
  std::size_t queries_used = 0;
};

// Audits every member and non-member of the target with the given audit model.
inline AuditOutcome audit_users(const AuditModel& model, TargetHandle& target, const PreparedExperiment& p) {
  AuditOutcome out;
  for (bool member : {true, false}) {
    for (const auto& u : member ? p.members : p.non_members) {
      const auto d = audit_membership(model, target, u, p.audit, p.freq);
      out.push_back({u.user_id, member, d.member, d.score});
    }
  }
  return out;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, ModelCache* cache = nullptr) {
  const auto p = prepare_experiment(cfg);
  auto target_model = train_target(p, cache);
  auto training = train_audit_model(p.reference, p.plan, p.audit, p.freq, cached_shadow_trainer(cache));
  auto target = TargetHandle::local(target_model, p.audit.output_k);
  ExperimentResult r;
  r.outcomes = audit_users(training.model, target, p);
  r.metrics = classification_metrics(r.outcomes);
  r.auc = auc(r.outcomes);
  r.queries_used = target.queries_used();
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { n_users, n_queries, output_k, noise_fraction, hyperparam_mismatch, cross_domain };

inline SweepAxis parse_axis(const std::string& s) {
  static const std::map<std::string, SweepAxis> names{{"n_users", SweepAxis::n_users},
                                                      {"n_queries", SweepAxis::n_queries},
                                                      {"output_k", SweepAxis::output_k},
                                                      {"noise_fraction", SweepAxis::noise_fraction},
                                                      {"hyperparam_mismatch", SweepAxis::hyperparam_mismatch},
                                                      {"cross_domain", SweepAxis::cross_domain}};
  auto it = names.find(s);
  if (it == names.end()) throw Error("unknown sweep axis '" + s + "'");
  return it->second;
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::n_users: return "n_users";
    case SweepAxis::n_queries: return "n_queries";
    case SweepAxis::output_k: return "output_k";
    case SweepAxis::noise_fraction: return "noise_fraction";
    case SweepAxis::hyperparam_mismatch: return "hyperparam_mismatch";
    case SweepAxis::cross_domain: return "cross_domain";
  }
  return "?";
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::n_queries;
  std::vector<nlohmann::json> values;  // numbers; output_k also accepts "full"
  int repetitions = 5;
  ExperimentConfig base;

  void validate() const {
    if (values.empty()) throw Error("sweep needs at least one value");
    if (repetitions < 1) throw Error("sweep repetitions must be >= 1");
  }
};

// n_users sets both the member and the non-member count, keeping the audit
// set balanced. output_k "full" (or 0) means the whole vocabulary.
inline ExperimentConfig apply_axis(ExperimentConfig cfg, SweepAxis axis, const nlohmann::json& value) {
  auto count = [&] {
    if (!value.is_number_integer() || value.get<long long>() < 0)
      throw Error(to_string(axis) + " values must be non-negative integers");
    return value.get<std::size_t>();
  };
  switch (axis) {
    case SweepAxis::n_users:
      cfg.n_train = cfg.n_test = count();
      break;
    case SweepAxis::n_queries:
      cfg.audit.m = count();
      break;
    case SweepAxis::output_k:
      cfg.audit.output_k = value.is_string() && value.get<std::string>() == "full" ? 0 : count();
      break;
    case SweepAxis::noise_fraction:
      if (!value.is_number()) throw Error("noise_fraction values must be numbers");
      cfg.noise_fraction = value.get<double>();
      break;
    case SweepAxis::hyperparam_mismatch:
      cfg.hyperparam_mismatch = value.is_boolean() ? value.get<bool>() : count() != 0;
      break;
    case SweepAxis::cross_domain:
      cfg.cross_domain = value.is_boolean() ? value.get<bool>() : count() != 0;
      break;
  }
  return cfg;
}

struct SweepRow {
  std::string axis_value;  // compact JSON of the value
  int repetition = 0;
  std::uint64_t seed = 0;
  std::optional<ClassificationMetrics> metrics;
  double auc = 0;
  std::string status = "ok";
};

inline constexpr const char* kSweepHeader =
    "axis,axis_value,repetition,seed,precision,precision_defined,recall,accuracy,auc,status";

namespace detail {
inline std::string csv_safe(std::string s) {
  for (auto& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace detail

inline std::string format_sweep_row(SweepAxis axis, const SweepRow& r) {
  char buf[256];
  std::string out = to_string(axis) + "," + detail::csv_safe(r.axis_value) + "," + std::to_string(r.repetition) +
                    "," + std::to_string(r.seed) + ",";
  if (r.metrics) {
    std::snprintf(buf, sizeof(buf), "%.6f,%d,%.6f,%.6f,%.6f,", r.metrics->precision,
                  r.metrics->precision_defined ? 1 : 0, r.metrics->recall, r.metrics->accuracy, r.auc);
    out += buf;
  } else {
    out += ",,,,,";
  }
  return out + detail::csv_safe(r.status);
}

inline std::optional<SweepRow> parse_sweep_row(const std::string& line) {
  auto f = detail::split_csv(line);
  if (f.size() != 10 || f[9] != "ok") return std::nullopt;
  try {
    SweepRow r;
    r.axis_value = f[1];
    r.repetition = std::stoi(f[2]);
    r.seed = std::stoull(f[3]);
    ClassificationMetrics m;
    m.precision = std::stod(f[4]);
    m.precision_defined = f[5] == "1";
    m.recall = std::stod(f[6]);
    m.accuracy = std::stod(f[7]);
    r.metrics = m;
    r.auc = std::stod(f[8]);
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline void write_sweep_csv(const std::string& path, SweepAxis axis, std::span<const SweepRow> rows) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp);
    os << kSweepHeader << '\n';
    for (const auto& r : rows) os << format_sweep_row(axis, r) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json sweep_manifest(const SweepSpec& spec) {
  nlohmann::json seeds = nlohmann::json::array();
  for (int rep = 0; rep < spec.repetitions; ++rep) seeds.push_back(spec.base.seed + static_cast<std::uint64_t>(rep));
  return {{"axis", to_string(spec.axis)},
          {"values", spec.values},
          {"repetitions", spec.repetitions},
          {"repetition_seeds", seeds},
          {"note", "repetitions over seeds base_seed + r are added here; reported numbers are per-repetition"},
          {"base", spec.base}};
}

struct SweepOptions {
  std::optional<std::string> csv_path;  // written after every finished cell; enables resume
  ModelCache* cache = nullptr;
  std::function<void(const SweepRow&)> on_row;
};

// Runs every (value, repetition) cell. Cell seeds are base.seed + repetition.
// Rows come back in axis order regardless of completion order; failures are
// recorded in `status` and the sweep moves on.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  spec.validate();
  struct Cell {
    std::size_t value_index;
    int repetition;
  };
  std::vector<Cell> cells;
  for (std::size_t v = 0; v < spec.values.size(); ++v)
    for (int rep = 0; rep < spec.repetitions; ++rep) cells.push_back({v, rep});

  std::vector<std::optional<SweepRow>> rows(cells.size());
  if (opts.csv_path && std::filesystem::exists(*opts.csv_path)) {
    std::ifstream is(*opts.csv_path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      auto r = parse_sweep_row(line);
      if (!r) continue;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& c = cells[i];
        if (detail::csv_safe(spec.values[c.value_index].dump()) == r->axis_value && c.repetition == r->repetition &&
            spec.base.seed + static_cast<std::uint64_t>(c.repetition) == r->seed)
          rows[i] = *r;
      }
    }
  }

  std::mutex mu;
  auto flush = [&] {
    if (!opts.csv_path) return;
    std::vector<SweepRow> done;
    for (const auto& r : rows)
      if (r) done.push_back(*r);
    write_sweep_csv(*opts.csv_path, spec.axis, done);
  };
  {
    std::lock_guard<std::mutex> lock(mu);
    flush();
  }

  parallel_for(cells.size(), [&](std::size_t i) {
    {
      std::lock_guard<std::mutex> lock(mu);
      if (rows[i]) return;
    }
    const auto& c = cells[i];
    SweepRow row;
    row.axis_value = spec.values[c.value_index].dump();
    row.repetition = c.repetition;
    row.seed = spec.base.seed + static_cast<std::uint64_t>(c.repetition);
    try {
      auto cfg = apply_axis(spec.base, spec.axis, spec.values[c.value_index]);
      cfg.seed = row.seed;
      auto res = run_experiment(cfg, opts.cache);
      row.metrics = res.metrics;
      row.auc = res.auc;
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    std::lock_guard<std::mutex> lock(mu);
    rows[i] = row;
    flush();
    if (opts.on_row) opts.on_row(row);
  });

  std::vector<SweepRow> out;
  for (auto& r : rows) out.push_back(std::move(*r));
  return out;
}

}  // namespace paudit
