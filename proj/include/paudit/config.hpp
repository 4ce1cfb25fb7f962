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

// The experiment config document read by the command-line tool. Every object
// is checked against its known keys before any work starts; missing keys take
// the defaults below and unknown keys are errors.
//
//   {
//     "seed": 1, "out_dir": "runs/demo",
//     "corpus":    {"path": null, "synthetic": {...}},
//     "reference": {"path": null, "synthetic": {...}}, "cross_domain": false,
//     "vocab_size": 5000, "max_len": 30,
//     "split":  {"n_train": 20, "n_test": 20, "n_shadow": 40},
//     "target": {"model": {...}, "train": {...}},
//     "shadow": {"k": 10, "model": {...}, "train": {...},
//                "hyperparam_mismatch": false, "mismatch": {...}},
//     "audit":  {"d": 100, "m": null, "strategy": "frequency", "output_k": 0,
//                "normalize": false, "budget": null, "svm": {...}},
//     "noise_fraction": 0.0,
//     "serve":  {"bind": "127.0.0.1:7878", "per_client_budget": null},
//     "sweep":  {"axis": "n_queries", "values": [1, 8], "repetitions": 5},
//     "analysis": {"band_fraction": 0.2, "n_bins": 40, "bucket_size": 100,
//                  "ablation_fractions": [0.0, 0.1, 0.3, 0.5],
//                  "head_fraction": 0.1, "mask_seeds": 5}
//   }
//
// "shadow.model" and "shadow.train" start from the target's values.

#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/blackbox.hpp"
#include "paudit/eval.hpp"

namespace paudit {

class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

// Reads known keys from one object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path(key) + ": wrong type");
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  // Nested object, or nullptr when absent.
  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path(it.key()) + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class Fn>
void with_enum(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline void read_synthetic(const nlohmann::json& j, const std::string& where, SyntheticConfig& c) {
  ObjectReader r(j, where);
  std::string task = to_string(c.task);
  r.get("task", task);
  with_enum(r.path("task"), [&] { c.task = parse_synthetic_task(task); });
  r.get("n_users", c.n_users);
  r.get("sentences_per_user", c.sentences_per_user);
  r.get("lexicon_size", c.lexicon_size);
  r.get("zipf_exponent", c.zipf_exponent);
  r.get("min_len", c.min_len);
  r.get("max_len", c.max_len);
  r.get("signatures_per_user", c.signatures_per_user);
  r.get("templates_per_user", c.templates_per_user);
  r.get("template_len", c.template_len);
  r.get("template_signatures", c.template_signatures);
  r.get("template_rate", c.template_rate);
  r.get("signature_rate", c.signature_rate);
  r.get("rank_shuffle", c.rank_shuffle);
  r.get("successor_rate", c.successor_rate);
  r.get("user_prefix", c.user_prefix);
  r.get("signature_prefix", c.signature_prefix);
  r.finish();
  with_enum(where, [&] { c.validate(); });
}

inline void read_source(const nlohmann::json& j, const std::string& where, CorpusSource& c) {
  ObjectReader r(j, where);
  r.get_optional("path", c.path);
  if (auto* s = r.child("synthetic")) read_synthetic(*s, r.path("synthetic"), c.synthetic);
  r.finish();
}

// vocab_size and seed are derived, so they are not accepted here.
inline void read_model(const nlohmann::json& j, const std::string& where, ModelConfig& c) {
  ObjectReader r(j, where);
  std::string task = to_string(c.task), cell = nn::to_string(c.cell);
  r.get("task", task);
  r.get("cell", cell);
  with_enum(r.path("task"), [&] { c.task = parse_task(task); });
  with_enum(r.path("cell"), [&] { c.cell = nn::parse_cell(cell); });
  r.get("emb_dim", c.emb_dim);
  r.get("hidden_dim", c.hidden_dim);
  r.get("dropout_rate", c.dropout_rate);
  r.get("init_scale", c.init_scale);
  r.finish();
  if (c.emb_dim < 1 || c.hidden_dim < 1) throw ConfigError(where + ": dims must be >= 1");
  if (!(c.dropout_rate >= 0 && c.dropout_rate < 1)) throw ConfigError(where + ": dropout_rate must be in [0, 1)");
  if (!(c.init_scale > 0)) throw ConfigError(where + ": init_scale must be > 0");
}

inline void read_train(const nlohmann::json& j, const std::string& where, TrainConfig& c) {
  ObjectReader r(j, where);
  std::string opt = to_string(c.optimizer);
  r.get("optimizer", opt);
  with_enum(r.path("optimizer"), [&] { c.optimizer = parse_optimizer(opt); });
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("clip_norm", c.clip_norm);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("epsilon", c.epsilon);
  r.finish();
  with_enum(where, [&] { c.validate(); });
}

inline nlohmann::json model_json(const ModelConfig& c) {
  return {{"task", to_string(c.task)}, {"cell", nn::to_string(c.cell)}, {"emb_dim", c.emb_dim},
          {"hidden_dim", c.hidden_dim}, {"dropout_rate", c.dropout_rate}, {"init_scale", c.init_scale}};
}

inline nlohmann::json train_json(const TrainConfig& c) {
  nlohmann::json j = c;
  j.erase("seed");
  return j;
}

// The generator seed is derived from the run seed, so it is not configurable.
inline nlohmann::json synthetic_json(const SyntheticConfig& c) {
  nlohmann::json j = c;
  j.erase("seed");
  return j;
}

inline nlohmann::json source_json(const CorpusSource& c) {
  return {{"path", c.path ? nlohmann::json(*c.path) : nlohmann::json(nullptr)},
          {"synthetic", synthetic_json(c.synthetic)}};
}

}  // namespace detail

struct AnalysisConfig {
  double band_fraction = 0.2;
  std::size_t n_bins = 40;
  std::size_t bucket_size = 100;
  std::vector<double> ablation_fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  double head_fraction = 0.1;
  int mask_seeds = 5;
};

struct ServeConfig {
  std::string bind = "127.0.0.1:7878";
  std::optional<std::size_t> per_client_budget;
};

struct SweepConfig {
  std::string axis = "n_queries";
  std::vector<nlohmann::json> values{1, 2, 4, 8, 16, 32};
  int repetitions = 5;
};

struct RunConfig {
  std::string out_dir = "runs/default";
  ExperimentConfig experiment;
  std::optional<std::size_t> audit_budget;
  ServeConfig serve;
  SweepConfig sweep;
  AnalysisConfig analysis;
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  RunConfig c;
  auto& e = c.experiment;
  ObjectReader r(j, "");
  r.get("seed", e.seed);
  r.get("out_dir", c.out_dir);
  if (auto* s = r.child("corpus")) detail::read_source(*s, "corpus", e.corpus);
  if (auto* s = r.child("reference")) detail::read_source(*s, "reference", e.reference);
  r.get("cross_domain", e.cross_domain);
  r.get("vocab_size", e.vocab_size);
  r.get("max_len", e.max_len);
  r.get("noise_fraction", e.noise_fraction);
  if (e.vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (e.max_len < 2) throw ConfigError("max_len must be >= 2");
  if (!(e.noise_fraction >= 0 && e.noise_fraction < 1)) throw ConfigError("noise_fraction must be in [0, 1)");

  if (auto* s = r.child("split")) {
    ObjectReader sr(*s, "split");
    sr.get("n_train", e.n_train);
    sr.get("n_test", e.n_test);
    sr.get("n_shadow", e.n_shadow);
    sr.finish();
    if (e.n_train < 1 || e.n_test < 1 || e.n_shadow < 2) throw ConfigError("split: need n_train, n_test >= 1 and n_shadow >= 2");
  }

  if (auto* s = r.child("target")) {
    ObjectReader tr(*s, "target");
    if (auto* m = tr.child("model")) detail::read_model(*m, "target.model", e.target_model);
    if (auto* t = tr.child("train")) detail::read_train(*t, "target.train", e.target_train);
    tr.finish();
  }
  e.shadow_model = e.target_model;
  e.shadow_train = e.target_train;
  if (auto* s = r.child("shadow")) {
    ObjectReader sr(*s, "shadow");
    sr.get("k", e.k);
    if (auto* m = sr.child("model")) detail::read_model(*m, "shadow.model", e.shadow_model);
    if (auto* t = sr.child("train")) detail::read_train(*t, "shadow.train", e.shadow_train);
    sr.get("hyperparam_mismatch", e.hyperparam_mismatch);
    if (auto* m = sr.child("mismatch")) {
      ObjectReader mr(*m, "shadow.mismatch");
      std::string cell = nn::to_string(e.mismatch.cell);
      mr.get("cell", cell);
      detail::with_enum("shadow.mismatch.cell", [&] { e.mismatch.cell = nn::parse_cell(cell); });
      mr.get("hidden_start", e.mismatch.hidden_start);
      mr.get("hidden_step", e.mismatch.hidden_step);
      mr.get("cycle", e.mismatch.cycle);
      mr.get("learning_rate", e.mismatch.learning_rate);
      mr.get("momentum", e.mismatch.momentum);
      mr.finish();
      if (e.mismatch.hidden_start < 1 || e.mismatch.hidden_step < 0 || e.mismatch.cycle < 1)
        throw ConfigError("shadow.mismatch: bad hidden size recipe");
    }
    sr.finish();
    if (e.k < 1) throw ConfigError("shadow.k must be >= 1");
  }
  if (e.shadow_model.task != e.target_model.task)
    throw ConfigError("shadow.model.task must match target.model.task");

  if (auto* s = r.child("audit")) {
    ObjectReader ar(*s, "audit");
    auto& a = e.audit;
    ar.get("d", a.d);
    ar.get_optional("m", a.m);
    std::string strategy = to_string(a.strategy);
    ar.get("strategy", strategy);
    detail::with_enum("audit.strategy", [&] { a.strategy = parse_strategy(strategy); });
    ar.get("output_k", a.output_k);
    ar.get("normalize", a.normalize);
    ar.get_optional("budget", c.audit_budget);
    if (auto* v = ar.child("svm")) {
      ObjectReader vr(*v, "audit.svm");
      vr.get("C", a.svm.C);
      vr.get("epochs", a.svm.epochs);
      vr.get("learning_rate", a.svm.learning_rate);
      vr.finish();
    }
    ar.finish();
    if (a.d < 1) throw ConfigError("audit.d must be >= 1");
    if (a.m && *a.m < 1) throw ConfigError("audit.m must be >= 1 or null");
    if (!(a.svm.C > 0) || a.svm.epochs < 1 || !(a.svm.learning_rate > 0))
      throw ConfigError("audit.svm: C, epochs and learning_rate must be positive");
  }

  if (auto* s = r.child("serve")) {
    ObjectReader sr(*s, "serve");
    sr.get("bind", c.serve.bind);
    sr.get_optional("per_client_budget", c.serve.per_client_budget);
    sr.finish();
    detail::with_enum("serve.bind", [&] { Endpoint::parse(c.serve.bind); });
  }

  if (auto* s = r.child("sweep")) {
    ObjectReader sr(*s, "sweep");
    sr.get("axis", c.sweep.axis);
    sr.get("values", c.sweep.values);
    sr.get("repetitions", c.sweep.repetitions);
    sr.finish();
    detail::with_enum("sweep.axis", [&] { parse_axis(c.sweep.axis); });
    if (c.sweep.values.empty()) throw ConfigError("sweep.values must be non-empty");
    if (c.sweep.repetitions < 1) throw ConfigError("sweep.repetitions must be >= 1");
  }

  if (auto* s = r.child("analysis")) {
    ObjectReader nr(*s, "analysis");
    auto& a = c.analysis;
    nr.get("band_fraction", a.band_fraction);
    nr.get("n_bins", a.n_bins);
    nr.get("bucket_size", a.bucket_size);
    nr.get("ablation_fractions", a.ablation_fractions);
    nr.get("head_fraction", a.head_fraction);
    nr.get("mask_seeds", a.mask_seeds);
    nr.finish();
    for (double f : {a.band_fraction, a.head_fraction})
      if (!(f > 0 && f < 1)) throw ConfigError("analysis: band fractions must be in (0, 1)");
    for (double f : a.ablation_fractions)
      if (!(f >= 0 && f <= 1)) throw ConfigError("analysis.ablation_fractions must be in [0, 1]");
    if (a.n_bins < 1 || a.bucket_size < 1 || a.mask_seeds < 1)
      throw ConfigError("analysis: n_bins, bucket_size and mask_seeds must be >= 1");
  }
  r.finish();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

// The effective config in the input schema; parse_run_config(run_config_json(c))
// reproduces `c`.
inline nlohmann::json run_config_json(const RunConfig& c) {
  const auto& e = c.experiment;
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {
      {"seed", e.seed},
      {"out_dir", c.out_dir},
      {"corpus", detail::source_json(e.corpus)},
      {"reference", detail::source_json(e.reference)},
      {"cross_domain", e.cross_domain},
      {"vocab_size", e.vocab_size},
      {"max_len", e.max_len},
      {"noise_fraction", e.noise_fraction},
      {"split", {{"n_train", e.n_train}, {"n_test", e.n_test}, {"n_shadow", e.n_shadow}}},
      {"target", {{"model", detail::model_json(e.target_model)}, {"train", detail::train_json(e.target_train)}}},
      {"shadow",
       {{"k", e.k},
        {"model", detail::model_json(e.shadow_model)},
        {"train", detail::train_json(e.shadow_train)},
        {"hyperparam_mismatch", e.hyperparam_mismatch},
        {"mismatch", e.mismatch}}},
      {"audit",
       {{"d", e.audit.d},
        {"m", opt(e.audit.m)},
        {"strategy", to_string(e.audit.strategy)},
        {"output_k", e.audit.output_k},
        {"normalize", e.audit.normalize},
        {"budget", opt(c.audit_budget)},
        {"svm", {{"C", e.audit.svm.C}, {"epochs", e.audit.svm.epochs}, {"learning_rate", e.audit.svm.learning_rate}}}}},
      {"serve", {{"bind", c.serve.bind}, {"per_client_budget", opt(c.serve.per_client_budget)}}},
      {"sweep", {{"axis", c.sweep.axis}, {"values", c.sweep.values}, {"repetitions", c.sweep.repetitions}}},
      {"analysis",
       {{"band_fraction", c.analysis.band_fraction},
        {"n_bins", c.analysis.n_bins},
        {"bucket_size", c.analysis.bucket_size},
        {"ablation_fractions", c.analysis.ablation_fractions},
        {"head_fraction", c.analysis.head_fraction},
        {"mask_seeds", c.analysis.mask_seeds}}}};
}

inline SweepSpec sweep_spec(const RunConfig& c) {
  SweepSpec s;
  s.axis = parse_axis(c.sweep.axis);
  s.values = c.sweep.values;
  s.repetitions = c.sweep.repetitions;
  s.base = c.experiment;
  return s;
}

}  // namespace paudit
