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

// paudit: command-line front end.
//
//   paudit gen-synthetic --config run.json
//   paudit train-target  --config run.json
//   paudit train-shadows --config run.json
//   paudit serve         --config run.json [--bind 127.0.0.1:7878]
//   paudit audit         --config run.json [--remote host:port]
//   paudit sweep         --config run.json
//   paudit analyze       --config run.json
//   paudit plot-data     --config run.json [--input sweep.csv]
//
// Every command also takes --seed and --out-dir, which win over the config.
// Exit status: 0 success, 1 usage or config error, 2 runtime failure.

#include <array>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "paudit/analysis.hpp"
#include "paudit/checkpoint.hpp"
#include "paudit/config.hpp"

namespace fs = std::filesystem;
using namespace paudit;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string bind;
  std::string remote;
  std::string input;
};

class Workspace {
 public:
  explicit Workspace(RunConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.out_dir) {}

  const RunConfig& cfg() const { return cfg_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  fs::path dir(const std::string& rel) const {
    fs::path p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw Error("cannot create directory " + p.string() + ": " + ec.message());
    return p;
  }

  // The experiment as run from files: corpora default to the generated ones.
  ExperimentConfig experiment() const {
    ExperimentConfig e = cfg_.experiment;
    if (!e.corpus.path) e.corpus.path = require(path("corpus.jsonl"), "gen-synthetic");
    if (e.cross_domain && !e.reference.path) e.reference.path = require(path("reference.jsonl"), "gen-synthetic");
    return e;
  }

  static std::string require(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw Error("missing prerequisite " + p.string() + " (run '" + producer + "' first)");
    return p.string();
  }

  void write_manifest(const std::string& command, nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json j{{"command", command}, {"config", run_config_json(cfg_)}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_text(dir("manifests") / (command + ".json"), j.dump(2) + "\n");
  }

  static void write_text(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw Error("cannot write " + tmp.string());
      os << text;
      if (!os) throw Error("write failed: " + tmp.string());
    }
    fs::rename(tmp, p);
  }

 private:
  RunConfig cfg_;
  fs::path root_;
};

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void log(const std::string& msg) { std::cerr << "[paudit] " << msg << std::endl; }

// Loads a checkpoint and insists it was trained with `expected`.
std::shared_ptr<const TextModel> load_matching(const fs::path& p, const ModelConfig& expected,
                                               const std::string& producer) {
  auto model = std::make_shared<const TextModel>(load_checkpoint(Workspace::require(p, producer)));
  if (!(model->config() == expected))
    throw Error("checkpoint " + p.string() + " was trained with a different config; delete it and rerun '" +
                producer + "'");
  return model;
}

// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const Workspace& ws) {
  const auto& e = ws.cfg().experiment;
  ws.dir(".");
  nlohmann::json written = nlohmann::json::array();
  auto emit = [&](const CorpusSource& src, const std::string& name, const std::string& tag) {
    if (src.path) return;
    auto records = load_source(src, derive_seed(e.seed, tag));
    std::ostringstream os;
    write_corpus(os, records);
    Workspace::write_text(ws.path(name), os.str());
    written.push_back({{"file", name}, {"records", records.size()}});
    log("wrote " + ws.path(name).string() + " (" + std::to_string(records.size()) + " records)");
  };
  emit(e.corpus, "corpus.jsonl", "corpus");
  if (e.cross_domain) emit(e.reference, "reference.jsonl", "reference_corpus");
  if (written.empty()) log("all corpora come from files; nothing to generate");
  ws.write_manifest("gen-synthetic", {{"files", written}});
  return 0;
}

int cmd_train_target(const Workspace& ws) {
  const auto p = prepare_experiment(ws.experiment());
  ws.dir("target");
  {
    std::ostringstream vocab;
    p.vocab.save(vocab);
    Workspace::write_text(ws.path("vocab.tsv"), vocab.str());
    Workspace::write_text(ws.path("split.json"), p.split.to_json().dump(2) + "\n");
  }
  const fs::path ckpt = ws.path("target/model.ckpt");
  std::shared_ptr<const TextModel> model;
  if (fs::exists(ckpt)) {
    model = load_matching(ckpt, p.target_model, "train-target");
    log("target checkpoint exists; skipping training");
  } else {
    std::ostringstream metrics;
    metrics << "epoch\tloss\taccuracy\tvalidation_accuracy\n";
    auto trained = train_model(p.target_model, p.target_train, p.member_train,
                               [&](const EpochMetrics& m) {
                                 metrics << format_metrics_line(m) << '\n';
                                 log("target " + format_metrics_line(m));
                               },
                               p.non_members);
    Workspace::write_text(ws.path("target/metrics.tsv"), metrics.str());
    save_checkpoint(trained, ckpt.string());
    model = std::make_shared<const TextModel>(std::move(trained));
  }
  const auto tr = evaluate(*model, p.member_train);
  const auto te = evaluate(*model, p.non_members);
  nlohmann::ordered_json report{{"train_accuracy", tr.accuracy}, {"train_perplexity", tr.perplexity},
                                {"train_tokens", tr.token_count}, {"test_accuracy", te.accuracy},
                                {"test_perplexity", te.perplexity}, {"test_tokens", te.token_count}};
  Workspace::write_text(ws.path("target/eval.json"), report.dump(2) + "\n");
  std::cout << "train accuracy " << fmt(tr.accuracy) << " perplexity " << fmt(tr.perplexity) << "\n"
            << "test accuracy " << fmt(te.accuracy) << " perplexity " << fmt(te.perplexity) << "\n";
  ws.write_manifest("train-target", {{"split", p.split.to_json()}});
  return 0;
}

std::string shadow_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shadow_%03zu", i);
  return buf;
}

int cmd_train_shadows(const Workspace& ws) {
  const auto p = prepare_experiment(ws.experiment());
  ws.dir("shadows");
  parallel_for(p.plan.k(), [&](std::size_t i) {
    const auto& spec = p.plan.shadows[i];
    const std::string name = shadow_name(i);
    Workspace::write_text(ws.path("shadows/" + name + ".split.json"),
                          p.plan.split_manifest(i, p.reference).dump(2) + "\n");
    const fs::path ckpt = ws.path("shadows/" + name + ".ckpt");
    if (fs::exists(ckpt)) {
      load_matching(ckpt, spec.model, "train-shadows");
      log(name + " exists; skipping");
      return;
    }
    std::vector<UserDataset> members;
    for (auto u : spec.members) members.push_back(p.reference[u]);
    std::ostringstream metrics;
    metrics << "epoch\tloss\taccuracy\n";
    std::optional<TextModel> model;
    try {
      model = train_model(spec.model, spec.train, members,
                          [&](const EpochMetrics& m) { metrics << format_metrics_line(m) << '\n'; });
    } catch (const std::exception& e) {
      throw Error(name + " failed: " + e.what());
    }
    Workspace::write_text(ws.path("shadows/" + name + ".metrics.tsv"), metrics.str());
    save_checkpoint(*model, ckpt.string());
    log("trained " + name);
  });
  ws.write_manifest("train-shadows", {{"k", p.plan.k()}});
  return 0;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const Workspace& ws, const Options& opt) {
  const auto p = prepare_experiment(ws.experiment());
  auto model = load_matching(ws.path("target/model.ckpt"), p.target_model, "train-target");
  ServeOptions so;
  so.bind = Endpoint::parse(opt.bind.empty() ? ws.cfg().serve.bind : opt.bind);
  so.output_k = ws.cfg().experiment.audit.output_k;
  so.per_client_budget = ws.cfg().serve.per_client_budget;
  QueryServer server(model, so);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << server.endpoint().str() << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_audit(const Workspace& ws, const Options& opt) {
  const auto p = prepare_experiment(ws.experiment());
  ws.dir("audit");
  ShadowTrainer from_disk = [&](std::size_t i, const ShadowSpec& spec, std::span<const UserDataset>) {
    return load_matching(ws.path("shadows/" + shadow_name(i) + ".ckpt"), spec.model, "train-shadows");
  };
  auto training = train_audit_model(p.reference, p.plan, p.audit, p.freq, from_disk);
  training.model.save(ws.path("audit/audit_model.json").string());
  {
    std::ostringstream os;
    write_feature_dump(os, training.dataset);
    Workspace::write_text(ws.path("audit/features.tsv"), os.str());
  }

  const auto budget = ws.cfg().audit_budget;
  TargetHandle target = [&] {
    if (!opt.remote.empty()) return connect_target(Endpoint::parse(opt.remote), p.audit.output_k, budget);
    auto model = load_matching(ws.path("target/model.ckpt"), p.target_model, "train-target");
    return TargetHandle::local(model, p.audit.output_k, budget);
  }();
  if (target.vocab_size() != p.vocab.size())
    throw Error("target vocabulary size " + std::to_string(target.vocab_size()) + " does not match " +
                std::to_string(p.vocab.size()));

  const auto outcomes = audit_users(training.model, target, p);
  std::ostringstream table;
  table << "user_id\tlabel\tdecision\tscore\n";
  for (const auto& o : outcomes) {
    const std::string line = o.user_id + "\t" + (o.label ? "1" : "0") + "\t" + (o.decision ? "1" : "0") + "\t" + fmt(o.score);
    table << line << '\n';
    std::cout << line << '\n';
  }
  Workspace::write_text(ws.path("audit/decisions.tsv"), table.str());
  const auto m = classification_metrics(outcomes);
  const double a = auc(outcomes);
  nlohmann::ordered_json summary{{"precision", m.precision}, {"precision_defined", m.precision_defined},
                                 {"recall", m.recall},       {"accuracy", m.accuracy},
                                 {"auc", a},                 {"queries_used", target.queries_used()}};
  Workspace::write_text(ws.path("audit/summary.json"), summary.dump(2) + "\n");
  std::cout << "precision " << fmt(m.precision) << (m.precision_defined ? "" : " (undefined)") << " recall "
            << fmt(m.recall) << " accuracy " << fmt(m.accuracy) << " auc " << fmt(a) << "\n";
  ws.write_manifest("audit", {{"remote", opt.remote.empty() ? nlohmann::json(nullptr) : nlohmann::json(opt.remote)}});
  return 0;
}

int cmd_sweep(const Workspace& ws) {
  auto spec = sweep_spec(ws.cfg());
  ws.dir("sweep");
  const std::string stem = "sweep/" + ws.cfg().sweep.axis;
  Workspace::write_text(ws.path(stem + ".manifest.json"), sweep_manifest(spec).dump(2) + "\n");
  ModelCache cache;
  SweepOptions opts;
  opts.csv_path = ws.path(stem + ".csv").string();
  opts.cache = &cache;
  opts.on_row = [&](const SweepRow& r) {
    log("cell " + ws.cfg().sweep.axis + "=" + r.axis_value + " rep " + std::to_string(r.repetition) + ": " +
        (r.metrics ? "auc " + fmt(r.auc) : r.status));
  };
  const auto rows = run_sweep(spec, opts);
  std::size_t failed = 0;
  for (const auto& r : rows) {
    std::cout << format_sweep_row(spec.axis, r) << '\n';
    failed += !r.metrics;
  }
  ws.write_manifest("sweep");
  if (failed) {
    log(std::to_string(failed) + " sweep cell(s) failed; see the status column");
    return 2;
  }
  return 0;
}

int cmd_analyze(const Workspace& ws) {
  const auto p = prepare_experiment(ws.experiment());
  const auto& a = ws.cfg().analysis;
  auto model = load_matching(ws.path("target/model.ckpt"), p.target_model, "train-target");
  ws.dir("analysis");
  const auto order = vocabulary_order(p.vocab.size());

  const auto h = logprob_histograms(*model, p.member_train, p.non_members, a.band_fraction, a.n_bins, order);
  const std::pair<const char*, const Histogram*> panels[] = {{"logprob_train_head", &h.train_head},
                                                             {"logprob_train_tail", &h.train_tail},
                                                             {"logprob_unseen_head", &h.unseen_head},
                                                             {"logprob_unseen_tail", &h.unseen_tail}};
  for (const auto& [name, hist] : panels) {
    std::ostringstream os;
    write_histogram_tsv(os, h.edges, *hist);
    Workspace::write_text(ws.path(std::string("analysis/") + name + ".tsv"), os.str());
  }

  const auto curve = rank_shift_curve(*model, p.member_train, p.non_members, a.bucket_size, order);
  {
    std::ostringstream os;
    write_rank_shift_tsv(os, curve);
    Workspace::write_text(ws.path("analysis/rank_shift.tsv"), os.str());
  }
  const auto tail = summarize_rank_shift(curve, curve.buckets.size() / 2);
  std::cout << "rank shift: train rank below unseen rank in " << tail.train_lower << "/" << tail.populated
            << " populated tail buckets\n";

  // Ablation needs a model trained without dropout.
  std::shared_ptr<const TextModel> plain = model;
  if (p.target_model.dropout_rate != 0.0) {
    ModelConfig mc = p.target_model;
    mc.dropout_rate = 0.0;
    const fs::path ckpt = ws.path("analysis/no_dropout.ckpt");
    if (fs::exists(ckpt)) {
      plain = load_matching(ckpt, mc, "analyze");
    } else {
      log("training a dropout-free copy of the target for ablation");
      auto trained = train_model(mc, p.target_train, p.member_train);
      save_checkpoint(trained, ckpt.string());
      plain = std::make_shared<const TextModel>(std::move(trained));
    }
  }
  std::vector<AblationRow> mean(a.ablation_fractions.size());
  for (int s = 0; s < a.mask_seeds; ++s) {
    const auto rows = ablation_analysis(*plain, p.member_train, a.ablation_fractions, a.head_fraction,
                                        derive_seed(ws.cfg().experiment.seed, "mask", static_cast<std::uint64_t>(s)), order);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      mean[i].fraction = rows[i].fraction;
      mean[i].head_accuracy += rows[i].head_accuracy / a.mask_seeds;
      mean[i].tail_accuracy += rows[i].tail_accuracy / a.mask_seeds;
      mean[i].head_tokens = rows[i].head_tokens;
      mean[i].tail_tokens = rows[i].tail_tokens;
    }
  }
  {
    std::ostringstream os;
    write_ablation_tsv(os, mean);
    Workspace::write_text(ws.path("analysis/ablation.tsv"), os.str());
  }
  for (const auto& r : mean)
    std::cout << "ablation " << fmt(r.fraction) << " head " << fmt(r.head_accuracy) << " tail "
              << fmt(r.tail_accuracy) << "\n";
  ws.write_manifest("analyze");
  return 0;
}

int cmd_plot_data(const Workspace& ws, const Options& opt) {
  const std::string axis = ws.cfg().sweep.axis;
  const std::string input = opt.input.empty() ? ws.path("sweep/" + axis + ".csv").string() : opt.input;
  std::ifstream is(Workspace::require(input, "sweep"));
  std::string line;
  std::getline(is, line);
  if (line != kSweepHeader) throw Error(input + " is not a sweep CSV");
  const char* metrics[] = {"precision", "recall", "accuracy", "auc"};
  const int columns[] = {4, 6, 7, 8};
  std::vector<std::string> order;
  std::string csv_axis;
  std::map<std::string, std::vector<std::array<double, 4>>> by_value;
  while (std::getline(is, line)) {
    auto row = parse_sweep_row(line);
    if (!row) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    csv_axis = f[0];
    if (!by_value.count(row->axis_value)) order.push_back(row->axis_value);
    std::array<double, 4> v{};
    for (int m = 0; m < 4; ++m) v[static_cast<std::size_t>(m)] = std::stod(f[static_cast<std::size_t>(columns[m])]);
    by_value[row->axis_value].push_back(v);
  }
  if (order.empty()) throw Error(input + " has no finished rows");
  const std::string name = csv_axis.empty() ? axis : csv_axis;
  ws.dir("plots");
  for (int m = 0; m < 4; ++m) {
    std::ostringstream os;
    os << "# " << name << "\tmean\tmin\tmax\tn\n";
    for (const auto& value : order) {
      const auto& vs = by_value[value];
      double sum = 0, lo = 1e300, hi = -1e300;
      for (const auto& v : vs) {
        const double x = v[static_cast<std::size_t>(m)];
        sum += x;
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      os << value << '\t' << fmt(sum / static_cast<double>(vs.size())) << '\t' << fmt(lo) << '\t' << fmt(hi) << '\t'
         << vs.size() << '\n';
    }
    Workspace::write_text(ws.path("plots/" + name + "_" + metrics[m] + ".dat"), os.str());
  }
  std::ostringstream gp;
  gp << "set terminal pngcairo size 800,500\nset output '" << name << ".png'\nset xlabel '" << name
     << "'\nset ylabel 'score'\nset yrange [0:1.05]\nset key bottom right\nplot";
  for (int m = 0; m < 4; ++m)
    gp << (m ? "," : "") << " '" << name << "_" << metrics[m] << ".dat' using 0:2:xtic(1) with linespoints title '"
       << metrics[m] << "'";
  gp << "\n";
  Workspace::write_text(ws.path("plots/" + name + ".gp"), gp.str());
  log("wrote " + std::to_string(4) + " data files under " + ws.path("plots").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paudit: user-level membership auditing for text-generation models"};
  app.require_subcommand(1);
  Options opt;
  std::string chosen;
  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "Experiment config (JSON)")->required();
    sub->add_option("--seed", opt.seed, "Base seed (overrides the config)");
    sub->add_option("--out-dir", opt.out_dir, "Output directory (overrides the config)");
    sub->callback([&chosen, name] { chosen = name; });
    return sub;
  };
  add("gen-synthetic", "Generate the synthetic corpus");
  add("train-target", "Train the target model");
  add("train-shadows", "Train the shadow models");
  add("serve", "Serve the target model over TCP")->add_option("--bind", opt.bind, "host:port to listen on");
  add("audit", "Train the audit model and audit the target")
      ->add_option("--remote", opt.remote, "Query a served target at host:port instead of loading it");
  add("sweep", "Run the configured experiment sweep");
  add("analyze", "Memorization diagnostics on the target");
  add("plot-data", "Turn a sweep CSV into per-metric data files")->add_option("--input", opt.input, "Sweep CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::optional<Workspace> ws;
  try {
    RunConfig cfg = load_run_config(opt.config);
    if (opt.seed) cfg.experiment.seed = *opt.seed;
    if (opt.out_dir) cfg.out_dir = *opt.out_dir;
    ws.emplace(std::move(cfg));
  } catch (const std::exception& e) {
    std::cerr << "paudit: config error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (chosen == "gen-synthetic") return cmd_gen_synthetic(*ws);
    if (chosen == "train-target") return cmd_train_target(*ws);
    if (chosen == "train-shadows") return cmd_train_shadows(*ws);
    if (chosen == "serve") return cmd_serve(*ws, opt);
    if (chosen == "audit") return cmd_audit(*ws, opt);
    if (chosen == "sweep") return cmd_sweep(*ws);
    if (chosen == "analyze") return cmd_analyze(*ws);
    if (chosen == "plot-data") return cmd_plot_data(*ws, opt);
  } catch (const ConfigError& e) {
    std::cerr << "paudit: config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "paudit: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
