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


// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Tolerances and experiment sizes are pinned below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "paudit/analysis.hpp"
#include "paudit/blackbox.hpp"
#include "paudit/eval.hpp"

using namespace paudit;
namespace fs = std::filesystem;

namespace {

constexpr double kFormulaTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr double kGradBudgetSeconds = 60;
constexpr double kHeadlineAuc = 0.85;
constexpr double kHeadlineBudgetSeconds = 600;
constexpr double kQueryAucAt8 = 0.8;
constexpr double kSmallKLow = 0.45, kSmallKHigh = 1.0;
constexpr double kTrainedShiftShare = 0.8;
constexpr double kUntrainedShiftShare = 0.55;
constexpr int kSeeds = 5;
constexpr int kMaskSeeds = 5;
constexpr std::size_t kRankBucket = 10;
constexpr double kAblationFraction = 0.5;
constexpr double kAblationHead = 0.1;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string num(double v, int prec = 4) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Closed-form values

Outcome formula_oracles() {
  Outcome o;
  {
    const int v = 37;
    ModelConfig c;
    c.vocab_size = v;
    c.emb_dim = c.hidden_dim = 4;
    TextModel m(c);
    m.params()[m.params().find("out.w")].setZero();
    m.params()[m.params().find("out.b")].setZero();
    std::vector<UserDataset> data{{"u", {{{1, 2, 3, 4}, {2, 3, 4, 5}}, {{7, 8}, {8, 9}}}}};
    const double ppl = evaluate_perplexity(m, data);
    o.require(std::abs(ppl - v) <= kFormulaTol, "uniform perplexity " + num(ppl, 12) + " vs " + std::to_string(v));
  }
  {
    Matrix p = Matrix::Zero(4, 3);
    const TokenSeq y{2, 0, 3};
    for (std::size_t j = 0; j < y.size(); ++j) p(y[j], static_cast<Eigen::Index>(j)) = 1.0;
    const double nll = nll_loss(p, y);
    o.require(std::abs(nll) <= kFormulaTol, "perfect NLL " + num(nll, 12));
  }
  {
    const AuditOutcome rows{{"a", true, true, 0.8}, {"b", true, false, 0.4}, {"c", false, true, 0.6},
                            {"d", false, false, 0.2}};
    double wins = 0;
    int pairs = 0;
    for (const auto& p : rows)
      for (const auto& n : rows)
        if (p.label && !n.label) {
          wins += p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0;
          ++pairs;
        }
    const double a = auc(rows);
    o.require(std::abs(a - 0.75) <= kFormulaTol && std::abs(a - wins / pairs) <= kFormulaTol,
              "AUC " + num(a, 6) + " (pair count " + num(wins / pairs, 6) + ")");

    const auto m = classification_metrics(rows);
    o.require(std::abs(m.precision - 0.5) <= kFormulaTol && std::abs(m.recall - 0.5) <= kFormulaTol &&
                  std::abs(m.accuracy - 0.5) <= kFormulaTol,
              "TP=FP=FN=TN=1 metrics " + num(m.precision, 3) + "/" + num(m.recall, 3) + "/" + num(m.accuracy, 3));
  }
  {
    const auto f = histogram_feature(RankSet{{1, 213}, 0}, 50, 5000);
    std::vector<double> expect(50, 0.0);
    expect[0] = expect[2] = 1.0;
    o.require(f.bins == expect && f.out_of_list == 0.0, "ranks {1,213} land in bins [0] and [2] of width " +
                                                            std::to_string(f.bin_width));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradients

double worst_gradient_error(Task task, nn::CellType cell) {
  ModelConfig c;
  c.task = task;
  c.cell = cell;
  c.vocab_size = 10;
  c.emb_dim = 5;
  c.hidden_dim = 8;
  c.dropout_rate = 0.0;
  c.init_scale = 0.5;
  c.seed = 13;
  TextModel model(c);
  Rng init(4);
  for (auto& a : model.params().arrays())
    if (a.name.ends_with(".b")) nn::fill_uniform(a.value, 0.3, init);
  Rng rng(6);
  std::vector<Example> batch;
  for (std::size_t i = 0; i < 3; ++i) {
    auto draw = [&](std::size_t n) {
      TokenSeq s(n);
      for (auto& t : s) t = static_cast<TokenId>(rng.below(10));
      return s;
    };
    if (task == Task::next_word) {
      const TokenSeq s = draw(5 + i);
      batch.push_back({TokenSeq(s.begin(), s.end() - 1), TokenSeq(s.begin() + 1, s.end())});
    } else {
      batch.push_back({draw(3 + i), draw(4 + i)});
    }
  }
  nn::ParamSet analytic = model.params().zeros_like();
  for (const auto& ex : batch) model.loss_and_gradient(ex, analytic, nullptr);
  auto loss = [&] {
    double l = 0;
    for (const auto& ex : batch) l += nll_loss(model.distributions(ex), ex.y);
    return l;
  };
  double worst = 0;
  for (std::size_t s = 0; s < model.params().size(); ++s) {
    Matrix& p = model.params()[s];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p(i);
      p(i) = keep + kGradStep;
      const double up = loss();
      p(i) = keep - kGradStep;
      const double down = loss();
      p(i) = keep;
      const double numeric = (up - down) / (2 * kGradStep);
      const double scale = std::max(std::abs(analytic[s](i)), std::abs(numeric));
      if (scale < 1e-9) continue;  // unused embedding rows
      worst = std::max(worst, std::abs(analytic[s](i) - numeric) / scale);
    }
  }
  return worst;
}

Outcome gradient_checks() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  for (Task task : {Task::next_word, Task::seq2seq_attn, Task::seq2seq_plain})
    for (auto cell : {nn::CellType::lstm, nn::CellType::gru}) {
      const double w = worst_gradient_error(task, cell);
      o.require(w < kGradTol, to_string(task) + "/" + nn::to_string(cell) + " " + sci(w));
    }
  const double dt = seconds_since(t0);
  o.require(dt < kGradBudgetSeconds, num(dt, 1) + "s");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Conservation and invariance

Outcome invariants() {
  Outcome o;
  Rng rng(2026);
  {
    int bad = 0;
    for (int trial = 0; trial < 100; ++trial) {
      ModelConfig c;
      c.task = rng.bernoulli(0.5) ? Task::next_word : Task::seq2seq_attn;
      c.cell = rng.bernoulli(0.5) ? nn::CellType::lstm : nn::CellType::gru;
      c.vocab_size = 5 + static_cast<int>(rng.below(40));
      c.emb_dim = c.hidden_dim = 4;
      c.seed = static_cast<std::uint64_t>(trial);
      auto model = std::make_shared<const TextModel>(c);
      const auto v = static_cast<std::size_t>(c.vocab_size);
      const std::size_t k = rng.below(v + 1);
      auto handle = TargetHandle::local(model, k);
      UserDataset user{"u", {}};
      for (std::size_t e = 0, n = 1 + rng.below(6); e < n; ++e) {
        TokenSeq x(2 + rng.below(5)), y(c.task == Task::next_word ? x.size() : 1 + rng.below(5));
        for (auto& t : x) t = static_cast<TokenId>(rng.below(v));
        for (auto& t : y) t = static_cast<TokenId>(rng.below(v));
        user.examples.push_back({x, y});
      }
      AuditParams p;
      p.d = 1 + rng.below(v);
      p.output_k = k;
      p.strategy = QueryStrategy::random;
      if (rng.bernoulli(0.5)) p.m = 1 + rng.below(user.examples.size());
      std::size_t queried = 0;
      for (const auto& ex : sample_queries(user.examples, p.m, p.strategy, {}, derive_seed(p.seed, "user_queries:u")))
        queried += ex.y.size();
      const auto f = user_feature(handle, user, p, {});
      const double sum = std::accumulate(f.bins.begin(), f.bins.end(), 0.0) + f.out_of_list;
      bad += sum != static_cast<double>(queried);
    }
    o.require(bad == 0, "conservation " + std::to_string(100 - bad) + "/100");
  }
  {
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t v = 2 + rng.below(60);
      Vector p(static_cast<Eigen::Index>(v));
      for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.bernoulli(0.2) ? 0.25 : rng.uniform();
      p /= p.sum();
      const auto full = truncate_topk(p, v);
      const auto part = truncate_topk(p, 1 + rng.below(v));
      bad += !std::equal(part.begin(), part.end(), full.begin());
    }
    o.require(bad == 0, "top-k prefix " + std::to_string(1000 - bad) + "/1000");
  }
  {
    int bad = 0;
    const std::vector<std::function<double(double)>> transforms{
        [](double s) { return 3.0 * s + 1.0; }, [](double s) { return std::exp(s); },
        [](double s) { return std::atan(s); }, [](double s) { return s * s * s; }};
    for (int trial = 0; trial < 100; ++trial) {
      AuditOutcome rows;
      for (int i = 0; i < 12; ++i)
        rows.push_back({"u" + std::to_string(i), i % 3 == 0 || i == 1, false,
                        std::round(rng.uniform() * 8.0) / 4.0 - 1.0});
      const double base = auc(rows);
      for (const auto& f : transforms) {
        AuditOutcome moved = rows;
        for (auto& r : moved) r.score = f(r.score);
        bad += std::abs(auc(moved) - base) > kFormulaTol;
      }
    }
    o.require(bad == 0, "AUC monotone invariance " + std::to_string(400 - bad) + "/400");
  }
  {
    ModelConfig c;
    c.vocab_size = 15;
    c.emb_dim = c.hidden_dim = 6;
    auto model = std::make_shared<const TextModel>(c);
    QueryServer server(model, ServeOptions{Endpoint{"127.0.0.1", 0}, 0, std::nullopt});
    auto remote = connect_target(server.endpoint(), 0);
    auto local = TargetHandle::local(model, 0);
    int bad = 0;
    for (int q = 0; q < 100; ++q) {
      TokenSeq x(2 + rng.below(7));
      for (auto& t : x) t = static_cast<TokenId>(rng.below(15));
      bad += !(remote.query(x, std::nullopt) == local.query(x, std::nullopt));
    }
    server.stop();
    o.require(bad == 0, "wire == in-process " + std::to_string(100 - bad) + "/100");
  }
  return o;
}

// ---------------------------------------------------------------------------
// 4 to 9: trends on the synthetic corpus

// 20 members, 20 non-members, 40 reference users for 10 shadows.
ExperimentConfig toy_experiment() {
  ExperimentConfig c;
  c.corpus.synthetic.n_users = 80;
  c.corpus.synthetic.sentences_per_user = 30;
  c.n_train = 20;
  c.n_test = 20;
  c.n_shadow = 40;
  c.target_model.emb_dim = 32;
  c.target_model.hidden_dim = 32;
  c.target_model.dropout_rate = 0.0;
  c.target_train.epochs = 30;
  c.target_train.learning_rate = 0.01;
  c.target_train.batch_size = 20;
  c.shadow_model = c.target_model;
  c.shadow_train = c.target_train;
  c.k = 10;
  c.audit.d = 100;
  c.seed = 1;
  return c;
}

struct Trends {
  double headline_auc = 0, headline_seconds = 0;
  double freq_auc_m1 = 0, random_auc_m1 = 0, freq_auc_m8 = 0, random_auc_m8 = 0;
  double auc_full_k = 0, auc_k5 = 0;
  double recall_clean = 0, recall_noisy = 0;
  std::size_t trained_lower = 0, trained_populated = 0, untrained_lower = 0, untrained_populated = 0;
  double head_drop = 0, tail_drop = 0;
  std::vector<std::string> failed_cells;
};

// Mean of a metric over the repetitions of one axis value.
template <class Get>
double mean_at(const std::vector<SweepRow>& rows, const std::string& value, Get get, Trends& t) {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.axis_value != value) continue;
    if (!r.metrics) {
      t.failed_cells.push_back(value + "/" + std::to_string(r.repetition) + ": " + r.status);
      continue;
    }
    sum += get(r);
    ++n;
  }
  return n ? sum / n : std::nan("");
}

double auc_of(const SweepRow& r) { return r.auc; }
double recall_of(const SweepRow& r) { return r.metrics->recall; }

std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis, std::vector<nlohmann::json> values,
                            ModelCache& cache, const fs::path& csv) {
  SweepSpec spec;
  spec.axis = axis;
  spec.values = std::move(values);
  spec.repetitions = kSeeds;
  spec.base = base;
  SweepOptions opts;
  opts.cache = &cache;
  auto rows = run_sweep(spec, opts);
  write_sweep_csv(csv.string(), axis, rows);
  return rows;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

Trends run_trends(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelCache cache;
  Trends t;
  const ExperimentConfig base = toy_experiment();

  // 4. Full vocabulary, every example queried.
  {
    const auto t0 = std::chrono::steady_clock::now();
    auto rows = sweep(base, SweepAxis::output_k, {"full"}, cache, dir / "headline.csv");
    t.headline_seconds = seconds_since(t0);
    t.headline_auc = mean_at(rows, "\"full\"", auc_of, t);
  }
  // 5. Query budget under both selection strategies.
  {
    ExperimentConfig freq = base, rnd = base;
    freq.audit.strategy = QueryStrategy::frequency;
    rnd.audit.strategy = QueryStrategy::random;
    auto f = sweep(freq, SweepAxis::n_queries, {1, 8}, cache, dir / "queries_frequency.csv");
    auto r = sweep(rnd, SweepAxis::n_queries, {1, 8}, cache, dir / "queries_random.csv");
    t.freq_auc_m1 = mean_at(f, "1", auc_of, t);
    t.freq_auc_m8 = mean_at(f, "8", auc_of, t);
    t.random_auc_m1 = mean_at(r, "1", auc_of, t);
    t.random_auc_m8 = mean_at(r, "8", auc_of, t);
  }
  // 6. Output size.
  {
    auto rows = sweep(base, SweepAxis::output_k, {"full", 5}, cache, dir / "output_k.csv");
    t.auc_full_k = mean_at(rows, "\"full\"", auc_of, t);
    t.auc_k5 = mean_at(rows, "5", auc_of, t);
  }
  // 7. Members' text partly withheld from training.
  {
    auto rows = sweep(base, SweepAxis::noise_fraction, {0.0, 0.5}, cache, dir / "noise.csv");
    t.recall_clean = mean_at(rows, "0.0", recall_of, t);
    t.recall_noisy = mean_at(rows, "0.5", recall_of, t);
  }
  // 8. Rank shift, pooled over seeds, tail half of the frequency order.
  for (int s = 0; s < kSeeds; ++s) {
    ExperimentConfig c = base;
    c.seed = base.seed + static_cast<std::uint64_t>(s);
    const auto p = prepare_experiment(c);
    const auto trained = train_target(p, &cache);
    const TextModel untrained(p.target_model);
    const auto order = vocabulary_order(p.vocab.size());
    const auto tc = rank_shift_curve(*trained, p.member_train, p.non_members, kRankBucket, order);
    const auto uc = rank_shift_curve(untrained, p.member_train, p.non_members, kRankBucket, order);
    const auto ts = summarize_rank_shift(tc, tc.buckets.size() / 2);
    const auto us = summarize_rank_shift(uc, uc.buckets.size() / 2);
    t.trained_lower += ts.train_lower;
    t.trained_populated += ts.populated;
    t.untrained_lower += us.train_lower;
    t.untrained_populated += us.populated;
    std::ostringstream a, b;
    write_rank_shift_tsv(a, tc);
    write_rank_shift_tsv(b, uc);
    write_file(dir / ("rank_shift_trained_" + std::to_string(c.seed) + ".tsv"), a.str());
    write_file(dir / ("rank_shift_untrained_" + std::to_string(c.seed) + ".tsv"), b.str());
  }
  // 9. Ablation on a wider dropout-free model, which memorizes rare words.
  {
    ExperimentConfig c = base;
    c.target_model.hidden_dim = 128;
    const auto p = prepare_experiment(c);
    const auto model = train_target(p, &cache);
    const auto order = vocabulary_order(p.vocab.size());
    const std::vector<double> fractions{0.0, kAblationFraction};
    std::vector<AblationRow> all;
    for (int s = 0; s < kMaskSeeds; ++s) {
      const auto rows = ablation_analysis(*model, p.member_train, fractions, kAblationHead,
                                          derive_seed(c.seed, "mask", static_cast<std::uint64_t>(s)), order);
      t.head_drop += (rows[0].head_accuracy - rows[1].head_accuracy) / kMaskSeeds;
      t.tail_drop += (rows[0].tail_accuracy - rows[1].tail_accuracy) / kMaskSeeds;
      all.insert(all.end(), rows.begin(), rows.end());
    }
    std::ostringstream os;
    write_ablation_tsv(os, all);
    write_file(dir / "ablation.tsv", os.str());
  }
  return t;
}

std::string cells_note(const Trends& t) {
  if (t.failed_cells.empty()) return "";
  std::string s = "; failed cells:";
  for (const auto& c : t.failed_cells) s += " " + c;
  return s;
}

// NaN (every cell failed) compares false, so the criterion fails.
Outcome headline(const Trends& t) {
  Outcome o;
  o.require(t.headline_auc >= kHeadlineAuc, "mean AUC " + num(t.headline_auc) + " over " +
                                                std::to_string(kSeeds) + " seeds (need >= " + num(kHeadlineAuc, 2) + ")");
  o.require(t.headline_seconds < kHeadlineBudgetSeconds, num(t.headline_seconds, 0) + "s");
  return o;
}

Outcome query_trend(const Trends& t) {
  Outcome o;
  o.require(t.freq_auc_m1 >= t.random_auc_m1, "m=1 frequency " + num(t.freq_auc_m1) + " vs random " + num(t.random_auc_m1));
  o.require(t.freq_auc_m8 >= t.random_auc_m8, "m=8 frequency " + num(t.freq_auc_m8) + " vs random " + num(t.random_auc_m8));
  o.require(t.freq_auc_m8 >= kQueryAucAt8, "m=8 frequency >= " + num(kQueryAucAt8, 2));
  return o;
}

Outcome output_trend(const Trends& t) {
  Outcome o;
  o.require(t.auc_full_k >= t.auc_k5, "AUC k=|V| " + num(t.auc_full_k) + " vs k=5 " + num(t.auc_k5));
  o.require(t.auc_k5 >= kSmallKLow && t.auc_k5 <= kSmallKHigh, "k=5 within [" + num(kSmallKLow, 2) + ", " +
                                                                    num(kSmallKHigh, 2) + "]");
  return o;
}

Outcome noise_trend(const Trends& t) {
  Outcome o;
  o.require(t.recall_noisy <= t.recall_clean, "recall noise 0.5 " + num(t.recall_noisy) + " vs 0.0 " + num(t.recall_clean));
  return o;
}

Outcome rank_shift(const Trends& t) {
  Outcome o;
  auto share = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  const double tr = share(t.trained_lower, t.trained_populated);
  const double un = share(t.untrained_lower, t.untrained_populated);
  o.require(t.trained_populated > 0 && tr >= kTrainedShiftShare,
            "trained " + std::to_string(t.trained_lower) + "/" + std::to_string(t.trained_populated) + " = " + num(tr, 3));
  o.require(t.untrained_populated > 0 && un <= kUntrainedShiftShare,
            "untrained " + std::to_string(t.untrained_lower) + "/" + std::to_string(t.untrained_populated) + " = " +
                num(un, 3));
  return o;
}

Outcome ablation(const Trends& t) {
  Outcome o;
  o.require(t.tail_drop >= t.head_drop, "tail drop " + num(t.tail_drop) + " vs head drop " + num(t.head_drop));
  return o;
}

// Every file of one run matches the same file of the other, byte for byte.
Outcome determinism(const fs::path& a, const fs::path& b) {
  Outcome o;
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    const auto other = b / e.path().filename();
    if (fs::exists(other) && slurp(e.path()) == slurp(other)) ++same;
    else o.require(false, e.path().filename().string() + " differs");
  }
  std::size_t files_b = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++files_b;
  o.require(files > 0 && files == files_b && same == files,
            std::to_string(same) + "/" + std::to_string(files) + " files identical");
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int n, const char* name, const Outcome& o, const std::string& extra = "") {
    std::printf("criterion %2d %s  %s: %s%s\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), extra.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  try {
    report(1, "formula oracles", formula_oracles());
    report(2, "gradient checks", gradient_checks());
    report(3, "conservation and invariance", invariants());

    const fs::path root = fs::temp_directory_path() / "paudit_acceptance";
    const auto t0 = std::chrono::steady_clock::now();
    const Trends t = run_trends(root / "run_a");
    std::fprintf(stderr, "[acceptance] trend run took %.0fs\n", seconds_since(t0));
    const std::string note = cells_note(t);
    report(4, "end-to-end audit", headline(t), note);
    report(5, "query selection", query_trend(t));
    report(6, "output size", output_trend(t));
    report(7, "noise", noise_trend(t));
    report(8, "rank shift", rank_shift(t));
    report(9, "ablation", ablation(t));

    run_trends(root / "run_b");
    report(10, "determinism", determinism(root / "run_a", root / "run_b"));
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
