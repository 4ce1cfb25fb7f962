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

// Memorization diagnostics over a trained model: how the log-probability of
// ground-truth words differs between training and unseen text, split by word
// frequency; how a word's predicted rank shifts when it appears in training
// text; and how accuracy on frequent vs. rare words degrades as hidden units
// are zeroed.
//
// Word frequency is given as a rank per token id (0 = most frequent). The
// vocabulary is already ordered that way, so the identity order is the
// usual choice.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "paudit/parallel.hpp"
#include "paudit/textgen.hpp"

namespace paudit {

using FrequencyOrder = std::vector<std::size_t>;  // token id -> frequency rank

inline FrequencyOrder vocabulary_order(std::size_t vocab_size) { return iota_indices(vocab_size); }

// Ranks token ids by descending count, lower id first on ties.
inline FrequencyOrder frequency_order(std::span<const std::uint64_t> counts) {
  auto ids = iota_indices(counts.size());
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  FrequencyOrder rank(counts.size());
  for (std::size_t r = 0; r < ids.size(); ++r) rank[ids[r]] = r;
  return rank;
}

// Number of frequency ranks in the head band: ceil(fraction * |V|).
inline std::size_t head_size(double fraction, std::size_t vocab_size) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("band fraction must be in (0, 1)");
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(vocab_size)));
}

// Share of label tokens of `data` that fall in the head band.
inline double head_token_share(std::span<const UserDataset> data, const FrequencyOrder& order, double fraction) {
  const std::size_t head = head_size(fraction, order.size());
  std::size_t in_head = 0, total = 0;
  for (const auto& u : data)
    for (const auto& ex : u.examples)
      for (TokenId t : ex.y) {
        in_head += order.at(static_cast<std::size_t>(t)) < head;
        ++total;
      }
  if (total == 0) throw Error("head_token_share: no tokens");
  return static_cast<double>(in_head) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Log-probability histograms

struct Histogram {
  std::vector<std::size_t> counts;
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct LogprobHistograms {
  std::vector<double> edges;  // n_bins + 1, shared by all four panels
  Histogram train_head, train_tail, unseen_head, unseen_tail;
};

namespace detail {
struct BandedLogprobs {
  std::vector<double> head, tail;
};

template <class Model>
BandedLogprobs banded_logprobs(const Model& model, std::span<const UserDataset> data,
                               const FrequencyOrder& order, std::size_t head) {
  BandedLogprobs out;
  for (const auto& u : data)
    for (const auto& ex : u.examples) {
      const Matrix probs = model.distributions(ex);
      for (std::size_t j = 0; j < ex.y.size(); ++j) {
        const double lp = std::log2(std::max(probs(ex.y[j], static_cast<Eigen::Index>(j)), kProbFloor));
        (order.at(static_cast<std::size_t>(ex.y[j])) < head ? out.head : out.tail).push_back(lp);
      }
    }
  return out;
}
}  // namespace detail

// Per-token log2 probabilities of ground-truth words, split into the top
// `band_fraction` of the frequency order and the rest. Bin edges run evenly
// from the smallest observed value to 0; the last bin is closed. Any model
// with `distributions(Example)` and `vocab_size()` works.
template <class Model>
LogprobHistograms logprob_histograms(const Model& model, std::span<const UserDataset> train_data,
                                     std::span<const UserDataset> unseen_data, double band_fraction,
                                     std::size_t n_bins, const FrequencyOrder& order) {
  if (n_bins < 1) throw Error("logprob_histograms: n_bins must be >= 1");
  if (train_data.empty() || unseen_data.empty()) throw Error("logprob_histograms: empty dataset");
  if (order.size() != model.vocab_size()) throw Error("frequency order does not match the vocabulary");
  const std::size_t head = head_size(band_fraction, order.size());
  const auto tr = detail::banded_logprobs(model, train_data, order, head);
  const auto un = detail::banded_logprobs(model, unseen_data, order, head);

  double lo = 0.0;
  for (const auto* v : {&tr.head, &tr.tail, &un.head, &un.tail})
    for (double x : *v) lo = std::min(lo, x);
  if (lo == 0.0) lo = -1.0;

  LogprobHistograms h;
  for (std::size_t i = 0; i <= n_bins; ++i)
    h.edges.push_back(lo + (0.0 - lo) * static_cast<double>(i) / static_cast<double>(n_bins));
  h.edges.back() = 0.0;
  auto fill = [&](const std::vector<double>& values) {
    Histogram out{std::vector<std::size_t>(n_bins, 0)};
    for (double x : values) {
      auto bin = static_cast<std::size_t>((x - lo) / (0.0 - lo) * static_cast<double>(n_bins));
      out.counts[std::min(bin, n_bins - 1)]++;
    }
    return out;
  };
  h.train_head = fill(tr.head);
  h.train_tail = fill(tr.tail);
  h.unseen_head = fill(un.head);
  h.unseen_tail = fill(un.tail);
  return h;
}

// ---------------------------------------------------------------------------
// Rank shift

struct RankStat {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> ci95;  // half-width; needs n >= 2
};

struct RankShiftBucket {
  std::size_t first_rank = 0;  // frequency ranks [first_rank, last_rank]
  std::size_t last_rank = 0;
  RankStat train, unseen;

  bool populated() const { return train.n > 0 && unseen.n > 0; }
};

struct RankShiftCurve {
  std::size_t bucket_size = 0;
  std::vector<RankShiftBucket> buckets;
};

// mean +- 1.96 * s / sqrt(n), s the sample standard deviation.
inline RankStat rank_stat(std::span<const double> xs) {
  RankStat s;
  s.n = xs.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(s.n);
  s.mean = mean;
  if (s.n >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

namespace detail {
// Predicted rank of every label occurrence, grouped by frequency bucket.
template <class Model>
std::vector<std::vector<double>> bucketed_ranks(const Model& model, std::span<const UserDataset> data,
                                                const FrequencyOrder& order, std::size_t bucket_size,
                                                std::size_t n_buckets) {
  std::vector<std::vector<double>> out(n_buckets);
  for (const auto& u : data)
    for (const auto& ex : u.examples) {
      const Matrix probs = model.distributions(ex);
      for (std::size_t j = 0; j < ex.y.size(); ++j) {
        const Vector col = probs.col(static_cast<Eigen::Index>(j));
        const auto b = order.at(static_cast<std::size_t>(ex.y[j])) / bucket_size;
        out[b].push_back(static_cast<double>(rank_of(col, ex.y[j])));
      }
    }
  return out;
}
}  // namespace detail

template <class Model>
RankShiftCurve rank_shift_curve(const Model& model, std::span<const UserDataset> train_data,
                                std::span<const UserDataset> unseen_data, std::size_t bucket_size,
                                const FrequencyOrder& order) {
  if (bucket_size < 1) throw Error("rank_shift_curve: bucket_size must be >= 1");
  if (train_data.empty() || unseen_data.empty()) throw Error("rank_shift_curve: empty dataset");
  if (order.size() != model.vocab_size()) throw Error("frequency order does not match the vocabulary");
  const std::size_t v = order.size();
  const std::size_t n_buckets = (v + bucket_size - 1) / bucket_size;
  const auto tr = detail::bucketed_ranks(model, train_data, order, bucket_size, n_buckets);
  const auto un = detail::bucketed_ranks(model, unseen_data, order, bucket_size, n_buckets);
  RankShiftCurve c;
  c.bucket_size = bucket_size;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    RankShiftBucket bucket;
    bucket.first_rank = b * bucket_size;
    bucket.last_rank = std::min(v, (b + 1) * bucket_size) - 1;
    bucket.train = rank_stat(tr[b]);
    bucket.unseen = rank_stat(un[b]);
    c.buckets.push_back(bucket);
  }
  return c;
}

struct RankShiftSummary {
  std::size_t populated = 0;
  std::size_t train_lower = 0;     // mean train rank < mean unseen rank
  std::size_t ci_overlap = 0;      // CIs overlap (or one is undefined)

  double train_lower_share() const {
    return populated ? static_cast<double>(train_lower) / static_cast<double>(populated) : 0.0;
  }
  double overlap_share() const {
    return populated ? static_cast<double>(ci_overlap) / static_cast<double>(populated) : 0.0;
  }
};

// Summarizes buckets [first_bucket, end). Use first_bucket = size/2 for the
// tail half of the frequency order.
inline RankShiftSummary summarize_rank_shift(const RankShiftCurve& c, std::size_t first_bucket = 0) {
  RankShiftSummary s;
  for (std::size_t b = first_bucket; b < c.buckets.size(); ++b) {
    const auto& k = c.buckets[b];
    if (!k.populated()) continue;
    ++s.populated;
    s.train_lower += *k.train.mean < *k.unseen.mean;
    if (!k.train.ci95 || !k.unseen.ci95) {
      ++s.ci_overlap;
    } else {
      const double gap = std::abs(*k.train.mean - *k.unseen.mean);
      s.ci_overlap += gap <= *k.train.ci95 + *k.unseen.ci95;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  double fraction = 0;
  double head_accuracy = 0;
  double tail_accuracy = 0;
  std::size_t head_tokens = 0;
  std::size_t tail_tokens = 0;
};

// Training-data accuracy with a fraction of the recurrent hidden units zeroed
// at every step. One mask per fraction, shared by the head and tail bands.
inline std::vector<AblationRow> ablation_analysis(const TextModel& model, std::span<const UserDataset> train_data,
                                                  std::span<const double> fractions, double head_fraction,
                                                  std::uint64_t seed, const FrequencyOrder& order) {
  if (model.config().dropout_rate != 0.0)
    throw Error("ablation analysis expects a model trained without dropout");
  if (train_data.empty()) throw Error("ablation_analysis: empty dataset");
  if (order.size() != model.vocab_size()) throw Error("frequency order does not match the vocabulary");
  const std::size_t head = head_size(head_fraction, order.size());
  std::vector<AblationRow> rows(fractions.size());
  parallel_for(fractions.size(), [&](std::size_t i) {
    const auto mask = nn::AblationMask::sample(model.config().hidden_dim, fractions[i],
                                               derive_seed(seed, "ablation_fraction", i));
    std::size_t hits[2] = {0, 0}, totals[2] = {0, 0};
    for (const auto& u : train_data)
      for (const auto& ex : u.examples) {
        const Matrix probs = model.distributions(ex, &mask);
        for (std::size_t j = 0; j < ex.y.size(); ++j) {
          Eigen::Index best;
          probs.col(static_cast<Eigen::Index>(j)).maxCoeff(&best);
          const int band = order.at(static_cast<std::size_t>(ex.y[j])) < head ? 0 : 1;
          hits[band] += best == ex.y[j];
          totals[band]++;
        }
      }
    auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    rows[i] = {fractions[i], ratio(hits[0], totals[0]), ratio(hits[1], totals[1]), totals[0], totals[1]};
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Plot-ready output: one tab-separated file per panel.

inline void write_histogram_tsv(std::ostream& os, const std::vector<double>& edges, const Histogram& h) {
  os << "bin_lo\tbin_hi\tcount\n";
  char buf[96];
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\t%zu\n", edges[i], edges[i + 1], h.counts[i]);
    os << buf;
  }
}

inline void write_rank_shift_tsv(std::ostream& os, const RankShiftCurve& c) {
  os << "first_rank\tlast_rank\ttrain_n\ttrain_mean\ttrain_ci95\tunseen_n\tunseen_mean\tunseen_ci95\n";
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("null");
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return std::string(buf);
  };
  for (const auto& b : c.buckets)
    os << b.first_rank << '\t' << b.last_rank << '\t' << b.train.n << '\t' << opt(b.train.mean) << '\t'
       << opt(b.train.ci95) << '\t' << b.unseen.n << '\t' << opt(b.unseen.mean) << '\t' << opt(b.unseen.ci95)
       << '\n';
}

inline void write_ablation_tsv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "fraction\thead_accuracy\ttail_accuracy\thead_tokens\ttail_tokens\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\t%.6f\t%zu\t%zu\n", r.fraction, r.head_accuracy, r.tail_accuracy,
                  r.head_tokens, r.tail_tokens);
    os << buf;
  }
}

}  // namespace paudit
