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

// Synthetic per-user corpora: a global Zipfian lexicon mixed with per-user
// signature tokens and repeated per-user phrases.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/common.hpp"
#include "paudit/corpus.hpp"

namespace paudit {

// Samples ranks 0..n-1 with P(r) proportional to (r+1)^-s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    if (n == 0) throw Error("zipf: empty support");
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -exponent);
      cdf_[r] = acc;
    }
    for (auto& c : cdf_) c /= acc;
    cdf_.back() = 1.0;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform();
    return static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  }

  std::size_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

enum class SyntheticTask { lm, translation, dialog };

inline SyntheticTask parse_synthetic_task(const std::string& s) {
  if (s == "lm") return SyntheticTask::lm;
  if (s == "translation") return SyntheticTask::translation;
  if (s == "dialog") return SyntheticTask::dialog;
  throw Error("unknown synthetic task '" + s + "'");
}

inline std::string to_string(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::lm: return "lm";
    case SyntheticTask::translation: return "translation";
    case SyntheticTask::dialog: return "dialog";
  }
  return "?";
}

struct SyntheticConfig {
  SyntheticTask task = SyntheticTask::lm;
  int n_users = 60;
  int sentences_per_user = 50;
  int lexicon_size = 300;
  double zipf_exponent = 1.1;
  int min_len = 5;
  int max_len = 12;
  int signatures_per_user = 4;
  int templates_per_user = 3;
  int template_len = 8;
  int template_signatures = 2;   // signature slots inside each template
  double template_rate = 0.3;    // P(sentence is one of the user's templates)
  double signature_rate = 0.1;   // P(free sentence carries a signature token)
  double rank_shuffle = 0.0;     // fraction of lexicon ranks swapped (domain shift)
  double successor_rate = 0.5;   // P(word is its predecessor's fixed successor)
  std::string user_prefix = "u";
  std::string signature_prefix = "s";
  std::uint64_t seed = 1;

  void validate() const {
    if (n_users < 1 || sentences_per_user < 1) throw Error("synthetic: need users and sentences");
    if (lexicon_size < 1) throw Error("synthetic: lexicon_size must be >= 1");
    if (!(zipf_exponent > 0)) throw Error("synthetic: zipf_exponent must be > 0");
    if (min_len < 2 || max_len < min_len) throw Error("synthetic: need 2 <= min_len <= max_len");
    if (template_len < 2) throw Error("synthetic: template_len must be >= 2");
    if (template_signatures > template_len) throw Error("synthetic: too many template signatures");
    if (signatures_per_user < 0 || templates_per_user < 0) throw Error("synthetic: negative counts");
    if ((template_signatures > 0 || signature_rate > 0) && signatures_per_user == 0)
      throw Error("synthetic: signature slots need signatures_per_user >= 1");
    for (double p : {template_rate, signature_rate, rank_shuffle, successor_rate})
      if (p < 0 || p > 1) throw Error("synthetic: rates must be in [0, 1]");
    if (template_rate > 0 && templates_per_user == 0)
      throw Error("synthetic: template_rate > 0 needs templates_per_user >= 1");
  }
};

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = nlohmann::json{{"task", to_string(c.task)},
                     {"n_users", c.n_users},
                     {"sentences_per_user", c.sentences_per_user},
                     {"lexicon_size", c.lexicon_size},
                     {"zipf_exponent", c.zipf_exponent},
                     {"min_len", c.min_len},
                     {"max_len", c.max_len},
                     {"signatures_per_user", c.signatures_per_user},
                     {"templates_per_user", c.templates_per_user},
                     {"template_len", c.template_len},
                     {"template_signatures", c.template_signatures},
                     {"template_rate", c.template_rate},
                     {"signature_rate", c.signature_rate},
                     {"rank_shuffle", c.rank_shuffle},
                     {"successor_rate", c.successor_rate},
                     {"user_prefix", c.user_prefix},
                     {"signature_prefix", c.signature_prefix},
                     {"seed", c.seed}};
}

inline std::string lexicon_word(std::size_t rank) { return "w" + std::to_string(rank); }

// Deterministic in `cfg` (including its seed).
inline std::vector<Record> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const ZipfSampler zipf(static_cast<std::size_t>(cfg.lexicon_size), cfg.zipf_exponent);

  // Rank -> word; a partial shuffle moves the corpus into a "different
  // domain" that shares the lexicon but not its frequency profile.
  std::vector<std::size_t> word_of_rank = iota_indices(zipf.size());
  if (cfg.rank_shuffle > 0) {
    Rng rng(derive_seed(cfg.seed, "rank_shuffle"));
    const auto swaps = static_cast<std::size_t>(cfg.rank_shuffle * static_cast<double>(zipf.size()));
    for (std::size_t s = 0; s < swaps; ++s)
      std::swap(word_of_rank[rng.below(zipf.size())], word_of_rank[rng.below(zipf.size())]);
  }
  // Corpus-wide successor table: shared local structure that a model can
  // learn from any user. Successors are Zipf draws, so the unigram law is
  // kept in expectation.
  std::vector<std::size_t> successor(zipf.size());
  {
    Rng rng(derive_seed(cfg.seed, "successors"));
    for (auto& r : successor) r = zipf(rng);
  }
  auto sample_phrase = [&](Rng& rng, std::size_t len) {
    std::vector<std::string> words;
    std::size_t prev = 0;
    for (std::size_t i = 0; i < len; ++i) {
      prev = (i > 0 && cfg.successor_rate > 0 && rng.bernoulli(cfg.successor_rate)) ? successor[prev] : zipf(rng);
      words.push_back(lexicon_word(word_of_rank[prev]));
    }
    return words;
  };

  std::vector<Record> out;
  for (int u = 0; u < cfg.n_users; ++u) {
    Rng rng(derive_seed(cfg.seed, "synthetic_user", static_cast<std::uint64_t>(u)));
    char uid[32];
    std::snprintf(uid, sizeof(uid), "%04d", u);
    const std::string user_id = cfg.user_prefix + uid;

    std::vector<std::string> signatures;
    for (int s = 0; s < cfg.signatures_per_user; ++s)
      signatures.push_back(cfg.signature_prefix + uid + "_" + std::to_string(s));
    auto sample_signature = [&] { return signatures[rng.below(signatures.size())]; };

    std::vector<std::vector<std::string>> templates;
    for (int t = 0; t < cfg.templates_per_user; ++t) {
      auto phrase = sample_phrase(rng, static_cast<std::size_t>(cfg.template_len));
      auto slots = iota_indices(phrase.size());
      rng.shuffle(slots);
      for (int i = 0; i < cfg.template_signatures; ++i) phrase[slots[static_cast<std::size_t>(i)]] = sample_signature();
      templates.push_back(std::move(phrase));
    }

    const int n_sentences = cfg.sentences_per_user + (cfg.task == SyntheticTask::dialog ? 1 : 0);
    std::vector<std::vector<std::string>> sentences;
    for (int s = 0; s < n_sentences; ++s) {
      if (!templates.empty() && rng.bernoulli(cfg.template_rate)) {
        sentences.push_back(templates[rng.below(templates.size())]);
        continue;
      }
      const auto len = static_cast<std::size_t>(cfg.min_len) +
                       rng.below(static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1));
      auto sent = sample_phrase(rng, len);
      if (!signatures.empty() && rng.bernoulli(cfg.signature_rate)) sent[rng.below(len)] = sample_signature();
      sentences.push_back(std::move(sent));
    }

    for (int s = 0; s < cfg.sentences_per_user; ++s) {
      Record rec;
      rec.user_id = user_id;
      rec.text = sentences[static_cast<std::size_t>(s)];
      if (cfg.task == SyntheticTask::translation) {
        std::vector<std::string> tgt;
        for (const auto& w : rec.text) tgt.push_back("t" + w);
        rec.target = std::move(tgt);
      } else if (cfg.task == SyntheticTask::dialog) {
        rec.target = sentences[static_cast<std::size_t>(s) + 1];
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace paudit
