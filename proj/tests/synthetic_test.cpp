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


#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "paudit/synthetic.hpp"

namespace paudit {
namespace {

// Fraction of token mass carried by the `top` most frequent token types.
double top_mass(const std::vector<Record>& recs, double fraction) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& r : recs)
    for (const auto& w : r.text) ++counts[w], ++total;
  std::vector<std::size_t> c;
  for (const auto& [w, n] : counts) c.push_back(n);
  std::sort(c.rbegin(), c.rend());
  const auto top = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(c.size())));
  std::size_t mass = 0;
  for (std::size_t i = 0; i < top; ++i) mass += c[i];
  return static_cast<double>(mass) / static_cast<double>(total);
}

TEST(ZipfSampler, MatchesThePowerLaw) {
  const std::size_t n = 50;
  const double s = 1.1;
  ZipfSampler z(n, s);
  Rng rng(4);
  std::vector<double> hits(n, 0);
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) hits[z(rng)] += 1;
  double norm = 0;
  for (std::size_t r = 1; r <= n; ++r) norm += std::pow(static_cast<double>(r), -s);
  for (std::size_t r : {0u, 1u, 4u, 20u}) {
    const double p = std::pow(static_cast<double>(r + 1), -s) / norm;
    EXPECT_NEAR(hits[r] / draws, p, 4 * std::sqrt(p * (1 - p) / draws) + 1e-4) << "rank " << r;
  }
}

TEST(GenerateSynthetic, SameConfigSameRecords) {
  SyntheticConfig c;
  c.n_users = 5;
  c.sentences_per_user = 7;
  auto a = generate_synthetic(c);
  auto b = generate_synthetic(c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].user_id, b[i].user_id);
    EXPECT_EQ(a[i].text, b[i].text);
  }
  c.seed = 2;
  auto d = generate_synthetic(c);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].text != d[i].text;
  EXPECT_TRUE(differs);
}

TEST(GenerateSynthetic, RecordCountIsUsersTimesSentences) {
  SyntheticConfig c;
  c.n_users = 60;
  c.sentences_per_user = 50;
  auto recs = generate_synthetic(c);
  EXPECT_EQ(recs.size(), 3000u);
  std::set<std::string> users;
  for (const auto& r : recs) users.insert(r.user_id);
  EXPECT_EQ(users.size(), 60u);
}

TEST(GenerateSynthetic, HeadTokensCarryMostOfTheMass) {
  SyntheticConfig c;
  c.n_users = 60;
  c.sentences_per_user = 50;
  c.zipf_exponent = 1.1;
  EXPECT_GE(top_mass(generate_synthetic(c), 0.2), 0.8);
}

// With every structural component switched off, the corpus is i.i.d. Zipf,
// so the head share has a closed form.
TEST(GenerateSynthetic, PureZipfHeadShareMatchesClosedForm) {
  SyntheticConfig c;
  c.n_users = 40;
  c.sentences_per_user = 50;
  c.lexicon_size = 300;
  c.zipf_exponent = 1.1;
  c.successor_rate = 0.0;
  c.template_rate = 0.0;
  c.signature_rate = 0.0;
  c.template_signatures = 0;
  c.signatures_per_user = 0;
  c.templates_per_user = 0;
  auto recs = generate_synthetic(c);

  const std::size_t head = 60;  // top 20% of the lexicon ranks
  double num = 0, den = 0;
  for (int r = 1; r <= c.lexicon_size; ++r) {
    const double p = std::pow(r, -c.zipf_exponent);
    den += p;
    if (static_cast<std::size_t>(r) <= head) num += p;
  }
  std::size_t in_head = 0, total = 0;
  for (const auto& rec : recs)
    for (const auto& w : rec.text) {
      in_head += std::stoul(w.substr(1)) < head;
      ++total;
    }
  EXPECT_NEAR(static_cast<double>(in_head) / static_cast<double>(total), num / den, 0.02);
}

TEST(GenerateSynthetic, UsersCarryTheirOwnSignatures) {
  SyntheticConfig c;
  c.n_users = 6;
  c.sentences_per_user = 40;
  for (const auto& r : generate_synthetic(c))
    for (const auto& w : r.text)
      if (w[0] == 's') EXPECT_EQ(w.substr(1, 4), r.user_id.substr(1)) << w;
}

TEST(GenerateSynthetic, PairedTasksHaveTargets) {
  SyntheticConfig c;
  c.n_users = 3;
  c.sentences_per_user = 4;
  c.task = SyntheticTask::translation;
  for (const auto& r : generate_synthetic(c)) {
    ASSERT_TRUE(r.target);
    ASSERT_EQ(r.target->size(), r.text.size());
    EXPECT_EQ((*r.target)[0], "t" + r.text[0]);
  }
  c.task = SyntheticTask::dialog;
  auto d = generate_synthetic(c);
  EXPECT_EQ(d.size(), 12u);
  EXPECT_EQ(*d[0].target, d[1].text);
}

TEST(GenerateSynthetic, RankShuffleKeepsLexiconButMovesFrequencies) {
  SyntheticConfig c;
  c.n_users = 20;
  c.sentences_per_user = 30;
  auto base = generate_synthetic(c);
  c.rank_shuffle = 0.5;
  auto shifted = generate_synthetic(c);
  auto top_word = [](const std::vector<Record>& recs) {
    std::map<std::string, int> counts;
    for (const auto& r : recs)
      for (const auto& w : r.text)
        if (w[0] == 'w') counts[w]++;
    return std::max_element(counts.begin(), counts.end(),
                            [](const auto& a, const auto& b) { return a.second < b.second; })
        ->first;
  };
  EXPECT_EQ(top_word(base), "w0");
  for (const auto& r : shifted)
    for (const auto& w : r.text)
      if (w[0] == 'w') EXPECT_LT(std::stoi(w.substr(1)), c.lexicon_size);
}

TEST(SyntheticConfig, RejectsInvalidParameters) {
  SyntheticConfig c;
  c.zipf_exponent = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.min_len = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.successor_rate = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.signatures_per_user = 0;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace paudit
