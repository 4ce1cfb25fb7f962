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

#include <algorithm>
#include <cmath>
#include <sstream>

#include "paudit/checkpoint.hpp"
#include "paudit/textgen.hpp"
#include "test_support.hpp"

namespace paudit {
namespace {

using nn::CellType;

TEST(NllLoss, PerfectPredictionsCostNothing) {
  Matrix d = Matrix::Zero(4, 3);
  d(2, 0) = d(0, 1) = d(3, 2) = 1.0;
  TokenSeq y{2, 0, 3};
  EXPECT_DOUBLE_EQ(nll_loss(d, y), 0.0);
}

TEST(NllLoss, UniformOverFour) {
  Matrix d = Matrix::Constant(4, 2, 0.25);
  TokenSeq y{1, 3};
  EXPECT_NEAR(nll_loss(d, y), 2 * std::log(4.0), 1e-12);
  TokenSeq short_y{1};
  EXPECT_THROW(nll_loss(d, short_y), Error);
}

TEST(RankOf, ArgmaxIsRankZero) {
  Vector p(4);
  p << 0.1, 0.6, 0.2, 0.1;
  EXPECT_EQ(rank_of(p, 1), 0u);
  EXPECT_THROW(rank_of(p, 4), Error);
}

TEST(RankOf, UniformTiesBreakById) {
  Vector p = Vector::Constant(5, 0.2);
  EXPECT_EQ(rank_of(p, 3), 3u);
}

// "Je" is the second likeliest word at its position: 0-indexed rank 1.
TEST(RankOf, SecondLikeliestWordHasRankOne) {
  Vector p(5);
  p << 0.05, 0.30, 0.40, 0.15, 0.10;  // id 1 plays "Je"
  EXPECT_EQ(rank_of(p, 1), 1u);
}

TEST(RankOf, RanksFormAPermutation) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector p(12);
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = static_cast<double>(rng.below(4));  // many ties
    std::vector<std::size_t> ranks;
    for (TokenId t = 0; t < 12; ++t) ranks.push_back(rank_of(p, t));
    std::sort(ranks.begin(), ranks.end());
    EXPECT_EQ(ranks, iota_indices(12));
  }
}

TEST(TruncateTopk, FullAndSingle) {
  Vector p(4);
  p << 0.1, 0.4, 0.4, 0.1;
  EXPECT_EQ(truncate_topk(p, 4), (TokenSeq{1, 2, 0, 3}));
  EXPECT_EQ(truncate_topk(p, 1), (TokenSeq{1}));
  EXPECT_THROW(truncate_topk(p, 0), Error);
  EXPECT_THROW(truncate_topk(p, 5), Error);
}

TEST(TruncateTopk, ShorterListsArePrefixesAndMatchRanks) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t v = 2 + rng.below(30);
    Vector p(static_cast<Eigen::Index>(v));
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.bernoulli(0.3) ? 0.5 : rng.uniform();
    const auto full = truncate_topk(p, v);
    const std::size_t k = 1 + rng.below(v);
    const auto part = truncate_topk(p, k);
    ASSERT_TRUE(std::equal(part.begin(), part.end(), full.begin()));
    for (std::size_t r = 0; r < v; ++r) ASSERT_EQ(rank_of(p, full[r]), r);
  }
}

TEST(TextModel, DistributionsAreColumnsOfProbabilities) {
  for (Task task : {Task::next_word, Task::seq2seq_attn, Task::seq2seq_plain}) {
    TextModel m(testing::tiny_config(task, CellType::lstm, 9, 6));
    Rng rng(1);
    const Example ex = testing::random_example(rng, task, 9, 5);
    const Matrix p = m.distributions(ex);
    ASSERT_EQ(p.rows(), 9);
    ASSERT_EQ(p.cols(), 5);
    for (Eigen::Index j = 0; j < p.cols(); ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-12);
  }
}

TEST(TextModel, RejectsOutOfRangeTokens) {
  TextModel m(testing::tiny_config(Task::next_word, CellType::gru, 5, 4));
  EXPECT_THROW(m.forward_lm(TokenSeq{1, 5}), Error);
  EXPECT_THROW(m.forward_lm(TokenSeq{1, -1}), Error);
  EXPECT_THROW(m.forward_lm(TokenSeq{1}), Error);
  EXPECT_THROW(m.forward_seq2seq(TokenSeq{1}, TokenSeq{2}), Error);
}

TEST(TextModel, LanguageModelIsCausal) {
  TextModel m(testing::tiny_config(Task::next_word, CellType::lstm, 10, 6));
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSeq seq = testing::random_tokens(rng, 8, 10);
    const Matrix a = m.forward_lm(seq);
    const std::size_t cut = 1 + rng.below(6);
    for (std::size_t i = cut + 1; i < seq.size(); ++i) seq[i] = static_cast<TokenId>(rng.below(10));
    const Matrix b = m.forward_lm(seq);
    // Column j only sees seq[0..j].
    for (std::size_t j = 0; j <= cut; ++j) EXPECT_EQ(a.col(static_cast<Eigen::Index>(j)), b.col(static_cast<Eigen::Index>(j)));
  }
}

TEST(TextModel, TeacherForcedDecoderIsCausal) {
  for (Task task : {Task::seq2seq_attn, Task::seq2seq_plain}) {
    TextModel m(testing::tiny_config(task, CellType::gru, 10, 6));
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const TokenSeq x = testing::random_tokens(rng, 5, 10);
      TokenSeq y = testing::random_tokens(rng, 6, 10);
      const Matrix a = m.forward_seq2seq(x, y);
      const std::size_t j0 = rng.below(6);
      for (std::size_t i = j0; i < y.size(); ++i) y[i] = static_cast<TokenId>(rng.below(10));
      const Matrix b = m.forward_seq2seq(x, y);
      for (std::size_t j = 0; j <= j0; ++j)
        EXPECT_EQ(a.col(static_cast<Eigen::Index>(j)), b.col(static_cast<Eigen::Index>(j)));
    }
  }
}

TEST(TextModel, AttentionWeightsAreDistributions) {
  TextModel m(testing::tiny_config(Task::seq2seq_attn, CellType::lstm, 10, 6));
  std::vector<Vector> w;
  m.forward_seq2seq(TokenSeq{1, 2, 3}, TokenSeq{4, 5}, &w);
  ASSERT_EQ(w.size(), 2u);
  for (const auto& a : w) {
    EXPECT_EQ(a.size(), 3);
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
  }
}

TEST(TextModel, InitializationIsSmallUniformWithZeroBiases) {
  TextModel m(testing::tiny_config(Task::seq2seq_attn, CellType::lstm, 10, 6));
  for (const auto& a : m.params().arrays()) {
    if (a.name.ends_with(".b")) {
      EXPECT_EQ(a.value.norm(), 0.0) << a.name;
    } else {
      EXPECT_LE(a.value.cwiseAbs().maxCoeff(), 0.08) << a.name;
      EXPECT_GT(a.value.cwiseAbs().maxCoeff(), 0.0) << a.name;
    }
  }
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  for (Task task : {Task::next_word, Task::seq2seq_attn}) {
    TextModel m(testing::tiny_config(task, CellType::gru, 10, 6, 99));
    std::stringstream ss;
    save_checkpoint(m, ss);
    TextModel back = load_checkpoint(ss);
    EXPECT_EQ(back.config(), m.config());
    Rng rng(2);
    const Example ex = testing::random_example(rng, task, 10, 4);
    EXPECT_EQ(back.distributions(ex), m.distributions(ex));
  }
}

TEST(Checkpoint, RejectsForeignBytes) {
  std::stringstream ss("not a checkpoint\n");
  EXPECT_THROW(load_checkpoint(ss), Error);
}

}  // namespace
}  // namespace paudit
