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

#include <atomic>
#include <thread>

#include "paudit/blackbox.hpp"
#include "test_support.hpp"

namespace paudit {
namespace {

using nn::CellType;

std::shared_ptr<const TextModel> lm(int vocab = 12, std::uint64_t seed = 3) {
  return std::make_shared<const TextModel>(testing::tiny_config(Task::next_word, CellType::lstm, vocab, 6, seed));
}

std::shared_ptr<const TextModel> s2s(int vocab = 12) {
  return std::make_shared<const TextModel>(testing::tiny_config(Task::seq2seq_attn, CellType::gru, vocab, 6));
}

// A bare line-protocol client for poking at the server directly.
class RawClient {
 public:
  explicit RawClient(const Endpoint& e) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    ::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) throw Error("connect failed");
    reader_ = std::make_unique<detail::LineReader>(fd_);
  }
  ~RawClient() { ::close(fd_); }

  nlohmann::json ask(const std::string& line) {
    detail::send_all(fd_, line + "\n");
    std::string resp;
    if (!reader_->read_line(resp, 5000)) throw Error("no response");
    return nlohmann::json::parse(resp);
  }

 private:
  int fd_ = -1;
  std::unique_ptr<detail::LineReader> reader_;
};

TEST(AnswerQuery, OutputSizeOneIsTheArgmax) {
  auto m = lm();
  TokenSeq x{1, 4, 7, 2};
  auto r = answer_query(*m, x, std::nullopt, 1);
  const Matrix p = m->forward_lm(x);
  ASSERT_EQ(r.positions.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    Eigen::Index best;
    p.col(static_cast<Eigen::Index>(j)).maxCoeff(&best);
    EXPECT_EQ(r.positions[j], (TokenSeq{static_cast<TokenId>(best)}));
  }
}

TEST(AnswerQuery, FullOutputIsTheRanking) {
  auto m = s2s();
  TokenSeq x{1, 2}, y{3, 4, 5};
  auto r = answer_query(*m, x, y, 0);
  const Matrix p = m->forward_seq2seq(x, y);
  ASSERT_EQ(r.positions.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    ASSERT_EQ(r.positions[j].size(), 12u);
    for (std::size_t rank = 0; rank < 12; ++rank)
      EXPECT_EQ(rank_of(p.col(static_cast<Eigen::Index>(j)), r.positions[j][rank]), rank);
  }
}

TEST(AnswerQuery, RejectsBadInputs) {
  auto m = lm();
  EXPECT_THROW(answer_query(*m, TokenSeq{1, 12}, std::nullopt, 0), QueryError);
  EXPECT_THROW(answer_query(*m, TokenSeq{1}, std::nullopt, 0), QueryError);
  EXPECT_THROW(answer_query(*m, TokenSeq{1, 2}, TokenSeq{3}, 0), QueryError);
  EXPECT_THROW(answer_query(*s2s(), TokenSeq{1, 2}, std::nullopt, 0), QueryError);
}

TEST(TargetHandle, BudgetOfTwo) {
  auto h = TargetHandle::local(lm(), 0, 2);
  TokenSeq x{1, 2, 3};
  h.query(x);
  h.query(x);
  try {
    h.query(x);
    FAIL();
  } catch (const BudgetExceeded& e) {
    EXPECT_STREQ(e.what(), "query budget exceeded");
  }
  EXPECT_EQ(h.queries_used(), 2u);
}

TEST(TargetHandle, BudgetIsExactUnderConcurrency) {
  auto h = TargetHandle::local(lm(), 3, 200);
  std::atomic<int> ok{0}, refused{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 50; ++i) {
        try {
          h.query(TokenSeq{1, 2, 3});
          ok++;
        } catch (const BudgetExceeded&) {
          refused++;
        }
      }
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 200);
  EXPECT_EQ(refused.load(), 200);
}

TEST(TargetHandle, TruncatesToItsOutputSize) {
  auto h = TargetHandle::local(lm(), 4);
  for (const auto& p : h.query(TokenSeq{1, 2, 3, 4}).positions) EXPECT_EQ(p.size(), 4u);
  EXPECT_EQ(TargetHandle::local(lm(), 100).output_k(), 12u);
}

TEST(WireProtocol, LanguageModelRequest) {
  auto m = lm();
  wire::Session s;
  auto resp = nlohmann::json::parse(wire::handle_line(R"({"id":1,"x":[3,4,5]})", *m, 0, s));
  EXPECT_EQ(resp["id"], 1);
  ASSERT_EQ(resp["positions"].size(), 2u);
  EXPECT_EQ(resp["positions"][0].size(), 12u);
}

TEST(WireProtocol, ErrorsEchoTheId) {
  auto m = lm();
  wire::Session s;
  auto bad = nlohmann::json::parse(wire::handle_line(R"({"id":9,"x":[3,99]})", *m, 0, s));
  EXPECT_EQ(bad["id"], 9);
  EXPECT_EQ(bad["error"], "bad token");
  auto garbled = nlohmann::json::parse(wire::handle_line("{not json", *m, 0, s));
  EXPECT_TRUE(garbled["id"].is_null());
  EXPECT_EQ(garbled["error"], "malformed request");
  auto no_id = nlohmann::json::parse(wire::handle_line(R"({"x":[1,2]})", *m, 0, s));
  EXPECT_TRUE(no_id.contains("error"));
  auto frac = nlohmann::json::parse(wire::handle_line(R"({"id":2,"x":[1,2.5]})", *m, 0, s));
  EXPECT_EQ(frac["error"], "bad token");
  EXPECT_EQ(s.used, 0u);
}

TEST(QueryServer, MalformedLineKeepsConnectionOpen) {
  QueryServer server(lm(), ServeOptions{Endpoint{"127.0.0.1", 0}, 0, std::nullopt});
  RawClient c(server.endpoint());
  EXPECT_EQ(c.ask("garbage")["error"], "malformed request");
  auto ok = c.ask(R"({"id":5,"x":[1,2,3]})");
  EXPECT_EQ(ok["id"], 5);
  EXPECT_EQ(ok["positions"].size(), 2u);
}

TEST(QueryServer, PerClientBudget) {
  QueryServer server(lm(), ServeOptions{Endpoint{"127.0.0.1", 0}, 0, 1});
  RawClient a(server.endpoint()), b(server.endpoint());
  EXPECT_FALSE(a.ask(R"({"id":1,"x":[1,2]})").contains("error"));
  EXPECT_EQ(a.ask(R"({"id":2,"x":[1,2]})")["error"], "query budget exceeded");
  EXPECT_FALSE(b.ask(R"({"id":1,"x":[1,2]})").contains("error"));
}

TEST(QueryServer, RemoteBudgetSurfacesAsBudgetExceeded) {
  QueryServer server(lm(), ServeOptions{Endpoint{"127.0.0.1", 0}, 0, 1});
  auto h = connect_target(server.endpoint());
  h.query(TokenSeq{1, 2});
  EXPECT_THROW(h.query(TokenSeq{1, 2}), BudgetExceeded);
}

// Over the wire and in process, every query returns the same ranking.
TEST(QueryServer, WireMatchesInProcessOnRandomQueries) {
  for (auto model : {lm(12, 8), s2s()}) {
    for (std::size_t k : {0u, 1u, 5u}) {
      QueryServer server(model, ServeOptions{Endpoint{"127.0.0.1", 0}, k, std::nullopt});
      auto remote = connect_target(server.endpoint(), k);
      auto local = TargetHandle::local(model, k);
      EXPECT_EQ(remote.vocab_size(), local.vocab_size());
      EXPECT_EQ(remote.task(), local.task());
      Rng rng(21 + k);
      for (int q = 0; q < 100; ++q) {
        const TokenSeq x = testing::random_tokens(rng, 2 + rng.below(6), 12);
        std::optional<TokenSeq> y;
        if (model->config().task != Task::next_word) y = testing::random_tokens(rng, 1 + rng.below(5), 12);
        ASSERT_EQ(remote.query(x, y), local.query(x, y)) << "query " << q;
      }
    }
  }
}

TEST(Endpoint, Parse) {
  auto e = Endpoint::parse("127.0.0.1:7878");
  EXPECT_EQ(e.host, "127.0.0.1");
  EXPECT_EQ(e.port, 7878);
  EXPECT_THROW(Endpoint::parse("nohost"), Error);
  EXPECT_THROW(Endpoint::parse("h:70000"), Error);
}

}  // namespace
}  // namespace paudit
