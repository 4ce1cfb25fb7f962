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

// Black-box query surface: the auditor only ever sees ranked token ids,
// truncated to the service's output size, never probabilities.
//
// Wire protocol (UTF-8, one JSON object per LF-terminated line):
//   request   {"id": 7, "x": [3, 4, 5]}                 next-word model
//             {"id": 7, "x": [...], "y": [...]}         seq2seq, teacher forced
//             {"id": 7, "info": true}                   model metadata
//   response  {"id": 7, "positions": [[...], [...]]}
//             {"id": 7, "vocab_size": V, "task": "...", "output_k": k}
//             {"id": 7, "error": "bad token"}
// Responses on one connection come back in request order.

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/textgen.hpp"

namespace paudit {

struct QueryResult {
  std::vector<TokenSeq> positions;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

class QueryError : public Error {
 public:
  using Error::Error;
};

class BudgetExceeded : public QueryError {
 public:
  BudgetExceeded() : QueryError("query budget exceeded") {}
};

inline constexpr std::string_view kBadToken = "bad token";
inline constexpr std::string_view kBudgetExceeded = "query budget exceeded";

// Per-position rankings of `model`, truncated to `k` (0 means the whole
// vocabulary). Next-word models rank x[j+1] given x[0..j]; seq2seq models
// rank y[j] given x and y[0..j).
inline QueryResult answer_query(const TextModel& model, std::span<const TokenId> x,
                                const std::optional<TokenSeq>& y, std::size_t k) {
  const auto v = model.vocab_size();
  auto check = [&](std::span<const TokenId> seq) {
    for (TokenId t : seq)
      if (t < 0 || static_cast<std::size_t>(t) >= v) throw QueryError(std::string(kBadToken));
  };
  check(x);
  if (y) check(*y);
  const std::size_t keep = (k == 0 || k > v) ? v : k;
  Matrix probs;
  if (model.config().task == Task::next_word) {
    if (y) throw QueryError("malformed request: next-word queries take no y");
    if (x.size() < 2) throw QueryError("malformed request: x needs at least two tokens");
    probs = model.forward_lm(x);
  } else {
    if (!y) throw QueryError("malformed request: seq2seq queries need y");
    if (x.empty() || y->empty()) throw QueryError("malformed request: empty x or y");
    probs = model.forward_seq2seq(x, *y);
  }
  QueryResult r;
  r.positions.reserve(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index j = 0; j < probs.cols(); ++j) r.positions.push_back(truncate_topk(probs.col(j), keep));
  return r;
}

class QueryBackend {
 public:
  virtual ~QueryBackend() = default;
  virtual QueryResult answer(std::span<const TokenId> x, const std::optional<TokenSeq>& y,
                             std::size_t k) = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual Task task() const = 0;
};

class LocalBackend : public QueryBackend {
 public:
  explicit LocalBackend(std::shared_ptr<const TextModel> model) : model_(std::move(model)) {}

  QueryResult answer(std::span<const TokenId> x, const std::optional<TokenSeq>& y,
                     std::size_t k) override {
    return answer_query(*model_, x, y, k);
  }
  std::size_t vocab_size() const override { return model_->vocab_size(); }
  Task task() const override { return model_->config().task; }

 private:
  std::shared_ptr<const TextModel> model_;
};

// The auditor's view of a target: output truncation plus an optional query
// budget. Safe to share across threads; budget accounting is atomic.
class TargetHandle {
 public:
  TargetHandle(std::shared_ptr<QueryBackend> backend, std::size_t output_k = 0,
               std::optional<std::size_t> budget = std::nullopt)
      : backend_(std::move(backend)), budget_(budget) {
    const auto v = backend_->vocab_size();
    output_k_ = (output_k == 0 || output_k > v) ? v : output_k;
  }

  static TargetHandle local(std::shared_ptr<const TextModel> model, std::size_t output_k = 0,
                            std::optional<std::size_t> budget = std::nullopt) {
    return TargetHandle(std::make_shared<LocalBackend>(std::move(model)), output_k, budget);
  }

  TargetHandle(const TargetHandle& o)
      : backend_(o.backend_), output_k_(o.output_k_), budget_(o.budget_), used_(o.used_.load()) {}

  QueryResult query(std::span<const TokenId> x, const std::optional<TokenSeq>& y = std::nullopt) {
    std::size_t cur = used_.load();
    do {
      if (budget_ && cur >= *budget_) throw BudgetExceeded();
    } while (!used_.compare_exchange_weak(cur, cur + 1));
    QueryResult r = backend_->answer(x, y, output_k_);
    for (auto& p : r.positions)
      if (p.size() > output_k_) p.resize(output_k_);
    return r;
  }

  std::size_t output_k() const { return output_k_; }
  std::size_t vocab_size() const { return backend_->vocab_size(); }
  Task task() const { return backend_->task(); }
  std::size_t queries_used() const { return used_.load(); }
  std::optional<std::size_t> budget() const { return budget_; }

 private:
  std::shared_ptr<QueryBackend> backend_;
  std::size_t output_k_ = 0;
  std::optional<std::size_t> budget_;
  std::atomic<std::size_t> used_{0};
};

namespace wire {

inline std::string encode_request(std::int64_t id, std::span<const TokenId> x,
                                  const std::optional<TokenSeq>& y) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["x"] = std::vector<TokenId>(x.begin(), x.end());
  if (y) j["y"] = *y;
  return j.dump();
}

// Per-connection server state.
struct Session {
  std::optional<std::size_t> budget;
  std::size_t used = 0;
};

// Answers one request line; never throws. The id is echoed whenever the
// request parsed far enough to have one.
inline std::string handle_line(const std::string& line, const TextModel& model, std::size_t output_k,
                               Session& session) {
  nlohmann::ordered_json resp;
  resp["id"] = nullptr;
  try {
    auto req = nlohmann::json::parse(line);
    if (!req.is_object()) throw QueryError("malformed request");
    if (req.contains("id")) resp["id"] = req["id"];
    if (!req.contains("id") || !req["id"].is_number_integer()) throw QueryError("malformed request: id");
    if (req.value("info", false)) {
      resp["vocab_size"] = model.vocab_size();
      resp["task"] = to_string(model.config().task);
      resp["output_k"] = output_k == 0 ? model.vocab_size() : std::min(output_k, model.vocab_size());
      return resp.dump();
    }
    auto ids = [](const nlohmann::json& a) {
      if (!a.is_array()) throw QueryError("malformed request: token arrays expected");
      TokenSeq out;
      for (const auto& t : a) {
        if (!t.is_number_integer()) throw QueryError(std::string(kBadToken));
        auto v = t.get<std::int64_t>();
        if (v < 0 || v > std::numeric_limits<TokenId>::max()) throw QueryError(std::string(kBadToken));
        out.push_back(static_cast<TokenId>(v));
      }
      return out;
    };
    if (!req.contains("x")) throw QueryError("malformed request: missing x");
    TokenSeq x = ids(req["x"]);
    std::optional<TokenSeq> y;
    if (req.contains("y") && !req["y"].is_null()) y = ids(req["y"]);
    if (session.budget && session.used >= *session.budget) throw QueryError(std::string(kBudgetExceeded));
    auto result = answer_query(model, x, y, output_k);
    ++session.used;
    resp["positions"] = result.positions;
  } catch (const nlohmann::json::exception&) {
    resp["error"] = "malformed request";
  } catch (const std::exception& e) {
    resp["error"] = e.what();
  }
  return resp.dump();
}

}  // namespace wire

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos) throw Error("address must be host:port, got '" + s + "'");
    Endpoint e;
    e.host = s.substr(0, colon);
    const int port = std::stoi(s.substr(colon + 1));
    if (port < 0 || port > 65535) throw Error("bad port in '" + s + "'");
    e.port = static_cast<std::uint16_t>(port);
    return e;
  }

  std::string str() const { return host + ":" + std::to_string(port); }
};

namespace detail {

inline void send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("send failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Buffered line reader over a socket.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  // False on orderly EOF. `timeout_ms` < 0 blocks; otherwise returns false
  // with `timed_out` set when nothing arrived.
  bool read_line(std::string& line, int timeout_ms = -1, bool* timed_out = nullptr) {
    if (timed_out) *timed_out = false;
    for (;;) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        line = buf_.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        buf_.erase(0, nl + 1);
        return true;
      }
      if (timeout_ms >= 0) {
        pollfd p{fd_, POLLIN, 0};
        int r = ::poll(&p, 1, timeout_ms);
        if (r == 0) {
          if (timed_out) *timed_out = true;
          return false;
        }
        if (r < 0 && errno != EINTR) return false;
        if (r < 0) continue;
      }
      char chunk[4096];
      ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

}  // namespace detail

struct ServeOptions {
  Endpoint bind;
  std::size_t output_k = 0;  // 0 = whole vocabulary
  std::optional<std::size_t> per_client_budget;
};

// Line-oriented TCP query service; one thread per connection. The model is
// read-only while serving.
class QueryServer {
 public:
  QueryServer(std::shared_ptr<const TextModel> model, ServeOptions options)
      : model_(std::move(model)), options_(std::move(options)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(options_.bind.port);
    if (::inet_pton(AF_INET, options_.bind.host.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw Error("bind address must be an IPv4 literal: " + options_.bind.host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      throw Error("cannot listen on " + options_.bind.str() + ": " + why);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  QueryServer(const QueryServer&) = delete;
  QueryServer& operator=(const QueryServer&) = delete;

  ~QueryServer() { stop(); }

  std::uint16_t port() const { return port_; }
  Endpoint endpoint() const { return {options_.bind.host, port_}; }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (acceptor_.joinable()) acceptor_.join();
    ::close(listen_fd_);
    std::vector<std::thread> workers;
    {
      std::lock_guard<std::mutex> lock(mu_);
      workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      pollfd p{listen_fd_, POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard<std::mutex> lock(mu_);
      workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }

  void serve_connection(int fd) {
    wire::Session session{options_.per_client_budget, 0};
    detail::LineReader reader(fd);
    std::string line;
    try {
      while (!stopping_) {
        bool timed_out = false;
        if (!reader.read_line(line, 100, &timed_out)) {
          if (timed_out) continue;
          break;
        }
        if (line.empty()) continue;
        std::string resp = wire::handle_line(line, *model_, options_.output_k, session);
        resp.push_back('\n');
        detail::send_all(fd, resp);
      }
    } catch (const std::exception&) {
      // Peer went away mid-write; drop the connection.
    }
    ::close(fd);
  }

  std::shared_ptr<const TextModel> model_;
  ServeOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
};

// Client side of the wire protocol. One connection, serialized requests.
class RemoteBackend : public QueryBackend {
 public:
  explicit RemoteBackend(const Endpoint& endpoint) {
    addrinfo hints{}, *res = nullptr;
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (::getaddrinfo(endpoint.host.c_str(), std::to_string(endpoint.port).c_str(), &hints, &res) != 0)
      throw Error("cannot resolve " + endpoint.str());
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
      ::freeaddrinfo(res);
      if (fd_ >= 0) ::close(fd_);
      throw Error("cannot connect to " + endpoint.str());
    }
    ::freeaddrinfo(res);
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    reader_ = std::make_unique<detail::LineReader>(fd_);
    auto info = roundtrip(nlohmann::json{{"id", next_id_++}, {"info", true}}.dump());
    vocab_size_ = info.at("vocab_size").get<std::size_t>();
    task_ = parse_task(info.at("task").get<std::string>());
    server_k_ = info.at("output_k").get<std::size_t>();
  }

  RemoteBackend(const RemoteBackend&) = delete;
  RemoteBackend& operator=(const RemoteBackend&) = delete;
  ~RemoteBackend() override {
    if (fd_ >= 0) ::close(fd_);
  }

  QueryResult answer(std::span<const TokenId> x, const std::optional<TokenSeq>& y,
                     std::size_t k) override {
    auto resp = roundtrip_locked(x, y);
    QueryResult r;
    r.positions = resp.at("positions").get<std::vector<TokenSeq>>();
    for (auto& p : r.positions)
      if (k > 0 && p.size() > k) p.resize(k);
    return r;
  }

  std::size_t vocab_size() const override { return vocab_size_; }
  Task task() const override { return task_; }
  std::size_t server_output_k() const { return server_k_; }

 private:
  nlohmann::json roundtrip_locked(std::span<const TokenId> x, const std::optional<TokenSeq>& y) {
    std::lock_guard<std::mutex> lock(mu_);
    return roundtrip(wire::encode_request(next_id_++, x, y));
  }

  nlohmann::json roundtrip(const std::string& request) {
    detail::send_all(fd_, request + "\n");
    std::string line;
    if (!reader_->read_line(line)) throw QueryError("connection closed by query server");
    auto resp = nlohmann::json::parse(line);
    if (resp.contains("error")) {
      const auto msg = resp["error"].get<std::string>();
      if (msg == kBudgetExceeded) throw BudgetExceeded();
      throw QueryError(msg);
    }
    return resp;
  }

  int fd_ = -1;
  std::unique_ptr<detail::LineReader> reader_;
  std::mutex mu_;
  std::int64_t next_id_ = 0;
  std::size_t vocab_size_ = 0;
  std::size_t server_k_ = 0;
  Task task_ = Task::next_word;
};

inline TargetHandle connect_target(const Endpoint& endpoint, std::size_t output_k = 0,
                                   std::optional<std::size_t> budget = std::nullopt) {
  return TargetHandle(std::make_shared<RemoteBackend>(endpoint), output_k, budget);
}

}  // namespace paudit
