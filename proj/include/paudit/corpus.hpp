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

// Corpus ingestion: tokenization, vocabulary, per-user datasets and splits.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "paudit/common.hpp"

namespace paudit {

// One raw corpus record. Language-model records only carry `text`;
// sequence-to-sequence records carry `text` (source) and `target`.
struct Record {
  std::string user_id;
  std::vector<std::string> text;
  std::optional<std::vector<std::string>> target;

  bool is_pair() const { return target.has_value(); }
};

struct RawUser {
  std::string user_id;
  std::vector<Record> records;
};

struct Example {
  TokenSeq x;
  TokenSeq y;

  friend bool operator==(const Example&, const Example&) = default;
};

struct UserDataset {
  std::string user_id;
  std::vector<Example> examples;

  std::size_t target_count() const {
    std::size_t n = 0;
    for (const auto& e : examples) n += e.y.size();
    return n;
  }
};

// Lowercases, separates terminal punctuation and splits on whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  static constexpr std::string_view kTerminal = ".,!?;:";
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    std::vector<std::string> trailing;
    while (word.size() > 1 && kTerminal.find(word.back()) != std::string_view::npos) {
      trailing.emplace_back(1, word.back());
      word.pop_back();
    }
    out.push_back(word);
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
    word.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

// Token <-> id table ordered by descending corpus frequency. The UNK token
// always takes the last id.
class Vocabulary {
 public:
  static constexpr std::string_view kUnk = "<unk>";

  Vocabulary() { rebuild_index(); }

  // `ranked` must already be in final order; frequencies must be
  // non-increasing.
  Vocabulary(std::vector<std::pair<std::string, std::uint64_t>> ranked,
             std::uint64_t unk_count) {
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (i > 0 && ranked[i].second > ranked[i - 1].second)
        throw Error("vocabulary frequencies must be non-increasing");
      if (ranked[i].first == kUnk) throw Error("vocabulary may not contain <unk>");
      tokens_.push_back(std::move(ranked[i].first));
      freq_.push_back(ranked[i].second);
    }
    tokens_.emplace_back(kUnk);
    freq_.push_back(unk_count);
    rebuild_index();
  }

  std::size_t size() const { return tokens_.size(); }
  TokenId unk_id() const { return static_cast<TokenId>(tokens_.size() - 1); }

  TokenId encode(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? unk_id() : it->second;
  }

  TokenSeq encode(std::span<const std::string> tokens) const {
    TokenSeq out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(encode(t));
    return out;
  }

  const std::string& decode(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw Error("token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<std::string> decode(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId id : ids) out.push_back(decode(id));
    return out;
  }

  std::uint64_t freq(TokenId id) const { return freq_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line in rank order, tab-separated with its frequency.
  // The final line is the UNK token with its out-of-vocabulary count.
  void save(std::ostream& os) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << freq_[i] << '\n';
  }

  static Vocabulary load(std::istream& is) {
    std::vector<std::pair<std::string, std::uint64_t>> ranked;
    std::string line;
    std::optional<std::uint64_t> unk;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw Error("vocabulary line lacks a tab: " + line);
      std::string tok = line.substr(0, tab);
      std::uint64_t f = std::stoull(line.substr(tab + 1));
      if (unk) throw Error("vocabulary has entries after <unk>");
      if (tok == kUnk) {
        unk = f;
      } else {
        ranked.emplace_back(std::move(tok), f);
      }
    }
    if (!unk) throw Error("vocabulary file missing <unk> line");
    return Vocabulary(std::move(ranked), *unk);
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    save(os);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    return load(is);
  }

 private:
  void rebuild_index() {
    if (tokens_.empty()) {
      tokens_.emplace_back(kUnk);
      freq_.push_back(0);
    }
    ids_.clear();
    for (std::size_t i = 0; i + 1 < tokens_.size(); ++i)
      ids_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freq_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Keeps the `max_size` most frequent tokens; ties are broken by
// lexicographic token order.
inline Vocabulary build_vocabulary(std::span<const RawUser> corpus, std::size_t max_size) {
  if (max_size < 1) throw Error("max_size must be >= 1");
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& user : corpus) {
    for (const auto& rec : user.records) {
      for (const auto& t : rec.text) ++counts[t], ++total;
      if (rec.target)
        for (const auto& t : *rec.target) ++counts[t], ++total;
    }
  }
  if (total == 0) throw Error("empty corpus");
  counts.erase(std::string(Vocabulary::kUnk));
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is lexicographic already; a stable sort keeps that
  // order among equal counts.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::uint64_t unk_count = 0;
  if (ranked.size() > max_size) {
    for (std::size_t i = max_size; i < ranked.size(); ++i) unk_count += ranked[i].second;
    ranked.resize(max_size);
  }
  return Vocabulary(std::move(ranked), unk_count);
}

// Splits a token sequence into consecutive windows of at most `max_len`
// tokens; each window of length n >= 2 yields x = w[0, n-1), y = w[1, n).
inline std::vector<Example> make_lm_examples(std::span<const TokenId> sequence,
                                             std::size_t max_len) {
  if (max_len < 2) throw Error("max_len must be >= 2");
  std::vector<Example> out;
  for (std::size_t start = 0; start < sequence.size(); start += max_len) {
    std::size_t n = std::min(max_len, sequence.size() - start);
    if (n < 2) continue;
    Example ex;
    ex.x.assign(sequence.begin() + start, sequence.begin() + start + n - 1);
    ex.y.assign(sequence.begin() + start + 1, sequence.begin() + start + n);
    out.push_back(std::move(ex));
  }
  return out;
}

// The full token sequence a language-model example was cut from.
inline TokenSeq lm_sequence(const Example& ex) {
  TokenSeq seq;
  seq.reserve(ex.x.size() + 1);
  if (!ex.x.empty()) seq.push_back(ex.x.front());
  seq.insert(seq.end(), ex.y.begin(), ex.y.end());
  return seq;
}

// Encodes raw users into datasets. Users that yield no examples are dropped.
inline std::vector<UserDataset> encode_users(std::span<const RawUser> users,
                                             const Vocabulary& vocab, bool seq2seq,
                                             std::size_t max_len) {
  std::vector<UserDataset> out;
  for (const auto& user : users) {
    UserDataset ds{user.user_id, {}};
    for (const auto& rec : user.records) {
      if (seq2seq) {
        if (!rec.target) throw Error("user " + user.user_id + ": record lacks a target");
        if (rec.text.empty() || rec.target->empty()) continue;
        ds.examples.push_back({vocab.encode(rec.text), vocab.encode(*rec.target)});
      } else {
        auto ids = vocab.encode(rec.text);
        auto exs = make_lm_examples(ids, max_len);
        ds.examples.insert(ds.examples.end(), exs.begin(), exs.end());
      }
    }
    if (!ds.examples.empty()) out.push_back(std::move(ds));
  }
  return out;
}

// Groups records by user id, preserving first-appearance order.
inline std::vector<RawUser> group_by_user(std::vector<Record> records) {
  std::vector<RawUser> users;
  std::unordered_map<std::string, std::size_t> where;
  for (auto& rec : records) {
    auto [it, inserted] = where.emplace(rec.user_id, users.size());
    if (inserted) users.push_back({rec.user_id, {}});
    users[it->second].records.push_back(std::move(rec));
  }
  return users;
}

// Assigns every record to one of `n_users` artificial users. Sizes differ by
// at most one.
inline std::vector<RawUser> partition_artificial_users(std::vector<Record> records,
                                                       int n_users, std::uint64_t seed) {
  if (n_users <= 0) throw Error("n_users must be positive");
  if (static_cast<std::size_t>(n_users) > records.size())
    throw Error("n_users exceeds the number of records");
  auto order = iota_indices(records.size());
  Rng rng(derive_seed(seed, "partition"));
  rng.shuffle(order);
  std::vector<RawUser> users(static_cast<std::size_t>(n_users));
  char name[32];
  for (std::size_t u = 0; u < users.size(); ++u) {
    std::snprintf(name, sizeof(name), "user_%05zu", u);
    users[u].user_id = name;
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& user = users[i % users.size()];
    Record rec = std::move(records[order[i]]);
    rec.user_id = user.user_id;
    user.records.push_back(std::move(rec));
  }
  return users;
}

// Holds out round(fraction * |examples|) examples at random. Both halves keep
// the original example order.
inline std::pair<UserDataset, UserDataset> noise_holdout(const UserDataset& user,
                                                         double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("noise fraction must be in [0, 1)");
  const std::size_t n = user.examples.size();
  const auto held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  auto order = iota_indices(n);
  Rng rng(derive_seed(seed, "noise_holdout:" + user.user_id));
  rng.shuffle(order);
  std::vector<bool> is_held(n, false);
  for (std::size_t i = 0; i < held; ++i) is_held[order[i]] = true;
  UserDataset clean{user.user_id, {}}, heldout{user.user_id, {}};
  for (std::size_t i = 0; i < n; ++i)
    (is_held[i] ? heldout : clean).examples.push_back(user.examples[i]);
  return {std::move(clean), std::move(heldout)};
}

// Disjoint user-id sets for the target's members, the audited non-members
// and the auditor's reference (shadow) pool.
class CorpusSplit {
 public:
  CorpusSplit(std::vector<std::string> train, std::vector<std::string> test,
              std::vector<std::string> shadow)
      : train_(std::move(train)), test_(std::move(test)), shadow_(std::move(shadow)) {
    std::unordered_set<std::string> seen;
    for (const auto* set : {&train_, &test_, &shadow_})
      for (const auto& u : *set)
        if (!seen.insert(u).second) throw Error("corpus split sets overlap on user " + u);
  }

  // Shuffles `users` and carves out the three roles. `n_shadow` defaults to
  // twice `n_train`.
  static CorpusSplit random(std::vector<std::string> users, std::size_t n_train,
                            std::size_t n_test, std::optional<std::size_t> n_shadow,
                            std::uint64_t seed) {
    const std::size_t shadow = n_shadow.value_or(2 * n_train);
    if (n_train + n_test + shadow > users.size())
      throw Error("corpus has " + std::to_string(users.size()) + " users, split needs " +
                  std::to_string(n_train + n_test + shadow));
    Rng rng(derive_seed(seed, "corpus_split"));
    rng.shuffle(users);
    auto take = [&](std::size_t from, std::size_t n) {
      return std::vector<std::string>(users.begin() + from, users.begin() + from + n);
    };
    return CorpusSplit(take(0, n_train), take(n_train, n_test), take(n_train + n_test, shadow));
  }

  const std::vector<std::string>& train() const { return train_; }
  const std::vector<std::string>& test() const { return test_; }
  const std::vector<std::string>& shadow() const { return shadow_; }

  nlohmann::json to_json() const {
    return {{"train_users", train_}, {"test_users", test_}, {"shadow_users", shadow_}};
  }
  static CorpusSplit from_json(const nlohmann::json& j) {
    return CorpusSplit(j.at("train_users").get<std::vector<std::string>>(),
                       j.at("test_users").get<std::vector<std::string>>(),
                       j.at("shadow_users").get<std::vector<std::string>>());
  }

 private:
  std::vector<std::string> train_, test_, shadow_;
};

// Picks the datasets for `ids`, in the order of `ids`.
inline std::vector<UserDataset> select_users(std::span<const UserDataset> all,
                                             std::span<const std::string> ids) {
  std::unordered_map<std::string, const UserDataset*> by_id;
  for (const auto& u : all) by_id.emplace(u.user_id, &u);
  std::vector<UserDataset> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("unknown user " + id);
    out.push_back(*it->second);
  }
  return out;
}

// Newline-delimited JSON: {user_id, text} or {user_id, source, target}.
inline std::vector<Record> read_corpus(std::istream& is) {
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    Record rec;
    if (!j.contains("user_id")) throw Error("corpus line " + std::to_string(lineno) + ": missing user_id");
    rec.user_id = j.at("user_id").is_string() ? j.at("user_id").get<std::string>()
                                              : j.at("user_id").dump();
    if (j.contains("text")) {
      rec.text = tokenize(j.at("text").get<std::string>());
    } else if (j.contains("source") && j.contains("target")) {
      rec.text = tokenize(j.at("source").get<std::string>());
      rec.target = tokenize(j.at("target").get<std::string>());
    } else {
      throw Error("corpus line " + std::to_string(lineno) + ": needs text or source/target");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<Record> read_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read corpus " + path);
  return read_corpus(is);
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

inline void write_corpus(std::ostream& os, std::span<const Record> records) {
  for (const auto& rec : records) {
    nlohmann::ordered_json j;
    j["user_id"] = rec.user_id;
    if (rec.target) {
      j["source"] = join_tokens(rec.text);
      j["target"] = join_tokens(*rec.target);
    } else {
      j["text"] = join_tokens(rec.text);
    }
    os << j.dump() << '\n';
  }
}

}  // namespace paudit
