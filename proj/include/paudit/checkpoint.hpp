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

// Model checkpoints.
//
// Layout: the line "PAUD1", one line of JSON holding the model config and
// the array manifest (name, rows, cols), then every array's values as
// little-endian IEEE-754 doubles in column-major order, in manifest order.

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "paudit/textgen.hpp"

namespace paudit {

inline constexpr std::string_view kCheckpointMagic = "PAUD1";

inline void save_checkpoint(const TextModel& model, std::ostream& os) {
  static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");
  nlohmann::json header;
  header["config"] = model.config();
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : model.params().arrays())
    header["arrays"].push_back({{"name", a.name}, {"rows", a.value.rows()}, {"cols", a.value.cols()}});
  os << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& a : model.params().arrays())
    os.write(reinterpret_cast<const char*>(a.value.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(a.value.size())));
  if (!os) throw Error("checkpoint write failed");
}

inline TextModel load_checkpoint(std::istream& is) {
  std::string magic, header_line;
  if (!std::getline(is, magic) || magic != kCheckpointMagic) throw Error("not a PAUD1 checkpoint");
  if (!std::getline(is, header_line)) throw Error("truncated checkpoint header");
  const auto header = nlohmann::json::parse(header_line);
  const auto config = header.at("config").get<ModelConfig>();
  nn::ParamSet params;
  for (const auto& a : header.at("arrays")) {
    auto slot = params.add(a.at("name").get<std::string>(), a.at("rows").get<Eigen::Index>(),
                           a.at("cols").get<Eigen::Index>());
    auto& m = params[slot];
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!is) throw Error("truncated checkpoint data for " + a.at("name").get<std::string>());
  }
  return TextModel(config, std::move(params));
}

inline void save_checkpoint(const TextModel& model, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp);
    save_checkpoint(model, os);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint into " + path);
}

inline TextModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace paudit
