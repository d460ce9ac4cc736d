// Copyright 2026 The vprank Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <openssl/evp.h>

#include <json.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vpr/error.hpp"

namespace vpr {

namespace detail {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) fail(ErrorCode::kIo, "sha256 init failed");
  }

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }

  std::string hex_digest() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md;
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(byte, sizeof(byte), "%02x", md[i]);
      hex += byte;
    }
    return hex;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace detail

/// Lowercase hex SHA-256 of a byte string.
inline std::string sha256_hex(std::string_view data) {
  detail::Sha256 h;
  h.update(data.data(), data.size());
  return h.hex_digest();
}

/// Lowercase hex SHA-256 of a file's contents.
inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  detail::Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (const auto n = in.gcount(); n > 0) h.update(buf.data(), static_cast<std::size_t>(n));
  }
  return h.hex_digest();
}

/// Provenance record written next to every command output.
struct RunManifest {
  std::vector<std::string> command_line;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, std::filesystem::path>> inputs;  // role -> path

  /// Everything except the timestamp; identical for identical inputs and flags.
  nlohmann::json stable_json() const {
    nlohmann::json in = nlohmann::json::object();
    for (const auto& [role, path] : inputs) in[role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
    return {{"tool", "vpr"}, {"version", std::string(kVersion)}, {"command_line", command_line},
            {"config", config}, {"inputs", in}};
  }

  nlohmann::json to_json() const {
    auto j = stable_json();
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    j["created_utc"] = stamp;
    return j;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot create " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace vpr
