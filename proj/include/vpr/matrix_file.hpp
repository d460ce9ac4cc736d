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

// Raw matrix framing shared with the feature exporter:
//   magic "EFMT" | version u32 = 1 | rows u64 | cols u64 | f32 x rows*cols (row-major)
// Little-endian throughout.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/linalg.hpp"

namespace vpr {

inline constexpr std::array<char, 4> kMatrixMagic = {'E', 'F', 'M', 'T'};
inline constexpr std::uint32_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 24;

inline std::uint64_t write_matrix(const Matrix& m, std::ostream& out) {
  detail::ByteWriter w(out);
  w.bytes(kMatrixMagic.data(), kMatrixMagic.size());
  w.scalar<std::uint32_t>(kMatrixVersion);
  w.scalar<std::uint64_t>(m.rows());
  w.scalar<std::uint64_t>(m.cols());
  w.floats(m.data());
  return w.count();
}

inline Matrix read_matrix(std::istream& in) {
  detail::ByteReader r(in);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "matrix magic");
  if (magic != kMatrixMagic) fail(ErrorCode::kFormat, "bad magic, expected \"EFMT\"");
  const auto version = r.scalar<std::uint32_t>("matrix version");
  if (version != kMatrixVersion) {
    fail(ErrorCode::kFormat, "unsupported matrix version " + std::to_string(version));
  }
  const auto rows = r.scalar<std::uint64_t>("matrix rows");
  const auto cols = r.scalar<std::uint64_t>("matrix cols");
  if (cols != 0 && rows > (std::uint64_t{1} << 34) / cols) {
    fail(ErrorCode::kFormat, "implausible matrix shape");
  }
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  r.floats(m.data(), "matrix data");
  if (!r.at_eof()) fail(ErrorCode::kFormat, "trailing bytes after matrix data");
  return m;
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return read_matrix(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void save_matrix(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot create " + path.string());
  write_matrix(m, out);
}

}  // namespace vpr
