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

// The .efvp container: global descriptors, scored local descriptors and geo-tags
// for an ordered set of images.
//
//   offset  field                                    type
//   0       magic "EFVP"                             4 bytes
//   4       version = 1                              u32
//   8       d_g                                      u32
//   12      d_l                                      u32
//   16      record_count                             u64
//   24      geo_kind (0=None, 1=LatLon, 2=FrameIndex) u32
//   28      records...
//
// Per record: id_len u32; id bytes; geo payload (LatLon: 2 x f64,
// FrameIndex: i64, None: nothing); global f32 x d_g; local_count u32;
// per local: score f32, descriptor f32 x d_l. All integers and floats are
// little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/linalg.hpp"

namespace vpr {

inline constexpr std::array<char, 4> kFeatureMagic = {'E', 'F', 'V', 'P'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 28;
inline constexpr double kUnitNormTolerance = 1e-5;

enum class GeoKind : std::uint32_t { kNone = 0, kLatLon = 1, kFrameIndex = 2 };

inline const char* to_string(GeoKind kind) {
  switch (kind) {
    case GeoKind::kNone: return "none";
    case GeoKind::kLatLon: return "latlon";
    case GeoKind::kFrameIndex: return "frame";
  }
  return "unknown";
}

struct GeoTag {
  GeoKind kind = GeoKind::kNone;
  double lat = 0.0;  // degrees, LatLon only
  double lon = 0.0;  // degrees, LatLon only
  std::int64_t frame = 0;  // FrameIndex only

  static GeoTag none() { return {}; }
  static GeoTag lat_lon(double lat, double lon) { return {GeoKind::kLatLon, lat, lon, 0}; }
  static GeoTag frame_index(std::int64_t frame) { return {GeoKind::kFrameIndex, 0.0, 0.0, frame}; }

  bool operator==(const GeoTag&) const = default;
};

struct LocalFeature {
  float score = 0.0f;  // CLS-attention score of the patch, in (0, 1]
  std::vector<float> descriptor;  // unit length, d_l values

  bool operator==(const LocalFeature&) const = default;
};

struct ImageRecord {
  std::string id;
  GeoTag geo;
  std::vector<float> global;  // unit length, d_g values
  std::vector<LocalFeature> locals;

  bool operator==(const ImageRecord&) const = default;
};

/// An ordered gallery or query set. Immutable once built; safe to share
/// across threads for reading.
struct FeatureSet {
  std::uint32_t d_g = 0;
  std::uint32_t d_l = 0;
  GeoKind geo_kind = GeoKind::kNone;  // shared by every record
  std::vector<ImageRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool operator==(const FeatureSet&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

struct ValidationIssue {
  std::optional<std::size_t> record_index;  // empty for set-level issues
  std::string id;
  std::string field;  // "norm", "dimension", "duplicate id", "geo", "score", ...
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool empty() const noexcept { return issues.empty(); }
  std::size_t size() const noexcept { return issues.size(); }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& issue : issues) os << issue.message << '\n';
    return os.str();
  }
};

namespace detail {

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates, out of range.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

inline std::string describe(std::size_t index, const std::string& id) {
  return "record " + std::to_string(index) + " (" + id + ")";
}

}  // namespace detail

/// Lists every invariant violation in `set`. Never throws; an empty report
/// means the set is valid.
inline ValidationReport validate(const FeatureSet& set) {
  ValidationReport report;
  auto add = [&](std::optional<std::size_t> index, const std::string& id, std::string field,
                 std::string message) {
    report.issues.push_back({index, id, std::move(field), std::move(message)});
  };

  if (set.d_g == 0) add(std::nullopt, "", "dimension", "set: d_g must be positive");
  if (set.d_l == 0) add(std::nullopt, "", "dimension", "set: d_l must be positive");

  std::unordered_set<std::string> seen;
  std::unordered_set<std::string> reported_duplicates;
  for (std::size_t r = 0; r < set.records.size(); ++r) {
    const ImageRecord& rec = set.records[r];
    const std::string where = detail::describe(r, rec.id);

    if (rec.id.empty()) add(r, rec.id, "id", where + ": empty id");
    if (!detail::valid_utf8(rec.id)) add(r, rec.id, "id", where + ": id is not valid UTF-8");
    if (!seen.insert(rec.id).second && reported_duplicates.insert(rec.id).second) {
      add(r, rec.id, "duplicate id", "duplicate id " + rec.id);
    }

    if (rec.geo.kind != set.geo_kind) {
      add(r, rec.id, "geo",
          where + ": geo kind " + to_string(rec.geo.kind) + " differs from set kind " +
              to_string(set.geo_kind));
    }
    if (rec.geo.kind == GeoKind::kLatLon) {
      if (!(rec.geo.lat >= -90.0 && rec.geo.lat <= 90.0)) {
        add(r, rec.id, "geo", where + ": latitude " + std::to_string(rec.geo.lat) + " out of range");
      }
      if (!(rec.geo.lon >= -180.0 && rec.geo.lon <= 180.0)) {
        add(r, rec.id, "geo", where + ": longitude " + std::to_string(rec.geo.lon) + " out of range");
      }
    } else if (rec.geo.kind == GeoKind::kFrameIndex && rec.geo.frame < 0) {
      add(r, rec.id, "geo", where + ": negative frame index " + std::to_string(rec.geo.frame));
    }

    if (rec.global.size() != set.d_g) {
      add(r, rec.id, "dimension",
          where + ": global dimension " + std::to_string(rec.global.size()) + " != d_g " +
              std::to_string(set.d_g));
    } else if (!all_finite(rec.global)) {
      add(r, rec.id, "finite", where + ": global descriptor has non-finite values");
    } else if (const double n = l2_norm(rec.global); std::abs(n - 1.0) > kUnitNormTolerance) {
      add(r, rec.id, "norm", where + ": global norm " + std::to_string(n) + " is not 1");
    }

    for (std::size_t l = 0; l < rec.locals.size(); ++l) {
      const LocalFeature& lf = rec.locals[l];
      const std::string lwhere = where + " local " + std::to_string(l);
      if (!(lf.score > 0.0f && lf.score <= 1.0f)) {
        add(r, rec.id, "score", lwhere + ": score " + std::to_string(lf.score) + " outside (0, 1]");
      }
      if (lf.descriptor.size() != set.d_l) {
        add(r, rec.id, "dimension",
            lwhere + ": descriptor dimension " + std::to_string(lf.descriptor.size()) +
                " != d_l " + std::to_string(set.d_l));
      } else if (!all_finite(lf.descriptor)) {
        add(r, rec.id, "finite", lwhere + ": descriptor has non-finite values");
      } else if (const double n = l2_norm(lf.descriptor); std::abs(n - 1.0) > kUnitNormTolerance) {
        add(r, rec.id, "norm", lwhere + ": descriptor norm " + std::to_string(n) + " is not 1");
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) fail(ErrorCode::kIo, "write to sink failed");
    count_ += n;
  }

  template <typename T>
  void scalar(T value) {
    static_assert(std::is_arithmetic_v<T>);
    std::array<unsigned char, sizeof(T)> buf;
    std::memcpy(buf.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    bytes(buf.data(), buf.size());
  }

  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (float v : values) scalar(v);
    }
  }

  std::uint64_t count() const noexcept { return count_; }

 private:
  std::ostream& out_;
  std::uint64_t count_ = 0;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}

  // `what` names the location for truncation errors.
  void bytes(void* data, std::size_t n, const std::string& what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      fail(ErrorCode::kFormat, "truncated stream: " + what);
    }
  }

  template <typename T>
  T scalar(const std::string& what) {
    std::array<unsigned char, sizeof(T)> buf;
    bytes(buf.data(), buf.size(), what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    T value;
    std::memcpy(&value, buf.data(), sizeof(T));
    return value;
  }

  void floats(std::span<float> out, const std::string& what) {
    bytes(out.data(), out.size_bytes(), what);
    if constexpr (std::endian::native == std::endian::big) {
      for (float& v : out) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        bits = __builtin_bswap32(bits);
        v = std::bit_cast<float>(bits);
      }
    }
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
};

inline constexpr std::uint32_t kMaxIdBytes = 1u << 20;

}  // namespace detail

enum class WriteCheck {
  kFull,        // refuse any set with validation issues
  kStructural,  // only what the format cannot express: dimensions and geo kinds
};

/// Serializes `set` in the .efvp format. Returns the number of bytes written.
/// The output is a pure function of `set`.
inline std::uint64_t write_feature_set(const FeatureSet& set, std::ostream& out,
                                       WriteCheck check = WriteCheck::kFull) {
  if (check == WriteCheck::kFull) {
    if (const auto report = validate(set); !report.empty()) {
      fail(ErrorCode::kInvalidArgument, "refusing to write invalid feature set: " +
                                            report.issues.front().message);
    }
  } else {
    for (std::size_t r = 0; r < set.records.size(); ++r) {
      const ImageRecord& rec = set.records[r];
      const std::string where = detail::describe(r, rec.id);
      if (rec.global.size() != set.d_g) {
        fail(ErrorCode::kDimensionMismatch, where + ": global dimension differs from d_g");
      }
      if (rec.geo.kind != set.geo_kind) {
        fail(ErrorCode::kInvalidArgument, where + ": geo kind differs from set kind");
      }
      if (rec.id.size() > detail::kMaxIdBytes) fail(ErrorCode::kInvalidArgument, where + ": id too long");
      for (const auto& lf : rec.locals) {
        if (lf.descriptor.size() != set.d_l) {
          fail(ErrorCode::kDimensionMismatch, where + ": local dimension differs from d_l");
        }
      }
    }
  }

  detail::ByteWriter w(out);
  w.bytes(kFeatureMagic.data(), kFeatureMagic.size());
  w.scalar<std::uint32_t>(kFeatureVersion);
  w.scalar<std::uint32_t>(set.d_g);
  w.scalar<std::uint32_t>(set.d_l);
  w.scalar<std::uint64_t>(set.records.size());
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(set.geo_kind));
  for (const ImageRecord& rec : set.records) {
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(rec.id.size()));
    w.bytes(rec.id.data(), rec.id.size());
    switch (set.geo_kind) {
      case GeoKind::kLatLon:
        w.scalar<double>(rec.geo.lat);
        w.scalar<double>(rec.geo.lon);
        break;
      case GeoKind::kFrameIndex:
        w.scalar<std::int64_t>(rec.geo.frame);
        break;
      case GeoKind::kNone:
        break;
    }
    w.floats(rec.global);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(rec.locals.size()));
    for (const LocalFeature& lf : rec.locals) {
      w.scalar<float>(lf.score);
      w.floats(lf.descriptor);
    }
  }
  return w.count();
}

struct ReadOptions {
  // Validation tooling reads duplicate ids so it can report them.
  bool allow_duplicate_ids = false;
};

/// Parses an .efvp stream. Never renormalizes; structural problems (magic,
/// version, truncation, duplicate ids) are errors, value problems are left to
/// validate().
inline FeatureSet read_feature_set(std::istream& in, ReadOptions options = {}) {
  detail::ByteReader r(in);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "header magic");
  if (magic != kFeatureMagic) {
    fail(ErrorCode::kFormat, "bad magic \"" + std::string(magic.data(), magic.size()) +
                                 "\", expected \"EFVP\"");
  }
  const auto version = r.scalar<std::uint32_t>("header version");
  if (version != kFeatureVersion) {
    fail(ErrorCode::kFormat, "unsupported version " + std::to_string(version));
  }
  FeatureSet set;
  set.d_g = r.scalar<std::uint32_t>("header d_g");
  set.d_l = r.scalar<std::uint32_t>("header d_l");
  const auto count = r.scalar<std::uint64_t>("header record_count");
  const auto kind = r.scalar<std::uint32_t>("header geo_kind");
  if (kind > 2) fail(ErrorCode::kFormat, "unknown geo_kind " + std::to_string(kind));
  set.geo_kind = static_cast<GeoKind>(kind);
  if (set.d_g == 0 || set.d_l == 0) fail(ErrorCode::kFormat, "header dimensions must be positive");

  set.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 16)));
  std::unordered_set<std::string> ids;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    ImageRecord rec;
    const auto id_len = r.scalar<std::uint32_t>(where + " id length");
    if (id_len > detail::kMaxIdBytes) {
      fail(ErrorCode::kFormat, where + ": implausible id length " + std::to_string(id_len));
    }
    rec.id.resize(id_len);
    r.bytes(rec.id.data(), id_len, where + " id");
    rec.geo.kind = set.geo_kind;
    if (set.geo_kind == GeoKind::kLatLon) {
      rec.geo.lat = r.scalar<double>(where + " latitude");
      rec.geo.lon = r.scalar<double>(where + " longitude");
    } else if (set.geo_kind == GeoKind::kFrameIndex) {
      rec.geo.frame = r.scalar<std::int64_t>(where + " frame");
    }
    rec.global.resize(set.d_g);
    r.floats(rec.global, where + " global descriptor");
    const auto local_count = r.scalar<std::uint32_t>(where + " local count");
    for (std::uint32_t l = 0; l < local_count; ++l) {
      LocalFeature lf;
      lf.score = r.scalar<float>(where + " local " + std::to_string(l) + " score");
      lf.descriptor.resize(set.d_l);
      r.floats(lf.descriptor, where + " local " + std::to_string(l) + " descriptor");
      rec.locals.push_back(std::move(lf));
    }
    if (!ids.insert(rec.id).second && !options.allow_duplicate_ids) {
      fail(ErrorCode::kFormat, where + ": duplicate id " + rec.id);
    }
    set.records.push_back(std::move(rec));
  }
  if (!r.at_eof()) fail(ErrorCode::kFormat, "trailing bytes after last record");
  return set;
}

inline FeatureSet load_feature_set(const std::filesystem::path& path, ReadOptions options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return read_feature_set(in, options);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline std::uint64_t save_feature_set(const FeatureSet& set, const std::filesystem::path& path,
                                      WriteCheck check = WriteCheck::kFull) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot create " + path.string());
  const auto n = write_feature_set(set, out, check);
  out.flush();
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
  return n;
}

inline std::string to_bytes(const FeatureSet& set, WriteCheck check = WriteCheck::kFull) {
  std::ostringstream os(std::ios::binary);
  write_feature_set(set, os, check);
  return std::move(os).str();
}

inline FeatureSet from_bytes(const std::string& bytes, ReadOptions options = {}) {
  std::istringstream is(bytes, std::ios::binary);
  return read_feature_set(is, options);
}

/// Index of the record with `id`, if present.
inline std::optional<std::size_t> find_record(const FeatureSet& set, std::string_view id) {
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (set.records[i].id == id) return i;
  }
  return std::nullopt;
}

}  // namespace vpr
