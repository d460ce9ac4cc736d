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

// Place-recognition correctness protocol and Recall@K.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"

namespace vpr {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kMetersPerDegree = kEarthRadiusM * std::numbers::pi / 180.0;
inline constexpr double kDefaultRadiusM = 25.0;
inline constexpr std::int64_t kDefaultFrameWindow = 10;
// Tolerance on the distance boundary, in metres.
inline constexpr double kBoundarySlackM = 1e-5;

struct Protocol {
  enum class Kind { kRadiusMeters, kFrameWindow };

  Kind kind = Kind::kRadiusMeters;
  double radius_m = kDefaultRadiusM;
  std::int64_t window = kDefaultFrameWindow;
  bool inclusive = true;  // boundary (exactly r metres / exactly w frames) counts as correct

  static Protocol radius(double r, bool inclusive = true) {
    Protocol p{Kind::kRadiusMeters, r, 0, inclusive};
    p.check();
    return p;
  }
  static Protocol frame_window(std::int64_t w, bool inclusive = true) {
    Protocol p{Kind::kFrameWindow, 0.0, w, inclusive};
    p.check();
    return p;
  }

  void check() const {
    if (kind == Kind::kRadiusMeters && !(radius_m > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "radius must be positive");
    }
    if (kind == Kind::kFrameWindow && window < 0) fail(ErrorCode::kInvalidArgument, "frame window must be >= 0");
  }

  GeoKind required_geo() const { return kind == Kind::kRadiusMeters ? GeoKind::kLatLon : GeoKind::kFrameIndex; }

  std::string describe() const {
    std::ostringstream os;
    if (kind == Kind::kRadiusMeters) {
      os << "radius " << radius_m << " m";
    } else {
      os << "frame window " << window;
    }
    os << (inclusive ? " (inclusive)" : " (exclusive)");
    return os.str();
  }
};

/// Great-circle distance on a sphere of radius 6,371,000 m.
inline double haversine_m(const GeoTag& a, const GeoTag& b) {
  if (a.kind != GeoKind::kLatLon || b.kind != GeoKind::kLatLon) {
    fail(ErrorCode::kProtocolMismatch, "haversine needs two lat/lon tags");
  }
  constexpr double rad = std::numbers::pi / 180.0;
  const double sin_dlat = std::sin((b.lat - a.lat) * rad / 2.0);
  const double sin_dlon = std::sin((b.lon - a.lon) * rad / 2.0);
  const double h = sin_dlat * sin_dlat + (std::cos(a.lat * rad) * std::cos(b.lat * rad)) * sin_dlon * sin_dlon;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0)));
}

inline bool is_correct(const GeoTag& query, const GeoTag& retrieved, const Protocol& p) {
  if (query.kind != p.required_geo() || retrieved.kind != p.required_geo()) {
    fail(ErrorCode::kProtocolMismatch, "geo-tag kind does not match protocol " + p.describe());
  }
  if (p.kind == Protocol::Kind::kRadiusMeters) {
    const double d = haversine_m(query, retrieved);
    return p.inclusive ? d <= p.radius_m + kBoundarySlackM : d < p.radius_m - kBoundarySlackM;
  }
  const std::int64_t gap = query.frame > retrieved.frame ? query.frame - retrieved.frame : retrieved.frame - query.frame;
  return p.inclusive ? gap <= p.window : gap < p.window;
}

inline bool is_correct(const ImageRecord& query, const ImageRecord& retrieved, const Protocol& p) {
  return is_correct(query.geo, retrieved.geo, p);
}

struct RecallTable {
  std::vector<std::size_t> ks;
  std::vector<double> values;  // fraction of queries with a hit in the top k
  std::size_t query_count = 0;

  static double round4(double v) { return std::round(v * 1e4) / 1e4; }

  double at(std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (ks[i] == k) return values[i];
    }
    fail(ErrorCode::kInvalidArgument, "recall table has no k=" + std::to_string(k));
  }

  std::string to_csv() const {
    std::string out = "k,recall,query_count\n";
    char line[96];
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::snprintf(line, sizeof(line), "%zu,%.4f,%zu\n", ks[i], values[i], query_count);
      out += line;
    }
    return out;
  }

  nlohmann::json to_json() const {
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < ks.size(); ++i) {
      rows.push_back({{"k", ks[i]}, {"recall", round4(values[i])}, {"query_count", query_count}});
    }
    return rows;
  }
};

inline std::vector<std::size_t> default_ks() { return {1, 5, 10}; }

/// Rank (0-based) of the first correct retrieval per query; SIZE_MAX when
/// none is correct.
inline std::vector<std::size_t> first_hit_ranks(std::span<const std::vector<std::size_t>> results,
                                                const FeatureSet& queries, const FeatureSet& gallery,
                                                const Protocol& p) {
  p.check();
  if (queries.size() == 0) fail(ErrorCode::kInvalidArgument, "empty query set");
  if (results.size() != queries.size()) {
    fail(ErrorCode::kInvalidArgument, "result lists (" + std::to_string(results.size()) + ") != queries (" +
                                          std::to_string(queries.size()) + ")");
  }
  if (queries.geo_kind != p.required_geo() || gallery.geo_kind != p.required_geo()) {
    fail(ErrorCode::kProtocolMismatch, std::string("protocol ") + p.describe() + " needs " +
                                           to_string(p.required_geo()) + " tags, got queries=" +
                                           to_string(queries.geo_kind) + " gallery=" + to_string(gallery.geo_kind));
  }
  std::vector<std::size_t> first(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& list = results[q];
    first[q] = std::numeric_limits<std::size_t>::max();
    for (std::size_t r = 0; r < list.size(); ++r) {
      if (list[r] >= gallery.size()) {
        fail(ErrorCode::kInvalidArgument, "query " + queries.records[q].id + ": gallery index " +
                                              std::to_string(list[r]) + " out of range");
      }
      if (is_correct(queries.records[q], gallery.records[list[r]], p)) {
        first[q] = r;
        break;
      }
    }
  }
  return first;
}

/// value[k] = (#queries with a correct retrieval in the top k) / #queries.
inline RecallTable recall_at_k(std::span<const std::vector<std::size_t>> results, const FeatureSet& queries,
                               const FeatureSet& gallery, const Protocol& p,
                               std::span<const std::size_t> ks) {
  if (ks.empty()) fail(ErrorCode::kInvalidArgument, "no k values");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1 || (i > 0 && ks[i] <= ks[i - 1])) {
      fail(ErrorCode::kInvalidArgument, "ks must be positive and strictly ascending");
    }
  }
  const auto first = first_hit_ranks(results, queries, gallery, p);
  RecallTable table;
  table.ks.assign(ks.begin(), ks.end());
  table.query_count = queries.size();
  for (std::size_t k : ks) {
    const auto hits = std::count_if(first.begin(), first.end(), [k](std::size_t r) { return r < k; });
    table.values.push_back(static_cast<double>(hits) / static_cast<double>(queries.size()));
  }
  return table;
}

}  // namespace vpr
