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

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/linalg.hpp"

namespace testutil {

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(n(rng));
  vpr::normalize_in_place(v);
  return v;
}

inline vpr::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  vpr::Matrix m(rows, cols);
  for (auto& x : m.data()) x = static_cast<float>(n(rng));
  return m;
}

inline std::vector<vpr::LocalFeature> random_locals(std::mt19937_64& rng, std::size_t count, std::size_t d) {
  std::uniform_real_distribution<double> score(0.001, 1.0);
  std::vector<vpr::LocalFeature> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back({static_cast<float>(score(rng)), random_unit(rng, d)});
  return out;
}

inline vpr::FeatureSet random_set(std::mt19937_64& rng, std::size_t n, std::uint32_t d_g, std::uint32_t d_l,
                                  vpr::GeoKind kind = vpr::GeoKind::kLatLon, std::size_t max_locals = 8,
                                  const std::string& prefix = "r") {
  vpr::FeatureSet set{d_g, d_l, kind, {}};
  std::uniform_real_distribution<double> lat(-89.0, 89.0), lon(-179.0, 179.0);
  std::uniform_int_distribution<std::size_t> nl(0, max_locals);
  std::uniform_int_distribution<std::int64_t> frame(0, 100000);
  for (std::size_t i = 0; i < n; ++i) {
    vpr::ImageRecord r;
    r.id = prefix + std::to_string(i);
    if (kind == vpr::GeoKind::kLatLon) r.geo = vpr::GeoTag::lat_lon(lat(rng), lon(rng));
    if (kind == vpr::GeoKind::kFrameIndex) r.geo = vpr::GeoTag::frame_index(frame(rng));
    r.global = random_unit(rng, d_g);
    r.locals = random_locals(rng, nl(rng), d_l);
    set.records.push_back(std::move(r));
  }
  return set;
}

}  // namespace testutil
