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

// Deterministic synthetic galleries and query sets with known ground truth.
//
// Model. Places sit 'geo_spacing_m' apart along the equator. Each place has a
// latent global direction; consecutive places are correlated
// (g_p = normalize(rho g_{p-1} + sqrt(1 - rho^2) u), u a fresh random unit
// vector), which models a route where neighboring places look alike and makes
// the global stage confuse them. Each place also owns a bank of
// 'locals_max' latent local directions.
//
// An image of place p draws its global descriptor as the latent plus
// isotropic tangent-plane Gaussian noise of total scale sigma_g
// (per-coordinate std sigma_g / sqrt(d)), renormalized; its locals are a random
// subset of the bank (size uniform in [locals_min, locals_max]) perturbed the
// same way with sigma_l. In query images the last round(distractor_fraction * n)
// locals are replaced by perturbed locals of randomly chosen other places.
// Scores are uniform in (0.06, 1]. Geo-tags fall within 4.5 m of the place
// center.
//
// Randomness. Stream 0 of the seed produces the latents (place 0..P-1 global,
// then each bank in place order). Image with ordinal o (gallery images
// place-major first, then queries) uses stream o + 1.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/evaluator.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/linalg.hpp"
#include "vpr/parallel.hpp"
#include "vpr/philox.hpp"

namespace vpr {

struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n_places = 200;
  std::size_t gallery_per_place = 5;
  std::size_t queries_per_place = 1;
  std::uint32_t d_g = 64;
  std::uint32_t d_l = 32;
  std::size_t locals_min = 10;
  std::size_t locals_max = 20;
  float global_noise = 0.9f;
  float local_noise = 0.1f;
  float distractor_fraction = 0.3f;
  double geo_spacing_m = 100.0;
  float place_correlation = 0.8f;

  void check() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidArgument, "synth config: " + what); };
    if (n_places < 1) bad("n_places must be >= 1");
    if (gallery_per_place < 1) bad("gallery_per_place must be >= 1");
    if (queries_per_place < 1) bad("queries_per_place must be >= 1");
    if (d_g < 1 || d_l < 1) bad("dimensions must be >= 1");
    if (locals_max < 1 || locals_min > locals_max) bad("need 0 <= locals_min <= locals_max, locals_max >= 1");
    if (!(global_noise >= 0.0f) || !std::isfinite(global_noise)) bad("global_noise must be finite and >= 0");
    if (!(local_noise >= 0.0f) || !std::isfinite(local_noise)) bad("local_noise must be finite and >= 0");
    if (!(distractor_fraction >= 0.0f && distractor_fraction < 1.0f)) bad("distractor_fraction must be in [0, 1)");
    if (distractor_fraction > 0.0f && n_places < 2) bad("distractors need at least two places");
    if (!(geo_spacing_m > 2.0 * kDefaultRadiusM)) bad("geo_spacing_m must exceed 50 m");
    if (!(geo_spacing_m * static_cast<double>(n_places) < 1.0e7)) bad("places would wrap around the globe");
    if (!(place_correlation >= 0.0f && place_correlation < 1.0f)) bad("place_correlation must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"n_places", n_places},
            {"gallery_per_place", gallery_per_place},
            {"queries_per_place", queries_per_place},
            {"d_g", d_g},
            {"d_l", d_l},
            {"locals_min", locals_min},
            {"locals_max", locals_max},
            {"global_noise", global_noise},
            {"local_noise", local_noise},
            {"distractor_fraction", distractor_fraction},
            {"geo_spacing_m", geo_spacing_m},
            {"place_correlation", place_correlation}};
  }
};

struct SynthDataset {
  FeatureSet gallery;
  FeatureSet queries;
  std::map<std::string, std::size_t> query_place;    // query id -> place
  std::map<std::string, std::size_t> gallery_place;  // gallery id -> place

  nlohmann::json truth_json() const {
    return {{"queries", query_place}, {"gallery", gallery_place}};
  }
};

namespace detail {

inline std::vector<float> random_unit(PhiloxStream& rng, std::size_t d) {
  std::vector<double> v(d);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (!(norm2 > 0.0));
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

// normalize(latent + n_tangent), n ~ N(0, (sigma^2 / d) I) projected off the latent.
inline std::vector<float> perturb(PhiloxStream& rng, std::span<const float> latent, double sigma) {
  const std::size_t d = latent.size();
  std::vector<double> n(d);
  const double scale = sigma / std::sqrt(static_cast<double>(d));
  double along = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    n[i] = rng.normal() * scale;
    along += n[i] * static_cast<double>(latent[i]);
  }
  std::vector<double> v(d);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    v[i] = static_cast<double>(latent[i]) + (n[i] - along * static_cast<double>(latent[i]));
    norm2 += v[i] * v[i];
  }
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

inline float random_score(PhiloxStream& rng) {
  return static_cast<float>(0.06 + 0.94 * (1.0 - rng.uniform()));
}

inline std::string synth_id(std::size_t place, char kind, std::size_t j) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "p%05zu_%c%zu", place, kind, j);
  return buf;
}

struct Latents {
  std::vector<std::vector<float>> global;              // per place
  std::vector<std::vector<std::vector<float>>> banks;  // per place, per bank slot
};

inline Latents make_latents(const SynthConfig& cfg) {
  PhiloxStream rng(cfg.seed, 0);
  Latents lat;
  const double rho = cfg.place_correlation;
  const double fresh = std::sqrt(1.0 - rho * rho);
  for (std::size_t p = 0; p < cfg.n_places; ++p) {
    auto u = random_unit(rng, cfg.d_g);
    if (p > 0) {
      const auto& prev = lat.global.back();
      std::vector<float> mixed(cfg.d_g);
      for (std::size_t i = 0; i < cfg.d_g; ++i) {
        mixed[i] = static_cast<float>(rho * prev[i] + fresh * u[i]);
      }
      normalize_in_place(mixed);
      u = std::move(mixed);
    }
    lat.global.push_back(std::move(u));
  }
  lat.banks.resize(cfg.n_places);
  for (std::size_t p = 0; p < cfg.n_places; ++p) {
    for (std::size_t b = 0; b < cfg.locals_max; ++b) lat.banks[p].push_back(random_unit(rng, cfg.d_l));
  }
  return lat;
}

inline ImageRecord make_image(const SynthConfig& cfg, const Latents& lat, std::size_t place, bool query,
                              std::uint64_t ordinal, std::string id) {
  PhiloxStream rng(cfg.seed, ordinal + 1);
  ImageRecord rec;
  rec.id = std::move(id);
  rec.global = perturb(rng, lat.global[place], cfg.global_noise);

  const std::size_t count = cfg.locals_min + rng.below(cfg.locals_max - cfg.locals_min + 1);
  std::vector<std::size_t> slots(cfg.locals_max);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(slots.size() - i);
    std::swap(slots[i], slots[j]);
  }
  slots.resize(count);
  std::sort(slots.begin(), slots.end());
  for (std::size_t slot : slots) {
    LocalFeature lf;
    lf.descriptor = perturb(rng, lat.banks[place][slot], cfg.local_noise);
    lf.score = random_score(rng);
    rec.locals.push_back(std::move(lf));
  }

  if (query && cfg.distractor_fraction > 0.0f) {
    const auto distractors = static_cast<std::size_t>(
        std::floor(static_cast<double>(cfg.distractor_fraction) * static_cast<double>(count) + 0.5));
    for (std::size_t t = 0; t < distractors && t < count; ++t) {
      std::size_t other = rng.below(cfg.n_places - 1);
      if (other >= place) ++other;
      const std::size_t slot = rng.below(cfg.locals_max);
      LocalFeature& lf = rec.locals[count - 1 - t];
      lf.descriptor = perturb(rng, lat.banks[other][slot], cfg.local_noise);
      lf.score = random_score(rng);
    }
  }

  const double r = 4.5 * std::sqrt(rng.uniform());
  const double theta = 2.0 * std::numbers::pi * rng.uniform();
  const double center_lon = static_cast<double>(place) * cfg.geo_spacing_m / kMetersPerDegree;
  rec.geo = GeoTag::lat_lon(r * std::sin(theta) / kMetersPerDegree,
                            center_lon + r * std::cos(theta) / kMetersPerDegree);
  return rec;
}

}  // namespace detail

inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.check();
  const auto lat = detail::make_latents(cfg);
  SynthDataset ds;
  ds.gallery = FeatureSet{cfg.d_g, cfg.d_l, GeoKind::kLatLon, {}};
  ds.queries = FeatureSet{cfg.d_g, cfg.d_l, GeoKind::kLatLon, {}};
  const std::size_t n_gallery = cfg.n_places * cfg.gallery_per_place;
  const std::size_t n_queries = cfg.n_places * cfg.queries_per_place;
  ds.gallery.records.resize(n_gallery);
  ds.queries.records.resize(n_queries);

  parallel_for(n_gallery + n_queries, [&](std::size_t o) {
    if (o < n_gallery) {
      const std::size_t place = o / cfg.gallery_per_place, j = o % cfg.gallery_per_place;
      ds.gallery.records[o] = detail::make_image(cfg, lat, place, false, o, detail::synth_id(place, 'g', j));
    } else {
      const std::size_t q = o - n_gallery;
      const std::size_t place = q / cfg.queries_per_place, j = q % cfg.queries_per_place;
      ds.queries.records[q] = detail::make_image(cfg, lat, place, true, o, detail::synth_id(place, 'q', j));
    }
  });

  for (std::size_t o = 0; o < n_gallery; ++o) ds.gallery_place[ds.gallery.records[o].id] = o / cfg.gallery_per_place;
  for (std::size_t q = 0; q < n_queries; ++q) ds.query_place[ds.queries.records[q].id] = q / cfg.queries_per_place;
  return ds;
}

}  // namespace vpr
