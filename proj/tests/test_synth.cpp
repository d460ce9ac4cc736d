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

#include <gtest/gtest.h>

#include <cstdlib>

#include "oracle.hpp"
#include "vpr/evaluator.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/facets.hpp"
#include "vpr/synth.hpp"

namespace vpr {
namespace {

SynthConfig small_config(std::uint64_t seed = 7) {
  SynthConfig c;
  c.seed = seed;
  c.n_places = 40;
  c.gallery_per_place = 3;
  return c;
}

double first_stage_r1(const SynthDataset& ds) {
  const auto out = oracle::run_pipeline(ds.gallery, ds.queries, 1, kDefaultT1, kDefaultT2);
  return oracle::recall_by_place(out.first_stage, ds.queries, ds.gallery, ds.query_place, ds.gallery_place, 1);
}

TEST(Philox, KnownAnswerVectors) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}), (PhiloxBlock{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (PhiloxBlock{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (PhiloxBlock{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, StreamsAreIndependentAndUniformInRange) {
  PhiloxStream a(1, 0), b(1, 1), c(2, 0);
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_NE(PhiloxStream(1, 0).next_u64(), c.next_u64());
  PhiloxStream r(3, 0);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    ASSERT_LT(r.below(7), 7u);
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(Synth, ShapesIdsAndValidity) {
  const auto cfg = small_config();
  const auto ds = generate(cfg);
  EXPECT_EQ(ds.gallery.size(), 120u);
  EXPECT_EQ(ds.queries.size(), 40u);
  EXPECT_EQ(ds.gallery.records[4].id, "p00001_g1");
  EXPECT_EQ(ds.queries.records[39].id, "p00039_q0");
  EXPECT_TRUE(validate(ds.gallery).empty());
  EXPECT_TRUE(validate(ds.queries).empty());
  for (const auto& r : ds.gallery.records) {
    EXPECT_GE(r.locals.size(), cfg.locals_min);
    EXPECT_LE(r.locals.size(), cfg.locals_max);
    for (const auto& lf : r.locals) EXPECT_GT(lf.score, kDefaultT1);
  }
  const auto truth = ds.truth_json();
  EXPECT_EQ(truth["queries"]["p00003_q0"], 3);
  EXPECT_EQ(truth["gallery"]["p00003_g2"], 3);
}

TEST(Synth, NoiselessGlobalsGivePerfectTopOne) {
  auto cfg = small_config();
  cfg.global_noise = 0.0f;
  EXPECT_EQ(first_stage_r1(generate(cfg)), 1.0);
}

TEST(Synth, ByteIdenticalAcrossRuns) {
  const auto a = generate(small_config(11)), b = generate(small_config(11));
  EXPECT_EQ(to_bytes(a.gallery), to_bytes(b.gallery));
  EXPECT_EQ(to_bytes(a.queries), to_bytes(b.queries));
  EXPECT_NE(to_bytes(generate(small_config(12)).gallery), to_bytes(a.gallery));
}

TEST(Synth, ThreadCountDoesNotChangeOutput) {
  const char* saved = std::getenv("EFFO_THREADS");
  const std::string restore = saved ? saved : "";
  setenv("EFFO_THREADS", "1", 1);
  const auto one = generate(small_config(5));
  setenv("EFFO_THREADS", "6", 1);
  const auto six = generate(small_config(5));
  if (saved) {
    setenv("EFFO_THREADS", restore.c_str(), 1);
  } else {
    unsetenv("EFFO_THREADS");
  }
  EXPECT_EQ(to_bytes(one.gallery), to_bytes(six.gallery));
  EXPECT_EQ(to_bytes(one.queries), to_bytes(six.queries));
}

TEST(Synth, GeoTagsSeparatePlacesUnderDefaultRadius) {
  const auto ds = generate(small_config());
  const auto p = Protocol::radius(kDefaultRadiusM);
  for (const auto& q : ds.queries.records) {
    for (const auto& g : ds.gallery.records) {
      EXPECT_EQ(is_correct(q, g, p), ds.query_place.at(q.id) == ds.gallery_place.at(g.id)) << q.id << " " << g.id;
    }
  }
}

TEST(Synth, TrailingQueryLocalsAreDistractors) {
  auto cfg = small_config();
  cfg.local_noise = 0.0f;
  const auto ds = generate(cfg);
  const auto lat = detail::make_latents(cfg);
  const auto bank_place = [&](const std::vector<float>& v) {
    for (std::size_t p = 0; p < cfg.n_places; ++p)
      for (const auto& b : lat.banks[p])
        if (oracle::dot64(v, b) > 1.0 - 1e-6) return p;
    return cfg.n_places;
  };
  for (const auto& q : ds.queries.records) {
    const std::size_t place = ds.query_place.at(q.id);
    const auto n = q.locals.size();
    const auto distractors = static_cast<std::size_t>(std::floor(double(cfg.distractor_fraction) * double(n) + 0.5));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t from = bank_place(q.locals[i].descriptor);
      if (i + distractors < n) {
        EXPECT_EQ(from, place) << q.id << " local " << i;
      } else {
        EXPECT_NE(from, place) << q.id << " local " << i;
        EXPECT_LT(from, cfg.n_places);
      }
    }
  }
}

TEST(Synth, MeanRecallIsNonIncreasingInGlobalNoise) {
  const std::vector<float> sigmas{0.0f, 0.3f, 0.6f, 0.9f, 1.2f, 1.6f, 2.4f};
  std::vector<double> mean(sigmas.size(), 0.0);
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    auto cfg = small_config(seed);
    cfg.locals_min = 1;
    cfg.locals_max = 2;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      cfg.global_noise = sigmas[i];
      mean[i] += first_stage_r1(generate(cfg)) / 20.0;
    }
  }
  EXPECT_NEAR(mean.front(), 1.0, 1e-12);
  for (std::size_t i = 1; i < mean.size(); ++i) EXPECT_LE(mean[i], mean[i - 1]) << "sigma " << sigmas[i];
  EXPECT_LT(mean.back(), mean.front());
}

TEST(Synth, ConfigErrors) {
  const auto expect_bad = [](auto mutate) {
    auto c = small_config();
    mutate(c);
    EXPECT_THROW(generate(c), Error);
  };
  expect_bad([](SynthConfig& c) { c.n_places = 0; });
  expect_bad([](SynthConfig& c) { c.gallery_per_place = 0; });
  expect_bad([](SynthConfig& c) { c.d_g = 0; });
  expect_bad([](SynthConfig& c) { c.locals_min = 30; });
  expect_bad([](SynthConfig& c) { c.global_noise = -1.0f; });
  expect_bad([](SynthConfig& c) { c.local_noise = NAN; });
  expect_bad([](SynthConfig& c) { c.distractor_fraction = 1.0f; });
  expect_bad([](SynthConfig& c) { c.geo_spacing_m = 40.0; });
  expect_bad([](SynthConfig& c) { c.place_correlation = 1.0f; });
  expect_bad([](SynthConfig& c) {
    c.n_places = 1;
    c.distractor_fraction = 0.2f;
  });
}

TEST(Synth, ConfigJsonRoundTripsFields) {
  const auto j = small_config().to_json();
  EXPECT_EQ(j["n_places"], 40);
  EXPECT_EQ(j["seed"], 7);
  EXPECT_TRUE(j.contains("place_correlation"));
}

}  // namespace
}  // namespace vpr
