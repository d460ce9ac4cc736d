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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracle.hpp"
#include "test_util.hpp"
#include "vpr/ranker.hpp"

namespace vpr {
namespace {

std::vector<std::vector<float>> globals_of(const FeatureSet& s) {
  std::vector<std::vector<float>> out;
  for (const auto& r : s.records) out.push_back(r.global);
  return out;
}

TEST(Rank, GalleryQueryIsItsOwnTopHit) {
  std::mt19937_64 rng(1);
  const auto g = testutil::random_set(rng, 50, 32, 8, GeoKind::kNone, 0);
  const auto index = GlobalIndex::from(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto r = rank(g.records[i].global, index, 1);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].gallery_index, i);
    EXPECT_NEAR(r[0].similarity, 1.0f, 1e-6);
  }
}

TEST(Rank, OrthogonalGalleryTiesGoToLowestIndex) {
  FeatureSet g;
  g.d_g = 4;
  g.d_l = 2;
  for (std::size_t i = 0; i < 4; ++i) {
    ImageRecord r;
    r.id = "e" + std::to_string(i);
    r.global.assign(4, 0.0f);
    r.global[i] = 1.0f;
    g.records.push_back(r);
  }
  const std::vector<float> q{0.0f, 0.0f, 1.0f, 0.0f};
  const auto r = rank(q, g, 4);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0].gallery_index, 2u);
  EXPECT_FLOAT_EQ(r[0].similarity, 1.0f);
  EXPECT_EQ(r[1].gallery_index, 0u);
  EXPECT_EQ(r[2].gallery_index, 1u);
  EXPECT_EQ(r[3].gallery_index, 3u);
}

TEST(Rank, MatchesFullSortOracle) {
  std::mt19937_64 rng(2);
  const auto g = testutil::random_set(rng, 200, 64, 8, GeoKind::kNone, 0);
  const auto index = GlobalIndex::from(g);
  const auto globals = globals_of(g);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = testutil::random_unit(rng, 64);
    const std::size_t k = std::size_t(1) + rng() % 250;
    const auto got = rank(q, index, k);
    auto ref = oracle::rank(q, globals);
    ref.resize(std::min(k, ref.size()));
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(got[i].gallery_index, ref[i].first);
      EXPECT_EQ(got[i].similarity, ref[i].second);
    }
  }
}

TEST(Rank, SmallerKIsAPrefix) {
  std::mt19937_64 rng(3);
  const auto g = testutil::random_set(rng, 120, 16, 8, GeoKind::kNone, 0);
  const auto q = testutil::random_unit(rng, 16);
  const auto full = rank(q, g, 120);
  for (std::size_t k : {1u, 5u, 10u, 37u, 119u}) {
    const auto r = rank(q, g, k);
    ASSERT_EQ(r.size(), k);
    EXPECT_TRUE(std::equal(r.entries.begin(), r.entries.end(), full.entries.begin()));
  }
  EXPECT_EQ(rank(q, g, 500), full);
}

TEST(Rank, PermutationOfGalleryPermutesIndices) {
  std::mt19937_64 rng(4);
  const auto g = testutil::random_set(rng, 80, 16, 8, GeoKind::kNone, 0);
  std::vector<std::size_t> perm(g.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  FeatureSet shuffled = g;
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled.records[i] = g.records[perm[i]];
  const auto q = testutil::random_unit(rng, 16);
  const auto a = rank(q, g, 10), b = rank(q, shuffled, 10);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(perm[b[i].gallery_index], a[i].gallery_index);
    EXPECT_EQ(a[i].similarity, b[i].similarity);
  }
}

TEST(Rank, Errors) {
  std::mt19937_64 rng(5);
  const auto g = testutil::random_set(rng, 10, 8, 4, GeoKind::kNone, 0);
  const auto q = testutil::random_unit(rng, 8);
  EXPECT_THROW(rank(q, g, 0), Error);
  EXPECT_THROW(rank(testutil::random_unit(rng, 7), g, 3), Error);
  FeatureSet empty;
  empty.d_g = 8;
  empty.d_l = 4;
  EXPECT_THROW(rank(q, empty, 3), Error);
  try {
    rank(testutil::random_unit(rng, 7), g, 3);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(Pca, PointsOnALineProjectToPlusMinusOne) {
  Matrix data(6, 3);
  const float dir[3] = {0.6f, 0.0f, 0.8f};
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) data(r, c) = (float(r) - 2.5f) * dir[c] + 1.0f;
  const auto p = fit_pca(data, 1);
  EXPECT_NEAR(p.components(0, 0), 0.6f, 1e-6);
  EXPECT_NEAR(p.components(0, 2), 0.8f, 1e-6);
  for (std::size_t r = 0; r < 6; ++r) {
    const auto v = project(p, data.row(r));
    EXPECT_NEAR(std::abs(v[0]), 1.0f, 1e-6);
    EXPECT_EQ(v[0] > 0, r >= 3);
  }
}

TEST(Pca, FullRankProjectionPreservesCenteredAngles) {
  std::mt19937_64 rng(6);
  const auto data = testutil::random_matrix(rng, 40, 6);
  const auto p = fit_pca(data, 6);
  for (std::size_t a = 0; a < 5; ++a) {
    std::vector<double> ca(6), cb(6);
    for (std::size_t c = 0; c < 6; ++c) {
      ca[c] = data(a, c) - p.mean[c];
      cb[c] = data(a + 1, c) - p.mean[c];
    }
    const double cos_ref = std::inner_product(ca.begin(), ca.end(), cb.begin(), 0.0) /
                           std::sqrt(std::inner_product(ca.begin(), ca.end(), ca.begin(), 0.0) *
                                     std::inner_product(cb.begin(), cb.end(), cb.begin(), 0.0));
    const auto pa = project(p, data.row(a)), pb = project(p, data.row(a + 1));
    EXPECT_NEAR(dot(pa, pb), cos_ref, 1e-5);
  }
}

TEST(Pca, ComponentsMatchJacobiOracleUpToSign) {
  std::mt19937_64 rng(7);
  Matrix data(50, 8);
  std::normal_distribution<double> n(0.0, 1.0);
  const double spread[8] = {5, 4, 3, 2, 1.5, 1, 0.5, 0.25};
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t c = 0; c < 8; ++c) data(r, c) = float(n(rng) * spread[c] + 0.1 * c);
  const auto p = fit_pca(data, 3);

  oracle::Mat cov(8, oracle::Vec(8, 0.0));
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        cov[i][j] += (data(r, i) - double(p.mean[i])) * (data(r, j) - double(p.mean[j])) / 49.0;
  const auto [values, vectors] = oracle::jacobi_eigen(cov);
  for (std::size_t c = 0; c < 3; ++c) {
    double agree = 0.0;
    for (std::size_t j = 0; j < 8; ++j) agree += p.components(c, j) * vectors[j][c];
    const double sign = agree >= 0 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(p.components(c, j), sign * vectors[j][c], 1e-4);
  }
}

TEST(Pca, SignConventionFirstCoefficientPositive) {
  std::mt19937_64 rng(8);
  const auto p = fit_pca(testutil::random_matrix(rng, 30, 5), 4);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (std::abs(p.components(c, j)) > 1e-6) {
        EXPECT_GT(p.components(c, j), 0.0f);
        break;
      }
    }
  }
}

TEST(Pca, OrthonormalRows) {
  std::mt19937_64 rng(9);
  const auto p = fit_pca(testutil::random_matrix(rng, 64, 12), 5);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) EXPECT_NEAR(dot(p.components.row(a), p.components.row(b)), a == b ? 1.0 : 0.0, 1e-5);
}

TEST(Pca, AxisAlignedProjectionAndAntipodes) {
  PcaProjection p;
  p.mean = {0, 0, 0, 0};
  p.components = Matrix(2, 4, std::vector<float>{1, 0, 0, 0, 0, 1, 0, 0});
  const auto e0 = project(p, std::vector<float>{1, 0, 0, 0});
  EXPECT_EQ(e0, (std::vector<float>{1.0f, 0.0f}));
  std::mt19937_64 rng(10);
  const auto v = testutil::random_unit(rng, 4);
  std::vector<float> neg(v.size());
  std::transform(v.begin(), v.end(), neg.begin(), [](float x) { return -x; });
  const auto a = project(p, v), b = project(p, neg);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_FLOAT_EQ(a[i], -b[i]);
  EXPECT_NEAR(l2_norm(a), 1.0, 1e-6);
}

TEST(Pca, Errors) {
  std::mt19937_64 rng(11);
  const auto data = testutil::random_matrix(rng, 10, 4);
  EXPECT_THROW(fit_pca(data, 0), Error);
  EXPECT_THROW(fit_pca(data, 5), Error);
  EXPECT_THROW(fit_pca(testutil::random_matrix(rng, 1, 4), 1), Error);
  Matrix flat(5, 3, 0.5f);
  try {
    fit_pca(flat, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
  const auto p = fit_pca(data, 2);
  EXPECT_THROW(project(p, std::vector<float>{1, 0, 0}), Error);
  EXPECT_THROW(project(p, p.mean), Error);  // the mean projects to zero
}

TEST(Pca, ProjectedIndexRanksConsistently) {
  std::mt19937_64 rng(12);
  const auto g = testutil::random_set(rng, 60, 16, 4, GeoKind::kNone, 0);
  const auto index = GlobalIndex::from(g);
  const auto p = fit_pca(g, 8);
  const auto projected = project_index(p, index);
  ASSERT_EQ(projected.dim(), 8u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto q = project(p, g.records[i].global);
    EXPECT_EQ(rank(q, projected, 1)[0].gallery_index, i);
  }
}

}  // namespace
}  // namespace vpr
