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

// First-stage retrieval: exact cosine top-k over unit global descriptors,
// plus a PCA projection for reduced-dimension experiments.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/linalg.hpp"

namespace vpr {

inline constexpr std::size_t kDefaultTopK = 100;

struct RankedEntry {
  std::size_t gallery_index = 0;
  float similarity = 0.0f;

  bool operator==(const RankedEntry&) const = default;
};

/// Descending by similarity; equal similarities in ascending gallery index.
struct RankedList {
  std::vector<RankedEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  const RankedEntry& operator[](std::size_t i) const { return entries[i]; }
  bool operator==(const RankedList&) const = default;
};

/// Gallery global descriptors packed row-major for scanning.
class GlobalIndex {
 public:
  GlobalIndex() = default;
  explicit GlobalIndex(Matrix globals) : globals_(std::move(globals)) {}

  static GlobalIndex from(const FeatureSet& gallery) {
    Matrix m(gallery.size(), gallery.d_g);
    for (std::size_t r = 0; r < gallery.size(); ++r) {
      const auto& g = gallery.records[r].global;
      if (g.size() != gallery.d_g) {
        fail(ErrorCode::kDimensionMismatch, "record " + gallery.records[r].id + ": global dimension != d_g");
      }
      std::copy(g.begin(), g.end(), m.row(r).begin());
    }
    return GlobalIndex(std::move(m));
  }

  std::size_t size() const noexcept { return globals_.rows(); }
  std::size_t dim() const noexcept { return globals_.cols(); }
  std::span<const float> row(std::size_t i) const { return globals_.row(i); }
  const Matrix& matrix() const noexcept { return globals_; }

 private:
  Matrix globals_;
};

namespace detail {

template <typename RowFn>
RankedList rank_rows(std::span<const float> query, std::size_t n, std::size_t dim, std::size_t k,
                     RowFn&& row) {
  if (n == 0) fail(ErrorCode::kInvalidArgument, "cannot rank against an empty gallery");
  if (k < 1) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (query.size() != dim) {
    fail(ErrorCode::kDimensionMismatch,
         "query dimension " + std::to_string(query.size()) + " != gallery d_g " + std::to_string(dim));
  }
  std::vector<float> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = static_cast<float>(dot(query, row(i)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto before = [&](std::size_t a, std::size_t b) {
    return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
  };
  const std::size_t keep = std::min(k, n);
  if (keep < n) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
    order.resize(keep);
  } else {
    std::sort(order.begin(), order.end(), before);
  }
  RankedList out;
  out.entries.reserve(keep);
  for (std::size_t i : order) out.entries.push_back({i, sims[i]});
  return out;
}

}  // namespace detail

/// The min(k, |gallery|) records with the largest dot product against
/// `query`. Similarities are float32 roundings of float64 dot products.
inline RankedList rank(std::span<const float> query, const GlobalIndex& gallery, std::size_t k) {
  return detail::rank_rows(query, gallery.size(), gallery.dim(), k,
                           [&](std::size_t i) { return gallery.row(i); });
}

inline RankedList rank(std::span<const float> query, const FeatureSet& gallery, std::size_t k) {
  return detail::rank_rows(query, gallery.size(), gallery.d_g, k, [&](std::size_t i) {
    return std::span<const float>(gallery.records[i].global);
  });
}

// ---------------------------------------------------------------------------
// PCA

struct PcaProjection {
  std::vector<float> mean;  // d_g
  Matrix components;        // d_out x d_g, orthonormal rows, descending variance

  std::size_t input_dim() const noexcept { return components.cols(); }
  std::size_t output_dim() const noexcept { return components.rows(); }
};

/// Top-`d_out` principal directions of the rows of `data`. Each component's
/// first non-negligible coefficient is made positive.
inline PcaProjection fit_pca(const Matrix& data, std::size_t d_out) {
  const std::size_t n = data.rows(), d = data.cols();
  if (n < 2) fail(ErrorCode::kInvalidArgument, "PCA needs at least two samples");
  if (d_out < 1 || d_out > std::min(d, n)) {
    fail(ErrorCode::kInvalidArgument, "PCA output dimension " + std::to_string(d_out) +
                                          " must be in [1, min(d_g, n)] = [1, " +
                                          std::to_string(std::min(d, n)) + "]");
  }
  Eigen::MatrixXd x(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) x(r, c) = data(r, c);
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  PcaProjection p;
  p.mean.resize(d);
  for (std::size_t c = 0; c < d; ++c) p.mean[c] = static_cast<float>(mean(c));
  Eigen::RowVectorXd mean_f(d);
  for (std::size_t c = 0; c < d; ++c) mean_f(c) = p.mean[c];
  x.rowwise() -= mean_f;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  if (!(cov.trace() > 1e-20)) fail(ErrorCode::kDegenerate, "gallery has zero variance");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorCode::kDegenerate, "covariance eigendecomposition failed");
  p.components = Matrix(d_out, d);
  for (std::size_t c = 0; c < d_out; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > 1e-9) {
        if (v(j) < 0) v = -v;
        break;
      }
    }
    for (std::size_t j = 0; j < d; ++j) p.components(c, j) = static_cast<float>(v(static_cast<Eigen::Index>(j)));
  }
  return p;
}

inline PcaProjection fit_pca(const FeatureSet& gallery, std::size_t d_out) {
  return fit_pca(GlobalIndex::from(gallery).matrix(), d_out);
}

/// normalize(components * (v - mean)).
inline std::vector<float> project(const PcaProjection& p, std::span<const float> v) {
  if (v.size() != p.input_dim()) {
    fail(ErrorCode::kDimensionMismatch, "projection input dimension " + std::to_string(v.size()) +
                                            " != " + std::to_string(p.input_dim()));
  }
  std::vector<double> out(p.output_dim(), 0.0);
  for (std::size_t c = 0; c < p.output_dim(); ++c) {
    const auto comp = p.components.row(c);
    double acc = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      acc += static_cast<double>(comp[j]) * (static_cast<double>(v[j]) - static_cast<double>(p.mean[j]));
    }
    out[c] = acc;
  }
  double norm = 0.0;
  for (double x : out) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 1e-12)) fail(ErrorCode::kDegenerate, "vector projects to zero");
  std::vector<float> result(out.size());
  for (std::size_t c = 0; c < out.size(); ++c) result[c] = static_cast<float>(out[c] / norm);
  return result;
}

/// Every gallery global projected through `p`.
inline GlobalIndex project_index(const PcaProjection& p, const GlobalIndex& index) {
  Matrix m(index.size(), p.output_dim());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto v = project(p, index.row(i));
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return GlobalIndex(std::move(m));
}

}  // namespace vpr
