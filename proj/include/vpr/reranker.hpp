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

// Second-stage re-ranking by mutual-nearest-neighbor counts.
//
// A pair (i, j) between query locals a and candidate locals b counts when b_j
// is the nearest neighbor of a_i in b, a_i is the nearest neighbor of b_j in
// a, and a_i . b_j > t2. Candidates are then stably sorted by count.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/linalg.hpp"
#include "vpr/parallel.hpp"
#include "vpr/ranker.hpp"

namespace vpr {

/// Local descriptors of one image packed row-major, optionally filtered by a
/// keypoint threshold.
class DescriptorSet {
 public:
  DescriptorSet() = default;
  explicit DescriptorSet(std::size_t dim) : dim_(dim) {}

  /// Keeps the locals with score > t1 (all of them when t1 is empty), in order.
  static DescriptorSet from_locals(std::span<const LocalFeature> locals, std::size_t dim,
                                   std::optional<float> t1 = std::nullopt) {
    DescriptorSet out(dim);
    out.data_.reserve(locals.size() * dim);
    for (const LocalFeature& lf : locals) {
      if (t1 && !(lf.score > *t1)) continue;
      if (lf.descriptor.size() != dim) {
        fail(ErrorCode::kDimensionMismatch, "local descriptor dimension " +
                                                std::to_string(lf.descriptor.size()) + " != " +
                                                std::to_string(dim));
      }
      out.data_.insert(out.data_.end(), lf.descriptor.begin(), lf.descriptor.end());
      ++out.size_;
    }
    return out;
  }

  static DescriptorSet from_locals(std::span<const LocalFeature> locals,
                                   std::optional<float> t1 = std::nullopt) {
    const std::size_t dim = locals.empty() ? 0 : locals.front().descriptor.size();
    return from_locals(locals, dim, t1);
  }

  void push_back(std::span<const float> v) {
    if (v.size() != dim_) fail(ErrorCode::kDimensionMismatch, "descriptor dimension mismatch");
    data_.insert(data_.end(), v.begin(), v.end());
    ++size_;
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return size_ == 0; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::vector<float> data_;
};

struct MatchPair {
  std::size_t query_idx = 0;
  std::size_t cand_idx = 0;
  float similarity = 0.0f;

  bool operator==(const MatchPair&) const = default;
};

struct Neighbor {
  std::size_t index = 0;
  double similarity = 0.0;
};

/// Pool entry with the largest dot product; the lowest index wins ties.
inline Neighbor nearest(std::span<const float> descriptor, const DescriptorSet& pool) {
  if (pool.empty()) fail(ErrorCode::kInvalidArgument, "nearest neighbor in an empty pool");
  if (descriptor.size() != pool.dim()) fail(ErrorCode::kDimensionMismatch, "descriptor/pool dimension mismatch");
  Neighbor best{0, dot(descriptor, pool.row(0))};
  for (std::size_t j = 1; j < pool.size(); ++j) {
    const double s = dot(descriptor, pool.row(j));
    if (s > best.similarity) best = {j, s};
  }
  return best;
}

namespace detail {

// Row-major |a| x |b| similarity matrix. Each entry sums a_i[k] * b_j[k] in
// ascending k, matching dot().
inline std::vector<double> similarity_matrix(const DescriptorSet& a, const DescriptorSet& b) {
  const std::size_t n = a.size(), m = b.size(), d = a.dim();
  std::vector<double> bt(d * m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto bj = b.row(j);
    for (std::size_t k = 0; k < d; ++k) bt[k * m + j] = bj[k];
  }
  std::vector<double> sim(n * m, 0.0);
  constexpr std::size_t kBlock = 4;
  std::size_t i = 0;
  for (; i + kBlock <= n; i += kBlock) {
    double* o0 = sim.data() + i * m;
    double* o1 = o0 + m;
    double* o2 = o1 + m;
    double* o3 = o2 + m;
    const auto a0 = a.row(i), a1 = a.row(i + 1), a2 = a.row(i + 2), a3 = a.row(i + 3);
    for (std::size_t k = 0; k < d; ++k) {
      const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
      const double* col = bt.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double c = col[j];
        o0[j] += x0 * c;
        o1[j] += x1 * c;
        o2[j] += x2 * c;
        o3[j] += x3 * c;
      }
    }
  }
  for (; i < n; ++i) {
    double* out = sim.data() + i * m;
    const auto ai = a.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = ai[k];
      const double* col = bt.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += aik * col[j];
    }
  }
  return sim;
}

}  // namespace detail

/// Mutual nearest neighbors above t2 (strict), ascending by query index.
/// Either side empty gives no pairs.
inline std::vector<MatchPair> mnn_pairs(const DescriptorSet& a, const DescriptorSet& b, float t2) {
  if (a.empty() || b.empty()) return {};
  if (a.dim() != b.dim()) {
    fail(ErrorCode::kDimensionMismatch, "local dimensions differ: " + std::to_string(a.dim()) +
                                            " vs " + std::to_string(b.dim()));
  }
  const std::size_t n = a.size(), m = b.size();
  const auto sim = detail::similarity_matrix(a, b);

  std::vector<std::size_t> row_best(n, 0), col_best(m, 0);
  std::vector<double> col_max(m, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = sim.data() + i * m;
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (r[j] > r[best]) best = j;
    }
    row_best[i] = best;
    for (std::size_t j = 0; j < m; ++j) {
      if (r[j] > col_max[j]) {
        col_max[j] = r[j];
        col_best[j] = i;
      }
    }
  }
  const double threshold = t2;
  std::vector<MatchPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_best[i];
    const double s = sim[i * m + j];
    if (col_best[j] == i && s > threshold) pairs.push_back({i, j, static_cast<float>(s)});
  }
  return pairs;
}

inline std::vector<MatchPair> mnn_pairs(std::span<const LocalFeature> a, std::span<const LocalFeature> b,
                                        float t2) {
  if (a.empty() || b.empty()) return {};
  return mnn_pairs(DescriptorSet::from_locals(a), DescriptorSet::from_locals(b), t2);
}

inline std::size_t mnn_count(const DescriptorSet& a, const DescriptorSet& b, float t2) {
  return mnn_pairs(a, b, t2).size();
}

struct Candidate {
  std::size_t gallery_index = 0;
  const DescriptorSet* locals = nullptr;  // null is treated as no locals
};

struct RerankEntry {
  std::size_t gallery_index = 0;
  std::size_t mnn_count = 0;
  std::size_t first_stage_rank = 0;
  float first_stage_similarity = 0.0f;

  bool operator==(const RerankEntry&) const = default;
};

struct RerankResult {
  std::vector<RerankEntry> order;  // count descending, ties by first-stage rank
  std::vector<std::vector<MatchPair>> pairs;  // per first-stage candidate, when retained
};

/// Stable reorder of the first `prefix` first-stage entries by count.
inline std::vector<RerankEntry> order_by_counts(const RankedList& first_stage,
                                                std::span<const std::size_t> counts,
                                                std::size_t prefix = std::numeric_limits<std::size_t>::max()) {
  prefix = std::min(prefix, first_stage.size());
  if (counts.size() < prefix) fail(ErrorCode::kInvalidArgument, "fewer counts than candidates");
  std::vector<RerankEntry> order;
  order.reserve(prefix);
  for (std::size_t r = 0; r < prefix; ++r) {
    order.push_back({first_stage[r].gallery_index, counts[r], r, first_stage[r].similarity});
  }
  std::stable_sort(order.begin(), order.end(), [](const RerankEntry& x, const RerankEntry& y) {
    return x.mnn_count > y.mnn_count;
  });
  return order;
}

/// Counts MNN pairs between the query and each candidate and reorders the
/// candidates by count. `candidates` must mirror `first_stage` entry for entry.
inline RerankResult rerank(const DescriptorSet& query_locals, std::span<const Candidate> candidates, float t2,
                           const RankedList& first_stage, bool keep_pairs = false, std::size_t workers = 1) {
  if (candidates.size() != first_stage.size()) {
    fail(ErrorCode::kInvalidArgument, "candidate count " + std::to_string(candidates.size()) +
                                          " != first-stage length " + std::to_string(first_stage.size()));
  }
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    if (candidates[r].gallery_index != first_stage[r].gallery_index) {
      fail(ErrorCode::kInvalidArgument, "candidate " + std::to_string(r) + " does not match first-stage entry");
    }
  }
  std::vector<std::vector<MatchPair>> pairs(candidates.size());
  parallel_for(
      candidates.size(),
      [&](std::size_t r) {
        if (candidates[r].locals != nullptr) pairs[r] = mnn_pairs(query_locals, *candidates[r].locals, t2);
      },
      workers);
  std::vector<std::size_t> counts(candidates.size());
  for (std::size_t r = 0; r < candidates.size(); ++r) counts[r] = pairs[r].size();

  RerankResult result;
  result.order = order_by_counts(first_stage, counts);
  if (keep_pairs) result.pairs = std::move(pairs);
  return result;
}

}  // namespace vpr
