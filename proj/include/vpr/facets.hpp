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

// Single-layer self-attention facets and the CLS-attention keypoint selector.
//
// Given the token matrix entering one attention block (row 0 is the CLS
// token, rows 1..p are patches) and that block's projections, computes
// Q, K and V, the patch saliency map S (softmax of patch queries against the
// CLS key, averaged over heads) and the local features: L2-normalized V rows
// of the patches whose score exceeds t1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/linalg.hpp"

namespace vpr {

inline constexpr float kDefaultT1 = 0.05f;
inline constexpr float kDefaultT2 = 0.65f;

struct Thresholds {
  float t1 = kDefaultT1;  // keypoint selection, >= 0
  float t2 = kDefaultT2;  // match similarity, in [-1, 1]

  void check() const {
    if (!(t1 >= 0.0f)) fail(ErrorCode::kInvalidArgument, "t1 must be >= 0");
    if (!(t2 >= -1.0f && t2 <= 1.0f)) fail(ErrorCode::kInvalidArgument, "t2 must be in [-1, 1]");
  }
};

struct ProjectionWeights {
  Matrix w_q, w_k, w_v;  // d_model x d each
  std::vector<float> b_q, b_k, b_v;  // length d, or empty for zero bias
  std::size_t heads = 1;

  std::size_t input_dim() const { return w_q.rows(); }
  std::size_t output_dim() const { return w_q.cols(); }
};

struct AttentionFacets {
  Matrix q, k, v;  // (p+1) x d
  std::vector<float> k_cls;  // row 0 of k
  std::size_t heads = 1;
  int layer_offset = 1;  // distance from the output layer; 1 is the penultimate layer

  std::size_t token_count() const { return q.rows(); }
  std::size_t patch_count() const { return q.rows() == 0 ? 0 : q.rows() - 1; }
  std::size_t dim() const { return q.cols(); }
  std::size_t head_dim() const { return dim() / heads; }
};

/// Patch scores, CLS row excluded. Sums to 1, every entry positive.
struct ScoreMap {
  std::vector<float> s;
};

/// Whether patch-to-CLS logits are divided by sqrt(head width) before the softmax.
enum class ScoreScaling { kScaled, kUnscaled };

namespace detail {

// Max-subtracted softmax in float64.
inline std::vector<double> softmax_f64(std::span<const double> logits) {
  double peak = logits[0];
  for (double x : logits) peak = std::max(peak, x);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline void check_weights(const ProjectionWeights& w) {
  const auto shape_ok = [&](const Matrix& m) {
    return m.rows() == w.w_q.rows() && m.cols() == w.w_q.cols();
  };
  if (w.w_q.empty() || !shape_ok(w.w_k) || !shape_ok(w.w_v)) {
    fail(ErrorCode::kDimensionMismatch, "W_Q, W_K and W_V must share a non-empty shape");
  }
  const std::size_t d = w.output_dim();
  for (const auto* b : {&w.b_q, &w.b_k, &w.b_v}) {
    if (!b->empty() && b->size() != d) {
      fail(ErrorCode::kDimensionMismatch,
           "bias length " + std::to_string(b->size()) + " != projection width " + std::to_string(d));
    }
  }
  if (w.heads == 0 || d % w.heads != 0) {
    fail(ErrorCode::kInvalidArgument,
         "head count " + std::to_string(w.heads) + " must divide width " + std::to_string(d));
  }
}

// out = x * w + b, each entry accumulated in float64 over the inner index in order.
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const float> b, const char* name) {
  const std::size_t n = x.rows(), inner = x.cols(), d = w.cols();
  Matrix out(n, d);
  std::vector<double> acc(d);
  for (std::size_t r = 0; r < n; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t m = 0; m < inner; ++m) {
      const double xm = x(r, m);
      const auto wrow = w.row(m);
      for (std::size_t c = 0; c < d; ++c) acc[c] += xm * static_cast<double>(wrow[c]);
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double v = b.empty() ? acc[c] : acc[c] + static_cast<double>(b[c]);
      out(r, c) = static_cast<float>(v);
    }
  }
  if (!all_finite(out.data())) {
    fail(ErrorCode::kNonFinite, std::string(name) + " has non-finite entries (corrupt tokens or weights?)");
  }
  return out;
}

inline double head_dot(std::span<const float> a, std::span<const float> b, std::size_t begin,
                       std::size_t width) {
  return dot(a.subspan(begin, width), b.subspan(begin, width));
}

}  // namespace detail

/// Numerically stable softmax (max subtraction, float64 accumulation).
inline std::vector<float> softmax(std::span<const float> logits) {
  if (logits.empty()) fail(ErrorCode::kInvalidArgument, "softmax of an empty vector");
  if (!all_finite(logits)) fail(ErrorCode::kNonFinite, "softmax logits must be finite");
  std::vector<double> wide(logits.begin(), logits.end());
  const auto probs = detail::softmax_f64(wide);
  return {probs.begin(), probs.end()};
}

/// Q = X W_Q + b_Q, K = X W_K + b_K, V = X W_V + b_V.
inline AttentionFacets project_facets(const Matrix& tokens, const ProjectionWeights& w,
                                      int layer_offset = 1) {
  detail::check_weights(w);
  if (tokens.rows() < 2) {
    fail(ErrorCode::kInvalidArgument, "token matrix needs the CLS row and at least one patch");
  }
  if (tokens.cols() != w.input_dim()) {
    fail(ErrorCode::kDimensionMismatch, "token width " + std::to_string(tokens.cols()) +
                                            " != weight input dimension " +
                                            std::to_string(w.input_dim()));
  }
  AttentionFacets f;
  f.q = detail::affine(tokens, w.w_q, w.b_q, "Q");
  f.k = detail::affine(tokens, w.w_k, w.b_k, "K");
  f.v = detail::affine(tokens, w.w_v, w.b_v, "V");
  const auto cls = f.k.row(0);
  f.k_cls.assign(cls.begin(), cls.end());
  f.heads = w.heads;
  f.layer_offset = layer_offset;
  return f;
}

/// Standard multi-head attention: for each token i and head h,
/// out_i[h] = sum_j softmax_j(q_i[h] . k_j[h] / sqrt(d_h)) v_j[h].
inline Matrix attention_output(const AttentionFacets& f) {
  const std::size_t n = f.token_count(), d = f.dim(), hd = f.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix out(n, d);
  std::vector<double> logits(n);
  std::vector<double> acc(hd);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < f.heads; ++h) {
      const std::size_t begin = h * hd;
      for (std::size_t j = 0; j < n; ++j) {
        logits[j] = detail::head_dot(f.q.row(i), f.k.row(j), begin, hd) * scale;
      }
      const auto weights = detail::softmax_f64(logits);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const auto vj = f.v.row(j);
        for (std::size_t c = 0; c < hd; ++c) acc[c] += weights[j] * static_cast<double>(vj[begin + c]);
      }
      for (std::size_t c = 0; c < hd; ++c) out(i, begin + c) = static_cast<float>(acc[c]);
    }
  }
  return out;
}

/// Patch saliency against the CLS key. Each head's logits q_i[h] . k_cls[h]
/// (over patches only) are softmaxed separately, then the heads are averaged.
inline ScoreMap cls_score_map(const AttentionFacets& f, ScoreScaling scaling = ScoreScaling::kScaled) {
  const std::size_t p = f.patch_count(), hd = f.head_dim();
  if (p < 1) fail(ErrorCode::kInvalidArgument, "score map needs at least one patch");
  if (f.k_cls.size() != f.dim()) fail(ErrorCode::kDimensionMismatch, "k_cls width != facet width");
  const double scale =
      scaling == ScoreScaling::kScaled ? 1.0 / std::sqrt(static_cast<double>(hd)) : 1.0;
  std::vector<double> mean(p, 0.0);
  std::vector<double> logits(p);
  for (std::size_t h = 0; h < f.heads; ++h) {
    const std::size_t begin = h * hd;
    for (std::size_t i = 0; i < p; ++i) {
      logits[i] = detail::head_dot(f.q.row(i + 1), f.k_cls, begin, hd) * scale;
    }
    const auto probs = detail::softmax_f64(logits);
    for (std::size_t i = 0; i < p; ++i) mean[i] += probs[i];
  }
  ScoreMap map;
  map.s.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    map.s[i] = static_cast<float>(mean[i] / static_cast<double>(f.heads));
  }
  return map;
}

/// Patches with s_i > t1 (strict), in patch order; descriptor is the
/// L2-normalized full-width V row, score is s_i.
inline std::vector<LocalFeature> select_keypoints(const AttentionFacets& f, const ScoreMap& s, float t1) {
  const std::size_t p = f.patch_count();
  if (s.s.size() != p) {
    fail(ErrorCode::kDimensionMismatch,
         "score map length " + std::to_string(s.s.size()) + " != patch count " + std::to_string(p));
  }
  std::vector<LocalFeature> out;
  for (std::size_t i = 0; i < p; ++i) {
    if (!(s.s[i] > t1)) continue;
    const auto row = f.v.row(i + 1);
    LocalFeature lf{s.s[i], std::vector<float>(row.begin(), row.end())};
    if (!normalize_in_place(lf.descriptor)) {
      fail(ErrorCode::kDegenerate, "V row of patch " + std::to_string(i) + " is zero");
    }
    out.push_back(std::move(lf));
  }
  return out;
}

/// tokens -> facets -> score map -> keypoints in one call.
inline std::vector<LocalFeature> extract_local_features(const Matrix& tokens, const ProjectionWeights& w,
                                                        float t1,
                                                        ScoreScaling scaling = ScoreScaling::kScaled) {
  const auto facets = project_facets(tokens, w);
  return select_keypoints(facets, cls_score_map(facets, scaling), t1);
}

}  // namespace vpr
