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

// Two-stage retrieval: global top-k, then MNN re-ranking of the k candidates.
// Also the JSON-lines results format and the threshold/k sweep.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/evaluator.hpp"
#include "vpr/facets.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/parallel.hpp"
#include "vpr/ranker.hpp"
#include "vpr/reranker.hpp"

namespace vpr {

struct RetrievalParams {
  std::size_t k = kDefaultTopK;
  float t1 = kDefaultT1;  // re-applied to stored local scores before matching
  float t2 = kDefaultT2;
  bool rerank = true;

  void check() const {
    if (k < 1) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
    Thresholds{t1, t2}.check();
  }

  nlohmann::json to_json() const { return {{"k", k}, {"t1", t1}, {"t2", t2}, {"rerank", rerank}}; }
};

struct ResultEntry {
  std::size_t gallery_index = 0;
  float similarity = 0.0f;  // first-stage
  std::size_t first_stage_rank = 0;
  std::optional<std::size_t> mnn_count;  // set when re-ranked

  bool operator==(const ResultEntry&) const = default;
};

struct QueryResult {
  std::vector<ResultEntry> entries;

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.gallery_index);
    return out;
  }
  bool operator==(const QueryResult&) const = default;
};

struct Timings {
  double rank_ms = 0.0;
  double rerank_ms = 0.0;
};

/// Locals of every gallery record with score > t1.
inline std::vector<DescriptorSet> filter_locals(const FeatureSet& set, float t1) {
  std::vector<DescriptorSet> out;
  out.reserve(set.size());
  for (const auto& rec : set.records) out.push_back(DescriptorSet::from_locals(rec.locals, set.d_l, t1));
  return out;
}

inline QueryResult to_query_result(const RankedList& first) {
  QueryResult out;
  out.entries.reserve(first.size());
  for (std::size_t r = 0; r < first.size(); ++r) {
    out.entries.push_back({first[r].gallery_index, first[r].similarity, r, std::nullopt});
  }
  return out;
}

inline QueryResult to_query_result(std::span<const RerankEntry> order) {
  QueryResult out;
  out.entries.reserve(order.size());
  for (const auto& e : order) {
    out.entries.push_back({e.gallery_index, e.first_stage_similarity, e.first_stage_rank, e.mnn_count});
  }
  return out;
}

/// Read-only retrieval engine over one gallery. Thread-safe for concurrent queries.
class Retriever {
 public:
  explicit Retriever(std::shared_ptr<const FeatureSet> gallery, std::optional<std::size_t> pca_dim = std::nullopt)
      : gallery_(std::move(gallery)) {
    if (!gallery_ || gallery_->size() == 0) fail(ErrorCode::kInvalidArgument, "gallery is empty");
    index_ = GlobalIndex::from(*gallery_);
    if (pca_dim) {
      pca_ = fit_pca(index_.matrix(), *pca_dim);
      index_ = project_index(*pca_, index_);
    }
  }

  explicit Retriever(const FeatureSet& gallery, std::optional<std::size_t> pca_dim = std::nullopt)
      : Retriever(std::make_shared<const FeatureSet>(gallery), pca_dim) {}

  const FeatureSet& gallery() const noexcept { return *gallery_; }
  const std::optional<PcaProjection>& pca() const noexcept { return pca_; }

  RankedList first_stage(std::span<const float> global, std::size_t k) const {
    if (global.size() != gallery_->d_g) {
      fail(ErrorCode::kDimensionMismatch, "global_descriptor has length " + std::to_string(global.size()) +
                                              ", gallery d_g is " + std::to_string(gallery_->d_g));
    }
    if (pca_) return rank(project(*pca_, global), index_, k);
    return rank(global, index_, k);
  }

  /// Full pipeline for one query. `gallery_locals`, when given, must be
  /// filter_locals(gallery(), params.t1).
  QueryResult query(std::span<const float> global, std::span<const LocalFeature> locals,
                    const RetrievalParams& params, Timings* timings = nullptr, std::size_t workers = 1,
                    const std::vector<DescriptorSet>* gallery_locals = nullptr) const {
    params.check();
    for (std::size_t i = 0; i < locals.size(); ++i) {
      if (locals[i].descriptor.size() != gallery_->d_l) {
        fail(ErrorCode::kDimensionMismatch, "locals[" + std::to_string(i) + "].descriptor has length " +
                                                std::to_string(locals[i].descriptor.size()) +
                                                ", gallery d_l is " + std::to_string(gallery_->d_l));
      }
    }
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    const RankedList first = first_stage(global, params.k);
    const auto t1 = Clock::now();
    QueryResult out;
    if (!params.rerank) {
      out = to_query_result(first);
    } else {
      const auto query_set = DescriptorSet::from_locals(locals, gallery_->d_l, params.t1);
      std::vector<DescriptorSet> owned;
      std::vector<Candidate> candidates;
      candidates.reserve(first.size());
      if (gallery_locals == nullptr) {
        owned.reserve(first.size());
        for (const auto& e : first.entries) {
          owned.push_back(DescriptorSet::from_locals(gallery_->records[e.gallery_index].locals, gallery_->d_l,
                                                     params.t1));
        }
        for (std::size_t r = 0; r < first.size(); ++r) candidates.push_back({first[r].gallery_index, &owned[r]});
      } else {
        for (const auto& e : first.entries) candidates.push_back({e.gallery_index, &(*gallery_locals)[e.gallery_index]});
      }
      const auto reranked = rerank(query_set, candidates, params.t2, first, false, workers);
      out = to_query_result(reranked.order);
    }
    const auto t2 = Clock::now();
    if (timings != nullptr) {
      timings->rank_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      timings->rerank_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    }
    return out;
  }

 private:
  std::shared_ptr<const FeatureSet> gallery_;
  GlobalIndex index_;
  std::optional<PcaProjection> pca_;
};

inline void check_compatible(const FeatureSet& gallery, const FeatureSet& queries) {
  if (gallery.d_g != queries.d_g || gallery.d_l != queries.d_l) {
    fail(ErrorCode::kDimensionMismatch, "query dims (d_g=" + std::to_string(queries.d_g) + ", d_l=" +
                                            std::to_string(queries.d_l) + ") differ from gallery (d_g=" +
                                            std::to_string(gallery.d_g) + ", d_l=" + std::to_string(gallery.d_l) +
                                            ")");
  }
}

/// Runs every query, in parallel across queries; output is in query order.
inline std::vector<QueryResult> retrieve_all(const Retriever& retriever, const FeatureSet& queries,
                                             const RetrievalParams& params, std::size_t workers = worker_count()) {
  check_compatible(retriever.gallery(), queries);
  params.check();
  std::vector<DescriptorSet> gallery_locals;
  if (params.rerank) gallery_locals = filter_locals(retriever.gallery(), params.t1);
  std::vector<QueryResult> results(queries.size());
  parallel_for(
      queries.size(),
      [&](std::size_t q) {
        const auto& rec = queries.records[q];
        results[q] = retriever.query(rec.global, rec.locals, params, nullptr, 1,
                                     params.rerank ? &gallery_locals : nullptr);
      },
      workers);
  return results;
}

inline std::vector<std::vector<std::size_t>> result_indices(std::span<const QueryResult> results) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(r.indices());
  return out;
}

// ---------------------------------------------------------------------------
// Results file: one JSON object per query, in query order.
//   {"query": id, "query_index": i, "results": [{"id", "index",
//    "first_stage_rank", "first_stage_similarity", "mnn_count"?}, ...]}

inline nlohmann::json entry_json(const ResultEntry& e, const FeatureSet& gallery) {
  nlohmann::json j = {{"id", gallery.records[e.gallery_index].id},
                      {"index", e.gallery_index},
                      {"first_stage_rank", e.first_stage_rank},
                      {"first_stage_similarity", e.similarity}};
  if (e.mnn_count) j["mnn_count"] = *e.mnn_count;
  return j;
}

inline void write_results_jsonl(std::ostream& out, std::span<const QueryResult> results, const FeatureSet& queries,
                                const FeatureSet& gallery) {
  if (results.size() != queries.size()) fail(ErrorCode::kInvalidArgument, "one result list per query required");
  for (std::size_t q = 0; q < results.size(); ++q) {
    nlohmann::json line = {{"query", queries.records[q].id}, {"query_index", q}};
    auto& arr = line["results"] = nlohmann::json::array();
    for (const auto& e : results[q].entries) arr.push_back(entry_json(e, gallery));
    out << line.dump() << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "failed writing results");
}

/// Per-query gallery index lists, in the order of `queries`. Queries absent
/// from the file get an empty list.
inline std::vector<std::vector<std::size_t>> read_results_jsonl(std::istream& in, const FeatureSet& queries,
                                                                const FeatureSet& gallery) {
  std::unordered_map<std::string, std::size_t> query_ids, gallery_ids;
  for (std::size_t i = 0; i < queries.size(); ++i) query_ids.emplace(queries.records[i].id, i);
  for (std::size_t i = 0; i < gallery.size(); ++i) gallery_ids.emplace(gallery.records[i].id, i);

  std::vector<std::vector<std::size_t>> out(queries.size());
  std::vector<bool> seen(queries.size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, "results line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("query") || !j["query"].is_string() || !j.contains("results") ||
        !j["results"].is_array()) {
      fail(ErrorCode::kFormat, "results line " + std::to_string(line_no) + ": expected {query, results}");
    }
    const auto qid = j["query"].get<std::string>();
    const auto qit = query_ids.find(qid);
    if (qit == query_ids.end()) fail(ErrorCode::kInvalidArgument, "results reference unknown query " + qid);
    if (seen[qit->second]) fail(ErrorCode::kFormat, "query " + qid + " appears twice in results");
    seen[qit->second] = true;
    for (const auto& r : j["results"]) {
      if (!r.is_object() || !r.contains("id") || !r["id"].is_string()) {
        fail(ErrorCode::kFormat, "results line " + std::to_string(line_no) + ": entry without id");
      }
      const auto gid = r["id"].get<std::string>();
      const auto git = gallery_ids.find(gid);
      if (git == gallery_ids.end()) fail(ErrorCode::kInvalidArgument, "results reference unknown gallery id " + gid);
      out[qit->second].push_back(git->second);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep over (t1, t2, k). First-stage rankings are computed once per layer at
// the largest k; MNN counts once per (t1, t2) over those candidates; each k
// re-ranks its prefix. Every row equals an individual run at that k.

struct SweepGrid {
  std::vector<float> t1s{kDefaultT1};
  std::vector<float> t2s{kDefaultT2};
  std::vector<std::size_t> ks{kDefaultTopK};

  void check() const {
    if (t1s.empty() || t2s.empty() || ks.empty()) fail(ErrorCode::kInvalidArgument, "empty sweep grid");
    for (float t1 : t1s) Thresholds{t1, 0.0f}.check();
    for (float t2 : t2s) Thresholds{0.0f, t2}.check();
    for (std::size_t k : ks) {
      if (k < 1) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
    }
  }
};

struct SweepLayer {
  std::string name;
  const FeatureSet* gallery = nullptr;
  const FeatureSet* queries = nullptr;
};

struct SweepRow {
  std::string layer;
  bool reranked = true;  // false: first-stage baseline (t1/t2 unused)
  float t1 = 0.0f;
  float t2 = 0.0f;
  std::size_t k = 0;
  RecallTable recall;
};

inline std::vector<SweepRow> sweep(std::span<const SweepLayer> layers, const SweepGrid& grid, const Protocol& protocol,
                                   std::span<const std::size_t> eval_ks, std::optional<std::size_t> pca_dim = std::nullopt,
                                   std::size_t workers = worker_count()) {
  grid.check();
  if (layers.empty()) fail(ErrorCode::kInvalidArgument, "no layers to sweep");
  std::vector<std::size_t> ks = grid.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  const std::size_t k_max = ks.back();

  std::vector<SweepRow> rows;
  for (const auto& layer : layers) {
    const FeatureSet& gallery = *layer.gallery;
    const FeatureSet& queries = *layer.queries;
    check_compatible(gallery, queries);
    const Retriever retriever(gallery, pca_dim);
    const std::size_t nq = queries.size();

    std::vector<RankedList> first(nq);
    parallel_for(nq, [&](std::size_t q) { first[q] = retriever.first_stage(queries.records[q].global, k_max); },
                 workers);
    for (std::size_t k : ks) {
      std::vector<std::vector<std::size_t>> lists(nq);
      for (std::size_t q = 0; q < nq; ++q) {
        const std::size_t n = std::min(k, first[q].size());
        for (std::size_t r = 0; r < n; ++r) lists[q].push_back(first[q][r].gallery_index);
      }
      rows.push_back({layer.name, false, 0.0f, 0.0f, k, recall_at_k(lists, queries, gallery, protocol, eval_ks)});
    }

    for (float t1 : grid.t1s) {
      const auto gallery_locals = filter_locals(gallery, t1);
      const auto query_locals = filter_locals(queries, t1);
      for (float t2 : grid.t2s) {
        std::vector<std::vector<std::size_t>> counts(nq);
        parallel_for(
            nq,
            [&](std::size_t q) {
              counts[q].reserve(first[q].size());
              for (const auto& e : first[q].entries) {
                counts[q].push_back(mnn_count(query_locals[q], gallery_locals[e.gallery_index], t2));
              }
            },
            workers);
        for (std::size_t k : ks) {
          std::vector<std::vector<std::size_t>> lists(nq);
          for (std::size_t q = 0; q < nq; ++q) {
            for (const auto& e : order_by_counts(first[q], counts[q], k)) lists[q].push_back(e.gallery_index);
          }
          rows.push_back({layer.name, true, t1, t2, k, recall_at_k(lists, queries, gallery, protocol, eval_ks)});
        }
      }
    }
  }
  return rows;
}

/// Long format: one line per (grid point, evaluated k).
inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "layer,stage,t1,t2,k,recall_k,recall,query_count\n";
  char buf[256];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.recall.ks.size(); ++i) {
      if (row.reranked) {
        std::snprintf(buf, sizeof(buf), "%s,rerank,%g,%g,%zu,%zu,%.4f,%zu\n", row.layer.c_str(), row.t1, row.t2, row.k,
                      row.recall.ks[i], row.recall.values[i], row.recall.query_count);
      } else {
        std::snprintf(buf, sizeof(buf), "%s,global,,,%zu,%zu,%.4f,%zu\n", row.layer.c_str(), row.k, row.recall.ks[i],
                      row.recall.values[i], row.recall.query_count);
      }
      out += buf;
    }
  }
  return out;
}

}  // namespace vpr
