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

// HTTP query service over one immutable gallery.
//
//   GET  /v1/health  -> {status, gallery_size, d_g, d_l, version}; 503 until loaded
//   POST /v1/query   -> {results: [{id, first_stage_similarity, mnn_count?}],
//                        timings: {rank_ms, rerank_ms}}
//
// Query errors: 400 descriptor length mismatch, 422 malformed JSON or fields,
// 503 gallery not loaded.

// vpr headers (and Eigen) come before httplib: <resolv.h> defines a `_res`
// macro that collides with Eigen parameter names.
#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/parallel.hpp"
#include "vpr/pipeline.hpp"

#include <httplib.h>
#include <json.hpp>

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vpr {

struct QueryRequest {
  std::vector<float> global_descriptor;
  std::vector<LocalFeature> locals;
  RetrievalParams params;
};

class QueryService {
 public:
  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  void load(std::shared_ptr<const FeatureSet> gallery, std::optional<std::size_t> pca_dim = std::nullopt) {
    auto retriever = std::make_shared<const Retriever>(std::move(gallery), pca_dim);
    std::lock_guard lock(mutex_);
    retriever_ = std::move(retriever);
  }

  bool loaded() const { return current() != nullptr; }

  Reply health() const {
    const auto r = current();
    if (!r) return {503, {{"status", "loading"}, {"version", std::string(kVersion)}}};
    const auto& g = r->gallery();
    return {200, {{"status", "ok"},
                  {"gallery_size", g.size()},
                  {"d_g", g.d_g},
                  {"d_l", g.d_l},
                  {"version", std::string(kVersion)}}};
  }

  Reply query(std::string_view body) const {
    const auto r = current();
    if (!r) return error(503, "unavailable", "", "gallery not loaded");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error(422, "invalid json", "", e.what());
    }
    QueryRequest req;
    if (auto bad = parse_request(j, req)) return *bad;

    const auto& g = r->gallery();
    if (req.global_descriptor.size() != g.d_g) {
      return error(400, "dimension mismatch", "global_descriptor",
                   "expected length " + std::to_string(g.d_g) + ", got " +
                       std::to_string(req.global_descriptor.size()));
    }
    for (std::size_t i = 0; i < req.locals.size(); ++i) {
      if (req.locals[i].descriptor.size() != g.d_l) {
        return error(400, "dimension mismatch", "locals[" + std::to_string(i) + "].descriptor",
                     "expected length " + std::to_string(g.d_l) + ", got " +
                         std::to_string(req.locals[i].descriptor.size()));
      }
    }
    try {
      Timings timings;
      const auto result = r->query(req.global_descriptor, req.locals, req.params, &timings, worker_count());
      auto results = nlohmann::json::array();
      for (const auto& e : result.entries) {
        nlohmann::json item = {{"id", g.records[e.gallery_index].id}, {"first_stage_similarity", e.similarity}};
        if (e.mnn_count) item["mnn_count"] = *e.mnn_count;
        results.push_back(std::move(item));
      }
      return {200, {{"results", std::move(results)},
                    {"timings", {{"rank_ms", timings.rank_ms}, {"rerank_ms", timings.rerank_ms}}}}};
    } catch (const Error& e) {
      const int status = e.code() == ErrorCode::kDimensionMismatch ? 400 : 422;
      return error(status, to_string(e.code()), "", e.what());
    }
  }

 private:
  std::shared_ptr<const Retriever> current() const {
    std::lock_guard lock(mutex_);
    return retriever_;
  }

  static Reply error(int status, const std::string& kind, const std::string& field, const std::string& message) {
    nlohmann::json body = {{"error", kind}, {"message", message}};
    if (!field.empty()) body["field"] = field;
    return {status, std::move(body)};
  }

  static bool read_floats(const nlohmann::json& arr, std::vector<float>& out) {
    if (!arr.is_array()) return false;
    out.clear();
    out.reserve(arr.size());
    for (const auto& v : arr) {
      if (!v.is_number()) return false;
      out.push_back(v.get<float>());
    }
    return true;
  }

  static std::optional<Reply> parse_request(const nlohmann::json& j, QueryRequest& req) {
    if (!j.is_object()) return error(422, "invalid field", "", "request body must be a JSON object");
    if (!j.contains("global_descriptor") || !read_floats(j["global_descriptor"], req.global_descriptor)) {
      return error(422, "invalid field", "global_descriptor", "required array of numbers");
    }
    if (j.contains("locals")) {
      const auto& locals = j["locals"];
      if (!locals.is_array()) return error(422, "invalid field", "locals", "must be an array");
      for (std::size_t i = 0; i < locals.size(); ++i) {
        const auto& l = locals[i];
        const std::string field = "locals[" + std::to_string(i) + "]";
        LocalFeature lf;
        if (!l.is_object() || !l.contains("score") || !l["score"].is_number()) {
          return error(422, "invalid field", field + ".score", "required number");
        }
        lf.score = l["score"].get<float>();
        if (!l.contains("descriptor") || !read_floats(l["descriptor"], lf.descriptor)) {
          return error(422, "invalid field", field + ".descriptor", "required array of numbers");
        }
        req.locals.push_back(std::move(lf));
      }
    }
    if (j.contains("k")) {
      if (!j["k"].is_number_integer() || j["k"].get<long long>() < 1) {
        return error(422, "invalid field", "k", "must be an integer >= 1");
      }
      req.params.k = j["k"].get<std::size_t>();
    }
    for (const char* name : {"t1", "t2"}) {
      if (!j.contains(name)) continue;
      if (!j[name].is_number()) return error(422, "invalid field", name, "must be a number");
      (std::string_view(name) == "t1" ? req.params.t1 : req.params.t2) = j[name].get<float>();
    }
    if (!(req.params.t1 >= 0.0f)) return error(422, "invalid field", "t1", "must be >= 0");
    if (!(req.params.t2 >= -1.0f && req.params.t2 <= 1.0f)) return error(422, "invalid field", "t2", "must be in [-1, 1]");
    if (j.contains("rerank")) {
      if (!j["rerank"].is_boolean()) return error(422, "invalid field", "rerank", "must be a boolean");
      req.params.rerank = j["rerank"].get<bool>();
    }
    return std::nullopt;
  }

  mutable std::mutex mutex_;
  std::shared_ptr<const Retriever> retriever_;
};

/// Installs the /v1 routes on `server`. `service` must outlive it.
inline void bind_routes(httplib::Server& server, const QueryService& service) {
  const auto send = [](httplib::Response& res, const QueryService::Reply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server.Get("/v1/health", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.health());
  });
  server.Post("/v1/query", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.query(req.body));
  });
}

/// Serializes a query record as a request body.
inline nlohmann::json make_query_request(const ImageRecord& rec, const RetrievalParams& params) {
  nlohmann::json locals = nlohmann::json::array();
  for (const auto& lf : rec.locals) locals.push_back({{"score", lf.score}, {"descriptor", lf.descriptor}});
  return {{"global_descriptor", rec.global},
          {"locals", std::move(locals)},
          {"k", params.k},
          {"t1", params.t1},
          {"t2", params.t2},
          {"rerank", params.rerank}};
}

}  // namespace vpr
