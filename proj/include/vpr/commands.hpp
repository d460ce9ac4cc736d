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

// The command-line operations as plain functions. Each returns the process
// exit status: 0 success, 1 domain failure, 2 I/O or usage failure.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vpr/error.hpp"
#include "vpr/evaluator.hpp"
#include "vpr/facets.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/manifest.hpp"
#include "vpr/matrix_file.hpp"
#include "vpr/pipeline.hpp"
#include "vpr/synth.hpp"

namespace vpr {

namespace detail {

template <typename Fn>
int run_command(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline std::filesystem::path manifest_path(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".manifest.json");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot create " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

inline nlohmann::json protocol_json(const Protocol& p) {
  if (p.kind == Protocol::Kind::kRadiusMeters) return {{"radius_m", p.radius_m}, {"inclusive", p.inclusive}};
  return {{"frame_window", p.window}, {"inclusive", p.inclusive}};
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_validate(const std::filesystem::path& path, std::ostream& out, std::ostream& err) {
  return detail::run_command(err, [&] {
    FeatureSet set;
    try {
      set = load_feature_set(path, ReadOptions{.allow_duplicate_ids = true});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kIo) throw;
      out << path.string() << ": unreadable container: " << e.what() << '\n';
      return 1;
    }
    const auto report = validate(set);
    out << path.string() << ": " << set.size() << " records, d_g=" << set.d_g << ", d_l=" << set.d_l
        << ", geo=" << to_string(set.geo_kind) << '\n';
    if (report.empty()) {
      out << "ok\n";
      return 0;
    }
    out << report.size() << " issue(s):\n" << report.to_string();
    return 1;
  });
}

// ---------------------------------------------------------------------------

struct RetrieveOptions {
  std::filesystem::path gallery;
  std::filesystem::path queries;
  std::filesystem::path out;
  RetrievalParams params;
  std::optional<std::size_t> pca_dim;
  std::vector<std::string> command_line;
};

inline int cmd_retrieve(const RetrieveOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::run_command(err, [&] {
    opt.params.check();
    const auto gallery = std::make_shared<const FeatureSet>(load_feature_set(opt.gallery));
    const FeatureSet queries = load_feature_set(opt.queries);
    check_compatible(*gallery, queries);
    const Retriever retriever(gallery, opt.pca_dim);
    const auto results = retrieve_all(retriever, queries, opt.params);

    std::ofstream file(opt.out, std::ios::trunc);
    if (!file) fail(ErrorCode::kIo, "cannot create " + opt.out.string());
    write_results_jsonl(file, results, queries, *gallery);
    file.close();

    RunManifest manifest;
    manifest.command_line = opt.command_line;
    manifest.config = opt.params.to_json();
    manifest.config["dim"] = opt.pca_dim ? nlohmann::json(*opt.pca_dim) : nlohmann::json(nullptr);
    manifest.config["d_g"] = gallery->d_g;
    manifest.config["d_l"] = gallery->d_l;
    manifest.inputs = {{"gallery", opt.gallery}, {"queries", opt.queries}};
    manifest.write(detail::manifest_path(opt.out));
    out << "wrote " << results.size() << " result lists to " << opt.out.string() << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::filesystem::path results;
  std::filesystem::path queries;
  std::filesystem::path gallery;
  Protocol protocol = Protocol::radius(kDefaultRadiusM);
  std::vector<std::size_t> ks = default_ks();
  std::optional<std::filesystem::path> out_prefix;  // writes <prefix>.csv and <prefix>.json
  std::vector<std::string> command_line;
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::run_command(err, [&] {
    const FeatureSet gallery = load_feature_set(opt.gallery);
    const FeatureSet queries = load_feature_set(opt.queries);
    std::ifstream in(opt.results);
    if (!in) fail(ErrorCode::kIo, "cannot open " + opt.results.string());
    const auto lists = read_results_jsonl(in, queries, gallery);
    const bool any = std::any_of(lists.begin(), lists.end(), [](const auto& l) { return !l.empty(); });
    if (!any) fail(ErrorCode::kInvalidArgument, "no retrievals in " + opt.results.string());
    const auto table = recall_at_k(lists, queries, gallery, opt.protocol, opt.ks);
    const auto csv = table.to_csv();
    out << csv;
    if (opt.out_prefix) {
      const std::string prefix = opt.out_prefix->string();
      detail::write_text(prefix + ".csv", csv);
      detail::write_text(prefix + ".json", table.to_json().dump(2) + "\n");
      RunManifest manifest;
      manifest.command_line = opt.command_line;
      manifest.config = {{"protocol", detail::protocol_json(opt.protocol)}, {"ks", opt.ks}};
      manifest.inputs = {{"results", opt.results}, {"queries", opt.queries}, {"gallery", opt.gallery}};
      manifest.write(prefix + ".manifest.json");
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------

struct SweepLayerFiles {
  std::string name;
  std::filesystem::path gallery;
  std::filesystem::path queries;
};

struct SweepOptions {
  std::vector<SweepLayerFiles> layers;
  SweepGrid grid;
  Protocol protocol = Protocol::radius(kDefaultRadiusM);
  std::vector<std::size_t> ks = default_ks();
  std::optional<std::size_t> pca_dim;
  std::optional<std::filesystem::path> out;
  std::vector<std::string> command_line;
};

inline int cmd_sweep(const SweepOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::run_command(err, [&] {
    opt.grid.check();
    if (opt.layers.empty()) fail(ErrorCode::kUsage, "no inputs to sweep");
    std::vector<std::pair<FeatureSet, FeatureSet>> data;
    data.reserve(opt.layers.size());
    for (const auto& l : opt.layers) data.emplace_back(load_feature_set(l.gallery), load_feature_set(l.queries));
    std::vector<SweepLayer> layers;
    for (std::size_t i = 0; i < data.size(); ++i) {
      layers.push_back({opt.layers[i].name, &data[i].first, &data[i].second});
    }
    const auto rows = sweep(layers, opt.grid, opt.protocol, opt.ks, opt.pca_dim);
    const auto csv = sweep_csv(rows);
    out << csv;
    if (opt.out) {
      detail::write_text(*opt.out, csv);
      RunManifest manifest;
      manifest.command_line = opt.command_line;
      manifest.config = {{"t1", opt.grid.t1s},
                         {"t2", opt.grid.t2s},
                         {"k", opt.grid.ks},
                         {"ks", opt.ks},
                         {"protocol", detail::protocol_json(opt.protocol)},
                         {"dim", opt.pca_dim ? nlohmann::json(*opt.pca_dim) : nlohmann::json(nullptr)}};
      for (const auto& l : opt.layers) {
        manifest.inputs.emplace_back(l.name + ".gallery", l.gallery);
        manifest.inputs.emplace_back(l.name + ".queries", l.queries);
      }
      manifest.write(detail::manifest_path(*opt.out));
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  SynthConfig config;
  std::filesystem::path out_dir;
  std::vector<std::string> command_line;
};

inline int cmd_synth(const SynthOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::run_command(err, [&] {
    const auto ds = generate(opt.config);
    std::error_code ec;
    std::filesystem::create_directories(opt.out_dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + opt.out_dir.string() + ": " + ec.message());
    const auto gallery_path = opt.out_dir / "gallery.efvp";
    const auto queries_path = opt.out_dir / "queries.efvp";
    save_feature_set(ds.gallery, gallery_path);
    save_feature_set(ds.queries, queries_path);
    detail::write_text(opt.out_dir / "truth.json", ds.truth_json().dump(2) + "\n");

    RunManifest manifest;
    manifest.command_line = opt.command_line;
    manifest.config = opt.config.to_json();
    manifest.write(opt.out_dir / "manifest.json");

    std::size_t locals = 0;
    for (const auto& r : ds.gallery.records) locals += r.locals.size();
    out << "places " << opt.config.n_places << ", gallery " << ds.gallery.size() << ", queries "
        << ds.queries.size() << ", d_g " << ds.gallery.d_g << ", d_l " << ds.gallery.d_l
        << ", mean gallery locals " << static_cast<double>(locals) / static_cast<double>(ds.gallery.size()) << '\n'
        << "wrote " << gallery_path.string() << ", " << queries_path.string() << ", "
        << (opt.out_dir / "truth.json").string() << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------
// Facet recomputation from raw matrices, for cross-checking an exporter.

struct FacetsOptions {
  std::filesystem::path tokens;
  std::filesystem::path w_q, w_k, w_v;
  std::optional<std::filesystem::path> b_q, b_k, b_v;  // 1 x d matrices
  std::size_t heads = 1;
  float t1 = kDefaultT1;
  ScoreScaling scaling = ScoreScaling::kScaled;
  std::optional<std::filesystem::path> out;  // JSON; stdout when empty
};

inline std::vector<float> load_bias(const std::optional<std::filesystem::path>& path) {
  if (!path) return {};
  const Matrix m = load_matrix(*path);
  if (m.rows() != 1 && m.cols() != 1) fail(ErrorCode::kDimensionMismatch, path->string() + ": bias must be a vector");
  return {m.data().begin(), m.data().end()};
}

inline int cmd_facets(const FacetsOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::run_command(err, [&] {
    const Matrix tokens = load_matrix(opt.tokens);
    ProjectionWeights w{load_matrix(opt.w_q), load_matrix(opt.w_k), load_matrix(opt.w_v),
                        load_bias(opt.b_q), load_bias(opt.b_k), load_bias(opt.b_v), opt.heads};
    const auto facets = project_facets(tokens, w);
    const auto scores = cls_score_map(facets, opt.scaling);
    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < scores.s.size(); ++i) {
      if (scores.s[i] > opt.t1) selected.push_back(i);
    }
    const auto keypoints = select_keypoints(facets, scores, opt.t1);
    nlohmann::json j = {{"patches", facets.patch_count()},
                        {"dim", facets.dim()},
                        {"heads", facets.heads},
                        {"t1", opt.t1},
                        {"scaled", opt.scaling == ScoreScaling::kScaled},
                        {"k_cls", facets.k_cls},
                        {"scores", scores.s},
                        {"selected", selected}};
    auto& descs = j["descriptors"] = nlohmann::json::array();
    for (const auto& kp : keypoints) descs.push_back(kp.descriptor);
    if (opt.out) {
      detail::write_text(*opt.out, j.dump() + "\n");
    } else {
      out << j.dump() << '\n';
    }
    return 0;
  });
}

}  // namespace vpr
