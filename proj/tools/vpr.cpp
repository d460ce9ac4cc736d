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

// vpr: two-stage visual place recognition retrieval from the command line.
//
//   vpr validate FILE
//   vpr retrieve --gallery G --queries Q --out results.jsonl [--k 100 --t1 0.05 --t2 0.65 --rerank on --dim D]
//   vpr eval --results R --queries Q --gallery G [--radius-m 25 | --frame-window 10] [--ks 1,5,10] [--out PREFIX]
//   vpr sweep --gallery G --queries Q --grid "t1=0,0.05;t2=0.5,0.65;k=5,100" [--out sweep.csv]
//   vpr synth --out DIR [--seed 42 ...]
//   vpr facets --tokens T --wq WQ --wk WK --wv WV [--heads H --t1 T1]

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vpr/commands.hpp"

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& values) {
  std::vector<T> out;
  for (const auto& v : split(values, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(static_cast<T>(std::stod(v, &used)));
      } else {
        out.push_back(static_cast<T>(std::stoull(v, &used)));
      }
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      vpr::fail(vpr::ErrorCode::kUsage, "bad value '" + v + "' for grid key " + key);
    }
  }
  return out;
}

// "t1=0,0.05;t2=0.5,0.65;k=5,100;layer-file=name:gallery.efvp:queries.efvp,..."
void apply_grid(const std::string& text, vpr::SweepOptions& opt, bool& t1_set, bool& t2_set, bool& k_set) {
  for (const auto& part : split(text, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) vpr::fail(vpr::ErrorCode::kUsage, "grid entry '" + part + "' is not key=values");
    const auto key = part.substr(0, eq);
    const auto values = part.substr(eq + 1);
    if (key == "t1") {
      if (!t1_set) opt.grid.t1s.clear();
      t1_set = true;
      for (float v : parse_list<float>(key, values)) opt.grid.t1s.push_back(v);
    } else if (key == "t2") {
      if (!t2_set) opt.grid.t2s.clear();
      t2_set = true;
      for (float v : parse_list<float>(key, values)) opt.grid.t2s.push_back(v);
    } else if (key == "k") {
      if (!k_set) opt.grid.ks.clear();
      k_set = true;
      for (auto v : parse_list<std::size_t>(key, values)) opt.grid.ks.push_back(v);
    } else if (key == "layer-file") {
      for (const auto& entry : split(values, ',')) {
        const auto fields = split(entry, ':');
        if (fields.size() != 3) {
          vpr::fail(vpr::ErrorCode::kUsage, "layer-file entry '" + entry + "' must be name:gallery:queries");
        }
        opt.layers.push_back({fields[0], fields[1], fields[2]});
      }
    } else {
      vpr::fail(vpr::ErrorCode::kUsage, "unknown grid key '" + key + "'");
    }
  }
}

vpr::Protocol make_protocol(CLI::Option* frame_opt, double radius, long long window, bool strict) {
  if (frame_opt->count() > 0) return vpr::Protocol::frame_window(window, !strict);
  return vpr::Protocol::radius(radius, !strict);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> command_line(argv, argv + argc);
  CLI::App app{"Two-stage visual place recognition: global ranking + mutual-nearest-neighbor re-ranking"};
  app.set_version_flag("--version", std::string(vpr::kVersion));
  app.require_subcommand(1);

  // validate
  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check an .efvp file against every format invariant");
  validate->add_option("file", validate_path, "Feature file")->required();

  // retrieve
  vpr::RetrieveOptions ret;
  ret.command_line = command_line;
  std::string rerank_flag = "on";
  std::size_t dim = 0;
  auto* retrieve = app.add_subcommand("retrieve", "Rank (and re-rank) every query against a gallery");
  retrieve->add_option("--gallery", ret.gallery, "Gallery .efvp")->required();
  retrieve->add_option("--queries", ret.queries, "Query .efvp")->required();
  retrieve->add_option("--out", ret.out, "Results .jsonl")->required();
  retrieve->add_option("--k", ret.params.k, "First-stage candidates")->capture_default_str();
  retrieve->add_option("--t1", ret.params.t1, "Keypoint score threshold")->capture_default_str();
  retrieve->add_option("--t2", ret.params.t2, "Match similarity threshold")->capture_default_str();
  retrieve->add_option("--rerank", rerank_flag, "on|off")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  auto* ret_dim = retrieve->add_option("--dim", dim, "PCA-reduce global descriptors to this dimension");

  // eval
  vpr::EvalOptions ev;
  ev.command_line = command_line;
  double radius = vpr::kDefaultRadiusM;
  long long window = vpr::kDefaultFrameWindow;
  bool strict = false;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Recall@K of a results file");
  eval->add_option("--results", ev.results, "Results .jsonl")->required();
  eval->add_option("--queries", ev.queries, "Query .efvp")->required();
  eval->add_option("--gallery", ev.gallery, "Gallery .efvp")->required();
  auto* eval_radius = eval->add_option("--radius-m", radius, "Correct within this many metres")->capture_default_str();
  auto* eval_frames = eval->add_option("--frame-window", window, "Correct within this many frames");
  eval_radius->excludes(eval_frames);
  eval->add_flag("--strict", strict, "Exclude the boundary distance/frame gap");
  eval->add_option("--ks", ev.ks, "Recall cut-offs")->delimiter(',');
  eval->add_option("--out", eval_out, "Write PREFIX.csv, PREFIX.json and PREFIX.manifest.json");

  // sweep
  vpr::SweepOptions sw;
  sw.command_line = command_line;
  std::string sweep_gallery, sweep_queries, sweep_out;
  std::vector<std::string> grids;
  double sweep_radius = vpr::kDefaultRadiusM;
  long long sweep_window = vpr::kDefaultFrameWindow;
  bool sweep_strict = false;
  std::size_t sweep_dim = 0;
  auto* sweep = app.add_subcommand("sweep", "Recall over a grid of t1, t2, k (and alternative layer files)");
  sweep->add_option("--gallery", sweep_gallery, "Gallery .efvp");
  sweep->add_option("--queries", sweep_queries, "Query .efvp");
  sweep->add_option("--grid", grids, "key=v1,v2 entries separated by ';' (keys: t1, t2, k, layer-file)")->required();
  auto* sweep_r = sweep->add_option("--radius-m", sweep_radius, "Correct within this many metres");
  auto* sweep_f = sweep->add_option("--frame-window", sweep_window, "Correct within this many frames");
  sweep_r->excludes(sweep_f);
  sweep->add_flag("--strict", sweep_strict, "Exclude the boundary");
  sweep->add_option("--ks", sw.ks, "Recall cut-offs")->delimiter(',');
  auto* sweep_dim_opt = sweep->add_option("--dim", sweep_dim, "PCA dimension for the global stage");
  sweep->add_option("--out", sweep_out, "Long-format CSV");

  // synth
  vpr::SynthOptions sy;
  sy.command_line = command_line;
  auto& c = sy.config;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic gallery/query set with ground truth");
  synth->add_option("--out", sy.out_dir, "Output directory")->required();
  synth->add_option("--seed", c.seed)->capture_default_str();
  synth->add_option("--places", c.n_places)->capture_default_str();
  synth->add_option("--gallery-per-place", c.gallery_per_place)->capture_default_str();
  synth->add_option("--queries-per-place", c.queries_per_place)->capture_default_str();
  synth->add_option("--dg", c.d_g, "Global dimension")->capture_default_str();
  synth->add_option("--dl", c.d_l, "Local dimension")->capture_default_str();
  synth->add_option("--locals-min", c.locals_min)->capture_default_str();
  synth->add_option("--locals-max", c.locals_max)->capture_default_str();
  synth->add_option("--global-noise", c.global_noise)->capture_default_str();
  synth->add_option("--local-noise", c.local_noise)->capture_default_str();
  synth->add_option("--distractors", c.distractor_fraction, "Fraction of query locals from other places")
      ->capture_default_str();
  synth->add_option("--spacing-m", c.geo_spacing_m)->capture_default_str();
  synth->add_option("--correlation", c.place_correlation, "Global similarity of consecutive places")
      ->capture_default_str();

  // facets
  vpr::FacetsOptions fa;
  std::string bq, bk, bv, facets_out;
  bool unscaled = false;
  auto* facets = app.add_subcommand("facets", "Score map and keypoints from raw EFMT tokens and weights");
  facets->add_option("--tokens", fa.tokens)->required();
  facets->add_option("--wq", fa.w_q)->required();
  facets->add_option("--wk", fa.w_k)->required();
  facets->add_option("--wv", fa.w_v)->required();
  facets->add_option("--bq", bq);
  facets->add_option("--bk", bk);
  facets->add_option("--bv", bv);
  facets->add_option("--heads", fa.heads)->capture_default_str();
  facets->add_option("--t1", fa.t1)->capture_default_str();
  facets->add_flag("--unscaled", unscaled, "Do not divide CLS logits by sqrt(head width)");
  facets->add_option("--out", facets_out, "JSON output (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*validate) return vpr::cmd_validate(validate_path, std::cout, std::cerr);

    if (*retrieve) {
      ret.params.rerank = rerank_flag == "on";
      if (ret_dim->count() > 0) ret.pca_dim = dim;
      return vpr::cmd_retrieve(ret, std::cout, std::cerr);
    }

    if (*eval) {
      ev.protocol = make_protocol(eval_frames, radius, window, strict);
      if (!eval_out.empty()) ev.out_prefix = eval_out;
      return vpr::cmd_eval(ev, std::cout, std::cerr);
    }

    if (*sweep) {
      bool t1_set = false, t2_set = false, k_set = false;
      for (const auto& g : grids) apply_grid(g, sw, t1_set, t2_set, k_set);
      if (!sweep_gallery.empty() || !sweep_queries.empty()) {
        if (sweep_gallery.empty() || sweep_queries.empty()) {
          vpr::fail(vpr::ErrorCode::kUsage, "--gallery and --queries go together");
        }
        sw.layers.insert(sw.layers.begin(), {"default", sweep_gallery, sweep_queries});
      }
      sw.protocol = make_protocol(sweep_f, sweep_radius, sweep_window, sweep_strict);
      if (sweep_dim_opt->count() > 0) sw.pca_dim = sweep_dim;
      if (!sweep_out.empty()) sw.out = sweep_out;
      return vpr::cmd_sweep(sw, std::cout, std::cerr);
    }

    if (*synth) return vpr::cmd_synth(sy, std::cout, std::cerr);

    if (*facets) {
      if (!bq.empty()) fa.b_q = bq;
      if (!bk.empty()) fa.b_k = bk;
      if (!bv.empty()) fa.b_v = bv;
      if (unscaled) fa.scaling = vpr::ScoreScaling::kUnscaled;
      if (!facets_out.empty()) fa.out = facets_out;
      return vpr::cmd_facets(fa, std::cout, std::cerr);
    }
  } catch (const vpr::Error& e) {
    std::cerr << "error (" << vpr::to_string(e.code()) << "): " << e.what() << '\n';
    return vpr::exit_code_for(e.code());
  }
  return 2;
}
