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
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracle.hpp"
#include "test_util.hpp"
#include "vpr/commands.hpp"
#include "vpr/matrix_file.hpp"
#include "vpr/pipeline.hpp"
#include "vpr/synth.hpp"

namespace vpr {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("vpr_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VPR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SynthConfig small_config() {
  SynthConfig c;
  c.n_places = 30;
  c.gallery_per_place = 3;
  return c;
}

TEST(Retriever, MatchesOraclePipeline) {
  const auto ds = generate(small_config());
  const Retriever r(ds.gallery);
  for (std::size_t k : {1u, 5u, 20u}) {
    RetrievalParams p;
    p.k = k;
    const auto got = result_indices(retrieve_all(r, ds.queries, p, 1));
    const auto ref = oracle::run_pipeline(ds.gallery, ds.queries, k, p.t1, p.t2);
    EXPECT_EQ(got, ref.reranked);
    p.rerank = false;
    EXPECT_EQ(result_indices(retrieve_all(r, ds.queries, p, 1)), ref.first_stage);
  }
}

TEST(Retriever, ParallelQueriesMatchSequential) {
  const auto ds = generate(small_config());
  const Retriever r(ds.gallery);
  const RetrievalParams p;
  EXPECT_EQ(retrieve_all(r, ds.queries, p, 1), retrieve_all(r, ds.queries, p, 5));
}

TEST(Retriever, UnreachableThresholdsLeaveFirstStageOrder) {
  const auto ds = generate(small_config());
  const Retriever r(ds.gallery);
  RetrievalParams off;
  off.rerank = false;
  const auto first = result_indices(retrieve_all(r, ds.queries, off, 1));
  for (auto [t1, t2] : {std::pair{0.05f, 0.999f}, std::pair{1.0f, 0.65f}, std::pair{1.5f, 0.0f}}) {
    RetrievalParams p;
    p.t1 = t1;
    p.t2 = t2;
    const auto results = retrieve_all(r, ds.queries, p, 1);
    EXPECT_EQ(result_indices(results), first) << "t1=" << t1 << " t2=" << t2;
    for (const auto& q : results)
      for (const auto& e : q.entries) EXPECT_EQ(e.mnn_count.value_or(99), 0u);
  }
}

TEST(Retriever, Errors) {
  std::mt19937_64 rng(1);
  const auto g = testutil::random_set(rng, 10, 8, 4);
  const Retriever r(g);
  RetrievalParams p;
  EXPECT_THROW(r.query(testutil::random_unit(rng, 7), {}, p), Error);
  const std::vector<LocalFeature> bad{{0.5f, testutil::random_unit(rng, 5)}};
  EXPECT_THROW(r.query(testutil::random_unit(rng, 8), bad, p), Error);
  p.k = 0;
  EXPECT_THROW(r.query(testutil::random_unit(rng, 8), {}, p), Error);
  FeatureSet empty{8, 4, GeoKind::kLatLon, {}};
  EXPECT_THROW(Retriever{empty}, Error);
  const auto other = testutil::random_set(rng, 3, 8, 6);
  EXPECT_THROW(retrieve_all(r, other, RetrievalParams{}), Error);
}

TEST(Retriever, PcaStageUsesProjectedGlobals) {
  const auto ds = generate(small_config());
  const Retriever r(ds.gallery, 16);
  ASSERT_TRUE(r.pca().has_value());
  const auto first = r.first_stage(ds.queries.records[0].global, 5);
  const auto pq = project(*r.pca(), ds.queries.records[0].global);
  const auto pg = project(*r.pca(), ds.gallery.records[first[0].gallery_index].global);
  EXPECT_EQ(first[0].similarity, float(dot(pq, pg)));
}

TEST(ResultsJsonl, RoundTripsIndices) {
  const auto ds = generate(small_config());
  const Retriever r(ds.gallery);
  const auto results = retrieve_all(r, ds.queries, RetrievalParams{}, 1);
  std::stringstream ss;
  write_results_jsonl(ss, results, ds.queries, ds.gallery);
  const auto back = read_results_jsonl(ss, ds.queries, ds.gallery);
  EXPECT_EQ(back, result_indices(results));
}

TEST(ResultsJsonl, RejectsBadInput) {
  const auto ds = generate(small_config());
  const auto read = [&](const std::string& text) {
    std::istringstream in(text);
    return read_results_jsonl(in, ds.queries, ds.gallery);
  };
  EXPECT_THROW(read("not json\n"), Error);
  EXPECT_THROW(read(R"({"query": "nope", "results": []})"), Error);
  EXPECT_THROW(read(R"({"query": "p00000_q0", "results": [{"id": "nope"}]})"), Error);
  EXPECT_THROW(read("{\"query\": \"p00000_q0\", \"results\": []}\n{\"query\": \"p00000_q0\", \"results\": []}"), Error);
  EXPECT_THROW(read(R"({"results": []})"), Error);
  const auto partial = read(R"({"query": "p00001_q0", "results": [{"id": "p00001_g2"}]})");
  EXPECT_TRUE(partial[0].empty());
  EXPECT_EQ(partial[1], (std::vector<std::size_t>{5}));
}

TEST(Sweep, RowsEqualIndividualRuns) {
  const auto ds = generate(small_config());
  SweepGrid grid{{0.05f, 0.5f}, {0.5f, 0.8f}, {3, 10}};
  const std::vector<SweepLayer> layers{{"main", &ds.gallery, &ds.queries}};
  const auto protocol = Protocol::radius(kDefaultRadiusM);
  const auto rows = sweep(layers, grid, protocol, default_ks(), std::nullopt, 2);
  ASSERT_EQ(rows.size(), 2u + 2 * 2 * 2);
  const Retriever r(ds.gallery);
  for (const auto& row : rows) {
    RetrievalParams p;
    p.k = row.k;
    p.rerank = row.reranked;
    if (row.reranked) {
      p.t1 = row.t1;
      p.t2 = row.t2;
    }
    const auto lists = result_indices(retrieve_all(r, ds.queries, p, 1));
    const auto expect = recall_at_k(lists, ds.queries, ds.gallery, protocol, default_ks());
    EXPECT_EQ(row.recall.values, expect.values) << "k=" << row.k << " t1=" << row.t1 << " t2=" << row.t2;
  }
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,stage,t1,t2,k,recall_k,recall,query_count");
  EXPECT_NE(csv.find("main,global,,,3,1,"), std::string::npos);
  EXPECT_NE(csv.find("main,rerank,0.5,0.8,10,10,"), std::string::npos);
}

TEST(Sweep, GridValidation) {
  EXPECT_THROW((SweepGrid{{}, {0.5f}, {1}}.check()), Error);
  EXPECT_THROW((SweepGrid{{0.1f}, {0.5f}, {0}}.check()), Error);
  EXPECT_THROW((SweepGrid{{-0.1f}, {0.5f}, {1}}.check()), Error);
}

TEST(Manifest, StableJsonIgnoresTimeAndTracksInputs) {
  TempDir dir;
  detail::write_text(dir / "a.txt", "abc");
  RunManifest m;
  m.command_line = {"vpr", "eval"};
  m.config = {{"k", 5}};
  m.inputs = {{"data", dir / "a.txt"}};
  const auto first = m.stable_json();
  EXPECT_EQ(first, m.stable_json());
  EXPECT_EQ(first["inputs"]["data"]["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(first["version"], std::string(kVersion));
  EXPECT_TRUE(m.to_json().contains("created_utc"));
  detail::write_text(dir / "a.txt", "abd");
  EXPECT_NE(first, m.stable_json());
}

TEST(Commands, SynthRetrieveEvalCompose) {
  TempDir dir;
  std::ostringstream out, err;
  SynthOptions so{small_config(), dir.path(), {"vpr", "synth"}};
  ASSERT_EQ(cmd_synth(so, out, err), 0) << err.str();
  for (const char* f : {"gallery.efvp", "queries.efvp", "truth.json", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / f));

  RetrieveOptions ro;
  ro.gallery = dir / "gallery.efvp";
  ro.queries = dir / "queries.efvp";
  ro.out = dir / "results.jsonl";
  ASSERT_EQ(cmd_retrieve(ro, out, err), 0) << err.str();
  EXPECT_TRUE(fs::exists(dir / "results.jsonl.manifest.json"));

  EvalOptions eo;
  eo.results = ro.out;
  eo.queries = ro.queries;
  eo.gallery = ro.gallery;
  eo.out_prefix = dir / "recall";
  std::ostringstream csv;
  ASSERT_EQ(cmd_eval(eo, csv, err), 0) << err.str();
  EXPECT_EQ(csv.str(), slurp(dir / "recall.csv"));

  const auto ds = generate(small_config());
  const auto lists = result_indices(retrieve_all(Retriever(ds.gallery), ds.queries, RetrievalParams{}, 1));
  EXPECT_EQ(csv.str(), recall_at_k(lists, ds.queries, ds.gallery, Protocol::radius(25), default_ks()).to_csv());
  const auto json = nlohmann::json::parse(slurp(dir / "recall.json"));
  EXPECT_EQ(json.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "recall.manifest.json"));
}

TEST(Commands, EvalWithoutRetrievalsIsADomainError) {
  TempDir dir;
  std::ostringstream out, err;
  SynthOptions so{small_config(), dir.path(), {}};
  ASSERT_EQ(cmd_synth(so, out, err), 0);
  detail::write_text(dir / "empty.jsonl", "");
  EvalOptions eo;
  eo.results = dir / "empty.jsonl";
  eo.queries = dir / "queries.efvp";
  eo.gallery = dir / "gallery.efvp";
  EXPECT_EQ(cmd_eval(eo, out, err), 1);
  EXPECT_NE(err.str().find("no retrievals"), std::string::npos);
  eo.results = dir / "missing.jsonl";
  EXPECT_EQ(cmd_eval(eo, out, err), 2);
}

TEST(Commands, FacetsMatchesLibrary) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const auto tokens = testutil::random_matrix(rng, 9, 8);
  const auto wq = testutil::random_matrix(rng, 8, 8, 0.4), wk = testutil::random_matrix(rng, 8, 8, 0.4),
             wv = testutil::random_matrix(rng, 8, 8, 0.4), bq = testutil::random_matrix(rng, 1, 8, 0.1);
  save_matrix(tokens, dir / "x.efmt");
  save_matrix(wq, dir / "wq.efmt");
  save_matrix(wk, dir / "wk.efmt");
  save_matrix(wv, dir / "wv.efmt");
  save_matrix(bq, dir / "bq.efmt");
  FacetsOptions fo;
  fo.tokens = dir / "x.efmt";
  fo.w_q = dir / "wq.efmt";
  fo.w_k = dir / "wk.efmt";
  fo.w_v = dir / "wv.efmt";
  fo.b_q = dir / "bq.efmt";
  fo.heads = 2;
  fo.t1 = 0.1f;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_facets(fo, out, err), 0) << err.str();
  const auto j = nlohmann::json::parse(out.str());

  const ProjectionWeights w{wq, wk, wv, {bq.data().begin(), bq.data().end()}, {}, {}, 2};
  const auto f = project_facets(tokens, w);
  const auto s = cls_score_map(f);
  const auto kp = select_keypoints(f, s, 0.1f);
  EXPECT_EQ(j["patches"], 8);
  EXPECT_EQ(j["scores"].get<std::vector<float>>(), s.s);
  ASSERT_EQ(j["descriptors"].size(), kp.size());
  for (std::size_t i = 0; i < kp.size(); ++i) EXPECT_EQ(j["descriptors"][i].get<std::vector<float>>(), kp[i].descriptor);

  fo.heads = 3;
  EXPECT_EQ(cmd_facets(fo, out, err), 1);
  fo.tokens = dir / "nope.efmt";
  EXPECT_EQ(cmd_facets(fo, out, err), 2);
}

TEST(Cli, ValidateExitCodes) {
  TempDir dir;
  std::mt19937_64 rng(4);
  auto set = testutil::random_set(rng, 5, 8, 4);
  save_feature_set(set, dir / "ok.efvp");
  set.records[3].id = set.records[1].id;
  save_feature_set(set, dir / "dup.efvp", WriteCheck::kStructural);
  EXPECT_EQ(run_cli("validate " + (dir / "ok.efvp").string()), 0);
  EXPECT_EQ(run_cli("validate " + (dir / "dup.efvp").string()), 1);
  EXPECT_EQ(run_cli("validate " + (dir / "missing.efvp").string()), 2);
  detail::write_text(dir / "junk.efvp", "garbage");
  EXPECT_EQ(run_cli("validate " + (dir / "junk.efvp").string()), 1);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("eval --results x"), 2);
}

TEST(Cli, EndToEndAndDeterministic) {
  TempDir dir;
  const auto d = dir.path().string();
  ASSERT_EQ(run_cli("synth --out " + d + " --places 20 --gallery-per-place 2"), 0);
  const std::string io = " --gallery " + d + "/gallery.efvp --queries " + d + "/queries.efvp";
  ASSERT_EQ(run_cli("retrieve" + io + " --out " + d + "/a.jsonl --k 10"), 0);
  ASSERT_EQ(run_cli("retrieve" + io + " --out " + d + "/b.jsonl --k 10"), 0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  const auto ma = nlohmann::json::parse(slurp(dir / "a.jsonl.manifest.json"));
  EXPECT_EQ(ma["config"]["k"], 10);
  EXPECT_EQ(ma["inputs"]["gallery"]["sha256"], sha256_file(dir / "gallery.efvp"));
  ASSERT_EQ(run_cli("eval --results " + d + "/a.jsonl" + io + " --out " + d + "/r"), 0);
  EXPECT_EQ(run_cli("eval --results " + d + "/a.jsonl" + io + " --frame-window 5"), 1);
  EXPECT_EQ(run_cli("eval --results " + d + "/a.jsonl" + io + " --frame-window 5 --radius-m 3"), 2);
  ASSERT_EQ(run_cli("sweep" + io + " --grid 't1=0.05,0.2;t2=0.6;k=5,10' --out " + d + "/s.csv"), 0);
  const auto sweep_text = slurp(dir / "s.csv");
  EXPECT_EQ(std::count(sweep_text.begin(), sweep_text.end(), '\n'), 1 + (2 + 4) * 3);
}

}  // namespace
}  // namespace vpr
