#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "qfilter/pipeline.hpp"
#include "synthetic_inputs.hpp"
#include "test_util.hpp"

namespace qfilter {
namespace {

namespace fs = std::filesystem;
using testing::read_text;
using testing::TempDir;

const StageRecord* stage(const LaneRecord& lane, const std::string& name) {
  for (const auto& s : lane.stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

TEST(ConfigValidation, ReportsEveryProblem) {
  TempDir tmp;
  const nlohmann::json j = {
      {"training", {{"learning_rate", -1.0}, {"batch_size", "big"}}},
      {"sampling", {{"negative_strategy", "hardest"}}},
      {"languages",
       {{{"lang", "fr"}, {"positive_pool_path", "a.jsonl"}, {"corpus_path", "c.jsonl"}, {"retention_rate", 1.5}},
        {{"lang", "fr"}, {"positive_pool_path", "a.jsonl"}}}}};
  const auto v = validate_config(j, tmp.path());
  EXPECT_FALSE(v.ok());
  const auto has = [&](const std::string& needle) {
    return std::any_of(v.errors.begin(), v.errors.end(),
                       [&](const std::string& e) { return e.find(needle) != std::string::npos; });
  };
  EXPECT_TRUE(has("training.learning_rate"));
  EXPECT_TRUE(has("training.batch_size"));
  EXPECT_TRUE(has("negative_strategy"));
  EXPECT_TRUE(has("retention_rate"));
  EXPECT_TRUE(has("collides"));
  EXPECT_TRUE(has("languages[1].corpus_path: required"));
  EXPECT_TRUE(has("no such file"));
}

TEST(ConfigValidation, DefaultsAndRelativePaths) {
  TempDir tmp;
  const auto j = testing::write_synthetic_inputs(tmp.path(), {"aa"}, {});
  const auto v = validate_config(j, tmp.path());
  ASSERT_TRUE(v.ok());
  EXPECT_EQ(v.config->languages[0].lane, "aa");
  EXPECT_EQ(v.config->languages[0].corpus_path, tmp.path() / "aa_corpus.jsonl");
  EXPECT_EQ(v.config->output_dir, tmp.path() / "run");
  EXPECT_EQ(v.config->analysis.extremes_k, 25u);
  EXPECT_EQ(config_hash(*v.config), config_hash(*validate_config(j, tmp.path()).config));
  auto j2 = j;
  j2["seeds"]["sampling"] = 8;
  EXPECT_NE(config_hash(*v.config), config_hash(*validate_config(j2, tmp.path()).config));
}

TEST(ConfigValidation, FileProviderNeedsEmbeddings) {
  TempDir tmp;
  auto j = testing::write_synthetic_inputs(tmp.path(), {"aa"}, {});
  j["languages"][0].erase("corpus_embeddings");
  EXPECT_FALSE(validate_config(j, tmp.path()).ok());
}

class PipelineRun : public ::testing::Test {
 protected:
  void SetUp() override { json_ = testing::write_synthetic_inputs(tmp_.path(), {"aa", "bb"}, {}); }
  PipelineConfig config() const { return testing::config_or_die(json_, tmp_.path()); }
  fs::path lane_dir(const std::string& lane) const { return tmp_.path() / "run" / "lanes" / lane; }

  TempDir tmp_;
  nlohmann::json json_;
};

TEST_F(PipelineRun, FullRunProducesEveryArtifact) {
  const auto cfg = config();
  const auto m = run_pipeline(cfg);
  ASSERT_TRUE(m.all_ok());
  ASSERT_EQ(m.lanes.size(), 2u);
  for (const auto& lane : m.lanes) {
    EXPECT_EQ(lane.stages.size(), std::size(kAllStages));
    EXPECT_EQ(stage(lane, "q3-retrain")->status, "done");
    EXPECT_EQ(stage(lane, "report")->status, "skipped");
    for (const auto& s : lane.stages) {
      for (const auto& a : s.artifacts) EXPECT_TRUE(fs::exists(cfg.output_dir / a)) << a;
    }
  }
  for (const char* f : {"positives.emb", "corpus.emb", "train_set.jsonl", "model_prelim.json", "scores_prelim.jsonl",
                        "train_set_q3.jsonl", "model_q3.json", "scores.jsonl", "filtered_manifest.txt",
                        "filtered_corpus.jsonl", "histogram.tsv", "extremes.json", "prelim_vs_final_correlation.json",
                        "prelim_vs_final_rank_shifts.json"}) {
    EXPECT_TRUE(fs::exists(lane_dir("aa") / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(read_text(cfg.output_dir / "run_manifest.json"));
  EXPECT_EQ(manifest["config_hash"], config_hash(cfg));
  EXPECT_EQ(manifest["seeds"]["sampling"], 7);
  EXPECT_EQ(manifest["lanes"][0]["stages"][0]["stage"], "embed");

  const auto scores = read_scores(lane_dir("aa") / "scores.jsonl");
  EXPECT_EQ(scores.size(), 2000u);
  EXPECT_EQ(scores.classifier_id, "q3/aa");
  const auto fm = read_filtered_manifest(lane_dir("aa") / "filtered_manifest.txt");
  EXPECT_EQ(fm.kept_count, 200u);
  EXPECT_EQ(fm.replication_factor, 10u);
}

TEST_F(PipelineRun, ResumeReusesUpstreamArtifacts) {
  const auto cfg = config();
  ASSERT_TRUE(run_pipeline(cfg).all_ok());
  const auto scores_before = read_text(lane_dir("aa") / "scores.jsonl");
  const auto filtered_before = read_text(lane_dir("aa") / "filtered_corpus.jsonl");
  fs::remove(lane_dir("aa") / "filtered_corpus.jsonl");
  fs::remove(lane_dir("aa") / "filtered_manifest.txt");
  const auto m = run_pipeline(cfg);
  ASSERT_TRUE(m.all_ok());
  const auto& aa = *m.find_lane("aa");
  for (const char* name : {"embed", "assemble", "train", "q3-retrain", "score"}) {
    EXPECT_EQ(stage(aa, name)->status, "reused") << name;
  }
  EXPECT_EQ(stage(aa, "filter")->status, "done");
  EXPECT_EQ(stage(*m.find_lane("bb"), "filter")->status, "reused");
  EXPECT_EQ(read_text(lane_dir("aa") / "scores.jsonl"), scores_before);
  EXPECT_EQ(read_text(lane_dir("aa") / "filtered_corpus.jsonl"), filtered_before);
}

TEST_F(PipelineRun, FreshRunRecomputesIdentically) {
  const auto cfg = config();
  ASSERT_TRUE(run_pipeline(cfg).all_ok());
  const auto model = read_text(lane_dir("bb") / "model_q3.json");
  RunOptions opts;
  opts.reuse_artifacts = false;
  const auto m = run_pipeline(cfg, opts);
  EXPECT_EQ(stage(*m.find_lane("bb"), "train")->status, "done");
  EXPECT_EQ(read_text(lane_dir("bb") / "model_q3.json"), model);
}

TEST_F(PipelineRun, FailingLaneDoesNotStopOthers) {
  json_["languages"][1]["corpus_embeddings"] = "aa_corpus.emb";
  const auto m = run_pipeline(config());
  EXPECT_FALSE(m.all_ok());
  const auto& bb = *m.find_lane("bb");
  EXPECT_EQ(bb.status, "failed");
  EXPECT_EQ(stage(bb, "embed")->status, "failed");
  EXPECT_NE(stage(bb, "embed")->reason.find("no corpus embedding"), std::string::npos);
  EXPECT_EQ(stage(bb, "train")->status, "not-run");
  const auto& aa = *m.find_lane("aa");
  EXPECT_EQ(aa.status, "ok");
  EXPECT_TRUE(fs::exists(lane_dir("aa") / "filtered_corpus.jsonl"));
  const auto manifest = nlohmann::json::parse(read_text(tmp_.path() / "run" / "run_manifest.json"));
  EXPECT_EQ(manifest["lanes"][1]["status"], "failed");
}

TEST_F(PipelineRun, Q3SkippedAtOrBelowThreshold) {
  json_["q3_min_corpus"] = 2000;
  const auto m = run_pipeline(config());
  ASSERT_TRUE(m.all_ok());
  const auto* q3 = stage(*m.find_lane("aa"), "q3-retrain");
  EXPECT_EQ(q3->status, "skipped");
  EXPECT_NE(q3->reason.find("<= q3_min_corpus"), std::string::npos);
  EXPECT_FALSE(fs::exists(lane_dir("aa") / "model_q3.json"));
  EXPECT_EQ(read_scores(lane_dir("aa") / "scores.jsonl").classifier_id, "prelim/aa");
  json_["q3_min_corpus"] = 1999;
  EXPECT_EQ(stage(*run_pipeline(config()).find_lane("aa"), "q3-retrain")->status, "done");
}

TEST_F(PipelineRun, Q3NegativesComeFromTheBand) {
  ASSERT_TRUE(run_pipeline(config()).all_ok());
  const auto prelim = read_scores(lane_dir("aa") / "scores_prelim.jsonl");
  const auto band = select_q3_band(prelim);
  const auto set = read_training_manifest(lane_dir("aa") / "train_set_q3.jsonl");
  EXPECT_EQ(set.plan.negative_strategy, NegativeStrategy::q3);
  std::size_t negatives = 0;
  for (const auto& ex : set.examples) {
    if (ex.label != 0) continue;
    ++negatives;
    EXPECT_TRUE(std::binary_search(band.ids.begin(), band.ids.end(), ex.doc_id));
  }
  EXPECT_GT(negatives, 0u);
}

TEST_F(PipelineRun, StopsAtRequestedStageAndLane) {
  RunOptions opts;
  opts.last_stage = Stage::train;
  opts.lanes = {"bb"};
  const auto m = run_pipeline(config(), opts);
  ASSERT_EQ(m.lanes.size(), 1u);
  EXPECT_EQ(m.lanes[0].stages.size(), 3u);
  EXPECT_TRUE(fs::exists(lane_dir("bb") / "model_prelim.json"));
  EXPECT_FALSE(fs::exists(lane_dir("bb") / "scores.jsonl"));
  EXPECT_FALSE(fs::exists(lane_dir("aa")));
}

TEST_F(PipelineRun, MultilingualSharesOneClassifier) {
  json_["multilingual"] = true;
  json_["languages"][1]["lane"] = "bb_ml";
  json_["q3_min_corpus"] = 5000;
  const auto cfg = config();
  const auto m = run_pipeline(cfg);
  ASSERT_TRUE(m.all_ok());
  EXPECT_TRUE(fs::exists(cfg.output_dir / "ml" / "model_prelim.json"));
  EXPECT_EQ(read_scores(lane_dir("bb_ml") / "scores.jsonl").classifier_id, "prelim/ml");
  const auto manifest = nlohmann::json::parse(read_text(cfg.output_dir / "run_manifest.json"));
  EXPECT_TRUE(manifest.contains("multilingual_negative_policy"));
}

TEST_F(PipelineRun, BenchmarkReportsPerLaneAndGlobal) {
  const fs::path data = fs::path(QFILTER_TEST_DATA) / "tables";
  json_["languages"][0]["benchmark_matrix"] = (data / "es_q3.tsv").string();
  json_["languages"][1]["benchmark_matrix"] = (data / "fr_q3.tsv").string();
  const auto cfg = config();
  const auto m = run_pipeline(cfg);
  ASSERT_TRUE(m.all_ok());
  EXPECT_TRUE(fs::exists(lane_dir("aa") / "report.json"));
  ASSERT_EQ(m.global_artifacts.size(), 1u);
  const auto report = nlohmann::json::parse(read_text(cfg.output_dir / "report.json"));
  EXPECT_TRUE(report.contains("macro_micro"));
}

}  // namespace
}  // namespace qfilter
