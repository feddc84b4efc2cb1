#pragma once

// End-to-end curation workflow driven by one JSON configuration file:
//
//   embed -> assemble -> train -> q3 -> score -> filter -> analyze -> report
//
// Every stage writes its artifacts under <output_dir>/lanes/<lane>/ and is
// skipped (its artifacts re-loaded) when those artifacts already exist, so a
// run resumes from the first missing stage.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/classifier.hpp"
#include "qfilter/corpus_filter.hpp"
#include "qfilter/documents.hpp"
#include "qfilter/embedding.hpp"
#include "qfilter/error.hpp"
#include "qfilter/eval_report.hpp"
#include "qfilter/random.hpp"
#include "qfilter/rank_analysis.hpp"
#include "qfilter/sampler.hpp"
#include "qfilter/score_table.hpp"

namespace qfilter {

namespace fs = std::filesystem;

struct LanguageLane {
  std::string lang;
  std::string lane;
  fs::path positive_pool_path;
  fs::path corpus_path;
  std::optional<fs::path> positive_embeddings;
  std::optional<fs::path> corpus_embeddings;
  double retention_rate = 0.10;
  std::uint32_t replication_factor = 0;  // 0: derive from the retention rate
  std::optional<fs::path> benchmark_matrix;
  std::optional<fs::path> comparison_scores;
};

struct EmbeddingConfig {
  std::string provider = "mock";  // "mock" or "file"
  std::size_t dim = kDefaultEmbeddingDim;
  std::uint64_t seed = 0;
};

struct AnalysisConfig {
  std::size_t histogram_bins = 20;
  std::vector<double> markers = {0.5, 0.75, 0.9};
  std::size_t extremes_k = 25;
  std::size_t shift_k = 20;
  std::size_t shard_size = 4096;
  unsigned threads = 0;
  std::size_t correlation_max_docs = 0;  // 0: full corpus
};

struct PipelineConfig {
  std::vector<LanguageLane> languages;
  SamplingPlan sampling;
  TrainConfig training;
  std::size_t dim_hidden = kDefaultHiddenDim;
  double dropout_p = kDefaultDropout;
  bool q3_enabled = true;
  std::uint64_t q3_min_corpus = 200000;
  bool multilingual = false;
  std::uint64_t seed_sampling = 0;
  std::uint64_t seed_training = 0;
  double reference_rate = 1.0;
  fs::path output_dir = "out";
  EmbeddingConfig embedding;
  AnalysisConfig analysis;
};

// Normalized form used for hashing and `validate` output.
inline nlohmann::json to_json(const PipelineConfig& c) {
  using nlohmann::json;
  json langs = json::array();
  for (const auto& l : c.languages) {
    json j = {{"lang", l.lang},
              {"lane", l.lane},
              {"positive_pool_path", l.positive_pool_path.generic_string()},
              {"corpus_path", l.corpus_path.generic_string()},
              {"retention_rate", l.retention_rate},
              {"replication_factor", l.replication_factor}};
    if (l.positive_embeddings) j["positive_embeddings"] = l.positive_embeddings->generic_string();
    if (l.corpus_embeddings) j["corpus_embeddings"] = l.corpus_embeddings->generic_string();
    if (l.benchmark_matrix) j["benchmark_matrix"] = l.benchmark_matrix->generic_string();
    if (l.comparison_scores) j["comparison_scores"] = l.comparison_scores->generic_string();
    langs.push_back(std::move(j));
  }
  return json{{"languages", std::move(langs)},
              {"sampling",
               {{"target_positives_per_lang", c.sampling.target_positives_per_lang},
                {"upsample_cap", c.sampling.upsample_cap},
                {"negative_strategy", to_string(c.sampling.negative_strategy)}}},
              {"training",
               {{"learning_rate", c.training.learning_rate},
                {"batch_size", c.training.batch_size},
                {"max_epochs", c.training.max_epochs},
                {"val_fraction", c.training.val_fraction},
                {"patience", c.training.patience},
                {"dim_hidden", c.dim_hidden},
                {"dropout_p", c.dropout_p}}},
              {"q3_enabled", c.q3_enabled},
              {"q3_min_corpus", c.q3_min_corpus},
              {"multilingual", c.multilingual},
              {"seeds", {{"sampling", c.seed_sampling}, {"training", c.seed_training}}},
              {"reference_rate", c.reference_rate},
              {"output_dir", c.output_dir.generic_string()},
              {"embedding", {{"provider", c.embedding.provider}, {"dim", c.embedding.dim}, {"seed", c.embedding.seed}}},
              {"analysis",
               {{"histogram_bins", c.analysis.histogram_bins},
                {"markers", c.analysis.markers},
                {"extremes_k", c.analysis.extremes_k},
                {"shift_k", c.analysis.shift_k},
                {"shard_size", c.analysis.shard_size},
                {"threads", c.analysis.threads},
                {"correlation_max_docs", c.analysis.correlation_max_docs}}}};
}

inline std::string config_hash(const PipelineConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

struct ConfigValidation {
  std::optional<PipelineConfig> config;
  std::vector<std::string> errors;
  bool ok() const { return errors.empty() && config.has_value(); }
};

namespace detail {

// Reads optional typed fields, collecting every problem instead of stopping.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string where, std::vector<std::string>& errors)
      : obj_(obj), where_(std::move(where)), errors_(errors) {}

  template <typename T>
  void get(const char* key, T& out) {
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::runtime_error("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::runtime_error("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->get<std::int64_t>() < 0 && !it->is_number_unsigned()) throw std::runtime_error("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw std::runtime_error("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw std::runtime_error("expected a string");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      errors_.push_back(where_ + "." + key + ": " + e.what());
    }
  }

  void path(const char* key, fs::path& out, bool required) {
    std::string s;
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) {
      if (required) errors_.push_back(where_ + "." + key + ": required");
      return;
    }
    get(key, s);
    if (!s.empty()) out = s;
  }

  void opt_path(const char* key, std::optional<fs::path>& out) {
    if (!obj_.contains(key) || obj_[key].is_null()) return;
    fs::path p;
    path(key, p, false);
    if (!p.empty()) out = p;
  }

 private:
  const nlohmann::json& obj_;
  std::string where_;
  std::vector<std::string>& errors_;
};

inline fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

}  // namespace detail

// Parses and checks a configuration. Defaults are filled in; every problem is
// reported rather than only the first.
inline ConfigValidation validate_config(const nlohmann::json& root, const fs::path& base_dir = ".",
                                        bool check_paths = true) {
  ConfigValidation v;
  auto& errors = v.errors;
  if (!root.is_object()) {
    errors.push_back("config: top level must be an object");
    return v;
  }
  PipelineConfig c;
  detail::FieldReader top(root, "config", errors);
  top.get("q3_enabled", c.q3_enabled);
  top.get("q3_min_corpus", c.q3_min_corpus);
  top.get("multilingual", c.multilingual);
  top.get("reference_rate", c.reference_rate);
  top.path("output_dir", c.output_dir, false);

  const nlohmann::json empty = nlohmann::json::object();
  const auto section = [&](const char* name) -> const nlohmann::json& {
    const auto it = root.find(name);
    if (it == root.end() || it->is_null()) return empty;
    if (!it->is_object()) {
      errors.push_back(std::string("config.") + name + ": expected an object");
      return empty;
    }
    return *it;
  };

  {
    detail::FieldReader r(section("sampling"), "sampling", errors);
    r.get("target_positives_per_lang", c.sampling.target_positives_per_lang);
    r.get("upsample_cap", c.sampling.upsample_cap);
    std::string strategy = to_string(c.sampling.negative_strategy);
    r.get("negative_strategy", strategy);
    try {
      c.sampling.negative_strategy = parse_negative_strategy(strategy);
    } catch (const Error& e) {
      errors.push_back(std::string("sampling.negative_strategy: ") + e.what());
    }
    if (c.sampling.target_positives_per_lang < 1) errors.push_back("sampling.target_positives_per_lang: must be >= 1");
    if (c.sampling.upsample_cap < 1) errors.push_back("sampling.upsample_cap: must be >= 1");
  }
  {
    detail::FieldReader r(section("training"), "training", errors);
    r.get("learning_rate", c.training.learning_rate);
    r.get("batch_size", c.training.batch_size);
    r.get("max_epochs", c.training.max_epochs);
    r.get("val_fraction", c.training.val_fraction);
    r.get("patience", c.training.patience);
    r.get("dim_hidden", c.dim_hidden);
    r.get("dropout_p", c.dropout_p);
    if (!(c.training.learning_rate > 0.0)) errors.push_back("training.learning_rate: must be positive");
    if (c.training.batch_size < 1) errors.push_back("training.batch_size: must be >= 1");
    if (c.training.max_epochs < 1) errors.push_back("training.max_epochs: must be >= 1");
    if (!(c.training.val_fraction > 0.0 && c.training.val_fraction < 1.0)) errors.push_back("training.val_fraction: must lie in (0,1)");
    if (c.dim_hidden < 1) errors.push_back("training.dim_hidden: must be >= 1");
    if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) errors.push_back("training.dropout_p: must lie in [0,1)");
  }
  {
    detail::FieldReader r(section("seeds"), "seeds", errors);
    r.get("sampling", c.seed_sampling);
    r.get("training", c.seed_training);
  }
  {
    detail::FieldReader r(section("embedding"), "embedding", errors);
    r.get("provider", c.embedding.provider);
    r.get("dim", c.embedding.dim);
    r.get("seed", c.embedding.seed);
    if (c.embedding.provider != "mock" && c.embedding.provider != "file") {
      errors.push_back("embedding.provider: must be \"mock\" or \"file\"");
    }
    if (c.embedding.dim < 1) errors.push_back("embedding.dim: must be >= 1");
  }
  {
    detail::FieldReader r(section("analysis"), "analysis", errors);
    r.get("histogram_bins", c.analysis.histogram_bins);
    r.get("markers", c.analysis.markers);
    r.get("extremes_k", c.analysis.extremes_k);
    r.get("shift_k", c.analysis.shift_k);
    r.get("shard_size", c.analysis.shard_size);
    r.get("threads", c.analysis.threads);
    r.get("correlation_max_docs", c.analysis.correlation_max_docs);
    if (c.analysis.histogram_bins < 1) errors.push_back("analysis.histogram_bins: must be >= 1");
    if (c.analysis.shard_size < 1) errors.push_back("analysis.shard_size: must be >= 1");
    for (double q : c.analysis.markers) {
      if (!(q >= 0.0 && q <= 1.0)) errors.push_back("analysis.markers: quantile " + std::to_string(q) + " outside [0,1]");
    }
  }
  if (!(c.reference_rate > 0.0 && c.reference_rate <= 1.0)) errors.push_back("config.reference_rate: must lie in (0,1]");

  const auto langs = root.find("languages");
  if (langs == root.end() || !langs->is_array() || langs->empty()) {
    errors.push_back("config.languages: must be a non-empty array");
  } else {
    std::map<std::string, std::size_t> lanes_seen;
    for (std::size_t i = 0; i < langs->size(); ++i) {
      const auto& lj = (*langs)[i];
      const std::string where = "languages[" + std::to_string(i) + "]";
      if (!lj.is_object()) {
        errors.push_back(where + ": expected an object");
        continue;
      }
      LanguageLane l;
      detail::FieldReader r(lj, where, errors);
      r.get("lang", l.lang);
      if (l.lang.empty()) errors.push_back(where + ".lang: required");
      l.lane = l.lang;
      r.get("lane", l.lane);
      r.path("positive_pool_path", l.positive_pool_path, true);
      r.path("corpus_path", l.corpus_path, true);
      r.opt_path("positive_embeddings", l.positive_embeddings);
      r.opt_path("corpus_embeddings", l.corpus_embeddings);
      r.opt_path("benchmark_matrix", l.benchmark_matrix);
      r.opt_path("comparison_scores", l.comparison_scores);
      r.get("retention_rate", l.retention_rate);
      r.get("replication_factor", l.replication_factor);
      if (!(l.retention_rate > 0.0 && l.retention_rate <= 1.0)) {
        errors.push_back(where + ".retention_rate: " + std::to_string(l.retention_rate) + " outside (0,1]");
      }
      if (!l.lane.empty()) {
        if (auto [it, inserted] = lanes_seen.emplace(l.lane, i); !inserted) {
          errors.push_back(where + ".lane: output lane '" + l.lane + "' collides with languages[" +
                           std::to_string(it->second) + "]");
        }
      }
      for (auto* p : {&l.positive_pool_path, &l.corpus_path}) {
        if (!p->empty()) *p = detail::resolve(base_dir, *p);
      }
      for (auto* p : {&l.positive_embeddings, &l.corpus_embeddings, &l.benchmark_matrix, &l.comparison_scores}) {
        if (*p) **p = detail::resolve(base_dir, **p);
      }
      if (c.embedding.provider == "file" && (!l.positive_embeddings || !l.corpus_embeddings)) {
        errors.push_back(where + ": provider \"file\" needs positive_embeddings and corpus_embeddings");
      }
      if (check_paths) {
        const auto check = [&](const char* key, const fs::path& p) {
          if (!p.empty() && !fs::exists(p)) errors.push_back(where + "." + key + ": no such file " + p.generic_string());
        };
        check("positive_pool_path", l.positive_pool_path);
        check("corpus_path", l.corpus_path);
        if (l.positive_embeddings) check("positive_embeddings", *l.positive_embeddings);
        if (l.corpus_embeddings) check("corpus_embeddings", *l.corpus_embeddings);
        if (l.benchmark_matrix) check("benchmark_matrix", *l.benchmark_matrix);
        if (l.comparison_scores) check("comparison_scores", *l.comparison_scores);
      }
      c.languages.push_back(std::move(l));
    }
  }
  c.output_dir = detail::resolve(base_dir, c.output_dir);
  if (errors.empty()) v.config = std::move(c);
  return v;
}

inline ConfigValidation validate_config(const fs::path& path, bool check_paths = true) {
  ConfigValidation v;
  std::ifstream in(path);
  if (!in) {
    v.errors.push_back("cannot open config file " + path.generic_string());
    return v;
  }
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    v.errors.push_back(std::string("config parse error: ") + e.what());
    return v;
  }
  return validate_config(root, path.has_parent_path() ? path.parent_path() : fs::path("."), check_paths);
}

// --- run manifest -----------------------------------------------------------

enum class Stage { embed, assemble, train, q3, score, filter, analyze, report };

inline constexpr Stage kAllStages[] = {Stage::embed, Stage::assemble, Stage::train, Stage::q3,
                                       Stage::score, Stage::filter,   Stage::analyze, Stage::report};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::embed: return "embed";
    case Stage::assemble: return "assemble";
    case Stage::train: return "train";
    case Stage::q3: return "q3-retrain";
    case Stage::score: return "score";
    case Stage::filter: return "filter";
    case Stage::analyze: return "analyze";
    case Stage::report: return "report";
  }
  return "?";
}

struct StageRecord {
  std::string name;
  std::string status;  // done | reused | skipped | failed | not-run
  std::string reason;
  std::vector<std::string> artifacts;
  double wall_ms = 0.0;
};

struct LaneRecord {
  std::string lane;
  std::string lang;
  std::string status = "ok";
  std::string error;
  std::vector<StageRecord> stages;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed_sampling = 0;
  std::uint64_t seed_training = 0;
  bool multilingual = false;
  std::vector<LaneRecord> lanes;
  std::vector<std::string> global_artifacts;

  bool all_ok() const {
    return std::all_of(lanes.begin(), lanes.end(), [](const LaneRecord& l) { return l.status == "ok"; });
  }
  const LaneRecord* find_lane(const std::string& name) const {
    for (const auto& l : lanes) {
      if (l.lane == name) return &l;
    }
    return nullptr;
  }
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json lanes = nlohmann::json::array();
  for (const auto& l : m.lanes) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : l.stages) {
      nlohmann::json sj = {{"stage", s.name}, {"status", s.status}, {"artifacts", s.artifacts}, {"wall_ms", s.wall_ms}};
      if (!s.reason.empty()) sj["reason"] = s.reason;
      stages.push_back(std::move(sj));
    }
    nlohmann::json lj = {{"lane", l.lane}, {"lang", l.lang}, {"status", l.status}, {"stages", std::move(stages)}};
    if (!l.error.empty()) lj["error"] = l.error;
    lanes.push_back(std::move(lj));
  }
  nlohmann::json out = {{"config_hash", m.config_hash},
                        {"seeds", {{"sampling", m.seed_sampling}, {"training", m.seed_training}}},
                        {"multilingual", m.multilingual},
                        {"lanes", std::move(lanes)},
                        {"global_artifacts", m.global_artifacts}};
  if (m.multilingual) out["multilingual_negative_policy"] = "equal negatives per language, drawn from each language's own corpus";
  return out;
}

inline void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp.generic_string());
    out << content;
    if (!out) fail(ErrorKind::io, "write failed for " + tmp.generic_string());
  }
  fs::rename(tmp, path);
}

// --- orchestration ------------------------------------------------------------

struct RunOptions {
  Stage last_stage = Stage::report;
  std::vector<std::string> lanes;  // empty: all lanes; matches lane name or lang
  bool reuse_artifacts = true;
};

namespace detail {

inline void save_report(const fs::path& path, const TrainReport& r) {
  nlohmann::json j = {{"epochs_run", r.epochs_run},
                      {"best_epoch", r.best_epoch},
                      {"initial_val_loss", r.initial_val_loss},
                      {"train_loss_per_epoch", r.train_loss_per_epoch},
                      {"val_loss_per_epoch", r.val_loss_per_epoch},
                      {"val_accuracy_per_epoch", r.val_accuracy_per_epoch}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(1) << '\n';
}

inline bool all_exist(const std::vector<fs::path>& paths) {
  return std::all_of(paths.begin(), paths.end(), [](const fs::path& p) { return fs::exists(p); });
}

// Per-lane state threaded through the stages.
struct LaneState {
  const LanguageLane* cfg = nullptr;
  fs::path dir;
  std::optional<EmbeddingMatrix> positives;
  std::optional<EmbeddingMatrix> corpus;
  std::vector<LabeledExample> positive_examples;
  std::vector<LabeledExample> train_set;
  std::optional<ClassifierModel> prelim;
  std::optional<ClassifierModel> final_model;
  std::optional<ScoreTable> prelim_scores;
  std::optional<ScoreTable> final_scores;
  bool q3_ran = false;
  LaneRecord record;
  bool failed = false;
};

class Runner {
 public:
  Runner(const PipelineConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts) {}

  RunManifest run() {
    manifest_.config_hash = config_hash(cfg_);
    manifest_.seed_sampling = cfg_.seed_sampling;
    manifest_.seed_training = cfg_.seed_training;
    manifest_.multilingual = cfg_.multilingual;
    fs::create_directories(cfg_.output_dir);

    for (const auto& l : cfg_.languages) {
      if (!selected(l)) continue;
      LaneState s;
      s.cfg = &l;
      s.dir = cfg_.output_dir / "lanes" / l.lane;
      s.record.lane = l.lane;
      s.record.lang = l.lang;
      fs::create_directories(s.dir);
      lanes_.push_back(std::move(s));
    }

    per_lane(Stage::embed, [&](LaneState& s) { stage_embed(s); });
    per_lane(Stage::assemble, [&](LaneState& s) { stage_assemble(s); });
    if (cfg_.multilingual) {
      shared(Stage::train, [&] { ml_train(); });
      shared(Stage::q3, [&] { ml_q3(); });
    } else {
      per_lane(Stage::train, [&](LaneState& s) { stage_train(s); });
      per_lane(Stage::q3, [&](LaneState& s) { stage_q3(s); });
    }
    per_lane(Stage::score, [&](LaneState& s) { stage_score(s); });
    per_lane(Stage::filter, [&](LaneState& s) { stage_filter(s); });
    per_lane(Stage::analyze, [&](LaneState& s) { stage_analyze(s); });
    per_lane(Stage::report, [&](LaneState& s) { stage_report(s); });
    if (reached(Stage::report)) global_report();

    for (auto& s : lanes_) manifest_.lanes.push_back(std::move(s.record));
    write_atomically(cfg_.output_dir / "run_manifest.json", to_json(manifest_).dump(1) + "\n");
    return manifest_;
  }

 private:
  const PipelineConfig& cfg_;
  const RunOptions& opts_;
  RunManifest manifest_;
  std::vector<LaneState> lanes_;
  // Multilingual shared artifacts.
  std::optional<ClassifierModel> ml_prelim_;
  std::optional<ClassifierModel> ml_final_;

  bool selected(const LanguageLane& l) const {
    if (opts_.lanes.empty()) return true;
    return std::any_of(opts_.lanes.begin(), opts_.lanes.end(),
                       [&](const std::string& name) { return name == l.lane || name == l.lang; });
  }

  bool reached(Stage s) const { return static_cast<int>(s) <= static_cast<int>(opts_.last_stage); }

  std::string rel(const fs::path& p) const { return fs::relative(p, cfg_.output_dir).generic_string(); }

  bool reuse(const std::vector<fs::path>& outputs) const { return opts_.reuse_artifacts && all_exist(outputs); }

  StageRecord& begin_stage(LaneState& s, Stage stage) {
    s.record.stages.push_back({to_string(stage), "done", {}, {}, 0.0});
    return s.record.stages.back();
  }

  template <typename Fn>
  void per_lane(Stage stage, Fn&& fn) {
    if (!reached(stage)) return;
    for (auto& s : lanes_) {
      auto& rec = begin_stage(s, stage);
      if (s.failed) {
        rec.status = "not-run";
        rec.reason = "earlier stage failed";
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      try {
        fn(s);
      } catch (const std::exception& e) {
        auto& r = s.record.stages.back();
        r.status = "failed";
        r.reason = e.what();
        s.failed = true;
        s.record.status = "failed";
        s.record.error = std::string(to_string(stage)) + ": " + e.what();
      }
      s.record.stages.back().wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
  }

  // A stage shared across lanes (multilingual training); failure fails every
  // participating lane.
  template <typename Fn>
  void shared(Stage stage, Fn&& fn) {
    if (!reached(stage)) return;
    for (auto& s : lanes_) begin_stage(s, stage);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (std::any_of(lanes_.begin(), lanes_.end(), [](const LaneState& s) { return !s.failed; })) fn();
    } catch (const std::exception& e) {
      for (auto& s : lanes_) {
        if (s.failed) continue;
        s.record.stages.back().status = "failed";
        s.record.stages.back().reason = e.what();
        s.failed = true;
        s.record.status = "failed";
        s.record.error = std::string(to_string(stage)) + ": " + e.what();
      }
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (auto& s : lanes_) {
      auto& r = s.record.stages.back();
      if (s.failed && r.status == "done") {
        r.status = "not-run";
        r.reason = "earlier stage failed";
      }
      r.wall_ms = ms;
    }
  }

  StageRecord& current(LaneState& s) { return s.record.stages.back(); }

  std::uint64_t lane_seed(std::uint64_t seed, const LaneState& s) const { return derive_seed(seed, s.cfg->lang); }

  // --- stages ---------------------------------------------------------------

  void stage_embed(LaneState& s) {
    const fs::path pos = s.dir / "positives.emb", corp = s.dir / "corpus.emb";
    auto& rec = current(s);
    rec.artifacts = {rel(pos), rel(corp)};
    if (reuse({pos, corp})) {
      rec.status = "reused";
      s.positives = load_embeddings(pos);
      s.corpus = load_embeddings(corp);
      return;
    }
    const auto pool = ingest_anchor_pool(s.cfg->positive_pool_path);
    const auto docs = ingest_documents(s.cfg->corpus_path);
    if (pool.rejected_unk > 0) rec.reason = std::to_string(pool.rejected_unk) + " anchors rejected for <unk>";
    if (cfg_.embedding.provider == "mock") {
      const MockEmbeddingProvider provider(cfg_.embedding.dim, cfg_.embedding.seed);
      s.positives = embed_documents(pool.docs, provider);
      s.corpus = embed_documents(docs, provider);
    } else {
      s.positives = restrict_to(load_embeddings(*s.cfg->positive_embeddings), pool.docs, "positive");
      s.corpus = restrict_to(load_embeddings(*s.cfg->corpus_embeddings), docs, "corpus");
    }
    require(s.positives->dim == s.corpus->dim, ErrorKind::shape, "positive and corpus embedding dims differ");
    store_embeddings(*s.positives, pos);
    store_embeddings(*s.corpus, corp);
  }

  static EmbeddingMatrix restrict_to(const EmbeddingMatrix& m, const std::vector<DocumentRecord>& docs,
                                     const char* what) {
    EmbeddingMatrix out;
    out.dim = m.dim;
    for (const auto& d : docs) {
      const auto row = m.find(d.id);
      if (!row) fail(ErrorKind::integrity, std::string("no ") + what + " embedding for document " + std::to_string(d.id));
      out.ids.push_back(d.id);
      const auto r = m.row(*row);
      out.data.insert(out.data.end(), r.begin(), r.end());
    }
    return out;
  }

  SamplingPlan lane_plan(const LaneState& s) const {
    SamplingPlan plan = cfg_.sampling;
    plan.seed = lane_seed(cfg_.seed_sampling, s);
    return plan;
  }

  void stage_assemble(LaneState& s) {
    const fs::path out = s.dir / "train_set.jsonl";
    auto& rec = current(s);
    rec.artifacts = {rel(out)};
    const SamplingPlan plan = lane_plan(s);
    const AnchorPool pool{"anchors", s.cfg->lang, s.positives->ids};
    s.positive_examples = select_positives(pool, plan);
    if (reuse({out})) {
      rec.status = "reused";
      s.train_set = read_training_manifest(out).examples;
      return;
    }
    const auto n_neg = expanded_count(s.positive_examples);
    const auto negatives = sample_random_negatives(s.corpus->ids, n_neg, derive_seed(plan.seed, "preliminary"));
    s.train_set = assemble_training_set(s.positive_examples, negatives, s.cfg->lang, plan.seed);
    SamplingPlan recorded = plan;
    recorded.negative_strategy = NegativeStrategy::random;
    write_training_manifest(out, {recorded, s.cfg->lang, s.train_set});
  }

  ClassifierModel fresh_model(std::size_t dim, std::string_view purpose) const {
    return init_model(dim, cfg_.dim_hidden, cfg_.dropout_p, derive_seed(cfg_.seed_training, purpose));
  }

  TrainConfig train_config(std::string_view purpose) const {
    TrainConfig tc = cfg_.training;
    tc.seed = derive_seed(cfg_.seed_training, purpose);
    return tc;
  }

  void stage_train(LaneState& s) {
    const fs::path model_path = s.dir / "model_prelim.json", report_path = s.dir / "train_report_prelim.json";
    auto& rec = current(s);
    rec.artifacts = {rel(model_path), rel(report_path)};
    if (reuse({model_path})) {
      rec.status = "reused";
      s.prelim = load_model(model_path);
      return;
    }
    const std::string purpose = "prelim/" + s.cfg->lang;
    auto result = train(fresh_model(s.positives->dim, purpose), s.train_set, *s.positives, *s.corpus,
                        train_config(purpose));
    s.prelim = std::move(result.model);
    save_model(*s.prelim, model_path);
    save_report(report_path, result.report);
  }

  bool q3_eligible(const LaneState& s, std::string& reason) const {
    const auto n = s.corpus->rows();
    if (!cfg_.q3_enabled) {
      reason = "q3 disabled";
      return false;
    }
    if (n <= cfg_.q3_min_corpus) {
      reason = "corpus size " + std::to_string(n) + " <= q3_min_corpus " + std::to_string(cfg_.q3_min_corpus);
      return false;
    }
    return true;
  }

  // Q3 negatives for one lane, scored by `scorer`. When the band holds fewer
  // documents than the expanded positive count, positives are re-drawn with
  // the band size as target so the set stays balanced.
  std::vector<LabeledExample> q3_training_set(LaneState& s, const ClassifierModel& scorer, std::string& note) {
    const fs::path scores_path = s.dir / "scores_prelim.jsonl";
    s.prelim_scores = score_corpus(scorer, *s.corpus, cfg_.analysis.shard_size, "prelim/" + s.cfg->lane,
                                   cfg_.analysis.threads);
    write_scores(scores_path, *s.prelim_scores);
    const auto band = select_q3_band(*s.prelim_scores);
    SamplingPlan plan = lane_plan(s);
    plan.negative_strategy = NegativeStrategy::q3;
    auto positives = s.positive_examples;
    std::uint64_t n = expanded_count(positives);
    if (band.ids.size() < n) {
      require(!band.ids.empty(), ErrorKind::insufficient_band, "Q3 band is empty");
      note = "Q3 band (" + std::to_string(band.ids.size()) + ") smaller than positives (" + std::to_string(n) +
             "); positives re-drawn to band size";
      SamplingPlan capped = plan;
      capped.target_positives_per_lang = band.ids.size();
      positives = select_positives({"anchors", s.cfg->lang, s.positives->ids}, capped);
      n = expanded_count(positives);
    }
    const auto negatives = sample_q3_negatives(band.ids, n, derive_seed(plan.seed, "q3"));
    auto set = assemble_training_set(positives, negatives, s.cfg->lang, derive_seed(plan.seed, "q3-assemble"));
    write_training_manifest(s.dir / "train_set_q3.jsonl", {plan, s.cfg->lang, set});
    return set;
  }

  void stage_q3(LaneState& s) {
    const fs::path model_path = s.dir / "model_q3.json", status_path = s.dir / "q3_status.json";
    auto& rec = current(s);
    std::string reason;
    if (!q3_eligible(s, reason)) {
      rec.status = "skipped";
      rec.reason = reason + "; preliminary classifier is final";
      s.final_model = s.prelim;
      std::ofstream(status_path, std::ios::trunc) << nlohmann::json{{"ran", false}, {"reason", reason}}.dump() << '\n';
      rec.artifacts = {rel(status_path)};
      return;
    }
    rec.artifacts = {rel(s.dir / "scores_prelim.jsonl"), rel(s.dir / "train_set_q3.jsonl"), rel(model_path),
                     rel(s.dir / "train_report_q3.json"), rel(status_path)};
    s.q3_ran = true;
    if (reuse({model_path, s.dir / "scores_prelim.jsonl"})) {
      rec.status = "reused";
      s.final_model = load_model(model_path);
      s.prelim_scores = read_scores(s.dir / "scores_prelim.jsonl");
      return;
    }
    std::string note;
    const auto set = q3_training_set(s, *s.prelim, note);
    rec.reason = note;
    const std::string purpose = "q3/" + s.cfg->lang;
    auto result = train(fresh_model(s.positives->dim, purpose), set, *s.positives, *s.corpus, train_config(purpose));
    s.final_model = std::move(result.model);
    save_model(*s.final_model, model_path);
    save_report(s.dir / "train_report_q3.json", result.report);
    std::ofstream(status_path, std::ios::trunc) << nlohmann::json{{"ran", true}, {"reason", note}}.dump() << '\n';
  }

  std::vector<LaneState*> live_lanes() {
    std::vector<LaneState*> out;
    for (auto& s : lanes_) {
      if (!s.failed) out.push_back(&s);
    }
    return out;
  }

  std::vector<TrainingRow> pooled_rows(const std::vector<LaneState*>& lanes,
                                       const std::vector<std::vector<LabeledExample>>& sets) {
    std::vector<TrainingRow> rows;
    for (std::size_t i = 0; i < lanes.size(); ++i) {
      auto part = gather_rows(sets[i], *lanes[i]->positives, *lanes[i]->corpus);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
  }

  void ml_train() {
    const fs::path dir = cfg_.output_dir / "ml";
    fs::create_directories(dir);
    const fs::path model_path = dir / "model_prelim.json";
    auto lanes = live_lanes();
    for (auto* s : lanes) current(*s).artifacts = {rel(model_path)};
    if (reuse({model_path})) {
      ml_prelim_ = load_model(model_path);
      for (auto* s : lanes) current(*s).status = "reused";
    } else {
      std::vector<std::vector<LabeledExample>> sets;
      std::size_t dim = lanes.front()->positives->dim;
      for (auto* s : lanes) {
        require(s->positives->dim == dim, ErrorKind::shape, "multilingual lanes disagree on embedding dim");
        sets.push_back(s->train_set);
      }
      const auto rows = pooled_rows(lanes, sets);
      auto result = train(fresh_model(dim, "prelim/ml"), rows, train_config("prelim/ml"));
      ml_prelim_ = std::move(result.model);
      save_model(*ml_prelim_, model_path);
      save_report(dir / "train_report_prelim.json", result.report);
    }
    for (auto* s : lanes) s->prelim = ml_prelim_;
  }

  void ml_q3() {
    const fs::path dir = cfg_.output_dir / "ml";
    const fs::path model_path = dir / "model_q3.json";
    auto lanes = live_lanes();
    std::vector<std::vector<LabeledExample>> sets;
    bool any = false;
    for (auto* s : lanes) {
      std::string reason;
      if (q3_eligible(*s, reason)) {
        any = true;
        s->q3_ran = true;
      } else {
        current(*s).reason = reason + "; random negatives kept for this language";
      }
    }
    if (!any) {
      for (auto* s : lanes) {
        current(*s).status = "skipped";
        current(*s).reason += "; preliminary classifier is final";
        s->final_model = ml_prelim_;
      }
      return;
    }
    if (reuse({model_path})) {
      ml_final_ = load_model(model_path);
      for (auto* s : lanes) {
        current(*s).status = "reused";
        if (s->q3_ran) s->prelim_scores = read_scores(s->dir / "scores_prelim.jsonl");
        s->final_model = ml_final_;
      }
      return;
    }
    for (auto* s : lanes) {
      if (s->q3_ran) {
        std::string note;
        sets.push_back(q3_training_set(*s, *ml_prelim_, note));
        current(*s).reason = note;
        current(*s).artifacts = {rel(s->dir / "scores_prelim.jsonl"), rel(s->dir / "train_set_q3.jsonl"),
                                 rel(model_path)};
      } else {
        sets.push_back(s->train_set);
        current(*s).artifacts = {rel(model_path)};
      }
    }
    const auto rows = pooled_rows(lanes, sets);
    auto result = train(fresh_model(lanes.front()->positives->dim, "q3/ml"), rows, train_config("q3/ml"));
    ml_final_ = std::move(result.model);
    save_model(*ml_final_, model_path);
    save_report(dir / "train_report_q3.json", result.report);
    for (auto* s : lanes) s->final_model = ml_final_;
  }

  void stage_score(LaneState& s) {
    const fs::path out = s.dir / "scores.jsonl";
    auto& rec = current(s);
    rec.artifacts = {rel(out)};
    if (!s.final_model) s.final_model = s.prelim;
    require(s.final_model.has_value(), ErrorKind::argument, "no trained classifier available for scoring");
    if (reuse({out})) {
      rec.status = "reused";
      s.final_scores = read_scores(out);
      return;
    }
    const std::string id = std::string(s.q3_ran ? "q3/" : "prelim/") + (cfg_.multilingual ? "ml" : s.cfg->lane);
    s.final_scores = score_corpus(*s.final_model, *s.corpus, cfg_.analysis.shard_size, id, cfg_.analysis.threads);
    write_scores(out, *s.final_scores);
  }

  void stage_filter(LaneState& s) {
    const fs::path manifest = s.dir / "filtered_manifest.txt", corpus = s.dir / "filtered_corpus.jsonl";
    auto& rec = current(s);
    rec.artifacts = {rel(manifest), rel(corpus)};
    if (reuse({manifest, corpus})) {
      rec.status = "reused";
      return;
    }
    const auto kept = retention_threshold(*s.final_scores, s.cfg->retention_rate);
    RetentionPolicy policy{s.cfg->retention_rate, s.cfg->replication_factor};
    if (policy.replication_factor == 0) {
      policy.replication_factor = replication_factor_for(s.cfg->retention_rate, std::max(cfg_.reference_rate, s.cfg->retention_rate));
    }
    const auto docs = ingest_documents(s.cfg->corpus_path);
    std::ofstream out(corpus, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + corpus.generic_string());
    const auto emitted = emit_filtered_corpus(kept.kept_ids, docs, policy, &out);
    write_filtered_manifest(manifest, {policy.rate, kept.threshold, kept.kept_ids.size(), policy.replication_factor,
                                       emitted.total_tokens, emitted.emission_order});
  }

  void write_comparison(LaneState& s, const ScoreTable& a, const ScoreTable& b, const std::string& stem,
                        StageRecord& rec) {
    auto [sa, sb] = cfg_.analysis.correlation_max_docs > 0
                        ? subsample_pair(a, b, cfg_.analysis.correlation_max_docs, cfg_.seed_sampling)
                        : std::pair<ScoreTable, ScoreTable>{a, b};
    write_correlation_report(s.dir / (stem + "_correlation.json"), correlate(sa, sb));
    const auto shifts = rank_shift_report(a, b, std::min(cfg_.analysis.shift_k, a.size()));
    nlohmann::json j = {{"classifier_a", a.classifier_id}, {"classifier_b", b.classifier_id},
                        {"increases", nlohmann::json::array()}, {"decreases", nlohmann::json::array()}};
    for (const auto& r : shifts.increases) j["increases"].push_back(to_json(r));
    for (const auto& r : shifts.decreases) j["decreases"].push_back(to_json(r));
    std::ofstream(s.dir / (stem + "_rank_shifts.json"), std::ios::trunc) << j.dump(1) << '\n';
    rec.artifacts.push_back(rel(s.dir / (stem + "_correlation.json")));
    rec.artifacts.push_back(rel(s.dir / (stem + "_rank_shifts.json")));
  }

  void stage_analyze(LaneState& s) {
    const fs::path hist = s.dir / "histogram.tsv", ext = s.dir / "extremes.json";
    auto& rec = current(s);
    rec.artifacts = {rel(hist), rel(ext)};
    const auto& table = *s.final_scores;
    write_histogram(hist, histogram(table, cfg_.analysis.histogram_bins, cfg_.analysis.markers));
    const auto e = extremes(table, std::min(cfg_.analysis.extremes_k, table.size()));
    std::ofstream(ext, std::ios::trunc) << nlohmann::json{{"top", e.top}, {"bottom", e.bottom}}.dump(1) << '\n';
    if (s.q3_ran && s.prelim_scores && !s.prelim_scores->ids.empty()) {
      write_comparison(s, *s.prelim_scores, table, "prelim_vs_final", rec);
    }
    if (s.cfg->comparison_scores) {
      auto other = read_scores(*s.cfg->comparison_scores);
      write_comparison(s, other, table, "comparison", rec);
    }
  }

  void stage_report(LaneState& s) {
    auto& rec = current(s);
    if (!s.cfg->benchmark_matrix) {
      rec.status = "skipped";
      rec.reason = "no benchmark matrix configured";
      return;
    }
    const fs::path out = s.dir / "report.json";
    rec.artifacts = {rel(out)};
    const auto m = load_benchmark_matrix(*s.cfg->benchmark_matrix);
    std::ofstream(out, std::ios::trunc) << report_json(m).dump(1) << '\n';
  }

  void global_report() {
    std::vector<BenchmarkMatrix> matrices;
    for (auto& s : lanes_) {
      if (!s.failed && s.cfg->benchmark_matrix) matrices.push_back(load_benchmark_matrix(*s.cfg->benchmark_matrix));
    }
    if (matrices.size() < 2) return;
    const fs::path out = cfg_.output_dir / "report.json";
    std::ofstream(out, std::ios::trunc) << full_report(matrices).dump(1) << '\n';
    manifest_.global_artifacts.push_back(rel(out));
  }
};

}  // namespace detail

inline RunManifest run_pipeline(const PipelineConfig& config, const RunOptions& options = {}) {
  detail::Runner runner(config, options);
  return runner.run();
}

}  // namespace qfilter
