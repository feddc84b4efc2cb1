// qfilter: command-line driver for the curation pipeline.
//
// Exit codes: 0 success, 1 configuration/validation error, 2 stage failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qfilter/qfilter.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> lanes;
  std::optional<std::uint64_t> seed_sampling;
  std::optional<std::uint64_t> seed_training;
  std::string out;
  bool fresh = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--lang", o.lanes, "restrict to these lanes or language codes (repeatable)");
  cmd->add_option("--seed-sampling", o.seed_sampling, "override seeds.sampling");
  cmd->add_option("--seed-training", o.seed_training, "override seeds.training");
  cmd->add_option("--out", o.out, "override output_dir");
  cmd->add_flag("--fresh", o.fresh, "recompute stages even when their artifacts exist");
}

std::optional<qfilter::PipelineConfig> load_config(const CommonOptions& o) {
  auto v = qfilter::validate_config(fs::path(o.config));
  if (!v.ok()) {
    for (const auto& e : v.errors) std::cerr << "config: " << e << '\n';
    return std::nullopt;
  }
  auto cfg = *v.config;
  if (o.seed_sampling) cfg.seed_sampling = *o.seed_sampling;
  if (o.seed_training) cfg.seed_training = *o.seed_training;
  if (!o.out.empty()) cfg.output_dir = o.out;
  for (const auto& name : o.lanes) {
    const bool known = std::any_of(cfg.languages.begin(), cfg.languages.end(),
                                   [&](const auto& l) { return l.lane == name || l.lang == name; });
    if (!known) {
      std::cerr << "config: --lang " << name << " matches no configured lane\n";
      return std::nullopt;
    }
  }
  return cfg;
}

int run_stages(const CommonOptions& o, qfilter::Stage last) {
  const auto cfg = load_config(o);
  if (!cfg) return kExitValidation;
  qfilter::RunOptions opts;
  opts.last_stage = last;
  opts.lanes = o.lanes;
  opts.reuse_artifacts = !o.fresh;
  const auto manifest = qfilter::run_pipeline(*cfg, opts);
  for (const auto& lane : manifest.lanes) {
    std::cout << lane.lane << ": " << lane.status;
    if (!lane.error.empty()) std::cout << " (" << lane.error << ")";
    std::cout << '\n';
    for (const auto& s : lane.stages) {
      std::cout << "  " << s.name << ' ' << s.status;
      if (!s.reason.empty()) std::cout << " - " << s.reason;
      std::cout << '\n';
    }
  }
  std::cout << "manifest: " << (cfg->output_dir / "run_manifest.json").string() << '\n';
  return manifest.all_ok() ? kExitOk : kExitRuntime;
}

int validate_cmd(const std::string& config) {
  auto v = qfilter::validate_config(fs::path(config));
  if (!v.ok()) {
    for (const auto& e : v.errors) std::cerr << "config: " << e << '\n';
    return kExitValidation;
  }
  std::cout << qfilter::to_json(*v.config).dump(2) << '\n';
  std::cout << "config_hash " << qfilter::config_hash(*v.config) << '\n';
  return kExitOk;
}

int report_cmd(const std::vector<std::string>& matrices, const std::string& out) {
  std::vector<qfilter::BenchmarkMatrix> ms;
  for (const auto& p : matrices) ms.push_back(qfilter::load_benchmark_matrix(p));
  const auto report = qfilter::full_report(ms).dump(2);
  if (out.empty()) {
    std::cout << report << '\n';
  } else {
    std::ofstream(out, std::ios::trunc) << report << '\n';
  }
  return kExitOk;
}

struct SynthOptions {
  std::string out = "synth";
  std::vector<std::string> langs = {"xx"};
  std::size_t docs = 5000;
  std::size_t anchors = 500;
  std::size_t dim = 16;
  std::uint64_t seed = 0;
};

// Writes a planted-strata demo dataset plus a matching configuration.
int synth_cmd(const SynthOptions& o) {
  const fs::path dir = o.out;
  fs::create_directories(dir);
  nlohmann::json langs = nlohmann::json::array();
  std::uint64_t first_id = 1;
  for (const auto& lang : o.langs) {
    qfilter::synth::CorpusSpec spec;
    spec.lang = lang;
    spec.dim = o.dim;
    spec.n_docs = o.docs;
    spec.first_id = first_id;
    spec.seed = qfilter::derive_seed(o.seed, lang);
    const auto corpus = qfilter::synth::make_corpus(spec);
    const auto pool = qfilter::synth::make_anchor_pool(lang, o.dim, o.anchors, first_id + o.docs,
                                                        qfilter::derive_seed(o.seed, "anchors/" + lang));
    first_id += o.docs + o.anchors;
    qfilter::write_documents(dir / (lang + "_corpus.jsonl"), corpus.docs);
    qfilter::write_documents(dir / (lang + "_anchors.jsonl"), pool.docs);
    qfilter::store_embeddings(corpus.embeddings, dir / (lang + "_corpus.emb"));
    qfilter::store_embeddings(pool.embeddings, dir / (lang + "_anchors.emb"));
    std::ofstream strata(dir / (lang + "_strata.tsv"), std::ios::trunc);
    for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
      strata << corpus.docs[i].id << '\t' << qfilter::synth::to_string(corpus.strata[i]) << '\n';
    }
    langs.push_back({{"lang", lang},
                     {"positive_pool_path", lang + "_anchors.jsonl"},
                     {"corpus_path", lang + "_corpus.jsonl"},
                     {"positive_embeddings", lang + "_anchors.emb"},
                     {"corpus_embeddings", lang + "_corpus.emb"},
                     {"retention_rate", 0.10}});
  }
  const nlohmann::json cfg = {
      {"languages", langs},
      {"sampling", {{"target_positives_per_lang", o.anchors * 2}, {"upsample_cap", 3}}},
      {"training", {{"dim_hidden", 32}, {"max_epochs", 20}, {"batch_size", 64}}},
      {"embedding", {{"provider", "file"}}},
      {"q3_min_corpus", o.docs / 2},
      {"seeds", {{"sampling", o.seed}, {"training", o.seed}}},
      {"output_dir", "run"}};
  std::ofstream(dir / "config.json", std::ios::trunc) << cfg.dump(2) << '\n';
  std::cout << "wrote " << (dir / "config.json").string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qfilter: embedding-classifier curation of pretraining corpora"};
  app.require_subcommand(1);

  struct StageCommand {
    const char* name;
    qfilter::Stage stage;
    const char* help;
  };
  const StageCommand stage_commands[] = {
      {"embed", qfilter::Stage::embed, "embed anchors and corpus"},
      {"assemble", qfilter::Stage::assemble, "build the preliminary training set"},
      {"train", qfilter::Stage::train, "train the preliminary classifier"},
      {"q3-retrain", qfilter::Stage::q3, "retrain on Q3 negatives where eligible"},
      {"score", qfilter::Stage::score, "score every corpus document"},
      {"filter", qfilter::Stage::filter, "retain top documents and emit the filtered corpus"},
      {"analyze", qfilter::Stage::analyze, "histograms, extremes, rank correlation"},
      {"run", qfilter::Stage::report, "run every stage"},
  };
  std::vector<CommonOptions> common(std::size(stage_commands));
  std::vector<CLI::App*> stage_apps;
  for (std::size_t i = 0; i < std::size(stage_commands); ++i) {
    auto* cmd = app.add_subcommand(stage_commands[i].name, stage_commands[i].help);
    add_common(cmd, common[i]);
    stage_apps.push_back(cmd);
  }

  CommonOptions report_common;
  std::vector<std::string> matrices;
  std::string report_out;
  auto* report = app.add_subcommand("report", "benchmark rank report (from --config, or standalone --matrix files)");
  report->add_option("--config", report_common.config, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
  report->add_option("--lang", report_common.lanes, "restrict to these lanes");
  report->add_option("--out", report_common.out, "override output_dir (with --config) or output file");
  report->add_flag("--fresh", report_common.fresh, "recompute stages even when their artifacts exist");
  report->add_option("--matrix", matrices, "benchmark matrix TSV (repeatable)")->check(CLI::ExistingFile);

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "check a configuration and print it with defaults filled in");
  validate->add_option("--config", validate_config, "pipeline configuration (JSON)")->required();

  SynthOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "write a synthetic planted-strata dataset and config");
  synth->add_option("--out", synth_opts.out, "output directory");
  synth->add_option("--lang", synth_opts.langs, "language codes")->expected(1, -1);
  synth->add_option("--docs", synth_opts.docs, "corpus documents per language")->check(CLI::PositiveNumber);
  synth->add_option("--anchors", synth_opts.anchors, "anchor documents per language")->check(CLI::PositiveNumber);
  synth->add_option("--dim", synth_opts.dim, "embedding dimension")->check(CLI::Range(2, 4096));
  synth->add_option("--seed", synth_opts.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (std::size_t i = 0; i < stage_apps.size(); ++i) {
      if (stage_apps[i]->parsed()) return run_stages(common[i], stage_commands[i].stage);
    }
    if (validate->parsed()) return validate_cmd(validate_config);
    if (synth->parsed()) return synth_cmd(synth_opts);
    if (report->parsed()) {
      if (!matrices.empty()) return report_cmd(matrices, report_common.out);
      if (report_common.config.empty()) {
        std::cerr << "report: give --config or at least one --matrix\n";
        return kExitValidation;
      }
      return run_stages(report_common, qfilter::Stage::report);
    }
  } catch (const qfilter::Error& e) {
    std::cerr << e.what() << '\n';
    return e.kind() == qfilter::ErrorKind::config || e.kind() == qfilter::ErrorKind::argument ? kExitValidation
                                                                                                 : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
