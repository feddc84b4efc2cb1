#pragma once

// Training-set construction: positive capping/upsampling, random and
// third-quartile (Q3) negative draws, and balanced shuffled assembly.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/error.hpp"
#include "qfilter/random.hpp"
#include "qfilter/score_table.hpp"

namespace qfilter {

enum class NegativeStrategy { random, q3 };

inline const char* to_string(NegativeStrategy s) { return s == NegativeStrategy::q3 ? "q3" : "random"; }

inline NegativeStrategy parse_negative_strategy(const std::string& s) {
  if (s == "random" || s == "Random") return NegativeStrategy::random;
  if (s == "q3" || s == "Q3") return NegativeStrategy::q3;
  fail(ErrorKind::argument, "unknown negative strategy '" + s + "'");
}

struct AnchorPool {
  std::string source;
  std::string lang;
  std::vector<std::uint64_t> ids;  // ascending
};

struct SamplingPlan {
  std::uint64_t target_positives_per_lang = 100000;
  std::uint32_t upsample_cap = 3;
  NegativeStrategy negative_strategy = NegativeStrategy::random;
  std::uint64_t seed = 0;
};

inline void validate(const SamplingPlan& plan) {
  require(plan.target_positives_per_lang >= 1, ErrorKind::argument, "target_positives_per_lang must be >= 1");
  require(plan.upsample_cap >= 1, ErrorKind::argument, "upsample_cap must be >= 1");
}

struct LabeledExample {
  std::uint64_t doc_id = 0;
  std::size_t embedding_row = 0;
  int label = 0;
  std::string lang;
  std::uint32_t weight_copies = 1;

  bool operator==(const LabeledExample&) const = default;
};

// Copy count per pool position (pool in ascending-id order).
//
// pool >= target: a seeded uniform subset of `target` documents, one copy each.
// pool <  target: total = min(target, pool*cap) spread as evenly as possible,
// the remainder going to the lowest ids.
inline std::vector<std::uint32_t> cap_and_upsample(std::size_t pool_size, std::uint64_t target,
                                                   std::uint32_t cap, std::uint64_t seed = 0) {
  require(cap >= 1, ErrorKind::argument, "upsample cap must be >= 1");
  require(target >= 1, ErrorKind::argument, "target must be >= 1");
  if (pool_size == 0) fail(ErrorKind::empty_pool, "positive pool is empty (target " + std::to_string(target) + ")");

  std::vector<std::uint32_t> copies(pool_size, 0);
  if (pool_size >= target) {
    Rng rng(derive_seed(seed, "positive-subset"));
    for (std::size_t pos : sample_positions(pool_size, static_cast<std::size_t>(target), rng)) copies[pos] = 1;
    return copies;
  }
  const std::uint64_t total = std::min<std::uint64_t>(target, static_cast<std::uint64_t>(pool_size) * cap);
  const std::uint64_t base = total / pool_size;
  const std::uint64_t extra = total % pool_size;
  for (std::size_t i = 0; i < pool_size; ++i) copies[i] = static_cast<std::uint32_t>(base + (i < extra ? 1 : 0));
  return copies;
}

// Positive examples for one language, one entry per selected document with
// its copy count. embedding_row indexes the pool's ascending id order.
inline std::vector<LabeledExample> select_positives(const AnchorPool& pool, const SamplingPlan& plan) {
  validate(plan);
  const auto copies = cap_and_upsample(pool.ids.size(), plan.target_positives_per_lang, plan.upsample_cap,
                                       derive_seed(plan.seed, pool.lang));
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < copies.size(); ++i) {
    if (copies[i] == 0) continue;
    out.push_back({pool.ids[i], i, 1, pool.lang, copies[i]});
  }
  return out;
}

inline std::uint64_t expanded_count(std::span<const LabeledExample> examples) {
  std::uint64_t n = 0;
  for (const auto& e : examples) n += e.weight_copies;
  return n;
}

// n distinct ids, uniform without replacement, returned ascending.
inline std::vector<std::uint64_t> sample_random_negatives(std::span<const std::uint64_t> corpus_ids,
                                                          std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::argument, "negative sample size must be >= 1");
  if (n > corpus_ids.size()) {
    fail(ErrorKind::insufficient_population, "requested " + std::to_string(n) + " negatives from a corpus of " +
                                                 std::to_string(corpus_ids.size()));
  }
  Rng rng(derive_seed(seed, "random-negatives"));
  std::vector<std::uint64_t> out;
  out.reserve(n);
  for (std::size_t pos : sample_positions(corpus_ids.size(), n, rng)) out.push_back(corpus_ids[pos]);
  return out;
}

struct Q3Band {
  double p50 = 0.0;
  double p75 = 0.0;
  std::vector<std::uint64_t> ids;  // ascending
};

// Documents with P50 <= score < P75 (nearest-rank quantiles).
inline Q3Band select_q3_band(const ScoreTable& scores) {
  if (scores.size() == 0) fail(ErrorKind::empty_input, "Q3 band of an empty score table");
  validate(scores);
  std::vector<double> sorted = scores.scores;
  std::sort(sorted.begin(), sorted.end());
  Q3Band band;
  band.p50 = quantile_sorted(sorted, 0.50);
  band.p75 = quantile_sorted(sorted, 0.75);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores.scores[i] >= band.p50 && scores.scores[i] < band.p75) band.ids.push_back(scores.ids[i]);
  }
  return band;
}

inline std::vector<std::uint64_t> sample_q3_negatives(std::span<const std::uint64_t> band, std::size_t n,
                                                      std::uint64_t seed) {
  require(n >= 1, ErrorKind::argument, "negative sample size must be >= 1");
  if (n > band.size()) {
    fail(ErrorKind::insufficient_band, "Q3 band holds " + std::to_string(band.size()) + " documents, " +
                                           std::to_string(n) + " requested");
  }
  Rng rng(derive_seed(seed, "q3-negatives"));
  std::vector<std::uint64_t> out;
  out.reserve(n);
  for (std::size_t pos : sample_positions(band.size(), n, rng)) out.push_back(band[pos]);
  return out;
}

// Materializes every positive copy and every negative once, then shuffles.
// Negatives carry their position in `negatives` as embedding_row.
inline std::vector<LabeledExample> assemble_training_set(std::span<const LabeledExample> positives,
                                                         std::span<const std::uint64_t> negatives,
                                                         const std::string& negative_lang, std::uint64_t seed) {
  const std::uint64_t n_pos = expanded_count(positives);
  if (n_pos != negatives.size()) {
    fail(ErrorKind::balance, "positive instances " + std::to_string(n_pos) + " vs negatives " +
                                 std::to_string(negatives.size()));
  }
  std::vector<LabeledExample> out;
  out.reserve(n_pos + negatives.size());
  for (const auto& p : positives) {
    require(p.label == 1 && p.weight_copies >= 1, ErrorKind::argument, "malformed positive example");
    for (std::uint32_t c = 0; c < p.weight_copies; ++c) out.push_back(p);
  }
  for (std::size_t i = 0; i < negatives.size(); ++i) out.push_back({negatives[i], i, 0, negative_lang, 1});
  Rng rng(derive_seed(seed, "assemble-shuffle"));
  shuffle_in_place(out, rng);
  return out;
}

// --- training-set manifest ------------------------------------------------

struct TrainingManifest {
  SamplingPlan plan;
  std::string lang;
  std::vector<LabeledExample> examples;
};

inline void write_training_manifest(const std::filesystem::path& path, const TrainingManifest& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write training manifest " + path.string());
  const nlohmann::json header = {{"lang", m.lang},
                                 {"target_positives_per_lang", m.plan.target_positives_per_lang},
                                 {"upsample_cap", m.plan.upsample_cap},
                                 {"negative_strategy", to_string(m.plan.negative_strategy)},
                                 {"seed", m.plan.seed},
                                 {"count", m.examples.size()}};
  out << header.dump() << '\n';
  for (const auto& e : m.examples) {
    out << nlohmann::json{{"doc_id", e.doc_id}, {"label", e.label}, {"lang", e.lang}, {"copies", e.weight_copies}}
               .dump()
        << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

// embedding_row is not persisted; callers re-resolve rows by id.
inline TrainingManifest read_training_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open training manifest " + path.string());
  TrainingManifest m;
  std::string line;
  std::size_t line_no = 0;
  try {
    if (!std::getline(in, line)) fail(ErrorKind::parse, path.string() + ": missing header");
    ++line_no;
    const auto header = nlohmann::json::parse(line);
    m.lang = header.at("lang").get<std::string>();
    m.plan.target_positives_per_lang = header.at("target_positives_per_lang").get<std::uint64_t>();
    m.plan.upsample_cap = header.at("upsample_cap").get<std::uint32_t>();
    m.plan.negative_strategy = parse_negative_strategy(header.at("negative_strategy").get<std::string>());
    m.plan.seed = header.at("seed").get<std::uint64_t>();
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      m.examples.push_back({rec.at("doc_id").get<std::uint64_t>(), 0, rec.at("label").get<int>(),
                            rec.at("lang").get<std::string>(), rec.at("copies").get<std::uint32_t>()});
    }
    const auto count = header.at("count").get<std::size_t>();
    if (count != m.examples.size()) {
      fail(ErrorKind::integrity, path.string() + ": header count " + std::to_string(count) + " but " +
                                     std::to_string(m.examples.size()) + " records");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
  }
  return m;
}

}  // namespace qfilter
