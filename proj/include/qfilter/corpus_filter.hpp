#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/classifier.hpp"
#include "qfilter/documents.hpp"
#include "qfilter/embedding.hpp"
#include "qfilter/error.hpp"
#include "qfilter/score_table.hpp"

namespace qfilter {

// Eval-mode score for every row. Shards are independent, so the table is the
// same for any shard size or thread count.
inline ScoreTable score_corpus(const ClassifierModel& model, const EmbeddingMatrix& embeddings, std::size_t shard_size,
                               std::string classifier_id = {}, unsigned threads = 0) {
  require(shard_size >= 1, ErrorKind::argument, "shard_size must be >= 1");
  if (model.dim_in != embeddings.dim) {
    fail(ErrorKind::shape, "model dim_in " + std::to_string(model.dim_in) + " != embedding dim " +
                               std::to_string(embeddings.dim));
  }
  ScoreTable table;
  table.classifier_id = std::move(classifier_id);
  table.ids = embeddings.ids;
  table.scores.assign(embeddings.rows(), 0.0);

  const std::size_t n_shards = (embeddings.rows() + shard_size - 1) / shard_size;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, n_shards)));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t shard = next++; shard < n_shards; shard = next++) {
      const std::size_t end = std::min(embeddings.rows(), (shard + 1) * shard_size);
      for (std::size_t i = shard * shard_size; i < end; ++i) table.scores[i] = forward(model, embeddings.row(i));
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return table;
}

struct RetentionPolicy {
  double rate = 0.10;
  std::uint32_t replication_factor = 1;
};

inline void validate(const RetentionPolicy& p) {
  require(p.rate > 0.0 && p.rate <= 1.0, ErrorKind::argument, "retention rate must lie in (0,1]");
  require(p.replication_factor >= 1, ErrorKind::argument, "replication factor must be >= 1");
}

inline std::size_t retained_count(std::size_t n, double rate) {
  require(rate > 0.0 && rate <= 1.0, ErrorKind::argument, "retention rate must lie in (0,1]");
  const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  return std::clamp<std::size_t>(m, 1, n);
}

struct RetentionResult {
  double threshold = 0.0;
  std::vector<std::uint64_t> kept_ids;  // ascending
};

// Keeps the max(1, round(rate*n)) highest-scoring documents; equal scores at
// the cut are resolved in favour of lower ids.
inline RetentionResult retention_threshold(const ScoreTable& table, double rate) {
  require(table.size() > 0, ErrorKind::argument, "retention over an empty score table");
  validate(table);
  const std::size_t m = retained_count(table.size(), rate);
  std::vector<std::size_t> order(table.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto better = [&](std::size_t a, std::size_t b) {
    if (table.scores[a] != table.scores[b]) return table.scores[a] > table.scores[b];
    return table.ids[a] < table.ids[b];
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m - 1), order.end(), better);
  RetentionResult r;
  r.threshold = table.scores[order[m - 1]];
  r.kept_ids.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    r.kept_ids.push_back(table.ids[order[k]]);
    r.threshold = std::min(r.threshold, table.scores[order[k]]);
  }
  std::sort(r.kept_ids.begin(), r.kept_ids.end());
  return r;
}

struct EmissionResult {
  std::vector<std::uint64_t> emission_order;
  std::uint64_t kept_tokens = 0;
  std::uint64_t total_tokens = 0;
};

// Emits the kept documents replication_factor times in whole passes
// (A,B,...,A,B,...), so any prefix has seen each document at most
// ceil(prefix passes) times. `out`, when given, receives one JSON record per
// emitted replica.
inline EmissionResult emit_filtered_corpus(std::span<const std::uint64_t> kept_ids,
                                           std::span<const DocumentRecord> documents, const RetentionPolicy& policy,
                                           std::ostream* out = nullptr) {
  validate(policy);
  std::vector<const DocumentRecord*> kept;
  kept.reserve(kept_ids.size());
  const bool docs_sorted = std::is_sorted(documents.begin(), documents.end(),
                                          [](const auto& a, const auto& b) { return a.id < b.id; });
  require(docs_sorted, ErrorKind::argument, "documents must be in ascending-id order");
  for (auto id : kept_ids) {
    const auto it = std::lower_bound(documents.begin(), documents.end(), id,
                                     [](const DocumentRecord& d, std::uint64_t v) { return d.id < v; });
    if (it == documents.end() || it->id != id) fail(ErrorKind::integrity, "no document record for kept id " + std::to_string(id));
    kept.push_back(&*it);
  }
  EmissionResult r;
  for (const auto* d : kept) r.kept_tokens += d->n_tokens;
  r.emission_order.reserve(kept.size() * policy.replication_factor);
  for (std::uint32_t pass = 0; pass < policy.replication_factor; ++pass) {
    for (const auto* d : kept) {
      r.emission_order.push_back(d->id);
      r.total_tokens += d->n_tokens;
      if (out != nullptr) write_document(*out, *d);
    }
  }
  return r;
}

// Known retention -> replication pairs taking precedence over the ratio rule.
using ReplicationOverrides = std::map<double, std::uint32_t>;

inline ReplicationOverrides default_replication_overrides() { return {{0.10, 10}, {0.20, 5}}; }

inline std::uint32_t replication_factor_for(double rate, double reference_rate,
                                            const ReplicationOverrides& overrides = default_replication_overrides()) {
  require(rate > 0.0 && rate <= 1.0, ErrorKind::argument, "rate must lie in (0,1]");
  require(reference_rate > 0.0 && reference_rate <= 1.0, ErrorKind::argument, "reference_rate must lie in (0,1]");
  if (rate > reference_rate) fail(ErrorKind::argument, "rate exceeds reference_rate");
  for (const auto& [r, k] : overrides) {
    if (std::abs(r - rate) <= 1e-12) return k;
  }
  return static_cast<std::uint32_t>(std::max(1LL, std::llround(reference_rate / rate)));
}

// --- filtered-corpus manifest --------------------------------------------

struct FilteredManifest {
  double rate = 0.0;
  double threshold = 0.0;
  std::size_t kept_count = 0;
  std::uint32_t replication_factor = 1;
  std::uint64_t total_tokens = 0;
  std::vector<std::uint64_t> emission_order;
};

inline void write_filtered_manifest(const std::filesystem::path& path, const FilteredManifest& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write filtered manifest " + path.string());
  out << "{\"rate\":" << format_score(m.rate) << ",\"threshold\":" << format_score(m.threshold)
      << ",\"kept_count\":" << m.kept_count << ",\"replication_factor\":" << m.replication_factor
      << ",\"total_tokens\":" << m.total_tokens << "}\n";
  for (auto id : m.emission_order) out << id << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline FilteredManifest read_filtered_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open filtered manifest " + path.string());
  FilteredManifest m;
  std::string line;
  try {
    if (!std::getline(in, line)) fail(ErrorKind::parse, path.string() + ": missing header");
    const auto h = nlohmann::json::parse(line);
    m.rate = h.at("rate").get<double>();
    m.threshold = h.at("threshold").get<double>();
    m.kept_count = h.at("kept_count").get<std::size_t>();
    m.replication_factor = h.at("replication_factor").get<std::uint32_t>();
    m.total_tokens = h.at("total_tokens").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.emission_order.push_back(std::stoull(line));
  }
  return m;
}

}  // namespace qfilter
