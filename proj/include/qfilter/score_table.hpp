#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/error.hpp"

namespace qfilter {

// Per-document scores of one classifier over one corpus, ids ascending.
struct ScoreTable {
  std::string classifier_id;
  std::vector<std::uint64_t> ids;
  std::vector<double> scores;

  std::size_t size() const { return ids.size(); }
  bool operator==(const ScoreTable&) const = default;
};

inline void validate(const ScoreTable& t) {
  require(t.ids.size() == t.scores.size(), ErrorKind::shape, "score table ids/scores length mismatch");
  for (std::size_t i = 1; i < t.ids.size(); ++i) {
    require(t.ids[i - 1] < t.ids[i], ErrorKind::integrity, "score table ids not strictly ascending");
  }
  for (double s : t.scores) {
    require(std::isfinite(s) && s >= 0.0 && s <= 1.0, ErrorKind::integrity,
            "score outside [0,1] or non-finite");
  }
}

// 1-based nearest rank ceil(q*n), with q*n snapped to the nearest integer
// when it is within floating-point noise of one (0.9*100 must give 90).
inline std::size_t nearest_rank(double q, std::size_t n) {
  require(q >= 0.0 && q <= 1.0, ErrorKind::argument, "quantile q must lie in [0,1]");
  require(n >= 1, ErrorKind::argument, "quantile of empty input");
  if (q == 0.0) return 1;
  const double t = q * static_cast<double>(n);
  const double r = std::round(t);
  const double k = std::abs(t - r) <= 1e-9 * std::max(1.0, t) ? r : std::ceil(t);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

// Nearest-rank quantile on a pre-sorted ascending sequence.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorKind::argument, "quantile of empty input");
  return sorted[nearest_rank(q, sorted.size()) - 1];
}

// Nearest-rank quantile: element at sorted index ceil(q*n)-1 (index 0 for q=0).
inline double quantile(std::span<const double> scores, double q) {
  require(!scores.empty(), ErrorKind::argument, "quantile of empty input");
  std::vector<double> work(scores.begin(), scores.end());
  const std::size_t k = nearest_rank(q, work.size()) - 1;
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k), work.end());
  return work[k];
}

// --- score file: one JSON object per line --------------------------------

inline std::string format_score(double s) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%#.17g", s);
  return buf;
}

inline void write_scores(std::ostream& out, const ScoreTable& t) {
  const std::string classifier = nlohmann::json(t.classifier_id).dump();
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << "{\"id\":" << t.ids[i] << ",\"score\":" << format_score(t.scores[i])
        << ",\"classifier\":" << classifier << "}\n";
  }
}

inline void write_scores(const std::filesystem::path& path, const ScoreTable& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write score file " + path.string());
  write_scores(out, t);
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline ScoreTable read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open score file " + path.string());
  ScoreTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      t.ids.push_back(rec.at("id").get<std::uint64_t>());
      t.scores.push_back(rec.at("score").get<double>());
      const auto name = rec.value("classifier", std::string{});
      if (t.ids.size() == 1) t.classifier_id = name;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(t);
  return t;
}

}  // namespace qfilter
