#pragma once

// Benchmark aggregation: competition ranks per benchmark, average rank,
// aggregate normalized accuracy, and macro/micro roll-ups across languages.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/error.hpp"

namespace qfilter {

struct BenchmarkMatrix {
  std::string language;
  std::vector<std::string> methods;
  std::vector<std::string> benchmarks;
  std::vector<std::vector<double>> acc;  // [method][benchmark]
};

inline void validate(const BenchmarkMatrix& m) {
  require(m.acc.size() == m.methods.size(), ErrorKind::shape, "accuracy rows != method count");
  for (const auto& row : m.acc) {
    require(row.size() == m.benchmarks.size(), ErrorKind::shape, "missing benchmark cells");
    for (double v : row) require(v >= 0.0 && v <= 1.0, ErrorKind::argument, "accuracy outside [0,1]");
  }
}

struct RankSummary {
  std::vector<std::vector<double>> per_benchmark_ranks;  // [method][benchmark]
  std::vector<double> average_rank;
  std::vector<double> aggregate_acc;
};

// Competition ranking: rank = 1 + number of methods strictly better, so a
// two-way tie for best gives (1, 1, 3).
inline std::vector<std::vector<double>> per_benchmark_ranks(const BenchmarkMatrix& m) {
  validate(m);
  if (m.methods.size() < 2) fail(ErrorKind::degenerate_input, "ranking needs at least two methods");
  std::vector<std::vector<double>> ranks(m.methods.size(), std::vector<double>(m.benchmarks.size()));
  for (std::size_t b = 0; b < m.benchmarks.size(); ++b) {
    for (std::size_t i = 0; i < m.methods.size(); ++i) {
      std::size_t better = 0;
      for (std::size_t j = 0; j < m.methods.size(); ++j) better += m.acc[j][b] > m.acc[i][b] ? 1 : 0;
      ranks[i][b] = static_cast<double>(better + 1);
    }
  }
  return ranks;
}

inline std::vector<double> row_means(const std::vector<std::vector<double>>& grid) {
  std::vector<double> out;
  out.reserve(grid.size());
  for (const auto& row : grid) {
    double sum = 0.0;
    for (double v : row) sum += v;
    out.push_back(row.empty() ? 0.0 : sum / static_cast<double>(row.size()));
  }
  return out;
}

inline std::vector<double> average_rank(const BenchmarkMatrix& m) { return row_means(per_benchmark_ranks(m)); }

inline std::vector<double> aggregate_accuracy(const BenchmarkMatrix& m) {
  validate(m);
  return row_means(m.acc);
}

inline RankSummary summarize(const BenchmarkMatrix& m) {
  RankSummary s;
  s.per_benchmark_ranks = per_benchmark_ranks(m);
  s.average_rank = row_means(s.per_benchmark_ranks);
  s.aggregate_acc = row_means(m.acc);
  return s;
}

// Restriction of m to `methods`, in that order.
inline BenchmarkMatrix select_methods(const BenchmarkMatrix& m, std::span<const std::string> methods) {
  BenchmarkMatrix out;
  out.language = m.language;
  out.benchmarks = m.benchmarks;
  for (const auto& name : methods) {
    const auto it = std::find(m.methods.begin(), m.methods.end(), name);
    if (it == m.methods.end()) {
      fail(ErrorKind::coverage, "method '" + name + "' missing from language '" + m.language + "'");
    }
    out.methods.push_back(name);
    out.acc.push_back(m.acc[static_cast<std::size_t>(it - m.methods.begin())]);
  }
  return out;
}

struct MacroMicro {
  std::vector<std::string> methods;
  std::vector<double> macro_rank;
  std::vector<double> micro_rank;
  std::vector<double> macro_acc;
  std::vector<double> micro_acc;
};

// Ranks are recomputed within each language over the shared methods only.
// Macro averages per-language summaries; micro pools every benchmark column
// with equal weight.
inline MacroMicro macro_micro(std::span<const BenchmarkMatrix> matrices, std::span<const std::string> shared_methods) {
  require(!matrices.empty(), ErrorKind::argument, "macro_micro needs at least one language");
  const std::size_t k = shared_methods.size();
  MacroMicro out;
  out.methods.assign(shared_methods.begin(), shared_methods.end());
  out.macro_rank.assign(k, 0.0);
  out.micro_rank.assign(k, 0.0);
  out.macro_acc.assign(k, 0.0);
  out.micro_acc.assign(k, 0.0);
  std::size_t pooled = 0;
  for (const auto& lang : matrices) {
    const auto sub = select_methods(lang, shared_methods);
    const auto s = summarize(sub);
    for (std::size_t i = 0; i < k; ++i) {
      out.macro_rank[i] += s.average_rank[i];
      out.macro_acc[i] += s.aggregate_acc[i];
      for (std::size_t b = 0; b < sub.benchmarks.size(); ++b) {
        out.micro_rank[i] += s.per_benchmark_ranks[i][b];
        out.micro_acc[i] += sub.acc[i][b];
      }
    }
    pooled += sub.benchmarks.size();
  }
  const double langs = static_cast<double>(matrices.size());
  for (std::size_t i = 0; i < k; ++i) {
    out.macro_rank[i] /= langs;
    out.macro_acc[i] /= langs;
    out.micro_rank[i] /= static_cast<double>(pooled);
    out.micro_acc[i] /= static_cast<double>(pooled);
  }
  return out;
}

// --- matrix file ----------------------------------------------------------
//
//   # language: fr
//   method<TAB>bench_1<TAB>...<TAB>bench_k
//   No filtering<TAB>0.2891<TAB>...
//
// Other lines starting with '#' are comments.

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, '\t')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline BenchmarkMatrix parse_benchmark_matrix(std::istream& in, const std::string& source = "<matrix>") {
  BenchmarkMatrix m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    if (trimmed.front() == '#') {
      const auto colon = trimmed.find(':');
      if (colon != std::string::npos && detail::trim(trimmed.substr(1, colon - 1)) == "language") {
        m.language = detail::trim(trimmed.substr(colon + 1));
      }
      continue;
    }
    auto cells = detail::split_tabs(line);
    for (auto& c : cells) c = detail::trim(c);
    if (!have_header) {
      require(cells.size() >= 2, ErrorKind::parse, source + " line " + std::to_string(line_no) + ": header needs benchmarks");
      m.benchmarks.assign(cells.begin() + 1, cells.end());
      have_header = true;
      continue;
    }
    if (cells.size() != m.benchmarks.size() + 1) {
      fail(ErrorKind::parse, source + " line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(m.benchmarks.size() + 1) + " cells, got " + std::to_string(cells.size()));
    }
    m.methods.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size()) {
        fail(ErrorKind::parse, source + " line " + std::to_string(line_no) + ": bad accuracy '" + cells[c] + "'");
      }
      row.push_back(v);
    }
    m.acc.push_back(std::move(row));
  }
  require(have_header, ErrorKind::parse, source + ": no header row");
  require(!m.language.empty(), ErrorKind::parse, source + ": missing '# language:' line");
  validate(m);
  return m;
}

inline BenchmarkMatrix load_benchmark_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open benchmark matrix " + path.string());
  return parse_benchmark_matrix(in, path.string());
}

inline nlohmann::json report_json(const BenchmarkMatrix& m) {
  const auto s = summarize(m);
  nlohmann::json methods = nlohmann::json::array();
  for (std::size_t i = 0; i < m.methods.size(); ++i) {
    nlohmann::json ranks = nlohmann::json::object();
    for (std::size_t b = 0; b < m.benchmarks.size(); ++b) ranks[m.benchmarks[b]] = s.per_benchmark_ranks[i][b];
    methods.push_back({{"method", m.methods[i]},
                       {"per_benchmark_ranks", std::move(ranks)},
                       {"average_rank", s.average_rank[i]},
                       {"aggregate_acc", s.aggregate_acc[i]}});
  }
  return {{"language", m.language}, {"benchmarks", m.benchmarks}, {"methods", std::move(methods)}};
}

inline nlohmann::json report_json(const MacroMicro& mm) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < mm.methods.size(); ++i) {
    rows.push_back({{"method", mm.methods[i]},
                    {"macro_rank", mm.macro_rank[i]},
                    {"micro_rank", mm.micro_rank[i]},
                    {"macro_acc", mm.macro_acc[i]},
                    {"micro_acc", mm.micro_acc[i]}});
  }
  return rows;
}

// Methods present in every matrix, in first-matrix order.
inline std::vector<std::string> shared_methods(std::span<const BenchmarkMatrix> matrices) {
  std::vector<std::string> out;
  if (matrices.empty()) return out;
  for (const auto& name : matrices.front().methods) {
    const bool everywhere = std::all_of(matrices.begin(), matrices.end(), [&](const BenchmarkMatrix& m) {
      return std::find(m.methods.begin(), m.methods.end(), name) != m.methods.end();
    });
    if (everywhere) out.push_back(name);
  }
  return out;
}

// Per-language reports plus a macro/micro block when several languages are given.
inline nlohmann::json full_report(std::span<const BenchmarkMatrix> matrices) {
  nlohmann::json out;
  out["languages"] = nlohmann::json::array();
  for (const auto& m : matrices) out["languages"].push_back(report_json(m));
  if (matrices.size() > 1) {
    const auto shared = shared_methods(matrices);
    if (shared.size() >= 2) out["macro_micro"] = report_json(macro_micro(matrices, shared));
  }
  return out;
}

}  // namespace qfilter
