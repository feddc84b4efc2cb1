#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qfilter/eval_report.hpp"

namespace qfilter::testing {

inline std::filesystem::path table_path(const std::string& name) {
  return std::filesystem::path(QFILTER_TEST_DATA) / "tables" / (name + ".tsv");
}

// A published results table with its printed summary rows.
struct PublishedTable {
  BenchmarkMatrix matrix;
  std::vector<double> aggregate;
  std::vector<double> average_rank;
};

inline std::vector<double> expected_row(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  const std::string prefix = "# " + key + ":";
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) != 0) continue;
    std::istringstream cells(line.substr(prefix.size()));
    std::vector<double> out;
    double v = 0.0;
    while (cells >> v) out.push_back(v);
    return out;
  }
  return {};
}

inline PublishedTable load_published(const std::string& name) {
  const auto path = table_path(name);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  PublishedTable t;
  t.aggregate = expected_row(buf.str(), "expected_aggregate");
  t.average_rank = expected_row(buf.str(), "expected_average_rank");
  t.matrix = load_benchmark_matrix(path);
  return t;
}

inline const std::vector<std::string>& main_tables() {
  static const std::vector<std::string> names = {"zh_multilingual", "es_multilingual", "fr_crosslingual", "fr_q3",
                                                 "es_q3",           "fr_retention",    "es_retention",    "ar_retention"};
  return names;
}

inline const std::vector<std::string>& appendix_tables() {
  static const std::vector<std::string> names = {"ar_seeds", "fr_seeds", "es_scale", "fr_scale", "ar_scale",
                                                 "es_all",   "zh_all",   "ar_all",   "fr_all"};
  return names;
}

}  // namespace qfilter::testing
