#pragma once

// Classifier comparison over a shared corpus. Rank 1 is always the highest
// score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfilter/error.hpp"
#include "qfilter/random.hpp"
#include "qfilter/score_table.hpp"

namespace qfilter {

struct CorrelationReport {
  std::string classifier_a;
  std::string classifier_b;
  std::size_t n = 0;
  double spearman_rho = 0.0;
  double kendall_tau = 0.0;
};

struct RankShift {
  std::uint64_t doc_id = 0;
  std::size_t rank_a = 0;
  std::size_t rank_b = 0;
  std::int64_t delta = 0;  // rank_a - rank_b; positive means B ranks it higher
  double score_a = 0.0;
  double score_b = 0.0;
};

struct RankShiftReport {
  std::vector<RankShift> increases;
  std::vector<RankShift> decreases;
};

struct HistogramReport {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::map<double, double> percentile_markers;
};

// Fractional ranks, descending: ties share the mean of the ranks they span.
inline std::vector<double> rank_transform(std::span<const double> scores) {
  require(!scores.empty(), ErrorKind::argument, "rank_transform of empty input");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> ranks(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace detail {

inline void check_aligned(const ScoreTable& a, const ScoreTable& b) {
  validate(a);
  validate(b);
  if (a.ids != b.ids) fail(ErrorKind::alignment, "score tables cover different document ids");
}

inline bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

inline void check_correlation_inputs(const ScoreTable& a, const ScoreTable& b) {
  check_aligned(a, b);
  if (a.size() < 2) fail(ErrorKind::undefined_correlation, "correlation needs at least 2 documents");
  if (is_constant(a.scores) || is_constant(b.scores)) {
    fail(ErrorKind::undefined_correlation, "correlation undefined for a constant score table");
  }
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Number of pairs (i<j) sharing a value in a sorted run decomposition.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq same_as_previous) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && same_as_previous(i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Bottom-up merge sort counting strict inversions.
inline std::uint64_t count_inversions(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    std::swap(v, buf);
  }
  return swaps;
}

}  // namespace detail

// Pearson correlation of the fractional-rank vectors.
inline double spearman(const ScoreTable& a, const ScoreTable& b) {
  detail::check_correlation_inputs(a, b);
  const auto ra = rank_transform(a.scores);
  const auto rb = rank_transform(b.scores);
  return detail::pearson(ra, rb);
}

// Kendall tau-b in O(n log n) (Knight's algorithm).
inline double kendall_tau_b(const ScoreTable& a, const ScoreTable& b) {
  detail::check_correlation_inputs(a, b);
  const std::size_t n = a.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (a.scores[i] != a.scores[j]) return a.scores[i] < a.scores[j];
    return b.scores[i] < b.scores[j];
  });
  const std::uint64_t ties_a =
      detail::tied_pairs(n, [&](std::size_t i) { return a.scores[order[i]] == a.scores[order[i - 1]]; });
  const std::uint64_t ties_joint = detail::tied_pairs(n, [&](std::size_t i) {
    return a.scores[order[i]] == a.scores[order[i - 1]] && b.scores[order[i]] == b.scores[order[i - 1]];
  });
  std::vector<double> bs(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b.scores[order[i]];
  const std::uint64_t swaps = detail::count_inversions(bs);
  const std::uint64_t ties_b = detail::tied_pairs(n, [&](std::size_t i) { return bs[i] == bs[i - 1]; });

  const std::uint64_t pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  // C - D over pairs untied in both variables.
  const double numer = static_cast<double>(pairs) - static_cast<double>(ties_a) - static_cast<double>(ties_b) +
                       static_cast<double>(ties_joint) - 2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(pairs - ties_a) * static_cast<double>(pairs - ties_b));
  return std::clamp(numer / denom, -1.0, 1.0);
}

inline CorrelationReport correlate(const ScoreTable& a, const ScoreTable& b) {
  return {a.classifier_id, b.classifier_id, a.size(), spearman(a, b), kendall_tau_b(a, b)};
}

// Seeded subsample of both tables to at most max_docs shared documents.
// Full-corpus comparison is the default; this exists for very large corpora.
inline std::pair<ScoreTable, ScoreTable> subsample_pair(const ScoreTable& a, const ScoreTable& b, std::size_t max_docs,
                                                        std::uint64_t seed) {
  detail::check_aligned(a, b);
  if (a.size() <= max_docs) return {a, b};
  Rng rng(derive_seed(seed, "correlation-subsample"));
  ScoreTable sa{a.classifier_id, {}, {}}, sb{b.classifier_id, {}, {}};
  for (std::size_t pos : sample_positions(a.size(), max_docs, rng)) {
    sa.ids.push_back(a.ids[pos]);
    sa.scores.push_back(a.scores[pos]);
    sb.ids.push_back(b.ids[pos]);
    sb.scores.push_back(b.scores[pos]);
  }
  return {std::move(sa), std::move(sb)};
}

// Ordinal 1-based ranks by descending score, ties by ascending id.
inline std::vector<std::size_t> ordinal_ranks(const ScoreTable& t) {
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (t.scores[i] != t.scores[j]) return t.scores[i] > t.scores[j];
    return t.ids[i] < t.ids[j];
  });
  std::vector<std::size_t> rank(t.size());
  for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k + 1;
  return rank;
}

inline std::vector<RankShift> rank_shifts(const ScoreTable& a, const ScoreTable& b) {
  detail::check_aligned(a, b);
  const auto ra = ordinal_ranks(a);
  const auto rb = ordinal_ranks(b);
  std::vector<RankShift> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = {a.ids[i], ra[i], rb[i], static_cast<std::int64_t>(ra[i]) - static_cast<std::int64_t>(rb[i]),
              a.scores[i], b.scores[i]};
  }
  return out;
}

// The k largest rank increases (delta descending) and decreases (delta
// ascending), ties by ascending id.
inline RankShiftReport rank_shift_report(const ScoreTable& a, const ScoreTable& b, std::size_t k) {
  auto shifts = rank_shifts(a, b);
  require(k >= 1 && k <= shifts.size(), ErrorKind::argument, "rank_shift_report: k must lie in [1, n]");
  RankShiftReport r;
  auto take = [&](auto cmp) {
    std::vector<RankShift> v = shifts;
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), cmp);
    v.resize(k);
    return v;
  };
  r.increases = take([](const RankShift& x, const RankShift& y) {
    return x.delta != y.delta ? x.delta > y.delta : x.doc_id < y.doc_id;
  });
  r.decreases = take([](const RankShift& x, const RankShift& y) {
    return x.delta != y.delta ? x.delta < y.delta : x.doc_id < y.doc_id;
  });
  return r;
}

// Equal-width bins over [0,1]; each bin right-open except the last.
inline HistogramReport histogram(const ScoreTable& table, std::size_t n_bins, std::span<const double> markers = {}) {
  require(n_bins >= 1, ErrorKind::argument, "histogram needs at least one bin");
  validate(table);
  HistogramReport h;
  h.bin_edges.resize(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i) h.bin_edges[i] = static_cast<double>(i) / static_cast<double>(n_bins);
  h.counts.assign(n_bins, 0);
  for (double s : table.scores) {
    auto bin = std::min(static_cast<std::size_t>(s * static_cast<double>(n_bins)), n_bins - 1);
    while (bin > 0 && s < h.bin_edges[bin]) --bin;
    while (bin + 1 < n_bins && s >= h.bin_edges[bin + 1]) ++bin;
    ++h.counts[bin];
  }
  if (!markers.empty() && table.size() > 0) {
    std::vector<double> sorted = table.scores;
    std::sort(sorted.begin(), sorted.end());
    for (double q : markers) h.percentile_markers[q] = quantile_sorted(sorted, q);
  }
  return h;
}

struct Extremes {
  std::vector<std::uint64_t> top;
  std::vector<std::uint64_t> bottom;
};

inline Extremes extremes(const ScoreTable& table, std::size_t k) {
  validate(table);
  require(k >= 1, ErrorKind::argument, "extremes: k must be >= 1");
  if (k > table.size()) fail(ErrorKind::argument, "extremes: k exceeds table size");
  std::vector<std::size_t> idx(table.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto pick = [&](bool descending) {
    std::vector<std::size_t> v = idx;
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), [&](std::size_t i, std::size_t j) {
      if (table.scores[i] != table.scores[j]) {
        return descending ? table.scores[i] > table.scores[j] : table.scores[i] < table.scores[j];
      }
      return table.ids[i] < table.ids[j];
    });
    std::vector<std::uint64_t> out;
    for (std::size_t r = 0; r < k; ++r) out.push_back(table.ids[v[r]]);
    return out;
  };
  return {pick(true), pick(false)};
}

// --- report files ---------------------------------------------------------

inline void write_correlation_report(const std::filesystem::path& path, const CorrelationReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "{\"classifier_a\":" << nlohmann::json(r.classifier_a).dump()
      << ",\"classifier_b\":" << nlohmann::json(r.classifier_b).dump() << ",\"n\":" << r.n
      << ",\"spearman\":" << format_score(r.spearman_rho) << ",\"kendall\":" << format_score(r.kendall_tau) << "}\n";
}

// Tab-separated bin rows followed by "# marker" lines.
inline void write_histogram(std::ostream& out, const HistogramReport& h) {
  out << "bin_lo\tbin_hi\tcount\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << format_score(h.bin_edges[i]) << '\t' << format_score(h.bin_edges[i + 1]) << '\t' << h.counts[i] << '\n';
  }
  for (const auto& [q, v] : h.percentile_markers) out << "# marker\t" << format_score(q) << '\t' << format_score(v) << '\n';
}

inline void write_histogram(const std::filesystem::path& path, const HistogramReport& h) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  write_histogram(out, h);
}

inline nlohmann::json to_json(const RankShift& s) {
  return {{"doc_id", s.doc_id}, {"rank_a", s.rank_a}, {"rank_b", s.rank_b}, {"delta", s.delta},
          {"score_a", format_score(s.score_a)}, {"score_b", format_score(s.score_b)}};
}

}  // namespace qfilter
