#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "qfilter/sampler.hpp"
#include "test_util.hpp"

namespace qfilter {
namespace {

using testing::kind_of;
using testing::TempDir;

std::vector<std::uint64_t> iota_ids(std::uint64_t first, std::size_t n) {
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), first);
  return ids;
}

ScoreTable grid_table() {
  ScoreTable t;
  t.classifier_id = "grid";
  for (int i = 0; i < 100; ++i) {
    t.ids.push_back(static_cast<std::uint64_t>(i));
    t.scores.push_back(i / 100.0);
  }
  return t;
}

TEST(CapAndUpsample, LargePoolTakesTargetDistinctDocs) {
  const auto copies = cap_and_upsample(120000, 100000, 3, 1);
  EXPECT_EQ(std::accumulate(copies.begin(), copies.end(), std::uint64_t{0}), 100000u);
  EXPECT_EQ(*std::max_element(copies.begin(), copies.end()), 1u);
}

TEST(CapAndUpsample, SmallPoolSpreadsEvenlyWithRemainderToLowestIds) {
  const auto copies = cap_and_upsample(40000, 100000, 3);
  std::map<std::uint32_t, std::size_t> histogram;
  for (auto c : copies) ++histogram[c];
  EXPECT_EQ(histogram[3], 20000u);
  EXPECT_EQ(histogram[2], 20000u);
  EXPECT_EQ(std::accumulate(copies.begin(), copies.end(), std::uint64_t{0}), 100000u);
  EXPECT_EQ(copies.front(), 3u);
  EXPECT_EQ(copies[19999], 3u);
  EXPECT_EQ(copies[20000], 2u);
}

TEST(CapAndUpsample, CapBinds) {
  const auto copies = cap_and_upsample(30000, 100000, 3);
  EXPECT_TRUE(std::all_of(copies.begin(), copies.end(), [](auto c) { return c == 3; }));
  EXPECT_EQ(std::accumulate(copies.begin(), copies.end(), std::uint64_t{0}), 90000u);
}

TEST(CapAndUpsample, BruteForceAgreesOnSmallShapes) {
  for (std::size_t pool = 1; pool <= 12; ++pool) {
    for (std::uint64_t target = 1; target <= 40; ++target) {
      for (std::uint32_t cap = 1; cap <= 4; ++cap) {
        const auto copies = cap_and_upsample(pool, target, cap, 9);
        const std::uint64_t total = std::accumulate(copies.begin(), copies.end(), std::uint64_t{0});
        const std::uint64_t want = pool >= target ? target : std::min<std::uint64_t>(target, pool * cap);
        ASSERT_EQ(total, want) << pool << " " << target << " " << cap;
        const auto [lo, hi] = std::minmax_element(copies.begin(), copies.end());
        ASSERT_LE(*hi, cap);
        if (pool < target) {
          ASSERT_LE(*hi - *lo, 1u);
          ASSERT_TRUE(std::is_sorted(copies.rbegin(), copies.rend()));
        }
      }
    }
  }
}

TEST(CapAndUpsample, EmptyPoolFails) {
  EXPECT_EQ(kind_of([] { cap_and_upsample(0, 10, 3); }), ErrorKind::empty_pool);
}

TEST(RandomNegatives, ExhaustiveDeterministicAndSorted) {
  EXPECT_EQ(sample_random_negatives(iota_ids(1, 10), 10, 5), iota_ids(1, 10));
  const auto a = sample_random_negatives(iota_ids(1, 1000), 100, 42);
  EXPECT_EQ(a, sample_random_negatives(iota_ids(1, 1000), 100, 42));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  EXPECT_EQ(kind_of([] { sample_random_negatives(iota_ids(1, 5), 6, 0); }), ErrorKind::insufficient_population);
}

TEST(RandomNegatives, SingleDrawsAreUniform) {
  const auto ids = iota_ids(1, 4);
  std::map<std::uint64_t, int> freq;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++freq[sample_random_negatives(ids, 1, seed).front()];
  // Binomial(10000, 1/4): sigma = sqrt(10000 * 0.25 * 0.75).
  const double sigma = std::sqrt(10000 * 0.25 * 0.75);
  for (auto id : ids) EXPECT_NEAR(freq[id], 2500.0, 3 * sigma) << "id " << id;
}

TEST(Q3Band, UniformGridUsesNearestRankQuartiles) {
  const auto band = select_q3_band(grid_table());
  EXPECT_DOUBLE_EQ(band.p50, 0.49);
  EXPECT_DOUBLE_EQ(band.p75, 0.74);
  ASSERT_EQ(band.ids.size(), 25u);
  EXPECT_EQ(band.ids.front(), 49u);
  EXPECT_EQ(band.ids.back(), 73u);
}

TEST(Q3Band, AllEqualScoresGiveEmptyBand) {
  ScoreTable t;
  t.ids = iota_ids(1, 50);
  t.scores.assign(50, 0.3);
  EXPECT_TRUE(select_q3_band(t).ids.empty());
  EXPECT_EQ(kind_of([] { select_q3_band(ScoreTable{}); }), ErrorKind::empty_input);
}

TEST(Q3Band, MatchesSortAndSliceOracle) {
  Rng rng(77);
  ScoreTable t;
  t.ids = iota_ids(10, 1000);
  for (int i = 0; i < 1000; ++i) t.scores.push_back(std::round(rng.uniform() * 200) / 200);  // with ties
  auto sorted = t.scores;
  std::sort(sorted.begin(), sorted.end());
  const double p50 = sorted[499], p75 = sorted[749];
  std::vector<std::uint64_t> oracle;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    if (t.scores[i] >= p50 && t.scores[i] < p75) oracle.push_back(t.ids[i]);
  }
  const auto band = select_q3_band(t);
  EXPECT_EQ(band.p50, p50);
  EXPECT_EQ(band.p75, p75);
  EXPECT_EQ(band.ids, oracle);
}

TEST(Q3Negatives, SampledIdsStayInsideBand) {
  const auto table = grid_table();
  const auto band = select_q3_band(table);
  EXPECT_EQ(sample_q3_negatives(band.ids, 25, 3), band.ids);
  const auto a = sample_q3_negatives(band.ids, 10, 8);
  EXPECT_EQ(a, sample_q3_negatives(band.ids, 10, 8));
  for (auto id : a) {
    const double s = table.scores[id];
    EXPECT_GE(s, band.p50);
    EXPECT_LT(s, band.p75);
  }
  EXPECT_EQ(kind_of([&] { sample_q3_negatives(band.ids, 26, 0); }), ErrorKind::insufficient_band);
}

TEST(AssembleTrainingSet, BalancedAndSeedStable) {
  const AnchorPool pool{"pool", "fr", iota_ids(1000, 40)};
  SamplingPlan plan;
  plan.target_positives_per_lang = 100;
  plan.seed = 4;
  const auto positives = select_positives(pool, plan);
  EXPECT_EQ(expanded_count(positives), 100u);
  for (const auto& p : positives) EXPECT_LE(p.weight_copies, plan.upsample_cap);
  const auto negatives = sample_random_negatives(iota_ids(1, 500), 100, 6);
  const auto set = assemble_training_set(positives, negatives, "fr", 12);
  ASSERT_EQ(set.size(), 200u);
  EXPECT_EQ(std::count_if(set.begin(), set.end(), [](const auto& e) { return e.label == 1; }), 100);
  EXPECT_EQ(set, assemble_training_set(positives, negatives, "fr", 12));
  EXPECT_NE(set, assemble_training_set(positives, negatives, "fr", 13));
}

TEST(AssembleTrainingSet, ImbalanceReportsBothCounts) {
  const AnchorPool pool{"pool", "fr", iota_ids(1, 100)};
  SamplingPlan plan;
  plan.target_positives_per_lang = 100;
  const auto positives = select_positives(pool, plan);
  try {
    assemble_training_set(positives, iota_ids(500, 90), "fr", 0);
    FAIL() << "expected balance error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::balance);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("100"), std::string::npos);
    EXPECT_NE(msg.find("90"), std::string::npos);
  }
}

TEST(TrainingManifest, RoundTrips) {
  TempDir dir;
  const AnchorPool pool{"pool", "es", iota_ids(1, 30)};
  SamplingPlan plan;
  plan.target_positives_per_lang = 50;
  plan.negative_strategy = NegativeStrategy::q3;
  plan.seed = 21;
  const auto positives = select_positives(pool, plan);
  const auto set = assemble_training_set(positives, sample_random_negatives(iota_ids(100, 200), 50, 1), "es", 2);
  write_training_manifest(dir / "m.jsonl", {plan, "es", set});
  const auto back = read_training_manifest(dir / "m.jsonl");
  EXPECT_EQ(back.lang, "es");
  EXPECT_EQ(back.plan.seed, 21u);
  EXPECT_EQ(back.plan.negative_strategy, NegativeStrategy::q3);
  ASSERT_EQ(back.examples.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back.examples[i].doc_id, set[i].doc_id);
    EXPECT_EQ(back.examples[i].label, set[i].label);
    EXPECT_EQ(back.examples[i].weight_copies, set[i].weight_copies);
  }
}

}  // namespace
}  // namespace qfilter
