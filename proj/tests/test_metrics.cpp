#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "rexprobe/metrics.hpp"

namespace rexprobe {
namespace {

PredictionSet predictions(std::initializer_list<TripleKey> keys) {
  PredictionSet p;
  for (const auto& k : keys) p.insert(k, 0.9);
  return p;
}

// Straight from the definition: P(i) recounted from scratch at every rank.
double naive_ap(const std::vector<bool>& rel, std::size_t k) {
  double sum = 0.0;
  for (std::size_t i = 1; i <= k; ++i) {
    if (i > rel.size() || !rel[i - 1]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < i; ++j) hits += rel[j] ? 1 : 0;
    sum += static_cast<double>(hits) / static_cast<double>(i);
  }
  return sum / static_cast<double>(k);
}

TEST(F1, HalfCorrect) {
  const PredictionSet pred = predictions({{"d", 0, 1, "P1"}, {"d", 1, 0, "P1"}});
  const std::set<TripleKey> gold{{"d", 0, 1, "P1"}, {"d", 0, 2, "P1"}};
  const F1Result r = micro_f1(pred, gold);
  EXPECT_EQ(r.precision, 0.5);
  EXPECT_EQ(r.recall, 0.5);
  EXPECT_EQ(r.f1, 0.5);
}

TEST(F1, PerfectAndEmpty) {
  const std::set<TripleKey> gold{{"d", 0, 1, "P1"}};
  EXPECT_EQ(micro_f1(predictions({{"d", 0, 1, "P1"}}), gold).f1, 1.0);
  const F1Result none = micro_f1(PredictionSet{}, gold);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(micro_f1(PredictionSet{}, {}).f1, 0.0);
}

TEST(F1, HarmonicMean) {
  const F1Result r = f1_from_counts(3, 4, 6);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 * 0.75 * 0.5 / 1.25);
}

TEST(Predictions, RejectsBadScoresAndDuplicates) {
  PredictionSet p;
  EXPECT_THROW(p.insert({"d", 0, 1, "P1"}, 1.5), Error);
  EXPECT_THROW(p.insert({"d", 0, 1, "P1"}, std::nan("")), Error);
  p.insert({"d", 0, 1, "P1"}, 0.7);
  EXPECT_THROW(p.insert({"d", 0, 1, "P1"}, 0.8), Error);
  EXPECT_TRUE(p.has_pair("d", 0, 1));
  EXPECT_FALSE(p.has_pair("d", 1, 0));
}

TEST(FlipRates, MixedOutcome) {
  const PredictionSet before =
      predictions({{"d", 0, 1, "P1"}, {"d", 0, 2, "P1"}, {"d", 1, 2, "P1"}, {"d", 2, 0, "P1"}});
  const PredictionSet after = predictions({{"d", 0, 1, "P1"}, {"d", 1, 2, "P2"}});
  const std::set<TripleKey> scope{{"d", 0, 1, "P1"}, {"d", 0, 2, "P1"}, {"d", 1, 2, "P1"}, {"d", 2, 0, "P1"}};
  const FlipRates r = flip_rates(before, after, scope);
  EXPECT_EQ(r.p2n(), 0.5);
  EXPECT_EQ(r.up(), 0.25);
  EXPECT_EQ(r.residual(), 0.25);
  EXPECT_EQ(r.p2n_count + r.up_count + r.residual_count, r.attacked_count);
}

TEST(FlipRates, NoChangeAndUndefined) {
  const PredictionSet before = predictions({{"d", 0, 1, "P1"}});
  const FlipRates same = flip_rates(before, before, {{"d", 0, 1, "P1"}});
  EXPECT_EQ(same.up(), 1.0);
  EXPECT_EQ(same.p2n(), 0.0);
  const FlipRates none = flip_rates(before, before, {{"d", 1, 0, "P1"}});
  EXPECT_FALSE(none.defined());
}

TEST(FlipRates, RandomPartitionsSumToOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    PredictionSet before, after;
    std::set<TripleKey> scope;
    for (int h = 0; h < 4; ++h) {
      for (int t = 0; t < 4; ++t) {
        for (const char* r : {"P1", "P2"}) {
          const TripleKey k{"d", h, t, r};
          if (rng() % 2) before.insert(k, 0.6);
          if (rng() % 3 == 0) after.insert(k, 0.6);
          if (rng() % 2) scope.insert(k);
        }
      }
    }
    const FlipRates f = flip_rates(before, after, scope);
    ASSERT_EQ(f.p2n_count + f.up_count + f.residual_count, f.attacked_count);
    if (f.defined()) ASSERT_NEAR(f.p2n() + f.up() + f.residual(), 1.0, 1e-12);
  }
}

TEST(AveragePrecision, HandCases) {
  EXPECT_DOUBLE_EQ(average_precision(std::vector<bool>{true, false, true}, 3), 5.0 / 9.0);
  EXPECT_EQ(average_precision(std::vector<bool>{true}, 1), 1.0);
  EXPECT_EQ(average_precision(std::vector<bool>{false, false}, 2), 0.0);
  // Short lists are padded with irrelevant items.
  EXPECT_DOUBLE_EQ(average_precision(std::vector<bool>{true}, 4), 0.25);
  EXPECT_THROW(average_precision(std::vector<bool>{true}, 0), Error);
}

TEST(AveragePrecision, MatchesNaiveDefinition) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<bool> rel(rng() % 30);
    for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = rng() % 3 == 0;
    const std::size_t k = 1 + rng() % 40;
    ASSERT_NEAR(average_precision(rel, k), naive_ap(rel, k), 1e-12);
  }
}

TEST(Map, TwoFacts) {
  const std::vector<std::vector<std::size_t>> rankings{{4, 2, 7}, {1, 0, 9}};
  const std::vector<std::set<std::size_t>> gold{{4, 7}, {1, 0}};
  const MapResult r = map_at_k(rankings, gold, 3);
  // AP = 5/9 and (1 + 1) / 3 = 2/3.
  EXPECT_DOUBLE_EQ(*r.value, (5.0 / 9.0 + 2.0 / 3.0) / 2.0);
  EXPECT_EQ(r.included, 2u);
}

TEST(Map, ExcludesFactsWithoutGold) {
  const MapResult r = map_at_k({{0, 1}, {0, 1}}, {{0}, {}}, 2);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_DOUBLE_EQ(*r.value, 0.5);
  EXPECT_FALSE(map_at_k({{0}}, {{}}, 1).value);
  EXPECT_FALSE(map_curve({{0}}, {{}}, 5));
}

TEST(Map, CurveMatchesPointwiseOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n_facts = 1 + rng() % 6;
    std::vector<std::vector<std::size_t>> rankings(n_facts);
    std::vector<std::set<std::size_t>> gold(n_facts);
    for (std::size_t f = 0; f < n_facts; ++f) {
      const std::size_t len = rng() % 25;
      for (std::size_t i = 0; i < len; ++i) rankings[f].push_back(i);
      std::shuffle(rankings[f].begin(), rankings[f].end(), rng);
      for (std::size_t i = 0; i < len; ++i) {
        if (rng() % 4 == 0) gold[f].insert(i);
      }
    }
    const std::size_t k_max = 1 + rng() % 30;
    const auto curve = map_curve(rankings, gold, k_max);
    std::vector<double> expected;
    for (std::size_t k = 1; k <= k_max; ++k) {
      double sum = 0.0;
      std::size_t included = 0;
      for (std::size_t f = 0; f < n_facts; ++f) {
        if (gold[f].empty()) continue;
        std::vector<bool> rel;
        for (std::size_t w : rankings[f]) rel.push_back(gold[f].contains(w));
        sum += naive_ap(rel, k);
        ++included;
      }
      if (included == 0) break;
      expected.push_back(sum / static_cast<double>(included));
    }
    if (expected.empty()) {
      EXPECT_FALSE(curve);
      continue;
    }
    ASSERT_TRUE(curve);
    ASSERT_EQ(curve->values.size(), k_max);
    double auc = 0.0;
    for (std::size_t k = 0; k < k_max; ++k) {
      EXPECT_NEAR(curve->values[k], expected[k], 1e-12);
      auc += expected[k];
    }
    EXPECT_NEAR(curve->auc, auc / static_cast<double>(k_max), 1e-12);
  }
}

TEST(Map, GoldFirstBeatsGoldLast) {
  const std::vector<std::set<std::size_t>> gold{{0, 1}};
  const auto good = map_curve({{0, 1, 2, 3, 4}}, gold, 5);
  const auto bad = map_curve({{4, 3, 2, 0, 1}}, gold, 5);
  EXPECT_GT(good->auc, bad->auc);
  EXPECT_EQ(good->values[1], 1.0);
}

TEST(Map, CsvFormat) {
  const auto curve = map_curve({{0, 1}}, {{1}}, 2);
  std::ostringstream out;
  write_map_csv(out, *curve);
  EXPECT_EQ(out.str(), "K,MAP\n1,0\n2,0.25\n#auc=0.125\n");
}

}  // namespace
}  // namespace rexprobe
