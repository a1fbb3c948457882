#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rexprobe/refmodel.hpp"
#include "support.hpp"

namespace rexprobe {
namespace {

using testing::fixture_corpus;

TEST(RefModel, EmbeddingIsDeterministicAndCaseFolded) {
  const EmbeddingTable table;
  EXPECT_EQ(table.vector("the"), table.vector("the"));
  EXPECT_EQ(table.vector("The"), table.vector("the"));
  EXPECT_NE(table.vector("the"), table.vector("a"));
  for (double v : table.vector("Czech")) {
    EXPECT_GE(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

// Recomputes the "Czech" vector from scratch: FNV-1a 64 offset basis and
// prime, SplitMix64 constants, 53-bit mantissa mapping.
TEST(RefModel, EmbeddingMatchesIndependentRecomputation) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : std::string("czech")) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t state = h ^ 0x72657870726f6265ULL;
  std::vector<double> expected;
  for (int d = 0; d < 16; ++d) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    expected.push_back(2.0 * std::ldexp(static_cast<double>(z >> 11), -53) - 1.0);
  }
  EXPECT_EQ(EmbeddingTable(16).vector("Czech"), expected);
}

TEST(RefModel, EmbedDocumentRowsFollowWords) {
  Document doc;
  doc.sentences = {{"the", "The"}};
  const Embedding x = embed_document(doc, EmbeddingTable());
  ASSERT_EQ(x.words, 2u);
  EXPECT_TRUE(std::equal(x.row(0).begin(), x.row(0).end(), x.row(1).begin()));
}

TEST(RefModel, ZeroWeightsScoreOneHalf) {
  const Corpus corpus = fixture_corpus();
  const RefModel model(RefModelParams::zeros(16, corpus.relations));
  EXPECT_EQ(model.score(corpus.documents[0], {0, 1, "P27"}), 0.5);
  EXPECT_TRUE(model.predict_document(corpus.documents[0]).empty());
}

TEST(RefModel, SaturatedBias) {
  const Corpus corpus = fixture_corpus();
  RefModelParams p = RefModelParams::zeros(16, corpus.relations);
  p.relations["P17"].b = 50.0;
  const RefModel model(p);
  EXPECT_NEAR(model.score(corpus.documents[1], {0, 1, "P17"}), 1.0, 1e-9);
  const Document& doc = corpus.documents[1];
  const PredictionSet pred = model.predict_document(doc);
  const std::size_t n = doc.entities.size();
  EXPECT_EQ(pred.size(), n * (n - 1));
  for (const auto& [k, s] : pred) EXPECT_EQ(k.relation, "P17");
}

TEST(RefModel, UnknownRelation) {
  const Corpus corpus = fixture_corpus();
  const RefModel model(RefModelParams::zeros(16, corpus.relations));
  EXPECT_THROW(model.score(corpus.documents[0], {0, 1, "P9999"}), UnknownRelationError);
}

TEST(RefModel, HandComputedScore) {
  RelationWeights rw{std::vector<double>(6, 1.0), -2.0};
  EXPECT_NEAR(sigmoid(logit({1, 0, 0, 1, 0.5, 0.5}, rw)), 0.7310586, 1e-7);
}

TEST(RefModel, HandComputedGradient) {
  // dim 1, four words, the single context word sits outside both entities.
  Embedding x(4, 1);
  RelationWeights rw{{0.0, 0.0, 2.0}, 0.0};
  const PairTokens pair{{0}, {1}};
  const Embedding g = gradient(x, pair, rw);
  EXPECT_DOUBLE_EQ(g.data[3], 0.125);
  EXPECT_DOUBLE_EQ(g.data[2], 0.125);
}

TEST(RefModel, ZeroWeightsZeroGradient) {
  const Corpus corpus = fixture_corpus();
  const RefModel model(RefModelParams::zeros(16, corpus.relations));
  const RefFactScorer s(model, corpus.documents[0], {0, 1, "P27"});
  for (double v : s.gradient(s.input()).data) EXPECT_EQ(v, 0.0);
}

TEST(RefModel, GradientMatchesFiniteDifferences) {
  const Corpus corpus = fixture_corpus();
  std::mt19937_64 rng(11);
  const RefModel model(testing::random_params(corpus.relations, rng, 2.0));
  const double h = 1e-5;
  for (const auto& sf : testing::sample_facts(corpus, model.params(), 5, rng)) {
    const RefFactScorer s(model, *sf.doc, sf.fact);
    const Embedding g = s.gradient(s.input());
    Embedding x = s.input();
    for (std::size_t i = 0; i < x.data.size(); i += 7) {
      const double orig = x.data[i];
      x.data[i] = orig + h;
      const double up = s.value(x);
      x.data[i] = orig - h;
      const double down = s.value(x);
      x.data[i] = orig;
      ASSERT_NEAR(g.data[i], (up - down) / (2 * h), 1e-6);
    }
  }
}

TEST(RefModel, TrainingWithZeroEpochsReturnsZeros) {
  const Corpus corpus = fixture_corpus();
  TrainOptions opt;
  opt.epochs = 0;
  const TrainResult r = train(corpus, opt);
  EXPECT_EQ(r.params, RefModelParams::zeros(16, corpus.relations));
  EXPECT_EQ(r.loss_history.size(), 1u);
}

TEST(RefModel, TrainingLossStrictlyDecreases) {
  const TrainResult r = train(fixture_corpus(), TrainOptions{});
  ASSERT_EQ(r.loss_history.size(), 51u);
  for (std::size_t i = 1; i < r.loss_history.size(); ++i) EXPECT_LT(r.loss_history[i], r.loss_history[i - 1]) << i;
}

// Regression values for the default configuration on this platform.
TEST(RefModel, TrainingLossRegression) {
  const TrainResult r = train(fixture_corpus(), TrainOptions{});
  EXPECT_NEAR(r.loss_history.front(), std::log(2.0), 1e-12);
  EXPECT_NEAR(r.loss_history.back(), 0.23041024156687812, 1e-9);
}

TEST(RefModel, TrainingIsDeterministic) {
  const Corpus corpus = fixture_corpus();
  EXPECT_EQ(train(corpus, TrainOptions{}).params, train(corpus, TrainOptions{}).params);
  TrainOptions other;
  other.seed = 8;
  EXPECT_NE(train(corpus, TrainOptions{}).params, train(corpus, other).params);
}

TEST(RefModel, TrainingRejectsEmptyCorpus) { EXPECT_THROW(train(Corpus{}, TrainOptions{}), Error); }

TEST(RefModel, PredictionsEqualBruteForceScoring) {
  const Corpus corpus = fixture_corpus();
  const RefModel model(testing::trained_fixture_params());
  for (const auto& doc : corpus.documents) {
    PredictionSet expected;
    const int n = static_cast<int>(doc.entities.size());
    for (int h = 0; h < n; ++h) {
      for (int t = 0; t < n; ++t) {
        if (h == t) continue;
        for (const auto& [r, rw] : model.params().relations) {
          const double s = model.score(doc, {h, t, r});
          if (s > model.params().tau) expected.insert({doc.doc_id, h, t, r}, s);
        }
      }
    }
    EXPECT_EQ(model.predict_document(doc), expected);
  }
}

TEST(RefModel, ScoresAreProbabilities) {
  const Corpus corpus = fixture_corpus();
  std::mt19937_64 rng(3);
  const RefModel model(testing::random_params(corpus.relations, rng, 10.0));
  for (const auto& sf : testing::sample_facts(corpus, model.params(), 200, rng)) {
    const double s = model.score(*sf.doc, sf.fact);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(RefModel, ParamsJsonRoundTrip) {
  const RefModelParams p = testing::trained_fixture_params();
  EXPECT_EQ(params_from_json(Json::parse(to_json(p).dump())), p);
  Json bad = to_json(p);
  bad["tau"] = 1.5;
  EXPECT_THROW(params_from_json(bad), SchemaError);
  bad = to_json(p);
  bad["relations"]["P17"]["w"] = std::vector<double>{1.0};
  EXPECT_THROW(params_from_json(bad), SchemaError);
}

TEST(RefModel, StableSigmoid) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_GT(sigmoid(-800.0), -1.0);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_NEAR(sigmoid(-30.0), 9.357622968839299e-14, 1e-25);
}

}  // namespace
}  // namespace rexprobe
