#include <filesystem>

#include <gtest/gtest.h>

#include "mixseq/error.hpp"
#include "mixseq/refine.hpp"
#include "support.hpp"

namespace mixseq {
namespace {

using testing::make_dataset;
using testing::tiny_config;

SamplePrediction pred(std::string id, std::vector<double> verb, std::vector<double> noun) {
  SamplePrediction p;
  p.sample_id = std::move(id);
  p.verb = Eigen::Map<Eigen::VectorXd>(verb.data(), static_cast<Eigen::Index>(verb.size()));
  p.noun = Eigen::Map<Eigen::VectorXd>(noun.data(), static_cast<Eigen::Index>(noun.size()));
  return p;
}

TEST(CoOccurrence, CountsLabeledPairs) {
  Rng rng(1);
  const auto d = make_dataset(tiny_config(), {{{0, 1}, {0, 1}, {2, 3}}}, Domain::kSource, rng);
  const auto m = CoOccurrenceMatrix::build(d);
  EXPECT_EQ(m.count(0, 1), 2);
  EXPECT_EQ(m.count(2, 3), 1);
  EXPECT_EQ(m.count(1, 1), 0);
  EXPECT_EQ(m.total(), 3);
  EXPECT_EQ(m.nonzeros(), 2);
  EXPECT_EQ(m.support(), (std::vector<Action>{{0, 1}, {2, 3}}));
}

TEST(CoOccurrence, EmptyDatasetIsAllZero) {
  Dataset d;
  d.num_verbs = 3;
  d.num_nouns = 5;
  const auto m = CoOccurrenceMatrix::build(d);
  EXPECT_EQ(m.num_verbs(), 3);
  EXPECT_EQ(m.num_nouns(), 5);
  EXPECT_EQ(m.nonzeros(), 0);
  EXPECT_EQ(m.total(), 0);
}

TEST(CoOccurrence, DefaultCorpusCoversTheActionSet) {
  const PipelineConfig c;
  Rng rng(1);
  const auto g = make_grammar(c, rng);
  const auto corpus = generate_corpus(g, rng);
  const auto m = CoOccurrenceMatrix::build(corpus.source);
  EXPECT_EQ(m.nonzeros(), 24);
  for (const auto& a : g.action_set) EXPECT_TRUE(m.seen(a.first, a.second));
}

TEST(CoOccurrence, UnlabeledSampleRejected) {
  Rng rng(1);
  const auto t = make_dataset(tiny_config(), {{{0, 1}}}, Domain::kTarget, rng);
  EXPECT_THROW(CoOccurrenceMatrix::build(t), DataError);
}

TEST(Filter, UnseenTopPairLosesToSeenPair) {
  CoOccurrenceMatrix m(2, 2);
  m.add(1, 1);
  m.add(0, 1);
  // Outer product: (0,0)=0.30, (0,1)=0.20, (1,0)=0.30, (1,1)=0.20.
  const Eigen::Vector2d verb(0.5, 0.5);
  const Eigen::Vector2d noun(0.6, 0.4);
  const auto raw = action_scores(verb, noun);
  EXPECT_EQ(action_argmax(raw), (Action{0, 0}));
  const auto filtered = cooccurrence_filter(verb, noun, m, 0.01);
  EXPECT_NEAR(filtered(0, 0), 0.003, 1e-15);
  EXPECT_NEAR(filtered(0, 1), 0.20, 1e-15);
  EXPECT_EQ(action_argmax(filtered), (Action{0, 1}));
}

TEST(Filter, FactorOneChangesNoArgmax) {
  Rng rng(2);
  CoOccurrenceMatrix m(5, 7);
  for (int i = 0; i < 10; ++i) m.add(static_cast<int>(rng.below(5)), static_cast<int>(rng.below(7)));
  for (int i = 0; i < 1000; ++i) {
    const auto v = testing::random_simplex(5, rng);
    const auto n = testing::random_simplex(7, rng);
    EXPECT_EQ(action_argmax(cooccurrence_filter(v, n, m, 1.0)), (Action{argmax(v), argmax(n)}));
  }
}

TEST(Filter, ShapeMismatchRejected) {
  CoOccurrenceMatrix m(2, 2);
  EXPECT_THROW(cooccurrence_filter(Eigen::Vector3d(0.2, 0.3, 0.5), Eigen::Vector2d(0.5, 0.5), m, 0.01), DataError);
}

TEST(Ensemble, WeightedMean) {
  const std::vector<std::vector<SamplePrediction>> sets = {{pred("a", {0.6, 0.4}, {1.0, 0.0})},
                                                          {pred("a", {0.2, 0.8}, {0.0, 1.0})}};
  const auto e = ensemble(sets);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NEAR(e[0].verb[0], 0.4, 1e-12);
  EXPECT_NEAR(e[0].verb[1], 0.6, 1e-12);
  const std::vector<double> w = {3, 1};
  const auto weighted = ensemble(sets, w);
  EXPECT_NEAR(weighted[0].verb[0], 0.5, 1e-12);
  EXPECT_NEAR(weighted[0].noun[0], 0.75, 1e-12);
}

TEST(Ensemble, SingleSetIsIdentity) {
  Rng rng(3);
  std::vector<SamplePrediction> s;
  for (int i = 0; i < 10; ++i) s.push_back({"s" + std::to_string(i), testing::random_simplex(4, rng), testing::random_simplex(3, rng)});
  const std::vector<std::vector<SamplePrediction>> sets = {s};
  const auto e = ensemble(sets);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(e[i].sample_id, s[i].sample_id);
    EXPECT_TRUE(e[i].verb == s[i].verb);
    EXPECT_TRUE(e[i].noun == s[i].noun);
  }
}

TEST(Ensemble, MatchesByIdAndRejectsMismatches) {
  const std::vector<std::vector<SamplePrediction>> shuffled = {
      {pred("a", {1, 0}, {1, 0}), pred("b", {0, 1}, {0, 1})},
      {pred("b", {1, 0}, {1, 0}), pred("a", {1, 0}, {1, 0})}};
  const auto e = ensemble(shuffled);
  EXPECT_EQ(e[0].sample_id, "a");
  EXPECT_NEAR(e[0].verb[0], 1.0, 1e-12);
  EXPECT_NEAR(e[1].verb[0], 0.5, 1e-12);

  const std::vector<std::vector<SamplePrediction>> missing = {{pred("a", {1, 0}, {1, 0})}, {pred("b", {1, 0}, {1, 0})}};
  EXPECT_THROW(ensemble(missing), DataError);
  const std::vector<std::vector<SamplePrediction>> sizes = {{pred("a", {1, 0}, {1, 0})},
                                                           {pred("a", {1, 0}, {1, 0}), pred("b", {1, 0}, {1, 0})}};
  EXPECT_THROW(ensemble(sizes), DataError);
  const std::vector<std::vector<SamplePrediction>> vocab = {{pred("a", {1, 0}, {1, 0})}, {pred("a", {1, 0, 0}, {1, 0})}};
  EXPECT_THROW(ensemble(vocab), DataError);
  const std::vector<double> one = {1.0};
  EXPECT_THROW(ensemble(shuffled, one), DataError);
  EXPECT_THROW(ensemble({}), DataError);
}

TEST(Evaluate, Examples) {
  GroundTruth truth;
  truth.labels = {{"a", {0, 1}}, {"b", {1, 0}}, {"c", {1, 1}}};
  const std::vector<SamplePrediction> perfect = {pred("a", {0.9, 0.1}, {0.2, 0.8})};
  auto acc = evaluate(perfect, truth);
  EXPECT_EQ(acc.verb, 1.0);
  EXPECT_EQ(acc.noun, 1.0);
  EXPECT_EQ(acc.action, 1.0);

  const std::vector<SamplePrediction> verb_only = {pred("a", {0.9, 0.1}, {0.8, 0.2})};
  acc = evaluate(verb_only, truth);
  EXPECT_EQ(acc.verb, 1.0);
  EXPECT_EQ(acc.noun, 0.0);
  EXPECT_EQ(acc.action, 0.0);

  const std::vector<SamplePrediction> mixed = {pred("a", {0.9, 0.1}, {0.2, 0.8}), pred("b", {0.1, 0.9}, {0.3, 0.7}),
                                               pred("c", {0.6, 0.4}, {0.4, 0.6})};
  acc = evaluate(mixed, truth);
  EXPECT_NEAR(acc.verb, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(acc.noun, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(acc.action, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(acc.count, 3u);

  const std::vector<SamplePrediction> unknown = {pred("zzz", {1, 0}, {1, 0})};
  EXPECT_THROW(evaluate(unknown, truth), DataError);
}

TEST(Evaluate, FilterRecoversSeenAction) {
  GroundTruth truth;
  truth.labels = {{"a", {0, 1}}};
  CoOccurrenceMatrix m(2, 2);
  m.add(0, 1);
  m.add(1, 1);
  const std::vector<SamplePrediction> p = {pred("a", {0.5, 0.5}, {0.6, 0.4})};
  EXPECT_EQ(evaluate(p, truth).action, 0.0);
  EXPECT_EQ(evaluate(p, truth, &m, 0.01).action, 1.0);
  EXPECT_EQ(evaluate(p, truth, &m, 1.0).action, 0.0);
}

TEST(PredictionsFile, RoundTripIsExact) {
  Rng rng(4);
  std::vector<SamplePrediction> s;
  for (int i = 0; i < 20; ++i) s.push_back({"s" + std::to_string(i), testing::random_simplex(12, rng), testing::random_simplex(16, rng)});
  const auto p = std::filesystem::temp_directory_path() / "mixseq_predictions.txt";
  write_predictions(s, p);
  const auto back = read_predictions(p);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].sample_id, s[i].sample_id);
    EXPECT_TRUE(back[i].verb == s[i].verb);
    EXPECT_TRUE(back[i].noun == s[i].noun);
  }
}

}  // namespace
}  // namespace mixseq
