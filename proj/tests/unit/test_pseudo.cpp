#include <filesystem>

#include <gtest/gtest.h>

#include "mixseq/error.hpp"
#include "mixseq/pseudo.hpp"
#include "support.hpp"

namespace mixseq {
namespace {

SamplePrediction pred(std::string id, std::vector<double> verb, std::vector<double> noun) {
  SamplePrediction p;
  p.sample_id = std::move(id);
  p.verb = Eigen::Map<Eigen::VectorXd>(verb.data(), static_cast<Eigen::Index>(verb.size()));
  p.noun = Eigen::Map<Eigen::VectorXd>(noun.data(), static_cast<Eigen::Index>(noun.size()));
  return p;
}

TEST(PseudoLabel, ConfidenceIsMeanOfTopProbabilities) {
  const std::vector<SamplePrediction> preds = {pred("a", {0.9, 0.1}, {0.3, 0.7}),
                                               pred("b", {0.6, 0.4}, {0.4, 0.6})};
  const auto kept = pseudo_label(preds, 0.75);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].sample_id, "a");
  EXPECT_EQ(kept[0].verb, 0);
  EXPECT_EQ(kept[0].noun, 1);
  EXPECT_NEAR(kept[0].confidence, 0.8, 1e-12);
}

TEST(PseudoLabel, LambdaZeroKeepsEverySample) {
  Rng rng(4);
  std::vector<SamplePrediction> preds;
  for (int i = 0; i < 50; ++i) {
    preds.push_back({"s" + std::to_string(i), testing::random_simplex(5, rng), testing::random_simplex(7, rng)});
  }
  EXPECT_EQ(pseudo_label(preds, 0.0).size(), preds.size());
}

TEST(PseudoLabel, KeptSetShrinksAsLambdaGrows) {
  Rng rng(5);
  std::vector<SamplePrediction> preds;
  for (int i = 0; i < 200; ++i) {
    preds.push_back({"s" + std::to_string(i), testing::random_simplex(4, rng), testing::random_simplex(4, rng)});
  }
  std::size_t previous = preds.size() + 1;
  for (double lambda = 0; lambda <= 1.0; lambda += 0.05) {
    const auto kept = pseudo_label(preds, lambda);
    EXPECT_LE(kept.size(), previous);
    for (const auto& k : kept) EXPECT_GE(k.confidence, lambda);
    previous = kept.size();
  }
}

TEST(PseudoLabel, RejectsUnnormalizedAndEmptyInput) {
  const std::vector<SamplePrediction> bad = {pred("x", {0.5, 0.6}, {0.5, 0.5})};
  EXPECT_THROW(pseudo_label(bad, 0.5), DataError);
  const std::vector<SamplePrediction> negative = {pred("x", {1.2, -0.2}, {0.5, 0.5})};
  EXPECT_THROW(pseudo_label(negative, 0.5), DataError);
  EXPECT_THROW(pseudo_label({}, 0.5), DataError);
}

TEST(PseudoLabel, FileRoundTrip) {
  const std::vector<PseudoLabel> labels = {{"t_1", 3, 5, 0.8125}, {"t_2", 0, 0, 1.0 / 3.0}};
  const auto p = std::filesystem::temp_directory_path() / "mixseq_pseudo.tsv";
  write_pseudo_labels(labels, p);
  EXPECT_EQ(read_pseudo_labels(p), labels);
}

}  // namespace
}  // namespace mixseq
