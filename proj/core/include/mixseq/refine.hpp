#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mixseq/corpus.hpp"
#include "mixseq/types.hpp"

namespace mixseq {

// Verb x noun counts of the labeled source samples.
class CoOccurrenceMatrix {
 public:
  CoOccurrenceMatrix() = default;
  CoOccurrenceMatrix(int num_verbs, int num_nouns);

  // Throws DataError on an unlabeled sample.
  static CoOccurrenceMatrix build(const Dataset& source);

  long count(int verb, int noun) const { return counts_(verb, noun); }
  bool seen(int verb, int noun) const { return counts_(verb, noun) > 0; }
  long total() const { return counts_.sum(); }
  int nonzeros() const;
  int num_verbs() const { return static_cast<int>(counts_.rows()); }
  int num_nouns() const { return static_cast<int>(counts_.cols()); }
  // Seen pairs in row-major order.
  std::vector<Action> support() const;
  const Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }
  void add(int verb, int noun) { ++counts_(verb, noun); }

 private:
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

// A[i][j] = verb[i] * noun[j].
Eigen::MatrixXd action_scores(const Eigen::VectorXd& verb, const Eigen::VectorXd& noun);

// Outer product with every unseen pair multiplied by `factor`. Scores are
// left unnormalized; only their argmax is consumed.
Eigen::MatrixXd cooccurrence_filter(const Eigen::VectorXd& verb, const Eigen::VectorXd& noun,
                                    const CoOccurrenceMatrix& matrix, double factor);

// Row-major first maximum.
Action action_argmax(const Eigen::MatrixXd& scores);

// Weighted mean of several prediction sets over the same samples (matched by
// id; output follows the first set's order). Uniform weights when empty.
std::vector<SamplePrediction> ensemble(std::span<const std::vector<SamplePrediction>> sets,
                                       std::span<const double> weights = {});

struct Accuracy {
  double verb = 0;
  double noun = 0;
  double action = 0;
  std::size_t count = 0;
};

// Top-1 accuracies. Verb and noun use the marginal argmax; the action is the
// argmax of the joint scores, filtered through `filter` when given.
Accuracy evaluate(std::span<const SamplePrediction> predictions, const GroundTruth& truth,
                  const CoOccurrenceMatrix* filter = nullptr, double factor = 1.0);

// One line per sample: id, then space-separated verb and noun probabilities.
void write_predictions(std::span<const SamplePrediction> predictions, const std::filesystem::path& path);
std::vector<SamplePrediction> read_predictions(const std::filesystem::path& path);

}  // namespace mixseq
