#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mixseq/config.hpp"
#include "mixseq/corpus.hpp"
#include "mixseq/lm.hpp"
#include "mixseq/mixer.hpp"
#include "mixseq/predictor.hpp"

namespace mixseq::testing {

// D=8, w=3, one layer, V=N=4 and a two-modality corpus of a few videos.
PipelineConfig tiny_config();

Eigen::VectorXd random_simplex(int n, Rng& rng);

// Hand-built labeled source dataset: one video per entry of `videos`, each
// a list of (verb, noun) labels, features filled from `rng`.
Dataset make_dataset(const PipelineConfig& config, const std::vector<std::vector<Action>>& videos, Domain domain,
                     Rng& rng);

struct BlockError {
  std::string name;
  double relative = 0;  // ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
  double analytic_norm = 0;
};

struct GradCheckResult {
  std::vector<BlockError> blocks;
  double max_relative = 0;
  std::size_t scalars = 0;
};

// Compares the tape gradient of a scalar objective with central differences
// over every scalar of `store`. `objective` evaluates the loss and receives
// the index of the block being perturbed; `analytic` fills store gradients
// for the current values.
GradCheckResult finite_difference_check(ad::ParameterStore& store, const std::function<double(std::size_t)>& objective,
                                        const std::function<void()>& analytic, double step = 1e-5);

// Full predictor objective on mixed windows (central + MS + DC through the
// GRL). The numeric oracle differentiates L_central + L_MS directly and
// L_DC with the gradient-reversal factor applied to every parameter that
// feeds the reversal layer.
GradCheckResult check_predictor_gradients(const PipelineConfig& config, double grl_lambda, std::uint64_t seed);

// Independent enumerator: every candidate sequence scored by score_sequence,
// first maximum in odometer order.
struct BruteForce {
  std::vector<Action> best;
  double score = 0;
  std::int64_t count = 0;
};
BruteForce brute_force_rescore(const MaskedLabelModel& lm, const std::vector<std::vector<Candidate>>& candidates);

// LM masked accuracy on held-out videos of the grammar the config describes:
// train on one draw of videos, evaluate on an independent draw.
struct LmHeldOut {
  double accuracy = 0;
  double chance = 0;  // 1 / |action_set|
};
LmHeldOut lm_heldout_accuracy(const PipelineConfig& config, std::uint64_t mask_seed = 5);

}  // namespace mixseq::testing
