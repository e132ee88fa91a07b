#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mixseq/autodiff.hpp"
#include "mixseq/checkpoint.hpp"
#include "mixseq/config.hpp"
#include "mixseq/corpus.hpp"
#include "mixseq/nn.hpp"
#include "mixseq/predictor.hpp"

namespace mixseq {

// w (verb, noun) labels with a set of masked positions.
struct LabelSequence {
  std::vector<Action> actions;
  std::vector<int> mask;  // sorted, unique

  int size() const { return static_cast<int>(actions.size()); }
  bool masked(int position) const;
  // Throws DataError on labels outside the vocabulary or a bad mask.
  void validate(int num_verbs, int num_nouns) const;
};

// Label sequences of every source window, unmasked. Throws DataError on an
// empty or unlabeled dataset.
std::vector<LabelSequence> label_sequences(const Dataset& dataset, int w);

// Each position masked independently with probability p; at least one.
std::vector<int> draw_mask(int w, double p, Rng& rng);

// Masked label model: verb and noun embeddings are summed per position, with
// one extra mask row in each table, and learned positional embeddings are
// added before the shared encoder substrate.
class MaskedLabelModel {
 public:
  static constexpr const char* kCheckpointKind = "label_lm";

  MaskedLabelModel(const PipelineConfig& config, Rng& init_rng);
  static MaskedLabelModel from_checkpoint(const Checkpoint& checkpoint);
  static MaskedLabelModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const PipelineConfig& config() const { return config_; }
  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }
  int window_size() const { return config_.window_size; }
  int num_verbs() const { return config_.num_verbs; }
  int num_nouns() const { return config_.num_nouns; }

  struct GraphOutputs {
    ad::Var verb_logits;  // B*w rows
    ad::Var noun_logits;
    int batch = 0;
    int window = 0;
  };
  GraphOutputs build(ad::Graph& graph, std::span<const LabelSequence> sequences) const;

  // Log-probabilities at every position of every sequence (B*w rows).
  void log_probs(std::span<const LabelSequence> sequences, ad::Matrix* verb, ad::Matrix* noun) const;
  // Only row positions[b] of sequence b (B rows).
  void log_probs_at(std::span<const LabelSequence> sequences, std::span<const int> positions, ad::Matrix* verb,
                    ad::Matrix* noun) const;

 private:
  MaskedLabelModel() = default;
  void build_layout(Rng* rng);
  ad::Matrix embed(std::span<const LabelSequence> sequences) const;
  void heads(const ad::Matrix& z, ad::Matrix* verb, ad::Matrix* noun) const;

  PipelineConfig config_;
  ad::ParameterStore params_;
  std::size_t verb_embed_ = 0;  // (V + 1) x D
  std::size_t noun_embed_ = 0;  // (N + 1) x D
  std::size_t positions_ = 0;   // w x D
  nn::TransformerEncoder encoder_;
  nn::Linear verb_head_;
  nn::Linear noun_head_;
};

// Mean cross-entropy of verb and noun over masked positions only. A batch
// without masked positions yields exactly 0.
ad::Var lm_loss(ad::Graph& graph, const MaskedLabelModel::GraphOutputs& out,
                std::span<const LabelSequence> sequences);

struct LmTrainResult {
  MaskedLabelModel model;
  std::vector<double> epoch_losses;
};

// Adam over `sequences`; masks are redrawn every epoch and the sequences'
// own masks are ignored. Throws DataError on an empty corpus.
LmTrainResult lm_train(std::span<const LabelSequence> sequences, const PipelineConfig& config,
                       const std::function<void(int, double)>& on_epoch = {});

struct SequenceScore {
  double score = 0;               // pseudo-log-likelihood
  Eigen::VectorXd center_verb;    // center masked
  Eigen::VectorXd center_noun;
  Eigen::MatrixXd position_verb;  // row i: position i masked
  Eigen::MatrixXd position_noun;
};

// Sum over positions of log p(verb_i) + log p(noun_i) with position i
// masked. Throws DataError on out-of-vocabulary labels.
SequenceScore score_sequence(const MaskedLabelModel& model, std::span<const Action> actions);

// Fraction of masked positions whose best action among `candidates`
// (verb log-prob + noun log-prob) is the true one.
double masked_accuracy(const MaskedLabelModel& model, std::span<const LabelSequence> sequences,
                       std::span<const Action> candidates);

struct Candidate {
  Action action;
  double probability = 0;
};

// Per position, the k most probable (verb, noun) pairs by verb x noun
// probability, restricted to `support` unless it holds fewer than k pairs.
// The center row uses the central token distributions. Ties go to the
// lower row-major index.
std::vector<std::vector<Candidate>> top_k_candidates(const PredictionBundle& bundle, int k,
                                                     std::span<const Action> support);

// (1 - beta) * ms + beta * lm, returning ms or lm unchanged at the endpoints.
Eigen::VectorXd fuse(const Eigen::VectorXd& ms, const Eigen::VectorXd& lm, double beta);

struct RescoreResult {
  std::vector<Action> best;
  double score = 0;
  std::int64_t enumerated = 0;
  Eigen::VectorXd lm_verb;
  Eigen::VectorXd lm_noun;
  Eigen::VectorXd verb;  // fused
  Eigen::VectorXd noun;
};

// Full enumeration of candidate sequences scored by pseudo-log-likelihood.
// Conditionals are memoized on (position, context) across calls; the memo
// is dropped whenever it grows past `cache_limit` entries.
class Rescorer {
 public:
  Rescorer(const MaskedLabelModel& model, int top_k, double beta, std::int64_t enumeration_cap,
           std::size_t cache_limit = 1u << 18);

  RescoreResult rescore(const PredictionBundle& bundle, std::span<const Action> support);
  // Sequences are visited in odometer order (last position fastest); the
  // first maximum wins. Throws ConfigError when the product of the list
  // sizes exceeds the enumeration cap.
  RescoreResult rescore(std::span<const std::vector<Candidate>> candidates, const Eigen::VectorXd& ms_verb,
                        const Eigen::VectorXd& ms_noun);

  std::size_t cache_size() const { return cache_.size(); }
  std::int64_t forwards() const { return forwards_; }

 private:
  const MaskedLabelModel* model_;
  int top_k_;
  double beta_;
  std::int64_t cap_;
  std::size_t cache_limit_;
  std::unordered_map<std::string, std::vector<double>> cache_;  // V + N log-probs
  std::int64_t forwards_ = 0;
};

// Rescored central predictions for every window of `dataset`.
std::vector<SamplePrediction> rescore_predictions(const SequencePredictor& predictor, const MaskedLabelModel& lm,
                                                  const Dataset& dataset, std::span<const Action> support,
                                                  const PipelineConfig& config);

}  // namespace mixseq
