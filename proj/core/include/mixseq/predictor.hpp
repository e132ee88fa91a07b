#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mixseq/autodiff.hpp"
#include "mixseq/checkpoint.hpp"
#include "mixseq/config.hpp"
#include "mixseq/mixer.hpp"
#include "mixseq/nn.hpp"
#include "mixseq/refine.hpp"

namespace mixseq {

// Outputs of the sequence predictor for one window.
struct PredictionBundle {
  Eigen::VectorXd central_verb;   // V, from the verb token
  Eigen::VectorXd central_noun;   // N, from the noun token
  Eigen::MatrixXd position_verb;  // w x V
  Eigen::MatrixXd position_noun;  // w x N
  Eigen::MatrixXd domain_logits;  // w x 2 (source, target)
};

struct LossTerms {
  double central = 0;
  double ms = 0;
  double dc = 0;
  double total = 0;
};

// Transformer over a window of fused action features. The w projected
// actions are followed by a verb token and a noun token; learned positional
// embeddings cover all w + 2 rows. Both heads are shared between the tokens
// and the per-position rows. A domain classifier reads the projected action
// embeddings, before positions are added, through a gradient reversal layer.
class SequencePredictor {
 public:
  static constexpr const char* kCheckpointKind = "sequence_predictor";

  SequencePredictor(const PipelineConfig& config, Rng& init_rng);
  static SequencePredictor from_checkpoint(const Checkpoint& checkpoint);
  static SequencePredictor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const PipelineConfig& config() const { return config_; }
  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }
  int window_size() const { return config_.window_size; }

  // Mean over clips per modality, concatenated in configured modality order.
  // Throws DataError when a modality is missing or mis-shaped.
  Eigen::VectorXd fuse_clips(const ActionSample& sample) const;
  // fuse_clips followed by the input projection to embed_dim.
  Eigen::VectorXd aggregate_clips(const ActionSample& sample) const;

  struct GraphOutputs {
    ad::Var verb_logits;    // B*w position rows, then B central rows
    ad::Var noun_logits;    // same layout
    ad::Var domain_logits;  // B*w rows
    int batch = 0;
    int window = 0;
  };
  GraphOutputs build(ad::Graph& graph, std::span<const Window* const> windows, double grl_lambda) const;

  std::vector<PredictionBundle> predict(std::span<const Window> windows, int batch_size = 64) const;
  PredictionBundle forward(const Window& window) const;

 private:
  SequencePredictor() = default;
  void build_layout(Rng* rng);

  PipelineConfig config_;
  ad::ParameterStore params_;
  nn::Linear input_proj_;
  std::size_t tokens_ = 0;     // 2 x D
  std::size_t positions_ = 0;  // (w + 2) x D
  nn::TransformerEncoder encoder_;
  nn::Linear verb_head_;
  nn::Linear noun_head_;
  nn::Linear domain_hidden_;
  nn::Linear domain_out_;
};

// Reference loss for one realized window (no graph). Labels must be present
// at every position. Weights come from the config's loss multipliers.
LossTerms compute_losses(const PredictionBundle& bundle, const Window& window,
                         const PipelineConfig& config);

// Batched training objective; rows of unlabeled windows contribute only to
// the domain term. `parts` receives the unweighted batch means.
ad::Var training_loss(ad::Graph& graph, const SequencePredictor::GraphOutputs& out,
                      std::span<const Window* const> windows, const PipelineConfig& config,
                      LossTerms* parts = nullptr);

struct EpochRecord {
  int epoch = 0;
  LossTerms loss;
  std::optional<Accuracy> validation;
  MixStats mixing;
  std::size_t pseudo_pool = 0;
};

struct TrainOptions {
  int epochs = 0;                                // 0: config.epochs
  const Dataset* target = nullptr;               // pseudo refresh, target windows, validation
  const GroundTruth* validation_truth = nullptr;  // reporting only
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  SequencePredictor model;
  std::vector<EpochRecord> history;
};

// SGD over freshly mixed source windows each epoch. Deterministic in
// config.seed. Throws DivergenceError on a non-finite loss.
TrainResult train(const Dataset& source, const TargetPool& pool, const PipelineConfig& config,
                  const TrainOptions& options = {});

// Source-only model used for pseudo-labeling: no mixing, no domain loss,
// pretrain_epochs epochs.
TrainResult pretrain(const Dataset& source, const PipelineConfig& config, const TrainOptions& options = {});

// Central-token predictions for every sample of `dataset`, in window order.
std::vector<SamplePrediction> central_predictions(const SequencePredictor& model, const Dataset& dataset);

// Line-delimited JSON, one record per epoch.
void write_training_metrics(std::span<const EpochRecord> history, const std::filesystem::path& path);

}  // namespace mixseq
