#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mixseq {

enum class Domain : std::uint8_t { kSource = 0, kTarget = 1 };

const char* to_string(Domain d);

struct ModalitySpec {
  std::string name;
  int clip_count = 0;
  int feature_dim = 0;

  bool operator==(const ModalitySpec&) const = default;
};

// clip_count x feature_dim, stored as 32-bit floats like the on-disk format.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One action clip with per-modality clip features.
struct ActionSample {
  std::string sample_id;
  std::string video_id;
  int position_index = 0;
  Domain domain = Domain::kSource;
  std::map<std::string, FeatureMatrix> features;
  std::optional<int> verb_label;
  std::optional<int> noun_label;

  bool operator==(const ActionSample& other) const;
};

// A single-domain collection of samples sharing one modality layout.
struct Dataset {
  Domain domain = Domain::kSource;
  int num_verbs = 0;
  int num_nouns = 0;
  std::vector<ModalitySpec> modalities;
  std::vector<ActionSample> samples;

  // Throws DataError on any invariant violation (label presence per domain,
  // feature shapes, unique positions within a video).
  void validate() const;

  // Sum of feature dims over modalities, i.e. the fused input width.
  int fused_dim() const;

  bool operator==(const Dataset&) const = default;
};

// Evaluation-only labels for target samples, kept out of Dataset.
struct GroundTruth {
  std::unordered_map<std::string, std::pair<int, int>> labels;  // id -> (verb, noun)

  const std::pair<int, int>& at(const std::string& sample_id) const;
};

struct PseudoLabel {
  std::string sample_id;
  int verb = 0;
  int noun = 0;
  double confidence = 0.0;

  bool operator==(const PseudoLabel&) const = default;
};

// Central verb/noun distributions predicted for one sample.
struct SamplePrediction {
  std::string sample_id;
  Eigen::VectorXd verb;
  Eigen::VectorXd noun;
};

// Index of the largest entry; ties resolve to the lowest index.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace mixseq
