#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mixseq/config.hpp"
#include "mixseq/rng.hpp"
#include "mixseq/types.hpp"

namespace mixseq {

using Action = std::pair<int, int>;  // (verb, noun)

// Parameters of the synthetic two-domain corpus. Label sequences are Markov
// walks over `action_set` with a transition matrix shared by both domains;
// only the class-conditional feature means move between domains.
struct GrammarSpec {
  int num_verbs = 0;
  int num_nouns = 0;
  std::vector<Action> action_set;
  Eigen::MatrixXd transition;  // row-stochastic, |action_set| square
  int videos_per_domain = 0;
  int actions_per_video = 0;
  std::vector<ModalitySpec> modalities;
  double class_separation = 1.0;
  double shift_magnitude = 0.0;
  double shift_shared_fraction = 0.0;
  double noise_scale = 1.0;

  // Throws DataError naming the violated property.
  void validate() const;
};

// Draws an action set and transition matrix from the corpus keys of `config`.
// With transition_successors == 1 and zero smoothing the successor map is a
// permutation, so every action determines both its successor and predecessor.
GrammarSpec make_grammar(const PipelineConfig& config, Rng& rng);

struct GeneratedCorpus {
  Dataset source;
  Dataset target;             // unlabeled
  GroundTruth target_truth;   // evaluation only
};

GeneratedCorpus generate_corpus(const GrammarSpec& spec, Rng& rng);

// Binary dataset container; see README for the byte layout.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);

// `expected` lists the modalities the caller requires; a missing one raises
// DataError naming it.
Dataset read_dataset(const std::filesystem::path& path,
                     std::span<const ModalitySpec> expected = {});

void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth read_ground_truth(const std::filesystem::path& path);

// CRC-32 over every feature value of every sample, in sample order.
std::uint32_t feature_checksum(const Dataset& dataset);

}  // namespace mixseq
