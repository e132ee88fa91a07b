#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mixseq/types.hpp"

namespace mixseq {

// Confidence is the mean of the top verb and top noun probabilities. Samples
// with confidence >= lambda keep their argmax labels; the rest are dropped.
// Throws DataError for empty input or vectors that do not sum to 1 (1e-6).
std::vector<PseudoLabel> pseudo_label(std::span<const SamplePrediction> predictions, double lambda);

// Tab-separated: sample_id, verb, noun, confidence (round-trip precision).
void write_pseudo_labels(std::span<const PseudoLabel> labels, const std::filesystem::path& path);
std::vector<PseudoLabel> read_pseudo_labels(const std::filesystem::path& path);

}  // namespace mixseq
