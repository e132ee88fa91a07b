#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mixseq/autodiff.hpp"
#include "mixseq/config.hpp"

namespace mixseq {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Versioned container shared by predictor and language-model checkpoints:
// kind tag, config snapshot, then named parameter blocks with their shapes.
struct Checkpoint {
  std::string kind;
  PipelineConfig config;
  ad::ParameterStore parameters;
};

void write_checkpoint(const std::filesystem::path& path, const std::string& kind,
                      const PipelineConfig& config, const ad::ParameterStore& parameters);
// Throws DataError on a bad magic, version, shape, checksum or when
// `expected_kind` is non-empty and differs.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind = "");

}  // namespace mixseq
