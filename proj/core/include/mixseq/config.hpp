#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixseq/types.hpp"

namespace mixseq {

// Every tunable constant of the pipeline. Defaults: window 5, threshold
// 0.75, one replacement, beta 0.25, top-5 candidates, 0.01 down-weighting,
// SGD at 0.005 for 100 epochs.
struct PipelineConfig {
  // synthetic corpus
  int num_verbs = 12;
  int num_nouns = 16;
  int num_actions = 24;
  int videos_per_domain = 200;
  int actions_per_video = 30;
  std::vector<ModalitySpec> modalities = {
      {"rgb", 4, 32}, {"flow", 4, 32}, {"audio", 4, 32}};
  int transition_successors = 2;
  double transition_smoothing = 0.02;
  double class_separation = 0.08;
  double shift_magnitude = 3.0;
  double shift_shared_fraction = 0.5;
  double noise_scale = 1.0;
  std::int64_t corpus_seed = 1;

  // pipeline
  std::int64_t seed = 7;
  int window_size = 5;
  double lambda_threshold = 0.75;
  int num_replacements = 1;
  bool use_mixing = true;
  bool use_domain_classifier = true;
  bool use_lm = true;
  bool use_cooccurrence = true;
  int pseudo_refresh_epochs = 0;
  bool feed_target_windows = false;

  // sequence predictor
  int embed_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ff_multiplier = 4;
  int domain_hidden = 64;
  double init_std = 0.02;
  double layer_norm_eps = 1e-5;
  double learning_rate = 0.005;
  double momentum = 0.0;
  double weight_decay = 0.0;
  int batch_size = 8;
  int epochs = 100;
  int pretrain_epochs = 100;
  double grl_lambda = 1.0;
  double central_loss_weight = 1.0;
  double ms_loss_weight = 1.0;
  double dc_loss_weight = 1.0;
  int validate_every = 10;

  // masked label language model
  int lm_embed_dim = 32;
  int lm_layers = 1;
  int lm_heads = 2;
  int lm_ff_multiplier = 4;
  double learning_rate_lm = 0.001;
  int lm_epochs = 100;
  int lm_batch_size = 32;
  double lm_mask_prob = 0.25;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // inference refinement
  double beta = 0.25;
  int top_k = 5;
  std::int64_t enumeration_cap = 1000000;
  double cooccurrence_factor = 0.01;

  // ablation grid
  std::vector<std::int64_t> ablate_seeds = {1, 2, 3};
  std::vector<std::int64_t> ablate_windows = {1, 3, 5};
  std::vector<std::int64_t> ablate_replacements = {0, 1, 2, 3};
  std::vector<std::string> ablate_tables = {"components", "window", "replacements"};
  bool ablate_sweep_lm = false;

  // Replacements actually applied during training.
  int effective_replacements() const { return use_mixing ? num_replacements : 0; }
  // Weight actually applied to the domain classification loss.
  double effective_dc_weight() const { return use_domain_classifier ? dc_loss_weight : 0.0; }
  int ff_dim() const { return ff_multiplier * embed_dim; }
  int fused_input_dim() const;

  bool operator==(const PipelineConfig&) const = default;
};

enum class FieldType { kInt, kReal, kBool, kString, kIntList, kStringList, kModalities };

// Schema entry for one config key. The CLI generates its flags and help text
// from this table, and the file format uses `key` verbatim.
struct ConfigField {
  std::string key;
  FieldType type;
  std::string help;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;  // throws ConfigError

  // MIXSEQ_<KEY>, upper-cased.
  std::string env_name() const;
};

std::span<const ConfigField> config_schema();
const ConfigField* find_config_field(std::string_view key);

inline constexpr std::string_view kEnvPrefix = "MIXSEQ_";

// Throws ConfigError naming the first violated field.
void validate(const PipelineConfig& config);

// Parses `key = value` lines; '#' starts a comment. Unknown keys, malformed
// lines and invalid values raise ConfigError. Missing keys keep defaults.
PipelineConfig parse_config(std::string_view text);
std::string serialize_config(const PipelineConfig& config);

// Reads, parses and validates. Throws Error when the file cannot be read.
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& config, const std::filesystem::path& path);

// Applies MIXSEQ_<KEY> overrides found through `lookup` (getenv by default).
void apply_env_overrides(
    PipelineConfig& config,
    const std::function<const char*(const char*)>& lookup = nullptr);

// Sets one key from its textual form; throws ConfigError.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);

}  // namespace mixseq
