#include "mixseq/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "mixseq/error.hpp"

namespace mixseq {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  if (trim(s).empty()) return parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::int64_t parse_int(std::string_view key, std::string_view text) {
  text = trim(text);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key), "expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

double parse_real(std::string_view key, std::string_view text) {
  text = trim(text);
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(std::string(key), "expected a real number, got '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(std::string(key), "expected true/false, got '" + std::string(text) + "'");
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<ModalitySpec> parse_modalities(std::string_view key, std::string_view text) {
  std::vector<ModalitySpec> out;
  for (auto item : split(text, ',')) {
    auto parts = split(item, ':');
    if (parts.size() != 3 || parts[0].empty()) {
      throw ConfigError(std::string(key),
                        "expected name:clips:dim entries, got '" + std::string(item) + "'");
    }
    out.push_back({std::string(parts[0]), static_cast<int>(parse_int(key, parts[1])),
                   static_cast<int>(parse_int(key, parts[2]))});
  }
  return out;
}

std::string format_modalities(const std::vector<ModalitySpec>& mods) {
  std::string s;
  for (std::size_t i = 0; i < mods.size(); ++i) {
    if (i) s += ',';
    s += mods[i].name + ':' + std::to_string(mods[i].clip_count) + ':' +
         std::to_string(mods[i].feature_dim);
  }
  return s;
}

template <typename T>
ConfigField make_field(std::string key, std::string help, T PipelineConfig::*member) {
  ConfigField f;
  f.key = key;
  f.help = std::move(help);
  if constexpr (std::is_same_v<T, bool>) {
    f.type = FieldType::kBool;
    f.get = [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); };
    f.set = [member, key](PipelineConfig& c, std::string_view v) { c.*member = parse_bool(key, v); };
  } else if constexpr (std::is_integral_v<T>) {
    f.type = FieldType::kInt;
    f.get = [member](const PipelineConfig& c) { return std::to_string(c.*member); };
    f.set = [member, key](PipelineConfig& c, std::string_view v) {
      auto parsed = parse_int(key, v);
      if (parsed < std::numeric_limits<T>::min() || parsed > std::numeric_limits<T>::max()) {
        throw ConfigError(key, "integer out of range");
      }
      c.*member = static_cast<T>(parsed);
    };
  } else if constexpr (std::is_same_v<T, double>) {
    f.type = FieldType::kReal;
    f.get = [member](const PipelineConfig& c) { return format_real(c.*member); };
    f.set = [member, key](PipelineConfig& c, std::string_view v) { c.*member = parse_real(key, v); };
  } else if constexpr (std::is_same_v<T, std::vector<std::int64_t>>) {
    f.type = FieldType::kIntList;
    f.get = [member](const PipelineConfig& c) {
      std::string s;
      for (std::size_t i = 0; i < (c.*member).size(); ++i) {
        if (i) s += ',';
        s += std::to_string((c.*member)[i]);
      }
      return s;
    };
    f.set = [member, key](PipelineConfig& c, std::string_view v) {
      std::vector<std::int64_t> out;
      for (auto part : split(v, ',')) out.push_back(parse_int(key, part));
      c.*member = std::move(out);
    };
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    f.type = FieldType::kStringList;
    f.get = [member](const PipelineConfig& c) {
      std::string s;
      for (std::size_t i = 0; i < (c.*member).size(); ++i) {
        if (i) s += ',';
        s += (c.*member)[i];
      }
      return s;
    };
    f.set = [member](PipelineConfig& c, std::string_view v) {
      std::vector<std::string> out;
      for (auto part : split(v, ',')) out.emplace_back(part);
      c.*member = std::move(out);
    };
  } else if constexpr (std::is_same_v<T, std::vector<ModalitySpec>>) {
    f.type = FieldType::kModalities;
    f.get = [member](const PipelineConfig& c) { return format_modalities(c.*member); };
    f.set = [member, key](PipelineConfig& c, std::string_view v) {
      c.*member = parse_modalities(key, v);
    };
  } else {
    static_assert(sizeof(T) == 0, "unsupported config field type");
  }
  return f;
}

std::vector<ConfigField> build_schema() {
  using C = PipelineConfig;
  std::vector<ConfigField> s;
  s.push_back(make_field("num_verbs", "verb vocabulary size V", &C::num_verbs));
  s.push_back(make_field("num_nouns", "noun vocabulary size N", &C::num_nouns));
  s.push_back(make_field("num_actions", "number of (verb, noun) pairs in the grammar", &C::num_actions));
  s.push_back(make_field("videos_per_domain", "videos generated per domain", &C::videos_per_domain));
  s.push_back(make_field("actions_per_video", "actions per generated video", &C::actions_per_video));
  s.push_back(make_field("modalities", "comma list of name:clips:dim", &C::modalities));
  s.push_back(make_field("transition_successors", "likely successors per action (1 = deterministic chain)", &C::transition_successors));
  s.push_back(make_field("transition_smoothing", "probability mass spread uniformly over all actions", &C::transition_smoothing));
  s.push_back(make_field("class_separation", "std of per-verb and per-noun feature means", &C::class_separation));
  s.push_back(make_field("shift_magnitude", "distance between source and target class means", &C::shift_magnitude));
  s.push_back(make_field("shift_shared_fraction", "weight of the class-independent shift direction", &C::shift_shared_fraction));
  s.push_back(make_field("noise_scale", "per-clip feature noise std", &C::noise_scale));
  s.push_back(make_field("corpus_seed", "seed of the synthetic corpus", &C::corpus_seed));

  s.push_back(make_field("seed", "seed of every training and mixing stream", &C::seed));
  s.push_back(make_field("window_size", "temporal window w (odd)", &C::window_size));
  s.push_back(make_field("lambda_threshold", "pseudo-label confidence threshold", &C::lambda_threshold));
  s.push_back(make_field("num_replacements", "target replacements per source window", &C::num_replacements));
  s.push_back(make_field("use_mixing", "mix target samples into source windows", &C::use_mixing));
  s.push_back(make_field("use_domain_classifier", "train the adversarial domain classifier", &C::use_domain_classifier));
  s.push_back(make_field("use_lm", "rescore with the label language model at inference", &C::use_lm));
  s.push_back(make_field("use_cooccurrence", "down-weight unseen verb/noun pairs at inference", &C::use_cooccurrence));
  s.push_back(make_field("pseudo_refresh_epochs", "recompute pseudo-labels every R epochs (0 = never)", &C::pseudo_refresh_epochs));
  s.push_back(make_field("feed_target_windows", "also feed pure target windows for the domain loss", &C::feed_target_windows));

  s.push_back(make_field("embed_dim", "model width D", &C::embed_dim));
  s.push_back(make_field("num_layers", "transformer encoder layers", &C::num_layers));
  s.push_back(make_field("num_heads", "attention heads", &C::num_heads));
  s.push_back(make_field("ff_multiplier", "feed-forward width as a multiple of D", &C::ff_multiplier));
  s.push_back(make_field("domain_hidden", "hidden width of the domain classifier", &C::domain_hidden));
  s.push_back(make_field("init_std", "std of weight initialization", &C::init_std));
  s.push_back(make_field("layer_norm_eps", "layer normalization epsilon", &C::layer_norm_eps));
  s.push_back(make_field("learning_rate", "SGD learning rate of the sequence predictor", &C::learning_rate));
  s.push_back(make_field("momentum", "SGD momentum", &C::momentum));
  s.push_back(make_field("weight_decay", "SGD L2 weight decay", &C::weight_decay));
  s.push_back(make_field("batch_size", "windows per SGD step", &C::batch_size));
  s.push_back(make_field("epochs", "training epochs of the mixed-sequence model", &C::epochs));
  s.push_back(make_field("pretrain_epochs", "epochs of the source-only pseudo-labeling model", &C::pretrain_epochs));
  s.push_back(make_field("grl_lambda", "gradient reversal scale", &C::grl_lambda));
  s.push_back(make_field("central_loss_weight", "weight of the central-action loss", &C::central_loss_weight));
  s.push_back(make_field("ms_loss_weight", "weight of the mixed sequence loss", &C::ms_loss_weight));
  s.push_back(make_field("dc_loss_weight", "weight of the domain classification loss", &C::dc_loss_weight));
  s.push_back(make_field("validate_every", "validation interval in epochs (0 = final epoch only)", &C::validate_every));

  s.push_back(make_field("lm_embed_dim", "language model width", &C::lm_embed_dim));
  s.push_back(make_field("lm_layers", "language model encoder layers", &C::lm_layers));
  s.push_back(make_field("lm_heads", "language model attention heads", &C::lm_heads));
  s.push_back(make_field("lm_ff_multiplier", "language model feed-forward multiple", &C::lm_ff_multiplier));
  s.push_back(make_field("learning_rate_lm", "Adam learning rate of the language model", &C::learning_rate_lm));
  s.push_back(make_field("lm_epochs", "language model training epochs", &C::lm_epochs));
  s.push_back(make_field("lm_batch_size", "label sequences per Adam step", &C::lm_batch_size));
  s.push_back(make_field("lm_mask_prob", "per-position masking probability", &C::lm_mask_prob));
  s.push_back(make_field("adam_beta1", "Adam first-moment decay", &C::adam_beta1));
  s.push_back(make_field("adam_beta2", "Adam second-moment decay", &C::adam_beta2));
  s.push_back(make_field("adam_eps", "Adam epsilon", &C::adam_eps));

  s.push_back(make_field("beta", "language model fusion weight", &C::beta));
  s.push_back(make_field("top_k", "candidates per position for rescoring", &C::top_k));
  s.push_back(make_field("enumeration_cap", "maximum number of enumerated sequences k^w", &C::enumeration_cap));
  s.push_back(make_field("cooccurrence_factor", "multiplier for unseen verb/noun pairs", &C::cooccurrence_factor));

  s.push_back(make_field("ablate_seeds", "seeds of the ablation grid", &C::ablate_seeds));
  s.push_back(make_field("ablate_windows", "window sizes of the sequence-length table", &C::ablate_windows));
  s.push_back(make_field("ablate_replacements", "replacement counts of the replacement table", &C::ablate_replacements));
  s.push_back(make_field("ablate_tables", "tables to run: components,window,replacements", &C::ablate_tables));
  s.push_back(make_field("ablate_sweep_lm", "apply LM rescoring in the window and replacement tables", &C::ablate_sweep_lm));
  return s;
}

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

int PipelineConfig::fused_input_dim() const {
  int d = 0;
  for (const auto& m : modalities) d += m.feature_dim;
  return d;
}

std::string ConfigField::env_name() const {
  std::string name(kEnvPrefix);
  for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

std::span<const ConfigField> config_schema() {
  static const std::vector<ConfigField> schema = build_schema();
  return schema;
}

const ConfigField* find_config_field(std::string_view key) {
  for (const auto& f : config_schema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  const auto* field = find_config_field(key);
  if (!field) throw ConfigError(std::string(key), "unknown config key");
  field->set(config, value);
}

void validate(const PipelineConfig& c) {
  require(c.num_verbs > 0, "num_verbs", "must be positive");
  require(c.num_nouns > 0, "num_nouns", "must be positive");
  require(c.num_actions > 0 && c.num_actions <= c.num_verbs * c.num_nouns, "num_actions",
          "must be in [1, num_verbs * num_nouns]");
  require(c.videos_per_domain > 0, "videos_per_domain", "must be positive");
  require(c.actions_per_video > 0, "actions_per_video", "must be positive");
  require(!c.modalities.empty(), "modalities", "at least one modality is required");
  for (std::size_t i = 0; i < c.modalities.size(); ++i) {
    const auto& m = c.modalities[i];
    require(m.clip_count > 0 && m.feature_dim > 0, "modalities",
            "clip count and feature dim of '" + m.name + "' must be positive");
    for (std::size_t j = 0; j < i; ++j) {
      require(c.modalities[j].name != m.name, "modalities", "duplicate modality '" + m.name + "'");
    }
  }
  require(c.transition_successors >= 1 && c.transition_successors <= c.num_actions,
          "transition_successors", "must be in [1, num_actions]");
  require(c.transition_smoothing >= 0 && c.transition_smoothing <= 1, "transition_smoothing",
          "must be in [0, 1]");
  require(c.class_separation >= 0, "class_separation", "must be non-negative");
  require(c.shift_magnitude >= 0, "shift_magnitude", "must be non-negative");
  require(c.shift_shared_fraction >= 0 && c.shift_shared_fraction <= 1, "shift_shared_fraction",
          "must be in [0, 1]");
  require(c.noise_scale > 0, "noise_scale", "must be positive");

  require(c.window_size > 0 && c.window_size % 2 == 1, "window_size", "must be an odd positive integer");
  require(c.lambda_threshold >= 0 && c.lambda_threshold <= 1, "lambda_threshold", "must be in [0, 1]");
  require(c.num_replacements >= 0, "num_replacements", "must be non-negative");
  if (c.use_mixing) {
    require(c.num_replacements < c.window_size, "num_replacements",
            "must be smaller than window_size (the central action is never replaced)");
  }
  require(c.pseudo_refresh_epochs >= 0, "pseudo_refresh_epochs", "must be non-negative");

  require(c.embed_dim > 0, "embed_dim", "must be positive");
  require(c.num_layers > 0, "num_layers", "must be positive");
  require(c.num_heads > 0 && c.embed_dim % c.num_heads == 0, "num_heads",
          "must be positive and divide embed_dim");
  require(c.ff_multiplier > 0, "ff_multiplier", "must be positive");
  require(c.domain_hidden > 0, "domain_hidden", "must be positive");
  require(c.init_std > 0, "init_std", "must be positive");
  require(c.layer_norm_eps > 0, "layer_norm_eps", "must be positive");
  require(c.learning_rate > 0, "learning_rate", "must be positive");
  require(c.momentum >= 0 && c.momentum < 1, "momentum", "must be in [0, 1)");
  require(c.weight_decay >= 0, "weight_decay", "must be non-negative");
  require(c.batch_size > 0, "batch_size", "must be positive");
  require(c.epochs > 0, "epochs", "must be positive");
  require(c.pretrain_epochs > 0, "pretrain_epochs", "must be positive");
  require(c.grl_lambda >= 0, "grl_lambda", "must be non-negative");
  require(c.central_loss_weight >= 0, "central_loss_weight", "must be non-negative");
  require(c.ms_loss_weight >= 0, "ms_loss_weight", "must be non-negative");
  require(c.dc_loss_weight >= 0, "dc_loss_weight", "must be non-negative");
  require(c.validate_every >= 0, "validate_every", "must be non-negative");

  require(c.lm_embed_dim > 0, "lm_embed_dim", "must be positive");
  require(c.lm_layers > 0, "lm_layers", "must be positive");
  require(c.lm_heads > 0 && c.lm_embed_dim % c.lm_heads == 0, "lm_heads",
          "must be positive and divide lm_embed_dim");
  require(c.lm_ff_multiplier > 0, "lm_ff_multiplier", "must be positive");
  require(c.learning_rate_lm > 0, "learning_rate_lm", "must be positive");
  require(c.lm_epochs > 0, "lm_epochs", "must be positive");
  require(c.lm_batch_size > 0, "lm_batch_size", "must be positive");
  require(c.lm_mask_prob > 0 && c.lm_mask_prob <= 1, "lm_mask_prob", "must be in (0, 1]");
  require(c.adam_beta1 >= 0 && c.adam_beta1 < 1, "adam_beta1", "must be in [0, 1)");
  require(c.adam_beta2 >= 0 && c.adam_beta2 < 1, "adam_beta2", "must be in [0, 1)");
  require(c.adam_eps > 0, "adam_eps", "must be positive");

  require(c.beta >= 0 && c.beta <= 1, "beta", "must be in [0, 1]");
  require(c.top_k > 0, "top_k", "must be positive");
  require(c.enumeration_cap > 0, "enumeration_cap", "must be positive");
  require(c.cooccurrence_factor > 0 && c.cooccurrence_factor <= 1, "cooccurrence_factor",
          "must be in (0, 1]");

  for (auto w : c.ablate_windows) {
    require(w > 0 && w % 2 == 1, "ablate_windows", "window sizes must be odd and positive");
  }
  for (auto r : c.ablate_replacements) {
    require(r >= 0, "ablate_replacements", "replacement counts must be non-negative");
  }
  for (const auto& t : c.ablate_tables) {
    require(t == "components" || t == "window" || t == "replacements", "ablate_tables",
            "unknown table '" + t + "'");
  }
}

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig config;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no),
                        "expected 'key = value', got '" + std::string(line) + "'");
    }
    set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

std::string serialize_config(const PipelineConfig& config) {
  std::string out;
  for (const auto& f : config_schema()) {
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  auto config = parse_config(buf.str());
  validate(config);
  return config;
}

void save_config(const PipelineConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write config file " + path.string());
  out << "# mixseq pipeline configuration\n" << serialize_config(config);
  if (!out) throw Error("failed writing config file " + path.string());
}

void apply_env_overrides(PipelineConfig& config,
                         const std::function<const char*(const char*)>& lookup) {
  for (const auto& f : config_schema()) {
    auto name = f.env_name();
    const char* value = lookup ? lookup(name.c_str()) : std::getenv(name.c_str());
    if (value != nullptr) f.set(config, value);
  }
}

}  // namespace mixseq
