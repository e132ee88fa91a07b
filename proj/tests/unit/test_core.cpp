#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "mixseq/config.hpp"
#include "mixseq/error.hpp"
#include "mixseq/rng.hpp"
#include "mixseq/types.hpp"

namespace mixseq {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mixseq_test_core";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string config_field_of(const std::string& text) {
  try {
    validate(parse_config(text));
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

TEST(Config, EmptyFileGivesReferenceDefaults) {
  const auto p = temp_file("empty.cfg");
  write_text(p, "");
  const auto c = load_config(p);
  EXPECT_EQ(c.window_size, 5);
  EXPECT_EQ(c.lambda_threshold, 0.75);
  EXPECT_EQ(c.beta, 0.25);
  EXPECT_EQ(c.top_k, 5);
  EXPECT_EQ(c.cooccurrence_factor, 0.01);
  EXPECT_EQ(c.num_replacements, 1);
  EXPECT_EQ(c.learning_rate, 0.005);
  EXPECT_EQ(c.learning_rate_lm, 0.001);
  EXPECT_EQ(c.epochs, 100);
  EXPECT_EQ(c.lm_epochs, 100);
  EXPECT_EQ(c.enumeration_cap, 1000000);
  EXPECT_EQ(c.grl_lambda, 1.0);
  EXPECT_EQ(c.embed_dim, 64);
  EXPECT_EQ(c.num_layers, 2);
  EXPECT_EQ(c.num_heads, 4);
  EXPECT_EQ(c.ff_multiplier, 4);
}

TEST(Config, DeskScaleCorpusDefaults) {
  const PipelineConfig c;
  EXPECT_EQ(c.num_verbs, 12);
  EXPECT_EQ(c.num_nouns, 16);
  EXPECT_EQ(c.num_actions, 24);
  EXPECT_EQ(c.videos_per_domain, 200);
  EXPECT_EQ(c.actions_per_video, 30);
  ASSERT_EQ(c.modalities.size(), 3u);
  for (const auto& m : c.modalities) {
    EXPECT_EQ(m.clip_count, 4);
    EXPECT_EQ(m.feature_dim, 32);
  }
  EXPECT_EQ(c.fused_input_dim(), 96);
}

TEST(Config, EvenWindowNamesWindowSize) {
  const auto p = temp_file("even.cfg");
  write_text(p, "window_size = 4\n");
  try {
    load_config(p);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "window_size");
  }
}

TEST(Config, ZeroThresholdAccepted) {
  const auto c = parse_config("lambda_threshold = 0\n");
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.lambda_threshold, 0.0);
}

TEST(Config, ConstraintViolationsNameTheField) {
  EXPECT_EQ(config_field_of("lambda_threshold = 1.5"), "lambda_threshold");
  EXPECT_EQ(config_field_of("beta = -0.1"), "beta");
  EXPECT_EQ(config_field_of("top_k = 0"), "top_k");
  EXPECT_EQ(config_field_of("cooccurrence_factor = 0"), "cooccurrence_factor");
  EXPECT_EQ(config_field_of("cooccurrence_factor = 1.01"), "cooccurrence_factor");
  EXPECT_EQ(config_field_of("num_replacements = 5"), "num_replacements");
  EXPECT_EQ(config_field_of("window_size = 3\nnum_replacements = 2"), "");
  EXPECT_EQ(config_field_of("embed_dim = 10\nnum_heads = 4"), "num_heads");
  EXPECT_EQ(config_field_of("learning_rate = 0"), "learning_rate");
  EXPECT_EQ(config_field_of("epochs = 0"), "epochs");
  EXPECT_EQ(config_field_of("ablate_windows = 1,4"), "ablate_windows");
  EXPECT_EQ(config_field_of("ablate_tables = components,bogus"), "ablate_tables");
  EXPECT_EQ(config_field_of("cooccurrence_factor = 1"), "");
}

TEST(Config, UnknownKeyAndMalformedLinesRejected) {
  EXPECT_THROW(parse_config("no_such_key = 1"), ConfigError);
  EXPECT_THROW(parse_config("window_size 5"), ConfigError);
  EXPECT_THROW(parse_config("window_size = five"), ConfigError);
  EXPECT_THROW(parse_config("use_lm = maybe"), ConfigError);
  EXPECT_THROW(parse_config("modalities = rgb:4"), ConfigError);
}

TEST(Config, CommentsAndWhitespace) {
  const auto c = parse_config("# comment\n  beta = 0.5   # trailing\n\nseed=11\n");
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.seed, 11);
}

TEST(Config, SerializationRoundTripsEveryField) {
  PipelineConfig c;
  c.window_size = 7;
  c.lambda_threshold = 0.1 + 0.2;  // not exactly representable as a short decimal
  c.beta = 1.0 / 3.0;
  c.modalities = {{"a", 1, 2}, {"b", 3, 4}};
  c.ablate_seeds = {4, 5};
  c.ablate_tables = {"window"};
  c.use_lm = false;
  c.corpus_seed = -3;
  c.learning_rate_lm = 1e-7;
  const auto back = parse_config(serialize_config(c));
  EXPECT_TRUE(back == c);
  EXPECT_EQ(serialize_config(back), serialize_config(c));
}

TEST(Config, SaveLoadRoundTrip) {
  PipelineConfig c;
  c.shift_magnitude = 2.125;
  c.num_layers = 3;
  const auto p = temp_file("roundtrip.cfg");
  save_config(c, p);
  EXPECT_TRUE(load_config(p) == c);
}

TEST(Config, SchemaCoversEveryFieldOnce) {
  std::set<std::string> keys;
  for (const auto& f : config_schema()) {
    EXPECT_TRUE(keys.insert(f.key).second) << f.key;
    EXPECT_FALSE(f.help.empty()) << f.key;
    EXPECT_EQ(find_config_field(f.key), &f);
  }
  // Changing any single field through the schema must change the serialized
  // form, so no field is silently dropped by the round trip.
  const PipelineConfig base;
  for (const auto& f : config_schema()) {
    PipelineConfig c = base;
    const std::string before = f.get(c);
    std::string candidate;
    switch (f.type) {
      case FieldType::kBool: candidate = before == "true" ? "false" : "true"; break;
      case FieldType::kInt: candidate = before == "3" ? "5" : "3"; break;
      case FieldType::kReal: candidate = before == "0.5" ? "0.25" : "0.5"; break;
      case FieldType::kString: candidate = before + "x"; break;
      case FieldType::kIntList: candidate = "3"; break;
      case FieldType::kStringList: candidate = "window"; break;
      case FieldType::kModalities: candidate = "x:1:2"; break;
    }
    f.set(c, candidate);
    EXPECT_NE(f.get(c), before) << f.key;
    EXPECT_TRUE(parse_config(serialize_config(c)) == c) << f.key;
  }
  EXPECT_EQ(find_config_field("nope"), nullptr);
}

TEST(Config, EnvironmentOverrides) {
  std::map<std::string, std::string> env{{"MIXSEQ_BETA", "0.5"}, {"MIXSEQ_WINDOW_SIZE", "3"}};
  PipelineConfig c;
  apply_env_overrides(c, [&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.window_size, 3);
  EXPECT_EQ(find_config_field("window_size")->env_name(), "MIXSEQ_WINDOW_SIZE");

  env = {{"MIXSEQ_TOP_K", "x"}};
  EXPECT_THROW(apply_env_overrides(c, [&](const char* name) -> const char* {
                 auto it = env.find(name);
                 return it == env.end() ? nullptr : it->second.c_str();
               }),
               ConfigError);
}

TEST(Config, SetConfigValue) {
  PipelineConfig c;
  set_config_value(c, "top_k", "3");
  EXPECT_EQ(c.top_k, 3);
  EXPECT_THROW(set_config_value(c, "not_a_key", "3"), ConfigError);
}

TEST(Rng, SameSeedSameDraws) {
  auto a = seeded_rng(7);
  auto b = seeded_rng(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  auto a = seeded_rng(7);
  auto b = seeded_rng(8);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_LT(equal, 2);
}

TEST(Rng, DeriveIsPureAndIndependent) {
  Rng root(3);
  Rng c1 = root.derive("mix");
  root.next_u64();
  Rng c2 = Rng(3).derive("mix");
  Rng other = Rng(3).derive("shuffle");
  for (int i = 0; i < 20; ++i) {
    const auto x = c1.next_u64();
    EXPECT_EQ(x, c2.next_u64());
    EXPECT_NE(x, other.next_u64());
  }
  EXPECT_NE(Rng(3).derive(1).next_u64(), Rng(3).derive(2).next_u64());
}

TEST(Rng, DrawHelpersStayInRange) {
  Rng r(1);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.below(5);
    ASSERT_LT(k, 5u);
    ++counts[k];
  }
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
  const auto s = r.sample_without_replacement(10, 10);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 10u);
  double m = 0, v = 0;
  for (int i = 0; i < 20000; ++i) {
    const double x = r.normal();
    m += x;
    v += x * x;
  }
  EXPECT_NEAR(m / 20000, 0.0, 0.03);
  EXPECT_NEAR(v / 20000, 1.0, 0.05);
}

TEST(Types, ArgmaxTiesToLowestIndex) {
  Eigen::VectorXd v(4);
  v << 0.1, 0.4, 0.4, 0.1;
  EXPECT_EQ(argmax(v), 1);
  EXPECT_THROW(argmax(Eigen::VectorXd()), DataError);
}

TEST(Types, DatasetValidation) {
  Dataset d;
  d.num_verbs = 2;
  d.num_nouns = 2;
  d.modalities = {{"rgb", 1, 2}};
  ActionSample s;
  s.sample_id = "a";
  s.video_id = "v";
  s.features["rgb"] = FeatureMatrix::Zero(1, 2);
  s.verb_label = 1;
  s.noun_label = 0;
  d.samples.push_back(s);
  EXPECT_NO_THROW(d.validate());

  auto dup = d;
  dup.samples.push_back(s);
  dup.samples.back().sample_id = "b";
  EXPECT_THROW(dup.validate(), DataError);  // repeated position within a video

  auto unlabeled = d;
  unlabeled.samples[0].noun_label.reset();
  EXPECT_THROW(unlabeled.validate(), DataError);

  auto labeled_target = d;
  labeled_target.domain = Domain::kTarget;
  labeled_target.samples[0].domain = Domain::kTarget;
  EXPECT_THROW(labeled_target.validate(), DataError);

  auto bad_shape = d;
  bad_shape.samples[0].features["rgb"] = FeatureMatrix::Zero(2, 2);
  EXPECT_THROW(bad_shape.validate(), DataError);

  auto out_of_range = d;
  out_of_range.samples[0].verb_label = 2;
  EXPECT_THROW(out_of_range.validate(), DataError);
}

}  // namespace
}  // namespace mixseq
