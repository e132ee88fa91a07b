#include "mixseq/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mixseq/error.hpp"
#include "mixseq/pipeline.hpp"

namespace mixseq {
namespace fs = std::filesystem;

namespace {

const char* type_name(FieldType t) {
  switch (t) {
    case FieldType::kInt: return "INT";
    case FieldType::kReal: return "REAL";
    case FieldType::kBool: return "BOOL";
    case FieldType::kString: return "TEXT";
    case FieldType::kIntList: return "INT,...";
    case FieldType::kStringList: return "TEXT,...";
    case FieldType::kModalities: return "NAME:CLIPS:DIM,...";
  }
  return "TEXT";
}

// Options shared by every subcommand: the config file, one flag per schema
// field and the stage toggles.
class ConfigOptions {
 public:
  explicit ConfigOptions(CLI::App* app) {
    app->add_option("--config", config_path_, "key = value configuration file");
    const auto schema = config_schema();
    values_.resize(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
      auto* opt = app->add_option("--" + schema[i].key, values_[i], schema[i].help);
      opt->type_name(type_name(schema[i].type));
      fields_.push_back({&schema[i], opt});
    }
    app->add_flag("--no-mixing", no_mixing_, "disable mixed sequences (use_mixing = false)");
    app->add_flag("--no-dc", no_dc_, "disable the domain classifier (use_domain_classifier = false)");
    app->add_flag("--no-lm", no_lm_, "disable LM rescoring (use_lm = false)");
    app->add_flag("--no-cooc", no_cooc_, "disable the co-occurrence filter (use_cooccurrence = false)");
    window_ = app->add_option("--window", window_value_, "window_size");
    replacements_ = app->add_option("--replacements", replacements_value_, "num_replacements");
  }

  PipelineConfig resolve() const {
    PipelineConfig c = config_path_.empty() ? PipelineConfig{} : load_config(config_path_);
    apply_env_overrides(c);
    for (std::size_t i = 0; i < fields_.size(); ++i) {
      if (fields_[i].second->count() > 0) fields_[i].first->set(c, values_[i]);
    }
    if (no_mixing_) c.use_mixing = false;
    if (no_dc_) c.use_domain_classifier = false;
    if (no_lm_) c.use_lm = false;
    if (no_cooc_) c.use_cooccurrence = false;
    const bool explicit_r = replacements_->count() > 0 || find_option("num_replacements")->count() > 0;
    if (window_->count() > 0) {
      c.window_size = window_value_;
      if (!explicit_r && c.num_replacements >= c.window_size && c.window_size > 0) {
        c.num_replacements = c.window_size - 1;
      }
    }
    if (replacements_->count() > 0) c.num_replacements = replacements_value_;
    validate(c);
    return c;
  }

 private:
  CLI::Option* find_option(const std::string& key) const {
    for (const auto& [field, opt] : fields_) {
      if (field->key == key) return opt;
    }
    return nullptr;
  }

  std::string config_path_;
  std::vector<std::string> values_;
  std::vector<std::pair<const ConfigField*, CLI::Option*>> fields_;
  bool no_mixing_ = false;
  bool no_dc_ = false;
  bool no_lm_ = false;
  bool no_cooc_ = false;
  int window_value_ = 0;
  int replacements_value_ = 0;
  CLI::Option* window_ = nullptr;
  CLI::Option* replacements_ = nullptr;
};

struct StageDirs {
  std::string data;
  std::string work;

  void add(CLI::App* app) {
    app->add_option("--data", data, "corpus directory written by `mixseq generate`")->required();
    app->add_option("--work", work, "artifact directory (default: the corpus directory)");
  }
  fs::path work_dir() const {
    const fs::path w = work.empty() ? fs::path(data) : fs::path(work);
    fs::create_directories(w);
    return w;
  }
};

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100 * v;
  return s.str();
}

void print_accuracy(const Accuracy& a, std::ostream& out) {
  out << "| verb | noun | action | samples |\n|---|---|---|---|\n";
  out << "| " << pct(a.verb) << " | " << pct(a.noun) << " | " << pct(a.action) << " | " << a.count << " |\n";
}

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifactError(path, producer);
}

TrainOptions progress(const Dataset* target, std::ostream& err) {
  TrainOptions o;
  o.target = target;
  o.on_epoch = [&err](const EpochRecord& r) {
    err << "epoch " << r.epoch << " loss " << r.loss.total << " central " << r.loss.central << " ms " << r.loss.ms
        << " dc " << r.loss.dc << '\n';
  };
  return o;
}

int cmd_generate(const PipelineConfig& c, const std::string& out_dir, std::ostream& out) {
  const auto corpus = generate(c);
  write_corpus(corpus, out_dir);
  save_config(c, fs::path(out_dir) / "config.cfg");
  out << "wrote " << corpus.source.samples.size() << " source and " << corpus.target.samples.size()
      << " target samples to " << out_dir << " (feature crc " << std::hex << feature_checksum(corpus.source) << "/"
      << feature_checksum(corpus.target) << std::dec << ")\n";
  return kExitOk;
}

int cmd_pretrain(const PipelineConfig& c, const StageDirs& d, std::ostream& out, std::ostream& err) {
  const auto corpus = read_corpus(d.data, c);
  const auto work = d.work_dir();
  auto r = pretrain(corpus.source, c, progress(&corpus.target, err));
  const auto path = work / (pretrain_name(c) + ".ckpt");
  r.model.save(path);
  write_training_metrics(r.history, work / (pretrain_name(c) + ".metrics.jsonl"));
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_pseudolabel(const PipelineConfig& c, const StageDirs& d, std::ostream& out) {
  const auto corpus = read_corpus(d.data, c);
  const auto work = d.work_dir();
  const auto ckpt = work / (pretrain_name(c) + ".ckpt");
  require(ckpt, "pretrain");
  const auto teacher = SequencePredictor::load(ckpt);
  const auto labels = pseudo_label(central_predictions(teacher, corpus.target), c.lambda_threshold);
  const auto path = work / (pseudo_name(c) + ".tsv");
  write_pseudo_labels(labels, path);
  out << "kept " << labels.size() << " of " << corpus.target.samples.size() << " target samples at lambda "
      << c.lambda_threshold << "; wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_train(const PipelineConfig& c, const StageDirs& d, std::ostream& out, std::ostream& err) {
  const auto corpus = read_corpus(d.data, c);
  const auto work = d.work_dir();
  std::vector<PseudoLabel> labels;
  TargetPool pool;
  if (c.effective_replacements() > 0) {
    const auto p = work / (pseudo_name(c) + ".tsv");
    require(p, "pseudolabel");
    labels = read_pseudo_labels(p);
    pool = TargetPool(corpus.target, labels);
  }
  auto r = train(corpus.source, pool, c, progress(&corpus.target, err));
  const auto path = work / (model_name(c) + ".ckpt");
  r.model.save(path);
  write_training_metrics(r.history, work / (model_name(c) + ".metrics.jsonl"));
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_lm_train(const PipelineConfig& c, const StageDirs& d, std::ostream& out, std::ostream& err) {
  const auto corpus = read_corpus(d.data, c);
  const auto work = d.work_dir();
  auto r = lm_train(label_sequences(corpus.source, c.window_size), c,
                    [&err](int epoch, double loss) { err << "epoch " << epoch << " loss " << loss << '\n'; });
  const auto path = work / (lm_name(c) + ".ckpt");
  r.model.save(path);
  std::ofstream m(work / (lm_name(c) + ".metrics.jsonl"), std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < r.epoch_losses.size(); ++i) {
    nlohmann::ordered_json j;
    j["epoch"] = i + 1;
    j["loss"] = r.epoch_losses[i];
    m << j.dump() << '\n';
  }
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_eval(const PipelineConfig& c, const StageDirs& d, std::ostream& out) {
  const auto corpus = read_corpus(d.data, c);
  const auto work = d.work_dir();
  const auto model_path = work / (model_name(c) + ".ckpt");
  require(model_path, "train");
  const auto model = SequencePredictor::load(model_path);
  if (model.window_size() != c.window_size) throw DataError(model_path.string() + ": window_size mismatch");
  const auto cooc = CoOccurrenceMatrix::build(corpus.source);
  EvalResult r;
  if (c.use_lm) {
    const auto lm_path = work / (lm_name(c) + ".ckpt");
    require(lm_path, "lm-train");
    const auto lm = MaskedLabelModel::load(lm_path);
    const auto support = cooc.support();
    r.predictions = rescore_predictions(model, lm, corpus.target, support, c);
  } else {
    r.predictions = central_predictions(model, corpus.target);
  }
  r.accuracy = evaluate(r.predictions, corpus.truth, c.use_cooccurrence ? &cooc : nullptr,
                        c.use_cooccurrence ? c.cooccurrence_factor : 1.0);
  write_eval_metrics(r, c, work / (eval_name(c) + ".json"));
  write_predictions(r.predictions, work / (eval_name(c) + ".predictions.txt"));
  print_accuracy(r.accuracy, out);
  return kExitOk;
}

int cmd_ensemble(const PipelineConfig& c, const StageDirs& d, const std::vector<std::string>& inputs,
                 const std::vector<double>& weights, const std::string& out_path, std::ostream& out) {
  const auto corpus = read_corpus(d.data, c);
  std::vector<std::vector<SamplePrediction>> sets;
  for (const auto& p : inputs) {
    require(p, "eval");
    sets.push_back(read_predictions(p));
  }
  if (!weights.empty() && weights.size() != sets.size()) {
    throw ConfigError("weights", "expected one weight per predictions file");
  }
  EvalResult r;
  r.predictions = ensemble(sets, weights);
  const auto cooc = CoOccurrenceMatrix::build(corpus.source);
  r.accuracy = evaluate(r.predictions, corpus.truth, c.use_cooccurrence ? &cooc : nullptr,
                        c.use_cooccurrence ? c.cooccurrence_factor : 1.0);
  const fs::path metrics = out_path.empty() ? d.work_dir() / "ensemble.json" : fs::path(out_path);
  write_eval_metrics(r, c, metrics);
  write_predictions(r.predictions, fs::path(metrics).replace_extension(".predictions.txt"));
  print_accuracy(r.accuracy, out);
  return kExitOk;
}

int cmd_ablate(const PipelineConfig& c, const StageDirs& d, const std::string& report_path, std::ostream& out,
               std::ostream& err) {
  const auto cells = ablation_grid(c);
  const auto corpus = read_corpus(d.data, c);
  const fs::path work = d.work.empty() ? fs::path(d.data) / "ablate" : fs::path(d.work);
  Experiment experiment(corpus, work, [&err](const std::string& line) { err << line << '\n'; });
  std::size_t done = 0;
  auto t0 = std::chrono::steady_clock::now();
  const auto report = run_ablation(experiment, c, [&](const CellOutcome& o) {
    ++done;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    err << "[" << done << "/" << cells.size() << "] " << o.cell.table << " | " << o.cell.row << " | seed "
        << o.cell.seed << ": " << (o.accuracy ? "action " + pct(o.accuracy->action) : "FAILED " + o.error)
        << " (" << std::fixed << std::setprecision(1) << s << " s)" << std::defaultfloat << '\n';
  });
  const fs::path md = report_path.empty() ? work / "report.md" : fs::path(report_path);
  if (md.has_parent_path()) fs::create_directories(md.parent_path());
  {
    std::ofstream f(md, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + md.string());
    write_report_markdown(report, f);
  }
  write_report_json(report, fs::path(md).replace_extension(".json"));
  write_report_markdown(report, out);
  bool failed = false;
  for (const auto& r : report.rows) failed = failed || r.completed() < static_cast<int>(r.cells.size());
  return failed ? kExitFailure : kExitOk;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Mixed-sequence domain adaptation for action recognition", "mixseq");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  struct Command {
    CLI::App* app;
    std::unique_ptr<ConfigOptions> options;
  };
  std::vector<Command> commands;
  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    commands.push_back({sub, std::make_unique<ConfigOptions>(sub)});
    return sub;
  };

  std::string gen_out;
  add("generate", "write source, target and ground-truth files")
      ->add_option("--out", gen_out, "output directory")
      ->required();
  StageDirs dirs;
  dirs.add(add("pretrain", "train the source-only pseudo-labeling model"));
  StageDirs pl_dirs;
  pl_dirs.add(add("pseudolabel", "pseudo-label the target domain with the pretrained model"));
  StageDirs train_dirs;
  train_dirs.add(add("train", "train the mixed-sequence predictor"));
  StageDirs lm_dirs;
  lm_dirs.add(add("lm-train", "train the masked label language model"));
  StageDirs eval_dirs;
  eval_dirs.add(add("eval", "evaluate on the target domain"));
  StageDirs ens_dirs;
  std::vector<std::string> ens_inputs;
  std::vector<double> ens_weights;
  std::string ens_out;
  auto* ens = add("ensemble", "average saved prediction files and evaluate");
  ens_dirs.add(ens);
  ens->add_option("--predictions", ens_inputs, "prediction files written by `mixseq eval`")->required();
  ens->add_option("--weights", ens_weights, "one weight per predictions file");
  ens->add_option("--out", ens_out, "metrics file (default: <work>/ensemble.json)");
  StageDirs abl_dirs;
  std::string report;
  auto* abl = add("ablate", "run the configured ablation grid");
  abl_dirs.add(abl);
  abl->add_option("--report", report, "markdown report path (default: <work>/report.md)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (const auto& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      const auto c = cmd.options->resolve();
      const auto& name = cmd.app->get_name();
      if (name == "generate") return cmd_generate(c, gen_out, out);
      if (name == "pretrain") return cmd_pretrain(c, dirs, out, err);
      if (name == "pseudolabel") return cmd_pseudolabel(c, pl_dirs, out);
      if (name == "train") return cmd_train(c, train_dirs, out, err);
      if (name == "lm-train") return cmd_lm_train(c, lm_dirs, out, err);
      if (name == "eval") return cmd_eval(c, eval_dirs, out);
      if (name == "ensemble") return cmd_ensemble(c, ens_dirs, ens_inputs, ens_weights, ens_out, out);
      if (name == "ablate") return cmd_ablate(c, abl_dirs, report, out, err);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mixseq
