#include "mixseq/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mixseq/error.hpp"

namespace mixseq {
namespace fs = std::filesystem;

Corpus generate(const PipelineConfig& config) {
  validate(config);
  Rng rng(static_cast<std::uint64_t>(config.corpus_seed));
  const auto grammar = make_grammar(config, rng);
  auto g = generate_corpus(grammar, rng);
  return {std::move(g.source), std::move(g.target), std::move(g.target_truth)};
}

CorpusPaths CorpusPaths::in(const fs::path& dir) {
  return {dir / "source.msd", dir / "target.msd", dir / "target_truth.tsv"};
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  const auto p = CorpusPaths::in(dir);
  write_dataset(corpus.source, p.source);
  write_dataset(corpus.target, p.target);
  write_ground_truth(corpus.truth, p.truth);
}

Corpus read_corpus(const fs::path& dir, const PipelineConfig& config) {
  const auto p = CorpusPaths::in(dir);
  for (const auto& f : {p.source, p.target, p.truth}) {
    if (!fs::exists(f)) throw MissingArtifactError(f, "generate");
  }
  Corpus c{read_dataset(p.source, config.modalities), read_dataset(p.target, config.modalities),
           read_ground_truth(p.truth)};
  if (c.source.num_verbs != config.num_verbs || c.source.num_nouns != config.num_nouns) {
    throw DataError(p.source.string() + ": vocabulary differs from the configured num_verbs/num_nouns");
  }
  return c;
}

namespace {

std::string tag(const PipelineConfig& c) { return "_w" + std::to_string(c.window_size); }
std::string seed_tag(const PipelineConfig& c) { return "_s" + std::to_string(c.seed); }
std::string flag(bool b) { return b ? "1" : "0"; }

bool lm_field(const std::string& k) {
  return k.starts_with("lm_") || k == "learning_rate_lm" || k.starts_with("adam_");
}

bool inference_field(const std::string& k) {
  return k == "use_lm" || k == "use_cooccurrence" || k == "beta" || k == "top_k" || k == "enumeration_cap" ||
         k == "cooccurrence_factor" || k.starts_with("ablate_") || k == "validate_every";
}

bool corpus_field(const std::string& k) {
  static const char* keys[] = {"num_verbs",        "num_nouns",         "num_actions",           "videos_per_domain",
                               "actions_per_video", "modalities",        "transition_successors", "transition_smoothing",
                               "class_separation",  "shift_magnitude",   "shift_shared_fraction", "noise_scale",
                               "corpus_seed"};
  return std::find(std::begin(keys), std::end(keys), k) != std::end(keys);
}

std::string key_of(const PipelineConfig& c, const std::function<bool(const std::string&)>& keep) {
  std::string out;
  for (const auto& f : config_schema()) {
    if (keep(f.key)) out += f.key + "=" + f.get(c) + "\n";
  }
  return out;
}

}  // namespace

std::string pretrain_name(const PipelineConfig& c) { return "pretrain" + tag(c) + seed_tag(c); }
std::string pseudo_name(const PipelineConfig& c) { return "pseudo" + tag(c) + seed_tag(c); }
std::string lm_name(const PipelineConfig& c) { return "lm" + tag(c) + seed_tag(c); }

std::string model_name(const PipelineConfig& c) {
  return "model" + tag(c) + "_r" + std::to_string(c.num_replacements) + "_mix" + flag(c.use_mixing) + "_dc" +
         flag(c.use_domain_classifier) + seed_tag(c);
}

std::string eval_name(const PipelineConfig& c) {
  return "eval" + tag(c) + "_r" + std::to_string(c.num_replacements) + "_mix" + flag(c.use_mixing) + "_dc" +
         flag(c.use_domain_classifier) + "_lm" + flag(c.use_lm) + "_co" + flag(c.use_cooccurrence) + seed_tag(c);
}

PipelineConfig pretrain_config(const PipelineConfig& config) {
  PipelineConfig c = config;
  c.use_mixing = false;
  c.use_domain_classifier = false;
  c.feed_target_windows = false;
  c.pseudo_refresh_epochs = 0;
  c.epochs = config.pretrain_epochs;
  return c;
}

std::string predictor_key(const PipelineConfig& config) {
  PipelineConfig c = config;
  const PipelineConfig d;
  if (c.effective_replacements() == 0) {
    c.use_mixing = false;
    c.num_replacements = 0;
    c.pseudo_refresh_epochs = 0;
    c.lambda_threshold = d.lambda_threshold;
  }
  if (c.effective_dc_weight() == 0) {
    c.use_domain_classifier = false;
    c.dc_loss_weight = d.dc_loss_weight;
    c.grl_lambda = d.grl_lambda;
    c.feed_target_windows = false;
  }
  return key_of(c, [](const std::string& k) { return !lm_field(k) && !inference_field(k); });
}

std::string lm_key(const PipelineConfig& config) {
  return key_of(config, [](const std::string& k) {
    return lm_field(k) || corpus_field(k) || k == "seed" || k == "window_size";
  });
}

void write_eval_metrics(const EvalResult& result, const PipelineConfig& config, const fs::path& path) {
  nlohmann::ordered_json j;
  j["verb"] = result.accuracy.verb;
  j["noun"] = result.accuracy.noun;
  j["action"] = result.accuracy.action;
  j["count"] = result.accuracy.count;
  j["window_size"] = config.window_size;
  j["num_replacements"] = config.num_replacements;
  j["use_mixing"] = config.use_mixing;
  j["use_domain_classifier"] = config.use_domain_classifier;
  j["use_lm"] = config.use_lm;
  j["use_cooccurrence"] = config.use_cooccurrence;
  j["seed"] = config.seed;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17) << j.dump(2) << '\n';
}

Experiment::Experiment(const Corpus& corpus, fs::path cache_dir, Log log)
    : corpus_(&corpus),
      cache_dir_(std::move(cache_dir)),
      log_(std::move(log)),
      cooc_(CoOccurrenceMatrix::build(corpus.source)) {
  if (!cache_dir_.empty()) fs::create_directories(cache_dir_);
}

void Experiment::log(const std::string& line) const {
  if (log_) log_(line);
}

fs::path Experiment::cache_path(const std::string& name) const {
  return cache_dir_.empty() ? fs::path{} : cache_dir_ / name;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

const SequencePredictor& Experiment::pretrained(const PipelineConfig& config) {
  const PipelineConfig pc = pretrain_config(config);
  const std::string key = predictor_key(pc);
  if (auto it = predictors_.find(key); it != predictors_.end()) return *it->second;
  const auto path = cache_path(pretrain_name(config) + ".ckpt");
  if (!path.empty() && fs::exists(path)) {
    auto m = SequencePredictor::load(path);
    if (predictor_key(m.config()) == key) {
      log("reused " + path.string());
      return *predictors_.emplace(key, std::make_unique<SequencePredictor>(std::move(m))).first->second;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainOptions o;
  o.target = &corpus_->target;
  auto r = pretrain(corpus_->source, config, o);
  ++trained_;
  log("pretrained " + pretrain_name(config) + " in " + fixed(seconds_since(t0), 1) + " s");
  if (!path.empty()) {
    r.model.save(path);
    write_training_metrics(r.history, cache_path(pretrain_name(config) + ".metrics.jsonl"));
  }
  return *predictors_.emplace(key, std::make_unique<SequencePredictor>(std::move(r.model))).first->second;
}

const std::vector<PseudoLabel>& Experiment::pseudo_labels(const PipelineConfig& config) {
  const std::string key = predictor_key(pretrain_config(config)) + "\nlambda=" + fixed(config.lambda_threshold, 17);
  if (auto it = pseudo_.find(key); it != pseudo_.end()) return *it->second;
  const auto& teacher = pretrained(config);
  auto labels = pseudo_label(central_predictions(teacher, corpus_->target), config.lambda_threshold);
  log("pseudo-labeled " + std::to_string(labels.size()) + " of " + std::to_string(corpus_->target.samples.size()) +
      " target samples");
  if (!cache_dir_.empty()) write_pseudo_labels(labels, cache_path(pseudo_name(config) + ".tsv"));
  return *pseudo_.emplace(key, std::make_unique<std::vector<PseudoLabel>>(std::move(labels))).first->second;
}

const SequencePredictor& Experiment::model(const PipelineConfig& config) {
  validate(config);
  const std::string key = predictor_key(config);
  if (key == predictor_key(pretrain_config(config))) return pretrained(config);
  if (auto it = predictors_.find(key); it != predictors_.end()) return *it->second;
  const auto path = cache_path(model_name(config) + ".ckpt");
  if (!path.empty() && fs::exists(path)) {
    auto m = SequencePredictor::load(path);
    if (predictor_key(m.config()) == key) {
      log("reused " + path.string());
      return *predictors_.emplace(key, std::make_unique<SequencePredictor>(std::move(m))).first->second;
    }
  }
  TargetPool pool;
  if (config.effective_replacements() > 0) {
    pool = TargetPool(corpus_->target, pseudo_labels(config));
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainOptions o;
  o.target = &corpus_->target;
  auto r = train(corpus_->source, pool, config, o);
  ++trained_;
  log("trained " + model_name(config) + " in " + fixed(seconds_since(t0), 1) + " s");
  if (!path.empty()) {
    r.model.save(path);
    write_training_metrics(r.history, cache_path(model_name(config) + ".metrics.jsonl"));
  }
  return *predictors_.emplace(key, std::make_unique<SequencePredictor>(std::move(r.model))).first->second;
}

const MaskedLabelModel& Experiment::language_model(const PipelineConfig& config) {
  const std::string key = lm_key(config);
  if (auto it = lms_.find(key); it != lms_.end()) return *it->second;
  const auto path = cache_path(lm_name(config) + ".ckpt");
  if (!path.empty() && fs::exists(path)) {
    auto m = MaskedLabelModel::load(path);
    if (lm_key(m.config()) == key) {
      log("reused " + path.string());
      return *lms_.emplace(key, std::make_unique<MaskedLabelModel>(std::move(m))).first->second;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto r = lm_train(label_sequences(corpus_->source, config.window_size), config);
  ++trained_;
  log("trained " + lm_name(config) + " in " + fixed(seconds_since(t0), 1) + " s");
  if (!path.empty()) r.model.save(path);
  return *lms_.emplace(key, std::make_unique<MaskedLabelModel>(std::move(r.model))).first->second;
}

const std::vector<SamplePrediction>& Experiment::predictions(const PipelineConfig& config) {
  std::string key = predictor_key(config);
  if (config.use_lm) {
    key += lm_key(config) + "beta=" + fixed(config.beta, 17) + "\ntop_k=" + std::to_string(config.top_k) +
           "\nenumeration_cap=" + std::to_string(config.enumeration_cap) + "\n";
  }
  if (auto it = predictions_.find(key); it != predictions_.end()) return *it->second;
  const auto& predictor = model(config);
  std::vector<SamplePrediction> out;
  if (config.use_lm) {
    const auto& lm = language_model(config);
    const auto t0 = std::chrono::steady_clock::now();
    const auto support = cooc_.support();
    out = rescore_predictions(predictor, lm, corpus_->target, support, config);
    log("rescored " + std::to_string(out.size()) + " windows in " + fixed(seconds_since(t0), 1) + " s");
  } else {
    out = central_predictions(predictor, corpus_->target);
  }
  return *predictions_.emplace(key, std::make_unique<std::vector<SamplePrediction>>(std::move(out))).first->second;
}

EvalResult Experiment::evaluate(const PipelineConfig& config) {
  EvalResult r;
  r.predictions = predictions(config);
  r.accuracy = mixseq::evaluate(r.predictions, corpus_->truth, config.use_cooccurrence ? &cooc_ : nullptr,
                                config.use_cooccurrence ? config.cooccurrence_factor : 1.0);
  return r;
}

std::vector<AblationCell> ablation_grid(const PipelineConfig& config) {
  validate(config);
  if (config.ablate_seeds.empty()) throw ConfigError("ablate_seeds", "the ablation grid is empty");
  if (config.ablate_tables.empty()) throw ConfigError("ablate_tables", "the ablation grid is empty");
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, PipelineConfig>>>> tables;
  for (const auto& table : config.ablate_tables) {
    std::vector<std::pair<std::string, PipelineConfig>> rows;
    if (table == "components") {
      PipelineConfig c = config;
      c.window_size = 1;
      c.num_replacements = 0;
      c.use_mixing = false;
      c.use_domain_classifier = false;
      c.use_lm = false;
      c.use_cooccurrence = false;
      rows.emplace_back("baseline (w=1)", c);
      c.window_size = config.window_size;
      c.num_replacements = config.num_replacements;
      rows.emplace_back("+ sequence", c);
      c.use_mixing = true;
      rows.emplace_back("+ mixing", c);
      c.use_domain_classifier = true;
      rows.emplace_back("+ L_DC", c);
      c.use_lm = true;
      rows.emplace_back("+ LM", c);
      c.use_cooccurrence = true;
      rows.emplace_back("+ M_CO", c);
    } else if (table == "window") {
      if (config.ablate_windows.empty()) throw ConfigError("ablate_windows", "the window table has no rows");
      for (auto w : config.ablate_windows) {
        PipelineConfig c = config;
        c.window_size = static_cast<int>(w);
        c.num_replacements = std::min(config.num_replacements, c.window_size - 1);
        c.use_lm = config.use_lm && config.ablate_sweep_lm;
        rows.emplace_back("w=" + std::to_string(w), c);
      }
    } else {
      if (config.ablate_replacements.empty()) {
        throw ConfigError("ablate_replacements", "the replacement table has no rows");
      }
      for (auto n : config.ablate_replacements) {
        PipelineConfig c = config;
        c.num_replacements = static_cast<int>(n);
        c.use_lm = config.use_lm && config.ablate_sweep_lm;
        rows.emplace_back("r=" + std::to_string(n), c);
      }
    }
    tables.emplace_back(table, std::move(rows));
  }
  std::vector<AblationCell> cells;
  for (const auto& [table, rows] : tables) {
    for (const auto& [row, c] : rows) {
      for (auto seed : config.ablate_seeds) {
        AblationCell cell{table, row, seed, c};
        cell.config.seed = seed;
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

int AblationRow::completed() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.accuracy; }));
}

double AblationRow::mean(double Accuracy::*field) const {
  double s = 0;
  int n = 0;
  for (const auto& c : cells) {
    if (c.accuracy) {
      s += (*c.accuracy).*field;
      ++n;
    }
  }
  return n ? s / n : std::nan("");
}

double AblationRow::stddev(double Accuracy::*field) const {
  const double m = mean(field);
  double s = 0;
  int n = 0;
  for (const auto& c : cells) {
    if (c.accuracy) {
      const double d = (*c.accuracy).*field - m;
      s += d * d;
      ++n;
    }
  }
  return n > 1 ? std::sqrt(s / (n - 1)) : (n == 1 ? 0.0 : std::nan(""));
}

const AblationRow* AblationReport::find(const std::string& table, const std::string& row) const {
  for (const auto& r : rows) {
    if (r.table == table && r.row == row) return &r;
  }
  return nullptr;
}

AblationReport run_ablation(Experiment& experiment, const PipelineConfig& config,
                            const std::function<void(const CellOutcome&)>& on_cell) {
  AblationReport report;
  for (auto& cell : ablation_grid(config)) {
    if (report.rows.empty() || report.rows.back().table != cell.table || report.rows.back().row != cell.row) {
      report.rows.push_back({cell.table, cell.row, {}});
    }
    CellOutcome outcome{cell, std::nullopt, {}};
    try {
      validate(cell.config);
      outcome.accuracy = experiment.evaluate(cell.config).accuracy;
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
    if (on_cell) on_cell(outcome);
    report.rows.back().cells.push_back(std::move(outcome));
  }
  return report;
}

namespace {

std::string pct(double mean, double sd) {
  if (std::isnan(mean)) return "n/a";
  return fixed(100 * mean, 2) + " ± " + fixed(100 * sd, 2);
}

}  // namespace

void write_report_markdown(const AblationReport& report, std::ostream& out) {
  std::string table;
  const AblationRow* prev = nullptr;
  std::vector<std::string> failures;
  auto flush = [&] {
    for (const auto& f : failures) out << "\n- FAILED " << f << '\n';
    failures.clear();
  };
  for (const auto& r : report.rows) {
    if (r.table != table) {
      if (!table.empty()) {
        flush();
        out << '\n';
      }
      table = r.table;
      prev = nullptr;
      out << "## " << table << "\n\n";
      out << "| row | seeds | verb | noun | action | Δ action |\n";
      out << "|---|---|---|---|---|---|\n";
    }
    const double a = r.mean(&Accuracy::action);
    std::string delta = "";
    if (prev && !std::isnan(a) && !std::isnan(prev->mean(&Accuracy::action))) {
      const double d = 100 * (a - prev->mean(&Accuracy::action));
      delta = (d >= 0 ? "+" : "") + fixed(d, 2);
    }
    out << "| " << r.row << " | " << r.completed() << "/" << r.cells.size() << " | "
        << pct(r.mean(&Accuracy::verb), r.stddev(&Accuracy::verb)) << " | "
        << pct(r.mean(&Accuracy::noun), r.stddev(&Accuracy::noun)) << " | "
        << pct(a, r.stddev(&Accuracy::action)) << " | " << delta << " |\n";
    for (const auto& c : r.cells) {
      if (!c.accuracy) failures.push_back(r.row + " seed " + std::to_string(c.cell.seed) + ": " + c.error);
    }
    prev = &r;
  }
  flush();
}

void write_report_json(const AblationReport& report, const fs::path& path) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["table"] = r.table;
    row["row"] = r.row;
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
      nlohmann::ordered_json cj;
      cj["seed"] = c.cell.seed;
      if (c.accuracy) {
        cj["verb"] = c.accuracy->verb;
        cj["noun"] = c.accuracy->noun;
        cj["action"] = c.accuracy->action;
      } else {
        cj["error"] = c.error;
      }
      cells.push_back(std::move(cj));
    }
    row["cells"] = std::move(cells);
    if (r.completed() > 0) {
      row["mean"] = {{"verb", r.mean(&Accuracy::verb)},
                     {"noun", r.mean(&Accuracy::noun)},
                     {"action", r.mean(&Accuracy::action)}};
      row["std"] = {{"verb", r.stddev(&Accuracy::verb)},
                    {"noun", r.stddev(&Accuracy::noun)},
                    {"action", r.stddev(&Accuracy::action)}};
    }
    rows.push_back(std::move(row));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << rows.dump(2) << '\n';
}

}  // namespace mixseq
