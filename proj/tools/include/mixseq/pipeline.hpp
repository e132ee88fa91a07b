#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mixseq/config.hpp"
#include "mixseq/corpus.hpp"
#include "mixseq/error.hpp"
#include "mixseq/lm.hpp"
#include "mixseq/predictor.hpp"
#include "mixseq/pseudo.hpp"
#include "mixseq/refine.hpp"

namespace mixseq {

// A stage input was not found. producer() names the command that writes it.
class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::filesystem::path& path, std::string producer)
      : Error("missing " + path.string() + "; run `mixseq " + producer + "` first"),
        producer_(std::move(producer)) {}

  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string producer_;
};

struct Corpus {
  Dataset source;
  Dataset target;
  GroundTruth truth;
};

// Grammar and videos drawn from config.corpus_seed.
Corpus generate(const PipelineConfig& config);

// File names inside a corpus directory.
struct CorpusPaths {
  std::filesystem::path source;
  std::filesystem::path target;
  std::filesystem::path truth;

  static CorpusPaths in(const std::filesystem::path& dir);
};

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir, const PipelineConfig& config);

// Artifact names derived from the configuration, e.g. model_w5_r1_mix1_dc1_s7.
std::string pretrain_name(const PipelineConfig& config);
std::string pseudo_name(const PipelineConfig& config);
std::string model_name(const PipelineConfig& config);
std::string lm_name(const PipelineConfig& config);
std::string eval_name(const PipelineConfig& config);

// The configuration pretrain() actually trains with.
PipelineConfig pretrain_config(const PipelineConfig& config);

// Serialized subset of the configuration that determines the trained
// predictor (resp. language model). Equal keys give identical parameters.
std::string predictor_key(const PipelineConfig& config);
std::string lm_key(const PipelineConfig& config);

struct EvalResult {
  Accuracy accuracy;
  std::vector<SamplePrediction> predictions;  // after LM fusion when enabled
};

// Writes verb/noun/action/count plus the toggles as JSON.
void write_eval_metrics(const EvalResult& result, const PipelineConfig& config, const std::filesystem::path& path);

// Memoizing stage runner over one corpus. Models are kept in memory and,
// when `cache_dir` is non-empty, saved there and reloaded if the stored
// configuration matches.
class Experiment {
 public:
  using Log = std::function<void(const std::string&)>;

  Experiment(const Corpus& corpus, std::filesystem::path cache_dir = {}, Log log = {});

  const SequencePredictor& pretrained(const PipelineConfig& config);
  const std::vector<PseudoLabel>& pseudo_labels(const PipelineConfig& config);
  const SequencePredictor& model(const PipelineConfig& config);
  const MaskedLabelModel& language_model(const PipelineConfig& config);
  const CoOccurrenceMatrix& cooccurrence() const { return cooc_; }

  // Central predictions of model(config), LM-fused when config.use_lm.
  const std::vector<SamplePrediction>& predictions(const PipelineConfig& config);
  // Accuracy of predictions(config), filtered when config.use_cooccurrence.
  EvalResult evaluate(const PipelineConfig& config);

  std::size_t models_trained() const { return trained_; }

 private:
  template <typename T>
  using Memo = std::map<std::string, std::unique_ptr<T>>;

  void log(const std::string& line) const;
  std::filesystem::path cache_path(const std::string& name) const;

  const Corpus* corpus_;
  std::filesystem::path cache_dir_;
  Log log_;
  CoOccurrenceMatrix cooc_;
  Memo<SequencePredictor> predictors_;
  Memo<MaskedLabelModel> lms_;
  Memo<std::vector<PseudoLabel>> pseudo_;
  Memo<std::vector<SamplePrediction>> predictions_;
  std::size_t trained_ = 0;
};

// One cell of the ablation grid: a row of a table under one seed.
struct AblationCell {
  std::string table;
  std::string row;
  std::int64_t seed = 0;
  PipelineConfig config;
};

// Cells of every configured table in row-major order, seeds innermost.
// Throws ConfigError when the grid is empty.
std::vector<AblationCell> ablation_grid(const PipelineConfig& config);

struct CellOutcome {
  AblationCell cell;
  std::optional<Accuracy> accuracy;  // empty when the cell failed
  std::string error;
};

struct AblationRow {
  std::string table;
  std::string row;
  std::vector<CellOutcome> cells;
  int completed() const;
  double mean(double Accuracy::*field) const;
  double stddev(double Accuracy::*field) const;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  const AblationRow* find(const std::string& table, const std::string& row) const;
};

// Runs every cell; a failing cell is recorded and the grid continues.
AblationReport run_ablation(Experiment& experiment, const PipelineConfig& config,
                            const std::function<void(const CellOutcome&)>& on_cell = {});

// Markdown tables with mean +- std over seeds and the action delta to the
// previous row; failed cells are listed below each table.
void write_report_markdown(const AblationReport& report, std::ostream& out);
void write_report_json(const AblationReport& report, const std::filesystem::path& path);

}  // namespace mixseq
