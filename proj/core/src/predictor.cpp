#include "mixseq/predictor.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mixseq/error.hpp"
#include "mixseq/pseudo.hpp"

namespace mixseq {

using ad::Graph;
using ad::Matrix;
using ad::Var;

SequencePredictor::SequencePredictor(const PipelineConfig& config, Rng& init_rng) : config_(config) {
  validate(config_);
  build_layout(&init_rng);
}

void SequencePredictor::build_layout(Rng* rng) {
  const int D = config_.embed_dim;
  const int w = config_.window_size;
  input_proj_ = nn::Linear::glorot(params_, "input_proj", config_.fused_input_dim(), D, *rng);
  tokens_ = params_.add("class_tokens", nn::normal_matrix(*rng, 2, D, config_.init_std));
  positions_ = params_.add("positions", nn::normal_matrix(*rng, w + 2, D, config_.init_std));
  encoder_ = nn::TransformerEncoder(
      params_, "encoder",
      {D, config_.num_layers, config_.num_heads, config_.ff_dim(), config_.layer_norm_eps}, *rng);
  verb_head_ = nn::Linear::scaled(params_, "verb_head", D, config_.num_verbs, *rng, config_.init_std);
  noun_head_ = nn::Linear::scaled(params_, "noun_head", D, config_.num_nouns, *rng, config_.init_std);
  domain_hidden_ = nn::Linear::glorot(params_, "domain_hidden", D, config_.domain_hidden, *rng);
  domain_out_ = nn::Linear::glorot(params_, "domain_out", config_.domain_hidden, 2, *rng);
}

SequencePredictor SequencePredictor::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != kCheckpointKind) {
    throw DataError("expected a " + std::string(kCheckpointKind) + " checkpoint, found " + checkpoint.kind);
  }
  SequencePredictor model;
  model.config_ = checkpoint.config;
  validate(model.config_);
  Rng dummy(0);
  model.build_layout(&dummy);
  if (checkpoint.parameters.size() != model.params_.size()) {
    throw DataError("checkpoint has " + std::to_string(checkpoint.parameters.size()) +
                    " parameter blocks, model expects " + std::to_string(model.params_.size()));
  }
  for (std::size_t i = 0; i < model.params_.size(); ++i) {
    const auto& src = checkpoint.parameters[i];
    auto& dst = model.params_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
      throw DataError("checkpoint block " + src.name + " does not match model block " + dst.name);
    }
    dst.value = src.value;
  }
  return model;
}

SequencePredictor SequencePredictor::load(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path, kCheckpointKind));
}

void SequencePredictor::save(const std::filesystem::path& path) const {
  write_checkpoint(path, kCheckpointKind, config_, params_);
}

Eigen::VectorXd SequencePredictor::fuse_clips(const ActionSample& sample) const {
  Eigen::VectorXd out(config_.fused_input_dim());
  Eigen::Index offset = 0;
  for (const auto& m : config_.modalities) {
    auto it = sample.features.find(m.name);
    if (it == sample.features.end()) {
      throw DataError("sample " + sample.sample_id + " is missing modality '" + m.name + "'");
    }
    const auto& f = it->second;
    if (f.rows() != m.clip_count || f.cols() != m.feature_dim) {
      throw DataError("sample " + sample.sample_id + " modality '" + m.name + "' has the wrong shape");
    }
    out.segment(offset, m.feature_dim) = f.cast<double>().colwise().mean().transpose();
    offset += m.feature_dim;
  }
  return out;
}

Eigen::VectorXd SequencePredictor::aggregate_clips(const ActionSample& sample) const {
  const Eigen::VectorXd fused = fuse_clips(sample);
  const auto& W = params_[input_proj_.weight].value;
  const auto& b = params_[input_proj_.bias].value;
  return (fused.transpose() * W + b).transpose();
}

SequencePredictor::GraphOutputs SequencePredictor::build(Graph& g, std::span<const Window* const> windows,
                                                         double grl_lambda) const {
  const int B = static_cast<int>(windows.size());
  const int w = config_.window_size;
  const int T = w + 2;
  if (B == 0) throw DataError("predictor: empty batch");

  Matrix input(static_cast<Eigen::Index>(B) * w, config_.fused_input_dim());
  for (int b = 0; b < B; ++b) {
    if (windows[static_cast<std::size_t>(b)]->size() != w) {
      throw DataError("predictor: window of size " + std::to_string(windows[static_cast<std::size_t>(b)]->size()) +
                      " for a model with window_size " + std::to_string(w));
    }
    for (int i = 0; i < w; ++i) {
      input.row(static_cast<Eigen::Index>(b) * w + i) =
          fuse_clips(*windows[static_cast<std::size_t>(b)]->slots[static_cast<std::size_t>(i)].sample).transpose();
    }
  }

  std::vector<int> layout;
  std::vector<int> action_rows;
  action_rows.reserve(static_cast<std::size_t>(B * w));
  std::vector<int> verb_rows;
  std::vector<int> noun_rows;
  layout.reserve(static_cast<std::size_t>(B * T));
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < w; ++i) {
      layout.push_back(b * w + i);
      action_rows.push_back(b * T + i);
    }
    layout.push_back(B * w);
    layout.push_back(B * w + 1);
    verb_rows.push_back(b * T + w);
    noun_rows.push_back(b * T + w + 1);
  }

  Var proj = input_proj_(g, params_, g.constant(std::move(input)));
  Var seq = ad::gather_rows(ad::vconcat(proj, g.parameter(params_, tokens_)), std::move(layout));
  Var x = ad::add_tiled(seq, g.parameter(params_, positions_));
  Var z = encoder_(g, params_, x, B, T);

  std::vector<int> verb_idx = action_rows;
  verb_idx.insert(verb_idx.end(), verb_rows.begin(), verb_rows.end());
  std::vector<int> noun_idx = action_rows;
  noun_idx.insert(noun_idx.end(), noun_rows.begin(), noun_rows.end());

  GraphOutputs out;
  out.batch = B;
  out.window = w;
  out.verb_logits = verb_head_(g, params_, ad::gather_rows(z, std::move(verb_idx)));
  out.noun_logits = noun_head_(g, params_, ad::gather_rows(z, std::move(noun_idx)));
  Var reversed = ad::gradient_reversal(proj, grl_lambda);
  out.domain_logits = domain_out_(g, params_, ad::gelu(domain_hidden_(g, params_, reversed)));
  return out;
}

std::vector<PredictionBundle> SequencePredictor::predict(std::span<const Window> windows, int batch_size) const {
  std::vector<PredictionBundle> bundles;
  bundles.reserve(windows.size());
  const int w = config_.window_size;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Window*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&windows[i]);
    Graph g(false);
    auto out = build(g, ptrs, 0.0);
    const Matrix pv = ad::softmax_rows(out.verb_logits.value());
    const Matrix pn = ad::softmax_rows(out.noun_logits.value());
    const Matrix& dom = out.domain_logits.value();
    const int B = out.batch;
    for (int b = 0; b < B; ++b) {
      PredictionBundle pb;
      pb.central_verb = pv.row(static_cast<Eigen::Index>(B) * w + b).transpose();
      pb.central_noun = pn.row(static_cast<Eigen::Index>(B) * w + b).transpose();
      pb.position_verb = pv.middleRows(static_cast<Eigen::Index>(b) * w, w);
      pb.position_noun = pn.middleRows(static_cast<Eigen::Index>(b) * w, w);
      pb.domain_logits = dom.middleRows(static_cast<Eigen::Index>(b) * w, w);
      bundles.push_back(std::move(pb));
    }
  }
  return bundles;
}

PredictionBundle SequencePredictor::forward(const Window& window) const {
  return std::move(predict(std::span<const Window>(&window, 1)).front());
}

LossTerms compute_losses(const PredictionBundle& bundle, const Window& window, const PipelineConfig& config) {
  if (!window.labeled()) throw DataError("compute_losses: window has positions without labels");
  const int w = window.size();
  if (bundle.position_verb.rows() != w || bundle.domain_logits.rows() != w) {
    throw DataError("compute_losses: bundle does not match the window size");
  }
  LossTerms t;
  const auto& c = window.center();
  t.central = -std::log(bundle.central_verb[c.verb]) - std::log(bundle.central_noun[c.noun]);
  const Matrix dom = ad::log_softmax_rows(bundle.domain_logits);
  for (int i = 0; i < w; ++i) {
    const auto& s = window.slots[static_cast<std::size_t>(i)];
    t.ms += -std::log(bundle.position_verb(i, s.verb)) - std::log(bundle.position_noun(i, s.noun));
    t.dc += -dom(i, static_cast<int>(s.effective_domain));
  }
  t.ms /= w;
  t.dc /= w;
  t.total = config.central_loss_weight * t.central + config.ms_loss_weight * t.ms +
            config.effective_dc_weight() * t.dc;
  return t;
}

Var training_loss(Graph& /*graph*/, const SequencePredictor::GraphOutputs& out, std::span<const Window* const> windows,
                  const PipelineConfig& config, LossTerms* parts) {
  const int B = out.batch;
  const int w = out.window;
  const std::size_t rows = static_cast<std::size_t>(B) * static_cast<std::size_t>(w + 1);
  std::vector<int> vc(rows, -1), nc(rows, -1), vp(rows, -1), np(rows, -1);
  std::vector<int> dom(static_cast<std::size_t>(B * w));
  int labeled_windows = 0;
  int labeled_rows = 0;
  for (int b = 0; b < B; ++b) {
    const auto& win = *windows[static_cast<std::size_t>(b)];
    const auto& c = win.center();
    if (c.verb >= 0 && c.noun >= 0) {
      vc[static_cast<std::size_t>(B * w + b)] = c.verb;
      nc[static_cast<std::size_t>(B * w + b)] = c.noun;
      ++labeled_windows;
    }
    for (int i = 0; i < w; ++i) {
      const auto& s = win.slots[static_cast<std::size_t>(i)];
      const auto r = static_cast<std::size_t>(b * w + i);
      if (s.verb >= 0 && s.noun >= 0) {
        vp[r] = s.verb;
        np[r] = s.noun;
        ++labeled_rows;
      }
      dom[r] = static_cast<int>(s.effective_domain);
    }
  }
  const double wc = labeled_windows > 0 ? 1.0 / labeled_windows : 0.0;
  const double wp = labeled_rows > 0 ? 1.0 / labeled_rows : 0.0;
  const double wd = 1.0 / (B * w);
  std::vector<double> central_w(rows, wc), position_w(rows, wp);
  std::vector<double> dom_w(static_cast<std::size_t>(B * w), wd);

  Var v_central = ad::softmax_cross_entropy(out.verb_logits, vc, central_w);
  Var n_central = ad::softmax_cross_entropy(out.noun_logits, nc, central_w);
  Var v_pos = ad::softmax_cross_entropy(out.verb_logits, vp, position_w);
  Var n_pos = ad::softmax_cross_entropy(out.noun_logits, np, position_w);
  Var dc = ad::softmax_cross_entropy(out.domain_logits, std::move(dom), std::move(dom_w));

  const std::array<Var, 2> central_terms{v_central, n_central};
  const std::array<Var, 2> ms_terms{v_pos, n_pos};
  Var central = ad::sum_scalars(central_terms);
  Var ms = ad::sum_scalars(ms_terms);

  std::vector<Var> total_terms;
  if (config.central_loss_weight > 0) total_terms.push_back(ad::scale(central, config.central_loss_weight));
  if (config.ms_loss_weight > 0) total_terms.push_back(ad::scale(ms, config.ms_loss_weight));
  if (config.effective_dc_weight() > 0) total_terms.push_back(ad::scale(dc, config.effective_dc_weight()));
  if (total_terms.empty()) total_terms.push_back(ad::scale(central, 0.0));
  Var total = ad::sum_scalars(total_terms);
  if (parts) {
    parts->central = central.value()(0, 0);
    parts->ms = ms.value()(0, 0);
    parts->dc = dc.value()(0, 0);
    parts->total = total.value()(0, 0);
  }
  return total;
}

std::vector<SamplePrediction> central_predictions(const SequencePredictor& model, const Dataset& dataset) {
  const auto windows = build_windows(dataset, model.window_size());
  const auto bundles = model.predict(windows);
  std::vector<SamplePrediction> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    out.push_back({windows[i].center().sample->sample_id, bundles[i].central_verb, bundles[i].central_noun});
  }
  return out;
}

TrainResult train(const Dataset& source, const TargetPool& pool, const PipelineConfig& config,
                  const TrainOptions& options) {
  validate(config);
  const Rng root(static_cast<std::uint64_t>(config.seed));
  Rng init = root.derive("predictor.init");
  TrainResult result{SequencePredictor(config, init), {}};
  SequencePredictor& model = result.model;

  const auto windows = build_windows(source, config.window_size);
  std::vector<Window> target_windows;
  if (options.target) target_windows = build_windows(*options.target, config.window_size);

  TargetPool current_pool = pool;
  nn::Sgd optimizer(config.learning_rate, config.momentum, config.weight_decay);
  const int epochs = options.epochs > 0 ? options.epochs : config.epochs;
  const int replacements = config.effective_replacements();

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    if (config.pseudo_refresh_epochs > 0 && options.target && replacements > 0 && epoch > 1 &&
        (epoch - 1) % config.pseudo_refresh_epochs == 0) {
      const auto labels = pseudo_label(central_predictions(model, *options.target), config.lambda_threshold);
      current_pool = TargetPool(*options.target, labels);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.pseudo_pool = current_pool.size();

    const Rng mix_rng = root.derive("mix").derive(static_cast<std::uint64_t>(epoch));
    std::vector<Window> epoch_windows;
    epoch_windows.reserve(windows.size() + target_windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
      Rng wr = mix_rng.derive(i);
      epoch_windows.push_back(mix_window(windows[i], current_pool, replacements, wr, &record.mixing));
    }
    if (config.feed_target_windows && config.effective_dc_weight() > 0) {
      epoch_windows.insert(epoch_windows.end(), target_windows.begin(), target_windows.end());
    }

    std::vector<std::size_t> order(epoch_windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.derive("shuffle").derive(static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span<std::size_t>(order));

    LossTerms sums;
    std::size_t seen = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<const Window*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&epoch_windows[order[i]]);

      Graph g;
      auto out = model.build(g, batch, config.grl_lambda);
      LossTerms parts;
      Var loss = training_loss(g, out, batch, config, &parts);
      if (!std::isfinite(parts.total)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(start / bs) + " (central " + std::to_string(parts.central) +
                              ", ms " + std::to_string(parts.ms) + ", dc " + std::to_string(parts.dc) + ")");
      }
      g.backward(loss);
      model.parameters().zero_grad();
      g.collect_gradients(model.parameters());
      optimizer.step(model.parameters());

      const double n = static_cast<double>(batch.size());
      sums.central += parts.central * n;
      sums.ms += parts.ms * n;
      sums.dc += parts.dc * n;
      sums.total += parts.total * n;
      seen += batch.size();
    }
    const double n = static_cast<double>(seen);
    record.loss = {sums.central / n, sums.ms / n, sums.dc / n, sums.total / n};

    const bool validate_now = config.validate_every > 0 ? (epoch % config.validate_every == 0 || epoch == epochs)
                                                        : epoch == epochs;
    if (validate_now && options.target && options.validation_truth) {
      record.validation = evaluate(central_predictions(model, *options.target), *options.validation_truth);
    }
    if (options.on_epoch) options.on_epoch(record);
    result.history.push_back(std::move(record));
  }
  return result;
}

TrainResult pretrain(const Dataset& source, const PipelineConfig& config, const TrainOptions& options) {
  PipelineConfig c = config;
  c.use_mixing = false;
  c.use_domain_classifier = false;
  c.feed_target_windows = false;
  c.pseudo_refresh_epochs = 0;
  c.epochs = config.pretrain_epochs;
  TrainOptions o = options;
  o.epochs = config.pretrain_epochs;
  return train(source, TargetPool{}, c, o);
}

void write_training_metrics(std::span<const EpochRecord> history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : history) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss_central"] = r.loss.central;
    j["loss_ms"] = r.loss.ms;
    j["loss_dc"] = r.loss.dc;
    j["loss_total"] = r.loss.total;
    if (r.validation) {
      j["val_verb"] = r.validation->verb;
      j["val_noun"] = r.validation->noun;
      j["val_action"] = r.validation->action;
    } else {
      j["val_verb"] = nullptr;
      j["val_noun"] = nullptr;
      j["val_action"] = nullptr;
    }
    j["pseudo_pool"] = r.pseudo_pool;
    j["replacements_attempted"] = r.mixing.attempted;
    j["replacements_made"] = r.mixing.replaced;
    auto per = nlohmann::ordered_json::array();
    for (const auto& [a, c] : r.mixing.per_action) per.push_back({a.first, a.second, c.first, c.second});
    j["replacements_per_action"] = std::move(per);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace mixseq
