#include "mixseq/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixseq/error.hpp"
#include "mixseq/mixer.hpp"

namespace mixseq {

using ad::Graph;
using ad::Matrix;
using ad::Var;

bool LabelSequence::masked(int position) const {
  return std::binary_search(mask.begin(), mask.end(), position);
}

void LabelSequence::validate(int num_verbs, int num_nouns) const {
  for (const auto& [v, n] : actions) {
    if (v < 0 || v >= num_verbs || n < 0 || n >= num_nouns) {
      throw DataError("label (" + std::to_string(v) + ", " + std::to_string(n) + ") outside the " +
                      std::to_string(num_verbs) + " x " + std::to_string(num_nouns) + " vocabulary");
    }
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] < 0 || mask[i] >= size() || (i > 0 && mask[i] <= mask[i - 1])) {
      throw DataError("mask positions must be sorted, unique and inside the sequence");
    }
  }
}

std::vector<LabelSequence> label_sequences(const Dataset& dataset, int w) {
  const auto windows = build_windows(dataset, w);
  std::vector<LabelSequence> out;
  out.reserve(windows.size());
  for (const auto& win : windows) {
    LabelSequence s;
    for (const auto& slot : win.slots) {
      if (slot.verb < 0 || slot.noun < 0) {
        throw DataError("label sequences need labeled samples; " + slot.sample->sample_id + " has none");
      }
      s.actions.emplace_back(slot.verb, slot.noun);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<int> draw_mask(int w, double p, Rng& rng) {
  std::vector<int> mask;
  for (int i = 0; i < w; ++i) {
    if (rng.uniform() < p) mask.push_back(i);
  }
  if (mask.empty()) mask.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(w))));
  return mask;
}

MaskedLabelModel::MaskedLabelModel(const PipelineConfig& config, Rng& init_rng) : config_(config) {
  validate(config_);
  build_layout(&init_rng);
}

void MaskedLabelModel::build_layout(Rng* rng) {
  const int D = config_.lm_embed_dim;
  const double std = config_.init_std;
  verb_embed_ = params_.add("verb_embed", nn::normal_matrix(*rng, config_.num_verbs + 1, D, std));
  noun_embed_ = params_.add("noun_embed", nn::normal_matrix(*rng, config_.num_nouns + 1, D, std));
  positions_ = params_.add("positions", nn::normal_matrix(*rng, config_.window_size, D, std));
  encoder_ = nn::TransformerEncoder(
      params_, "encoder",
      {D, config_.lm_layers, config_.lm_heads, config_.lm_ff_multiplier * D, config_.layer_norm_eps}, *rng);
  verb_head_ = nn::Linear::scaled(params_, "verb_head", D, config_.num_verbs, *rng, std);
  noun_head_ = nn::Linear::scaled(params_, "noun_head", D, config_.num_nouns, *rng, std);
}

MaskedLabelModel MaskedLabelModel::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != kCheckpointKind) {
    throw DataError("expected a " + std::string(kCheckpointKind) + " checkpoint, found " + checkpoint.kind);
  }
  MaskedLabelModel model;
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

MaskedLabelModel MaskedLabelModel::load(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path, kCheckpointKind));
}

void MaskedLabelModel::save(const std::filesystem::path& path) const {
  write_checkpoint(path, kCheckpointKind, config_, params_);
}

MaskedLabelModel::GraphOutputs MaskedLabelModel::build(Graph& g, std::span<const LabelSequence> sequences) const {
  const int B = static_cast<int>(sequences.size());
  const int w = config_.window_size;
  if (B == 0) throw DataError("label model: empty batch");
  std::vector<int> verbs;
  std::vector<int> nouns;
  verbs.reserve(static_cast<std::size_t>(B * w));
  nouns.reserve(static_cast<std::size_t>(B * w));
  for (const auto& s : sequences) {
    if (s.size() != w) {
      throw DataError("label model: sequence of length " + std::to_string(s.size()) + " for window_size " +
                      std::to_string(w));
    }
    s.validate(config_.num_verbs, config_.num_nouns);
    std::size_t m = 0;
    for (int i = 0; i < w; ++i) {
      const bool masked = m < s.mask.size() && s.mask[m] == i;
      if (masked) ++m;
      verbs.push_back(masked ? config_.num_verbs : s.actions[static_cast<std::size_t>(i)].first);
      nouns.push_back(masked ? config_.num_nouns : s.actions[static_cast<std::size_t>(i)].second);
    }
  }
  Var x = ad::add(ad::gather_rows(g.parameter(params_, verb_embed_), std::move(verbs)),
                  ad::gather_rows(g.parameter(params_, noun_embed_), std::move(nouns)));
  x = ad::add_tiled(x, g.parameter(params_, positions_));
  Var z = encoder_(g, params_, x, B, w);
  return {verb_head_(g, params_, z), noun_head_(g, params_, z), B, w};
}

Matrix MaskedLabelModel::embed(std::span<const LabelSequence> sequences) const {
  const int B = static_cast<int>(sequences.size());
  const int w = config_.window_size;
  if (B == 0) throw DataError("label model: empty batch");
  const auto& VE = params_[verb_embed_].value;
  const auto& NE = params_[noun_embed_].value;
  const auto& P = params_[positions_].value;
  Matrix x(static_cast<Eigen::Index>(B) * w, config_.lm_embed_dim);
  for (int b = 0; b < B; ++b) {
    const auto& s = sequences[static_cast<std::size_t>(b)];
    if (s.size() != w) {
      throw DataError("label model: sequence of length " + std::to_string(s.size()) + " for window_size " +
                      std::to_string(w));
    }
    s.validate(config_.num_verbs, config_.num_nouns);
    std::size_t m = 0;
    for (int i = 0; i < w; ++i) {
      const bool masked = m < s.mask.size() && s.mask[m] == i;
      if (masked) ++m;
      const int v = masked ? config_.num_verbs : s.actions[static_cast<std::size_t>(i)].first;
      const int n = masked ? config_.num_nouns : s.actions[static_cast<std::size_t>(i)].second;
      x.row(static_cast<Eigen::Index>(b) * w + i) = VE.row(v) + NE.row(n) + P.row(i);
    }
  }
  return x;
}

void MaskedLabelModel::heads(const Matrix& z, Matrix* verb, Matrix* noun) const {
  Matrix logits;
  nn::affine_rows(z, params_[verb_head_.weight].value, params_[verb_head_.bias].value, logits);
  *verb = ad::log_softmax_rows(logits);
  nn::affine_rows(z, params_[noun_head_.weight].value, params_[noun_head_.bias].value, logits);
  *noun = ad::log_softmax_rows(logits);
}

void MaskedLabelModel::log_probs(std::span<const LabelSequence> sequences, Matrix* verb, Matrix* noun) const {
  const int B = static_cast<int>(sequences.size());
  heads(encoder_.infer(params_, embed(sequences), B, config_.window_size), verb, noun);
}

void MaskedLabelModel::log_probs_at(std::span<const LabelSequence> sequences, std::span<const int> positions,
                                    Matrix* verb, Matrix* noun) const {
  const int B = static_cast<int>(sequences.size());
  if (positions.size() != sequences.size()) throw DataError("label model: one query position per sequence");
  for (int p : positions) {
    if (p < 0 || p >= config_.window_size) throw DataError("label model: query position out of range");
  }
  heads(encoder_.infer(params_, embed(sequences), B, config_.window_size, positions), verb, noun);
}

Var lm_loss(Graph& /*graph*/, const MaskedLabelModel::GraphOutputs& out, std::span<const LabelSequence> sequences) {
  const int w = out.window;
  const auto rows = static_cast<std::size_t>(out.batch * w);
  std::vector<int> verbs(rows, -1);
  std::vector<int> nouns(rows, -1);
  std::size_t masked = 0;
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    for (int i : sequences[b].mask) {
      const std::size_t r = b * static_cast<std::size_t>(w) + static_cast<std::size_t>(i);
      verbs[r] = sequences[b].actions[static_cast<std::size_t>(i)].first;
      nouns[r] = sequences[b].actions[static_cast<std::size_t>(i)].second;
      ++masked;
    }
  }
  const double weight = masked > 0 ? 1.0 / static_cast<double>(masked) : 0.0;
  Var v = ad::softmax_cross_entropy(out.verb_logits, std::move(verbs), std::vector<double>(rows, weight));
  Var n = ad::softmax_cross_entropy(out.noun_logits, std::move(nouns), std::vector<double>(rows, weight));
  const std::array<Var, 2> terms{v, n};
  return ad::sum_scalars(terms);
}

LmTrainResult lm_train(std::span<const LabelSequence> sequences, const PipelineConfig& config,
                       const std::function<void(int, double)>& on_epoch) {
  validate(config);
  if (sequences.empty()) throw DataError("label model training needs at least one sequence");
  const Rng root = Rng(static_cast<std::uint64_t>(config.seed)).derive("lm");
  Rng init = root.derive("init");
  LmTrainResult result{MaskedLabelModel(config, init), {}};
  auto& model = result.model;
  nn::Adam optimizer(config.learning_rate_lm, config.adam_beta1, config.adam_beta2, config.adam_eps);

  std::vector<LabelSequence> work(sequences.begin(), sequences.end());
  std::vector<std::size_t> order(work.size());
  const auto bs = static_cast<std::size_t>(config.lm_batch_size);
  for (int epoch = 1; epoch <= config.lm_epochs; ++epoch) {
    Rng mask_rng = root.derive("mask").derive(static_cast<std::uint64_t>(epoch));
    for (auto& s : work) s.mask = draw_mask(s.size(), config.lm_mask_prob, mask_rng);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.derive("shuffle").derive(static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span<std::size_t>(order));

    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<LabelSequence> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(work[order[i]]);
      Graph g;
      auto out = model.build(g, batch);
      Var loss = lm_loss(g, out, batch);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite label model loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(start / bs));
      }
      g.backward(loss);
      model.parameters().zero_grad();
      g.collect_gradients(model.parameters());
      optimizer.step(model.parameters());
      total += value * static_cast<double>(batch.size());
    }
    result.epoch_losses.push_back(total / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch, result.epoch_losses.back());
  }
  return result;
}

SequenceScore score_sequence(const MaskedLabelModel& model, std::span<const Action> actions) {
  const int w = static_cast<int>(actions.size());
  if (w != model.window_size()) {
    throw DataError("sequence of length " + std::to_string(w) + " for a label model with window_size " +
                    std::to_string(model.window_size()));
  }
  std::vector<LabelSequence> batch(static_cast<std::size_t>(w));
  for (int i = 0; i < w; ++i) {
    batch[static_cast<std::size_t>(i)].actions.assign(actions.begin(), actions.end());
    batch[static_cast<std::size_t>(i)].mask = {i};
  }
  std::vector<int> positions(static_cast<std::size_t>(w));
  std::iota(positions.begin(), positions.end(), 0);
  Matrix lv;
  Matrix ln;
  model.log_probs_at(batch, positions, &lv, &ln);
  SequenceScore s;
  s.position_verb.resize(w, model.num_verbs());
  s.position_noun.resize(w, model.num_nouns());
  for (int i = 0; i < w; ++i) {
    const auto& [v, n] = actions[static_cast<std::size_t>(i)];
    s.score += lv(i, v) + ln(i, n);
    s.position_verb.row(i) = lv.row(i).array().exp();
    s.position_noun.row(i) = ln.row(i).array().exp();
  }
  const int c = (w - 1) / 2;
  s.center_verb = s.position_verb.row(c).transpose();
  s.center_noun = s.position_noun.row(c).transpose();
  return s;
}

double masked_accuracy(const MaskedLabelModel& model, std::span<const LabelSequence> sequences,
                       std::span<const Action> candidates) {
  if (candidates.empty()) throw DataError("masked accuracy needs at least one candidate action");
  const int w = model.window_size();
  std::size_t hits = 0;
  std::size_t total = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < sequences.size(); start += kChunk) {
    const auto chunk = sequences.subspan(start, std::min(kChunk, sequences.size() - start));
    Matrix lv;
    Matrix ln;
    model.log_probs(chunk, &lv, &ln);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      for (int i : chunk[b].mask) {
        const auto row = static_cast<Eigen::Index>(b) * w + i;
        Action best = candidates.front();
        double best_score = -std::numeric_limits<double>::infinity();
        for (const auto& a : candidates) {
          const double score = lv(row, a.first) + ln(row, a.second);
          if (score > best_score) {
            best_score = score;
            best = a;
          }
        }
        hits += best == chunk[b].actions[static_cast<std::size_t>(i)] ? 1 : 0;
        ++total;
      }
    }
  }
  if (total == 0) throw DataError("masked accuracy: no masked positions");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<std::vector<Candidate>> top_k_candidates(const PredictionBundle& bundle, int k,
                                                     std::span<const Action> support) {
  if (k < 1) throw ConfigError("top_k", "must be at least 1");
  const int w = static_cast<int>(bundle.position_verb.rows());
  const int V = static_cast<int>(bundle.position_verb.cols());
  const int N = static_cast<int>(bundle.position_noun.cols());
  std::vector<Action> pool;
  if (static_cast<int>(support.size()) >= k) {
    pool.assign(support.begin(), support.end());
    std::sort(pool.begin(), pool.end());
  } else {
    for (int v = 0; v < V; ++v) {
      for (int n = 0; n < N; ++n) pool.emplace_back(v, n);
    }
  }
  const int c = (w - 1) / 2;
  std::vector<std::vector<Candidate>> out(static_cast<std::size_t>(w));
  for (int i = 0; i < w; ++i) {
    const Eigen::VectorXd pv = i == c ? bundle.central_verb : Eigen::VectorXd(bundle.position_verb.row(i).transpose());
    const Eigen::VectorXd pn = i == c ? bundle.central_noun : Eigen::VectorXd(bundle.position_noun.row(i).transpose());
    std::vector<Candidate> all;
    all.reserve(pool.size());
    for (const auto& a : pool) all.push_back({a, pv[a.first] * pn[a.second]});
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                      [](const Candidate& x, const Candidate& y) {
                        if (x.probability != y.probability) return x.probability > y.probability;
                        return x.action < y.action;
                      });
    all.resize(take);
    out[static_cast<std::size_t>(i)] = std::move(all);
  }
  return out;
}

Eigen::VectorXd fuse(const Eigen::VectorXd& ms, const Eigen::VectorXd& lm, double beta) {
  if (ms.size() != lm.size()) throw DataError("fuse: distributions of different length");
  if (beta < 0 || beta > 1) throw ConfigError("beta", "must be in [0, 1]");
  if (beta == 0) return ms;
  if (beta == 1) return lm;
  return (1.0 - beta) * ms + beta * lm;
}

Rescorer::Rescorer(const MaskedLabelModel& model, int top_k, double beta, std::int64_t enumeration_cap,
                   std::size_t cache_limit)
    : model_(&model), top_k_(top_k), beta_(beta), cap_(enumeration_cap), cache_limit_(cache_limit) {
  if (top_k < 1) throw ConfigError("top_k", "must be at least 1");
  if (beta < 0 || beta > 1) throw ConfigError("beta", "must be in [0, 1]");
  if (enumeration_cap < 1) throw ConfigError("enumeration_cap", "must be positive");
}

namespace {

// Position plus the labels at every other position; one byte per label when
// the vocabularies allow it, so short windows stay inside the small-string
// buffer.
void context_key(int position, const Action* sequence, int w, bool wide, std::string& key) {
  key.clear();
  auto put = [&key, wide](int value) {
    key.push_back(static_cast<char>(value & 0xff));
    if (wide) key.push_back(static_cast<char>((value >> 8) & 0xff));
  };
  put(position);
  for (int j = 0; j < w; ++j) {
    if (j == position) continue;
    put(sequence[j].first);
    put(sequence[j].second);
  }
}

}  // namespace

RescoreResult Rescorer::rescore(const PredictionBundle& bundle, std::span<const Action> support) {
  const auto candidates = top_k_candidates(bundle, top_k_, support);
  return rescore(candidates, bundle.central_verb, bundle.central_noun);
}

RescoreResult Rescorer::rescore(std::span<const std::vector<Candidate>> candidates, const Eigen::VectorXd& ms_verb,
                                const Eigen::VectorXd& ms_noun) {
  const int w = static_cast<int>(candidates.size());
  const int V = model_->num_verbs();
  const int N = model_->num_nouns();
  if (w != model_->window_size()) {
    throw DataError("rescoring " + std::to_string(w) + " positions with a label model of window_size " +
                    std::to_string(model_->window_size()));
  }
  if (ms_verb.size() != V || ms_noun.size() != N) {
    throw DataError("rescoring: prediction vocabulary does not match the label model");
  }
  const auto W = static_cast<std::size_t>(w);
  std::vector<std::int64_t> radix(W);
  std::int64_t total = 1;
  for (std::size_t i = 0; i < W; ++i) {
    if (candidates[i].empty()) throw DataError("rescoring: position " + std::to_string(i) + " has no candidates");
    radix[i] = static_cast<std::int64_t>(candidates[i].size());
    if (total > cap_ / radix[i]) {
      throw ConfigError("top_k", "enumerating " + std::to_string(top_k_) + "^" + std::to_string(w) +
                                     " candidate sequences exceeds enumeration_cap " + std::to_string(cap_) +
                                     "; lower top_k or window_size");
    }
    total *= radix[i];
  }
  if (cache_.size() > cache_limit_) cache_.clear();
  const bool wide = std::max({V, N, w}) > 255;

  // Per position: the conditional of every context (choices at j != i in
  // mixed radix, last position fastest) and the candidate terms it yields.
  std::vector<std::vector<const std::vector<double>*>> conditionals(W);
  std::vector<std::vector<double>> terms(W);
  std::string key;
  constexpr std::size_t kChunk = 512;
  for (std::size_t i = 0; i < W; ++i) {
    const auto contexts = static_cast<std::size_t>(total / radix[i]);
    std::vector<Action> flat(contexts * W, Action{0, 0});
    std::vector<std::int64_t> digit(W, 0);
    for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
      for (std::size_t j = 0; j < W; ++j) {
        if (j != i) flat[ctx * W + j] = candidates[j][static_cast<std::size_t>(digit[j])].action;
      }
      for (std::size_t j = W; j-- > 0;) {
        if (j == i) continue;
        if (++digit[j] < radix[j]) break;
        digit[j] = 0;
      }
    }

    auto& cond = conditionals[i];
    cond.assign(contexts, nullptr);
    std::vector<std::size_t> missing;
    std::vector<std::string> missing_keys;
    for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
      context_key(static_cast<int>(i), &flat[ctx * W], w, wide, key);
      auto it = cache_.find(key);
      if (it != cache_.end()) {
        cond[ctx] = &it->second;
      } else {
        missing.push_back(ctx);
        missing_keys.push_back(key);
      }
    }
    for (std::size_t start = 0; start < missing.size(); start += kChunk) {
      const std::size_t end = std::min(missing.size(), start + kChunk);
      std::vector<LabelSequence> batch;
      batch.reserve(end - start);
      for (std::size_t m = start; m < end; ++m) {
        const Action* row = &flat[missing[m] * W];
        batch.push_back({std::vector<Action>(row, row + W), {static_cast<int>(i)}});
      }
      const std::vector<int> positions(batch.size(), static_cast<int>(i));
      Matrix lv;
      Matrix ln;
      model_->log_probs_at(batch, positions, &lv, &ln);
      forwards_ += static_cast<std::int64_t>(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto r = static_cast<Eigen::Index>(b);
        std::vector<double> values(static_cast<std::size_t>(V + N));
        for (int v = 0; v < V; ++v) values[static_cast<std::size_t>(v)] = lv(r, v);
        for (int n = 0; n < N; ++n) values[static_cast<std::size_t>(V + n)] = ln(r, n);
        auto it = cache_.emplace(std::move(missing_keys[start + b]), std::move(values)).first;
        cond[missing[start + b]] = &it->second;
      }
    }

    auto& term = terms[i];
    term.reserve(contexts * static_cast<std::size_t>(radix[i]));
    for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
      const auto& values = *cond[ctx];
      for (const auto& cand : candidates[i]) {
        term.push_back(values[static_cast<std::size_t>(cand.action.first)] +
                       values[static_cast<std::size_t>(V + cand.action.second)]);
      }
    }
  }

  auto context_of = [&](const std::vector<std::int64_t>& digit, std::size_t i) {
    std::int64_t ctx = 0;
    for (std::size_t j = 0; j < W; ++j) {
      if (j != i) ctx = ctx * radix[j] + digit[j];
    }
    return ctx;
  };

  RescoreResult result;
  std::vector<std::int64_t> digit(W, 0);
  std::vector<std::int64_t> best_digit;
  double best = -std::numeric_limits<double>::infinity();
  for (std::int64_t s = 0; s < total; ++s) {
    double score = 0;
    for (std::size_t i = 0; i < W; ++i) {
      score += terms[i][static_cast<std::size_t>(context_of(digit, i) * radix[i] + digit[i])];
    }
    ++result.enumerated;
    if (best_digit.empty() || score > best) {
      best = score;
      best_digit = digit;
    }
    for (std::size_t j = W; j-- > 0;) {
      if (++digit[j] < radix[j]) break;
      digit[j] = 0;
    }
  }

  result.score = best;
  for (std::size_t i = 0; i < W; ++i) {
    result.best.push_back(candidates[i][static_cast<std::size_t>(best_digit[i])].action);
  }
  const std::size_t c = (W - 1) / 2;
  const auto& values = *conditionals[c][static_cast<std::size_t>(context_of(best_digit, c))];
  result.lm_verb.resize(V);
  result.lm_noun.resize(N);
  for (int v = 0; v < V; ++v) result.lm_verb[v] = std::exp(values[static_cast<std::size_t>(v)]);
  for (int n = 0; n < N; ++n) result.lm_noun[n] = std::exp(values[static_cast<std::size_t>(V + n)]);
  result.verb = fuse(ms_verb, result.lm_verb, beta_);
  result.noun = fuse(ms_noun, result.lm_noun, beta_);
  return result;
}

std::vector<SamplePrediction> rescore_predictions(const SequencePredictor& predictor, const MaskedLabelModel& lm,
                                                  const Dataset& dataset, std::span<const Action> support,
                                                  const PipelineConfig& config) {
  if (predictor.window_size() != lm.window_size()) {
    throw DataError("predictor window_size " + std::to_string(predictor.window_size()) +
                    " differs from label model window_size " + std::to_string(lm.window_size()));
  }
  const auto windows = build_windows(dataset, predictor.window_size());
  const auto bundles = predictor.predict(windows);
  Rescorer rescorer(lm, config.top_k, config.beta, config.enumeration_cap);
  std::vector<SamplePrediction> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto r = rescorer.rescore(bundles[i], support);
    out.push_back({windows[i].center().sample->sample_id, std::move(r.verb), std::move(r.noun)});
  }
  return out;
}

}  // namespace mixseq
