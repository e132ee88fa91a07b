#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "mixseq/nn.hpp"

namespace mixseq::testing {

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.num_verbs = 4;
  c.num_nouns = 4;
  c.num_actions = 6;
  c.videos_per_domain = 4;
  c.actions_per_video = 6;
  c.modalities = {{"rgb", 2, 3}, {"flow", 3, 2}};
  c.window_size = 3;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ff_multiplier = 2;
  c.domain_hidden = 6;
  c.init_std = 0.5;
  c.lm_embed_dim = 8;
  c.lm_layers = 1;
  c.lm_heads = 2;
  c.lm_ff_multiplier = 2;
  c.epochs = 2;
  c.pretrain_epochs = 2;
  c.lm_epochs = 2;
  c.validate_every = 0;
  c.ablate_seeds = {1};
  return c;
}

Eigen::VectorXd random_simplex(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = -std::log(1.0 - rng.uniform());
  return v / v.sum();
}

Dataset make_dataset(const PipelineConfig& config, const std::vector<std::vector<Action>>& videos, Domain domain,
                     Rng& rng) {
  Dataset d;
  d.domain = domain;
  d.num_verbs = config.num_verbs;
  d.num_nouns = config.num_nouns;
  d.modalities = config.modalities;
  const std::string prefix = domain == Domain::kSource ? "s" : "t";
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (std::size_t i = 0; i < videos[v].size(); ++i) {
      ActionSample s;
      s.video_id = prefix + "v" + std::to_string(v);
      s.sample_id = s.video_id + "_" + std::to_string(i);
      s.position_index = static_cast<int>(i);
      s.domain = domain;
      for (const auto& m : config.modalities) {
        FeatureMatrix f(m.clip_count, m.feature_dim);
        for (Eigen::Index r = 0; r < f.rows(); ++r) {
          for (Eigen::Index k = 0; k < f.cols(); ++k) f(r, k) = static_cast<float>(rng.normal());
        }
        s.features.emplace(m.name, std::move(f));
      }
      if (domain == Domain::kSource) {
        s.verb_label = videos[v][i].first;
        s.noun_label = videos[v][i].second;
      }
      d.samples.push_back(std::move(s));
    }
  }
  d.validate();
  return d;
}

GradCheckResult finite_difference_check(ad::ParameterStore& store, const std::function<double(std::size_t)>& objective,
                                        const std::function<void()>& analytic, double step) {
  store.zero_grad();
  analytic();
  GradCheckResult result;
  for (std::size_t b = 0; b < store.size(); ++b) {
    auto& p = store[b];
    ad::Matrix numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = objective(b);
      x = saved - step;
      const double down = objective(b);
      x = saved;
      numeric.data()[i] = (up - down) / (2 * step);
      ++result.scalars;
    }
    const ad::Matrix a = p.grad.size() ? p.grad : ad::Matrix::Zero(p.value.rows(), p.value.cols());
    BlockError e;
    e.name = p.name;
    e.analytic_norm = a.norm();
    e.relative = (a - numeric).norm() / std::max(a.norm() + numeric.norm(), 1e-12);
    result.max_relative = std::max(result.max_relative, e.relative);
    result.blocks.push_back(e);
  }
  return result;
}

GradCheckResult check_predictor_gradients(const PipelineConfig& base, double grl_lambda, std::uint64_t seed) {
  PipelineConfig config = base;
  config.grl_lambda = grl_lambda;
  config.use_domain_classifier = true;
  Rng rng(seed);
  Rng corpus_rng = rng.derive("corpus");
  const auto grammar = make_grammar(config, corpus_rng);
  const auto corpus = generate_corpus(grammar, corpus_rng);

  // Pseudo-labels equal to the hidden truth so every replacement finds a match.
  std::vector<PseudoLabel> labels;
  for (const auto& s : corpus.target.samples) {
    const auto& [v, n] = corpus.target_truth.at(s.sample_id);
    labels.push_back({s.sample_id, v, n, 1.0});
  }
  const TargetPool pool(corpus.target, labels);
  const auto source_windows = build_windows(corpus.source, config.window_size);
  const auto target_windows = build_windows(corpus.target, config.window_size);
  Rng mix = rng.derive("mix");
  std::vector<Window> windows;
  for (int i = 0; i < 4; ++i) {
    windows.push_back(mix_window(source_windows[static_cast<std::size_t>(2 * i + 1)], pool,
                                 config.window_size - 1, mix));
  }
  windows.push_back(target_windows.front());
  std::vector<const Window*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);

  Rng init = rng.derive("init");
  SequencePredictor model(config, init);
  auto& store = model.parameters();

  auto analytic = [&] {
    ad::Graph g;
    auto out = model.build(g, ptrs, grl_lambda);
    auto loss = training_loss(g, out, ptrs, config);
    g.backward(loss);
    g.collect_gradients(store);
  };
  auto objective = [&](std::size_t block) {
    ad::Graph g(false);
    auto out = model.build(g, ptrs, grl_lambda);
    LossTerms parts;
    training_loss(g, out, ptrs, config, &parts);
    const double main = config.central_loss_weight * parts.central + config.ms_loss_weight * parts.ms;
    const double dc = config.effective_dc_weight() * parts.dc;
    const bool after_reversal = store[block].name.starts_with("domain_");
    return main + (after_reversal ? 1.0 : -grl_lambda) * dc;
  };
  return finite_difference_check(store, objective, analytic);
}

BruteForce brute_force_rescore(const MaskedLabelModel& lm, const std::vector<std::vector<Candidate>>& candidates) {
  BruteForce out;
  std::vector<Action> seq(candidates.size());
  bool first = true;
  std::function<void(std::size_t)> visit = [&](std::size_t pos) {
    if (pos == candidates.size()) {
      ++out.count;
      const double s = score_sequence(lm, seq).score;
      if (first || s > out.score) {
        out.score = s;
        out.best = seq;
        first = false;
      }
      return;
    }
    for (const auto& c : candidates[pos]) {
      seq[pos] = c.action;
      visit(pos + 1);
    }
  };
  visit(0);
  return out;
}

LmHeldOut lm_heldout_accuracy(const PipelineConfig& config, std::uint64_t mask_seed) {
  Rng rng(static_cast<std::uint64_t>(config.corpus_seed));
  const auto grammar = make_grammar(config, rng);
  Rng train_rng = rng.derive("train videos");
  Rng held_rng = rng.derive("held-out videos");
  const auto train_corpus = generate_corpus(grammar, train_rng);
  const auto held_corpus = generate_corpus(grammar, held_rng);
  const auto lm = lm_train(label_sequences(train_corpus.source, config.window_size), config);
  auto held = label_sequences(held_corpus.source, config.window_size);
  Rng mask(mask_seed);
  for (auto& s : held) s.mask = draw_mask(s.size(), config.lm_mask_prob, mask);
  LmHeldOut r;
  r.accuracy = masked_accuracy(lm.model, held, grammar.action_set);
  r.chance = 1.0 / static_cast<double>(grammar.action_set.size());
  return r;
}

}  // namespace mixseq::testing
