// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>

#include "mixseq/cli.hpp"
#include "mixseq/error.hpp"
#include "mixseq/pipeline.hpp"
#include "support.hpp"

namespace mixseq {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100 * v;
  return s.str();
}

// ---- 1: gradient check ------------------------------------------------------

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const auto r = testing::check_predictor_gradients(testing::tiny_config(), 1.0, 17);
  const double s = seconds_since(t0);
  std::string worst;
  double worst_rel = -1;
  for (const auto& b : r.blocks) {
    if (b.relative > worst_rel) {
      worst_rel = b.relative;
      worst = b.name;
    }
  }
  return {r.max_relative <= 1e-4 && s < 60.0,
          "max relative error " + fmt(r.max_relative, 3) + " (" + worst + ") over " + std::to_string(r.scalars) +
              " scalars in " + fmt(s, 3) + " s"};
}

// ---- 2: gradient reversal ---------------------------------------------------

Verdict gradient_reversal_check() {
  Rng rng(9);
  const ad::Matrix x = nn::normal_matrix(rng, 5, 4, 1.0);
  const ad::Matrix upstream = nn::normal_matrix(rng, 5, 4, 1.0);
  bool ok = true;
  double worst = 0;
  for (double lambda : {0.0, 0.5, 1.0}) {
    ad::ParameterStore s;
    const auto xi = s.add("x", x);
    ad::Graph g;
    auto r = ad::gradient_reversal(g.parameter(s, xi), lambda);
    ok = ok && r.value() == x;
    auto loss =
        g.make(ad::Matrix::Constant(1, 1, (upstream.array() * r.value().array()).sum()), {r},
               [r, upstream](ad::Graph& gr, const ad::Matrix& go) { gr.accumulate(r, upstream * go(0, 0)); });
    g.backward(loss);
    g.collect_gradients(s);
    const double err = (s[xi].grad - (-lambda) * upstream).cwiseAbs().maxCoeff();
    worst = std::max(worst, err);
    ok = ok && err <= 1e-6;
  }
  return {ok, "forward identical; max backward deviation " + fmt(worst, 3) + " for lambda in {0, 0.5, 1}"};
}

// ---- 3: mixing invariants ---------------------------------------------------

Verdict mixing_invariants(const PipelineConfig& base) {
  PipelineConfig c = base;
  c.window_size = 5;
  const auto corpus = generate(c);
  Rng rng(31);
  // Peaked predictions around the true or a random label.
  std::vector<SamplePrediction> preds;
  for (const auto& s : corpus.target.samples) {
    const auto& [tv, tn] = corpus.truth.at(s.sample_id);
    const int v = rng.uniform() < 0.7 ? tv : static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_verbs)));
    const int n = rng.uniform() < 0.7 ? tn : static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_nouns)));
    const double pv = rng.uniform(0.3, 1.0);
    const double pn = rng.uniform(0.3, 1.0);
    Eigen::VectorXd verb = testing::random_simplex(c.num_verbs, rng) * (1 - pv);
    Eigen::VectorXd noun = testing::random_simplex(c.num_nouns, rng) * (1 - pn);
    verb[v] += pv;
    noun[n] += pn;
    preds.push_back({s.sample_id, verb, noun});
  }
  const double lambda = c.lambda_threshold;
  const auto labels = pseudo_label(preds, lambda);
  std::unordered_map<std::string, const PseudoLabel*> by_id;
  bool confidences_ok = !labels.empty();
  for (const auto& l : labels) {
    by_id[l.sample_id] = &l;
    confidences_ok = confidences_ok && l.confidence >= lambda;
  }
  const TargetPool pool(corpus.target, labels);
  const auto windows = build_windows(corpus.source, c.window_size);

  long checked = 0, replaced = 0;
  bool center_ok = true, labels_ok = true, identity_ok = true;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    Rng r(seed);
    const auto& w = windows[r.below(windows.size())];
    const int n = static_cast<int>(r.below(static_cast<std::uint64_t>(c.window_size)));
    const auto mixed = mix_window(w, pool, n, r);
    ++checked;
    center_ok = center_ok && mixed.center().sample == w.center().sample && !mixed.center().replaced;
    for (int i = 0; i < w.size(); ++i) {
      const auto& before = w.slots[static_cast<std::size_t>(i)];
      const auto& after = mixed.slots[static_cast<std::size_t>(i)];
      if (n == 0) identity_ok = identity_ok && after.sample == before.sample && !after.replaced;
      if (!after.replaced) {
        labels_ok = labels_ok && after.sample == before.sample;
        continue;
      }
      ++replaced;
      const auto it = by_id.find(after.sample->sample_id);
      labels_ok = labels_ok && it != by_id.end() && it->second->verb == before.verb &&
                  it->second->noun == before.noun && after.verb == before.verb && after.noun == before.noun &&
                  after.sample->domain == Domain::kTarget;
    }
  }
  return {center_ok && labels_ok && identity_ok && confidences_ok && replaced > 0,
          std::to_string(checked) + " windows, " + std::to_string(replaced) + " replacements; center " +
              (center_ok ? "kept" : "REPLACED") + ", labels " + (labels_ok ? "match" : "MISMATCH") + ", n=0 " +
              (identity_ok ? "identity" : "CHANGED") + ", " + std::to_string(labels.size()) +
              " pseudo-labels with confidence >= " + fmt(lambda) + (confidences_ok ? "" : " VIOLATED")};
}

// ---- 4: rescoring vs brute force -------------------------------------------

Verdict rescore_check() {
  Rng rng(44);
  int sets = 0;
  bool ok = true;
  for (int w : {1, 3}) {
    auto c = testing::tiny_config();
    c.window_size = w;
    c.num_replacements = w - 1;
    Rng init(static_cast<std::uint64_t>(100 + w));
    const MaskedLabelModel lm(c, init);
    Rescorer rescorer(lm, 3, c.beta, c.enumeration_cap);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 1 + static_cast<int>(rng.below(3));
      std::vector<std::vector<Candidate>> cands(static_cast<std::size_t>(w));
      for (auto& list : cands) {
        std::vector<Action> all;
        for (int v = 0; v < c.num_verbs; ++v) {
          for (int n = 0; n < c.num_nouns; ++n) all.emplace_back(v, n);
        }
        rng.shuffle(std::span<Action>(all));
        for (int i = 0; i < k; ++i) list.push_back({all[static_cast<std::size_t>(i)], 0.0});
      }
      const Eigen::VectorXd ms_v = testing::random_simplex(c.num_verbs, rng);
      const Eigen::VectorXd ms_n = testing::random_simplex(c.num_nouns, rng);
      const auto r = rescorer.rescore(cands, ms_v, ms_n);
      const auto bf = testing::brute_force_rescore(lm, cands);
      const auto expected = static_cast<std::int64_t>(std::llround(std::pow(k, w)));
      ok = ok && r.best == bf.best && r.score == bf.score && r.enumerated == expected && bf.count == expected;
      ++sets;
    }
  }
  return {ok, std::to_string(sets) + " random candidate sets (k <= 3, w in {1, 3}); argmax and count " +
                  (ok ? "exact" : "DIFFER")};
}

// ---- 5: fusion --------------------------------------------------------------

Verdict fusion_check() {
  Rng rng(55);
  bool ok = true;
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto ms = testing::random_simplex(12, rng);
    const auto lm = testing::random_simplex(12, rng);
    ok = ok && fuse(ms, lm, 0.0) == ms && fuse(ms, lm, 1.0) == lm;
    const auto f = fuse(ms, lm, 0.25);
    for (Eigen::Index j = 0; j < ms.size(); ++j) worst = std::max(worst, std::abs(f[j] - (0.75 * ms[j] + 0.25 * lm[j])));
  }
  ok = ok && worst <= 1e-12;
  const Eigen::Vector2d ms(0.8, 0.2), lm(0.2, 0.8);
  const auto hand = fuse(ms, lm, 0.25);
  ok = ok && std::abs(hand[0] - 0.65) <= 1e-12 && std::abs(hand[1] - 0.35) <= 1e-12;
  return {ok, "beta 0 and 1 bit-exact; beta 0.25 max deviation " + fmt(worst, 3)};
}

// ---- 6: co-occurrence filter -----------------------------------------------

struct RunAccuracy {
  std::string name;
  Accuracy accuracy;
};

Verdict cooccurrence_check(const std::vector<RunAccuracy>& runs) {
  Rng rng(66);
  CoOccurrenceMatrix m(12, 16);
  for (int i = 0; i < 24; ++i) m.add(static_cast<int>(rng.below(12)), static_cast<int>(rng.below(16)));
  bool identity = true;
  for (int i = 0; i < 1000; ++i) {
    const auto v = testing::random_simplex(12, rng);
    const auto n = testing::random_simplex(16, rng);
    identity = identity && action_argmax(cooccurrence_filter(v, n, m, 1.0)) == Action{argmax(v), argmax(n)};
  }
  CoOccurrenceMatrix two(1, 2);
  two.add(0, 1);
  const Eigen::VectorXd verb = Eigen::VectorXd::Ones(1);
  const Eigen::Vector2d noun(0.30, 0.20);
  const auto filtered = cooccurrence_filter(verb, noun, two, 0.01);
  const bool flip = action_argmax(action_scores(verb, noun)) == Action{0, 0} &&
                    action_argmax(filtered) == Action{0, 1} && std::abs(filtered(0, 0) - 0.003) < 1e-15;
  std::vector<std::string> violations;
  for (const auto& r : runs) {
    if (r.accuracy.action > std::min(r.accuracy.verb, r.accuracy.noun) + 1e-12) violations.push_back(r.name);
  }
  std::string detail = std::string("factor 1 identity over 1000 pairs ") + (identity ? "holds" : "BROKEN") +
                       "; 0.30*0.01 < 0.20 flip " + (flip ? "holds" : "BROKEN") + "; action <= min(verb, noun) on " +
                       std::to_string(runs.size() - violations.size()) + "/" + std::to_string(runs.size()) + " runs";
  if (!violations.empty()) detail += " (violated: " + violations.front() + ")";
  return {identity && flip && violations.empty() && !runs.empty(), detail};
}

// ---- 7 and 8: ablation grid -------------------------------------------------

struct GridOutcome {
  AblationReport report;
  double seconds = 0;
};

double mean_action(const AblationReport& r, const std::string& table, const std::string& row, bool* complete) {
  const auto* x = r.find(table, row);
  if (!x || x->completed() == 0 || x->completed() < static_cast<int>(x->cells.size())) *complete = false;
  return x && x->completed() > 0 ? x->mean(&Accuracy::action) : 0.0;
}

Verdict components_check(const GridOutcome& g) {
  bool complete = true;
  const auto& r = g.report;
  const double base = mean_action(r, "components", "baseline (w=1)", &complete);
  const double seq = mean_action(r, "components", "+ sequence", &complete);
  const double mix = mean_action(r, "components", "+ mixing", &complete);
  const double dc = mean_action(r, "components", "+ L_DC", &complete);
  const double full = mean_action(r, "components", "+ M_CO", &complete);
  const bool gain = full >= base + 0.03;
  const bool steps = seq - base >= -0.01 && mix - seq >= -0.01 && dc - mix >= -0.01;
  const bool time = g.seconds <= 1800;
  return {complete && gain && steps && time,
          "baseline " + pct(base) + ", +seq " + pct(seq) + ", +mix " + pct(mix) + ", +DC " + pct(dc) + ", full " +
              pct(full) + " (3-seed mean action %); full - baseline " + pct(full - base) + " pts; grid " +
              fmt(g.seconds / 60, 3) + " min"};
}

Verdict window_check(const GridOutcome& g) {
  bool complete = true;
  const double w1 = mean_action(g.report, "window", "w=1", &complete);
  const double w3 = mean_action(g.report, "window", "w=3", &complete);
  const double w5 = mean_action(g.report, "window", "w=5", &complete);
  return {complete && w5 >= w1,
          "w=1 " + pct(w1) + ", w=3 " + pct(w3) + ", w=5 " + pct(w5) + " (3-seed mean action %)" +
              (complete ? "" : "; INCOMPLETE")};
}

// ---- 9: reproducibility -----------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in),
                                                   std::istreambuf_iterator<char>()};
  }
  return files;
}

bool run_pipeline(const fs::path& cfg, const fs::path& dir, std::string* error) {
  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "mixseq");
    return run_cli(args, out, err) == kExitOk;
  };
  const auto data = (dir / "data").string();
  const auto work = (dir / "work").string();
  bool ok = run({"generate", "--config", cfg.string(), "--out", data});
  for (const char* stage : {"pretrain", "pseudolabel", "train", "lm-train", "eval"}) {
    ok = ok && run({stage, "--config", cfg.string(), "--data", data, "--work", work});
  }
  if (!ok) *error = err.str();
  return ok;
}

Verdict reproducibility_check(const PipelineConfig& base, const fs::path& work, std::vector<RunAccuracy>* runs) {
  PipelineConfig c = base;
  c.videos_per_domain = 40;
  c.epochs = 5;
  c.pretrain_epochs = 5;
  c.lm_epochs = 5;
  const fs::path root = work / "reproducibility";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto cfg = root / "run.cfg";
  save_config(c, cfg);
  std::string error;
  if (!run_pipeline(cfg, root / "a", &error) || !run_pipeline(cfg, root / "b", &error)) {
    return {false, "pipeline failed: " + error};
  }
  const auto a = snapshot(root / "a");
  const auto b = snapshot(root / "b");
  std::size_t same = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    same += it != b.end() && it->second == bytes;
  }
  Accuracy acc;
  {
    const auto corpus = read_corpus(root / "a" / "data", c);
    const auto preds = read_predictions(root / "a" / "work" / (eval_name(c) + ".predictions.txt"));
    const auto cooc = CoOccurrenceMatrix::build(corpus.source);
    acc = evaluate(preds, corpus.truth, &cooc, c.cooccurrence_factor);
  }
  runs->push_back({"pipeline run", acc});
  const bool ok = a.size() == b.size() && same == a.size() && a.size() >= 10;
  return {ok, std::to_string(same) + "/" + std::to_string(a.size()) +
                  " files byte-identical (datasets, checkpoints, pseudo-labels, metrics, predictions)"};
}

// ---- 10: label model sanity -------------------------------------------------

Verdict lm_check(const PipelineConfig& base) {
  PipelineConfig det = base;
  det.transition_successors = 1;
  det.transition_smoothing = 0.0;
  PipelineConfig uni = base;
  uni.transition_smoothing = 1.0;
  const auto d = testing::lm_heldout_accuracy(det);
  const auto u = testing::lm_heldout_accuracy(uni);
  const bool ok = d.accuracy >= 0.95 && std::abs(u.accuracy - u.chance) <= 0.05;
  return {ok, "deterministic grammar " + fmt(d.accuracy) + " (>= 0.95); uniform " + fmt(u.accuracy) + " vs chance " +
                  fmt(u.chance) + " (+-0.05)"};
}

int run(const PipelineConfig& config, const fs::path& work) {
  std::map<int, Verdict> verdicts;
  auto note = [](int id, const Verdict& v) {
    std::cerr << "criterion " << id << " done: " << (v.pass ? "PASS" : "FAIL") << '\n';
  };
  auto guarded = [&](int id, const std::function<Verdict()>& f) {
    try {
      verdicts[id] = f();
    } catch (const std::exception& e) {
      verdicts[id] = {false, std::string("exception: ") + e.what()};
    }
    note(id, verdicts[id]);
  };

  guarded(1, gradient_check);
  guarded(2, gradient_reversal_check);
  guarded(3, [&] { return mixing_invariants(config); });
  guarded(4, rescore_check);
  guarded(5, fusion_check);

  std::vector<RunAccuracy> runs;
  GridOutcome grid;
  bool grid_ok = true;
  std::string grid_error;
  try {
    const fs::path cache = work / "grid";
    fs::remove_all(cache);
    const auto corpus = generate(config);
    Experiment experiment(corpus, cache, [](const std::string& line) { std::cerr << line << '\n'; });
    const auto t0 = Clock::now();
    grid.report = run_ablation(experiment, config, [&](const CellOutcome& o) {
      std::cerr << o.cell.table << " | " << o.cell.row << " | seed " << o.cell.seed << ": "
                << (o.accuracy ? pct(o.accuracy->action) : "FAILED " + o.error) << " (" << fmt(seconds_since(t0), 4)
                << " s)\n";
      if (o.accuracy) runs.push_back({o.cell.table + "/" + o.cell.row + "/seed " + std::to_string(o.cell.seed), *o.accuracy});
    });
    grid.seconds = seconds_since(t0);
    std::ofstream md(work / "grid_report.md");
    write_report_markdown(grid.report, md);
  } catch (const std::exception& e) {
    grid_ok = false;
    grid_error = e.what();
  }
  if (grid_ok) {
    guarded(7, [&] { return components_check(grid); });
    guarded(8, [&] { return window_check(grid); });
  } else {
    verdicts[7] = verdicts[8] = {false, "grid failed: " + grid_error};
  }
  guarded(9, [&] { return reproducibility_check(config, work, &runs); });
  guarded(6, [&] { return cooccurrence_check(runs); });
  guarded(10, [&] { return lm_check(config); });

  int failed = 0;
  for (const auto& [id, v] : verdicts) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << v.detail << '\n';
    failed += v.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << '\n';
  return failed == 0 ? 0 : 1;
}

}  // namespace
}  // namespace mixseq

int main(int argc, char** argv) {
  CLI::App app("mixseq acceptance checks", "mixseq_acceptance");
  std::string config_path;
  std::string work = (std::filesystem::temp_directory_path() / "mixseq_acceptance").string();
  app.add_option("--config", config_path, "configuration for the ablation grid and corpus-scale checks");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  try {
    mixseq::PipelineConfig config = config_path.empty() ? mixseq::PipelineConfig{} : mixseq::load_config(config_path);
    mixseq::validate(config);
    std::filesystem::create_directories(work);
    return mixseq::run(config, work);
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << '\n';
    return 2;
  }
}
