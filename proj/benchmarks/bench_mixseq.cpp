#include <vector>

#include <benchmark/benchmark.h>

#include "mixseq/lm.hpp"
#include "mixseq/mixer.hpp"
#include "mixseq/pipeline.hpp"
#include "mixseq/predictor.hpp"

namespace mixseq {
namespace {

PipelineConfig bench_config(int w) {
  PipelineConfig c;
  c.videos_per_domain = 20;
  c.window_size = w;
  c.num_replacements = (w - 1) / 2;
  return c;
}

const Corpus& corpus() {
  static const Corpus c = generate(bench_config(5));
  return c;
}

void BM_PredictorForward(benchmark::State& state) {
  const auto c = bench_config(static_cast<int>(state.range(0)));
  Rng rng(1);
  const SequencePredictor model(c, rng);
  const auto windows = build_windows(corpus().source, c.window_size);
  const std::vector<Window> batch(windows.begin(), windows.begin() + 64);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(batch, 64));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_PredictorForward)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_PredictorTrainStep(benchmark::State& state) {
  const auto c = bench_config(static_cast<int>(state.range(0)));
  Rng rng(1);
  SequencePredictor model(c, rng);
  const auto windows = build_windows(corpus().source, c.window_size);
  std::vector<const Window*> batch;
  for (std::size_t i = 0; i < static_cast<std::size_t>(c.batch_size); ++i) batch.push_back(&windows[i]);
  nn::Sgd optimizer(c.learning_rate, c.momentum, c.weight_decay);
  for (auto _ : state) {
    ad::Graph g;
    const auto out = model.build(g, batch, 1.0);
    const auto loss = training_loss(g, out, batch, c);
    model.parameters().zero_grad();
    g.backward(loss);
    optimizer.step(model.parameters());
  }
  state.SetItemsProcessed(state.iterations() * c.batch_size);
}
BENCHMARK(BM_PredictorTrainStep)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_LabelModelLogProbs(benchmark::State& state) {
  const auto c = bench_config(5);
  Rng rng(2);
  const MaskedLabelModel model(c, rng);
  auto sequences = label_sequences(corpus().source, c.window_size);
  sequences.resize(512);
  std::vector<int> positions(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    positions[i] = static_cast<int>(i % 5);
    sequences[i].mask = {positions[i]};
  }
  ad::Matrix lv, ln;
  for (auto _ : state) {
    model.log_probs_at(sequences, positions, &lv, &ln);
    benchmark::DoNotOptimize(lv.data());
  }
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_LabelModelLogProbs)->Unit(benchmark::kMillisecond);

void BM_RescoreColdCache(benchmark::State& state) {
  auto c = bench_config(static_cast<int>(state.range(0)));
  c.top_k = static_cast<int>(state.range(1));
  Rng rng(3);
  const SequencePredictor predictor(c, rng);
  const MaskedLabelModel lm(c, rng);
  const auto windows = build_windows(corpus().target, c.window_size);
  const auto bundle = predictor.forward(windows[10]);
  for (auto _ : state) {
    Rescorer rescorer(lm, c.top_k, c.beta, c.enumeration_cap);
    benchmark::DoNotOptimize(rescorer.rescore(bundle, {}));
  }
}
BENCHMARK(BM_RescoreColdCache)->Args({3, 3})->Args({5, 3})->Args({5, 5})->Unit(benchmark::kMillisecond);

void BM_MixWindow(benchmark::State& state) {
  const auto& data = corpus();
  std::vector<PseudoLabel> labels;
  for (const auto& s : data.target.samples) {
    const auto& [v, n] = data.truth.at(s.sample_id);
    labels.push_back({s.sample_id, v, n, 1.0});
  }
  const TargetPool pool(data.target, labels);
  const auto windows = build_windows(data.source, 5);
  Rng rng(4);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mix_window(windows[i++ % windows.size()], pool, 2, rng));
  }
}
BENCHMARK(BM_MixWindow);

}  // namespace
}  // namespace mixseq

BENCHMARK_MAIN();
