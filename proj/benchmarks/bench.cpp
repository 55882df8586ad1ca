#include <benchmark/benchmark.h>

#include "xfer/corpus.hpp"
#include "xfer/hungarian.hpp"
#include "xfer/linalg.hpp"
#include "xfer/pwcca.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"
#include "xfer/trainer.hpp"
#include "xfer/vocab.hpp"

using namespace xfer;

namespace {

Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({r, c});
  for (double& x : t.storage()) x = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = gaussian(n, n, 1), b = gaussian(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * double(n * n * n), benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(512);

void BM_Svd(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Tensor m = gaussian(4 * d, d, 3);
  for (auto _ : state) benchmark::DoNotOptimize(svd(m));
}
BENCHMARK(BM_Svd)->Arg(16)->Arg(64)->Arg(128);

void BM_Pwcca(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Tensor x = gaussian(2000, d, 4), y = gaussian(2000, d, 5);
  for (auto _ : state) benchmark::DoNotOptimize(pwcca(x, y));
}
BENCHMARK(BM_Pwcca)->Arg(32)->Arg(128);

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor cost = gaussian(n, n, 6);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(cost));
}
BENCHMARK(BM_Hungarian)->Arg(4)->Arg(12)->Arg(64);

// One optimizer step of the fixture-sized model (4 layers, d=128) on a batch
// of 32 nesting lines.
void BM_PretrainStep(benchmark::State& state) {
  const Vocab vocab = Vocab::synthetic(64, 1);
  CorpusSpec spec;
  spec.kind = CorpusKind::kNesting;
  spec.lines = 256;
  spec.min_len = 8;
  spec.max_len = 24;
  spec.bracket_types = 29;
  const Corpus corpus = generate_corpus(spec, vocab);
  ModelConfig model;
  model.num_layers = 4;
  model.hidden_dim = 128;
  model.num_heads = 4;
  model.ffn_dim = 512;
  TrainConfig train;
  train.lr = 5e-4;
  train.batch_size = 32;
  train.total_steps = static_cast<std::size_t>(state.range(0));
  train.log_every = train.total_steps;
  for (auto _ : state) benchmark::DoNotOptimize(pretrain_mlm(corpus, model, train));
  state.counters["steps/s"] = benchmark::Counter(double(train.total_steps), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_PretrainStep)->Arg(5)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace
BENCHMARK_MAIN();
