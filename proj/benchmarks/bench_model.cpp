#include <benchmark/benchmark.h>

#include "dept/model.hpp"
#include "dept/optim.hpp"

namespace {

dept::Batch random_batch(std::size_t b, std::size_t t, std::size_t vocab,
                         dept::Rng& rng) {
  dept::Batch batch;
  batch.batch = b;
  batch.time = t;
  batch.ids.resize(b * t);
  for (auto& id : batch.ids)
    id = static_cast<std::uint32_t>(rng.uniform_below(vocab));
  return batch;
}

void BM_ForwardBackward(benchmark::State& state) {
  dept::Architecture arch;
  arch.num_blocks = 2;
  arch.d_model = 32;
  arch.num_heads = 4;
  arch.expansion_ratio = 4;
  arch.seq_len = 32;
  arch.vocab_size = 320;
  dept::ModelParams params = dept::init_params(arch, 7);
  dept::Rng rng(11);
  const dept::Batch batch = random_batch(8, 32, arch.vocab_size, rng);
  for (auto _ : state) {
    dept::ForwardResult res = dept::forward(params, batch);
    dept::GradientSet g = dept::backward(params, res.trace);
    benchmark::DoNotOptimize(g.token_embeddings.data.data());
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_ForwardOnly(benchmark::State& state) {
  dept::Architecture arch;
  arch.num_blocks = 2;
  arch.d_model = 32;
  arch.num_heads = 4;
  arch.expansion_ratio = 4;
  arch.seq_len = 32;
  arch.vocab_size = 320;
  dept::ModelParams params = dept::init_params(arch, 7);
  dept::Rng rng(11);
  const dept::Batch batch = random_batch(32, 32, arch.vocab_size, rng);
  for (auto _ : state) {
    dept::ForwardResult res = dept::forward(params, batch);
    benchmark::DoNotOptimize(res.loss);
  }
}
BENCHMARK(BM_ForwardOnly);

void BM_OuterApply(benchmark::State& state) {
  dept::Architecture arch;
  arch.num_blocks = 2;
  arch.d_model = 32;
  arch.num_heads = 4;
  arch.expansion_ratio = 4;
  arch.seq_len = 32;
  arch.vocab_size = 320;
  const dept::ModelParams base = dept::init_params(arch, 7);
  std::vector<dept::DeltaSet> deltas;
  for (std::size_t k = 0; k < 4; ++k) {
    dept::ModelParams after = dept::init_params(arch, 100 + k);
    dept::DeltaSet d = dept::compute_delta(base, after);
    d.source_id = k;
    deltas.push_back(std::move(d));
  }
  for (auto _ : state) {
    dept::ModelParams g = base;
    dept::outer_apply(g, deltas);
    benchmark::DoNotOptimize(g.token_embeddings.data.data());
  }
}
BENCHMARK(BM_OuterApply);

}  // namespace

BENCHMARK_MAIN();
