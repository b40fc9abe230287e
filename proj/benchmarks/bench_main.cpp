#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mammut/model/layers.hpp"
#include "mammut/tensor/ops.hpp"
#include "mammut/training/trainer.hpp"

namespace {

using namespace mammut;

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> values(numel(shape));
  for (double& v : values) v = normal(rng);
  return Tensor::from(std::move(shape), values, requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1);
  const Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(512);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_tensor({n, n}, 1, true);
  Tensor b = random_tensor({n, n}, 2, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    backward(sum(matmul(a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

// Self-attention over [B, T, d] with d = 128 and 4 heads.
void BM_Attention(benchmark::State& state) {
  const std::size_t batch = 64, dim = 128;
  const auto tokens = static_cast<std::size_t>(state.range(0));
  ParameterStore store(0);
  const auto attn = MultiHeadAttention::create(store, "attn", dim, 4);
  const Tensor x = random_tensor({batch, tokens, dim}, 3);
  const Mask mask({tokens}, true);
  for (auto _ : state) benchmark::DoNotOptimize(attn(x, x, mask));
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(20)->Arg(64)->Unit(benchmark::kMillisecond);

// One optimizer step of the default model at the given batch size.
void BM_TrainStep(benchmark::State& state) {
  TrainingConfig config;
  config.batch_size = static_cast<std::size_t>(state.range(0));
  Trainer trainer(MammutConfig{}, config, 0);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.run_step());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_EncodeImage(benchmark::State& state) {
  Mammut model(MammutConfig{});
  const auto batch = static_cast<std::size_t>(state.range(0));
  const MammutConfig& c = model.config();
  const Tensor patches = random_tensor({batch, c.num_patches(), c.patch_dim()}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_image(patches));
}
BENCHMARK(BM_EncodeImage)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
