#include <benchmark/benchmark.h>

#include "tased/model.hpp"
#include "tased/ops.hpp"
#include "tased/rng.hpp"
#include "tased/tensor.hpp"

namespace {

tased::Tensor random(const tased::Shape& shape, tased::Rng& rng) {
  tased::Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv3d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  tased::Rng rng(1);
  tased::ConvSpec spec{c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true};
  const tased::Tensor x = random({1, c, 8, 28, 48}, rng);
  const tased::Tensor w = random(spec.weight_shape(), rng);
  const tased::Tensor b = random({c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(tased::conv3d(x, w, &b, spec));
}
BENCHMARK(BM_Conv3d)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_MaxPoolUnpool(benchmark::State& state) {
  tased::Rng rng(2);
  const tased::Tensor x = random({1, 16, 8, 56, 96}, rng);
  for (auto _ : state) {
    auto [y, s] = tased::maxpool3d_with_switches(x, tased::PoolSpec{{1, 2, 2}});
    benchmark::DoNotOptimize(tased::maxunpool3d(y, s));
  }
}
BENCHMARK(BM_MaxPoolUnpool)->Unit(benchmark::kMillisecond);

void BM_TinyForward(benchmark::State& state) {
  tased::Rng rng(3);
  tased::Network net(tased::ModelConfig::tiny(16));
  const tased::Tensor clip = random({1, 3, 16, 32, 64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(clip));
}
BENCHMARK(BM_TinyForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
