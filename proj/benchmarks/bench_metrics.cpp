#include <vector>

#include <benchmark/benchmark.h>

#include "tased/metrics.hpp"
#include "tased/rng.hpp"
#include "tased/tensor.hpp"

namespace {

struct Frame {
  tased::Tensor map;
  tased::Tensor density;
  std::vector<tased::Fixation> fixations;
  std::vector<tased::Fixation> pool;
};

Frame make_frame(std::size_t h, std::size_t w) {
  tased::Rng rng(7);
  Frame f{tased::Tensor({h, w}), tased::Tensor({h, w}), {}, {}};
  for (double& v : f.map.data()) v = rng.uniform();
  for (double& v : f.density.data()) v = rng.uniform();
  for (int i = 0; i < 40; ++i) f.fixations.push_back({rng.below(h), rng.below(w)});
  for (int i = 0; i < 2000; ++i) f.pool.push_back({rng.below(h), rng.below(w)});
  return f;
}

void BM_AucJudd(benchmark::State& state) {
  const Frame f = make_frame(224, 384);
  for (auto _ : state) benchmark::DoNotOptimize(tased::auc_judd(f.map, f.fixations));
}
BENCHMARK(BM_AucJudd)->Unit(benchmark::kMillisecond);

void BM_ShuffledAuc(benchmark::State& state) {
  const Frame f = make_frame(224, 384);
  tased::Rng rng(11);
  for (auto _ : state) benchmark::DoNotOptimize(tased::shuffled_auc(f.map, f.fixations, f.pool, 10, rng));
}
BENCHMARK(BM_ShuffledAuc)->Unit(benchmark::kMillisecond);

void BM_DenseMetrics(benchmark::State& state) {
  const Frame f = make_frame(224, 384);
  for (auto _ : state) {
    benchmark::DoNotOptimize(tased::nss(f.map, f.fixations));
    benchmark::DoNotOptimize(tased::cc(f.map, f.density));
    benchmark::DoNotOptimize(tased::sim(f.map, f.density));
  }
}
BENCHMARK(BM_DenseMetrics)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
