#include <malloc.h>

#include <benchmark/benchmark.h>

#include "xdg/align.hpp"
#include "xdg/autodiff.hpp"
#include "xdg/challenge.hpp"
#include "xdg/ops.hpp"
#include "xdg/xattn.hpp"

namespace {

using namespace xdg;

Tensor noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const Var x = Var::constant(noise({32, width, 16, 16}, 1));
  Var w = Var::parameter(noise({width, width, 3, 3}, 2));
  Var b = Var::parameter(Tensor({width}, 0.0));
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    backward(sum(conv2d(x, w, b, 1, 1)));
    benchmark::DoNotOptimize(w.grad().data().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_PercentileMask(benchmark::State& state) {
  const Tensor scores = noise({64, static_cast<std::size_t>(state.range(0))}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(percentile_mask(scores, 1.0 / 3.0));
}
BENCHMARK(BM_PercentileMask)->Arg(16)->Arg(256)->Arg(4096);

void BM_MmdMixture(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = noise({n, 64}, 4), b = noise({n, 64}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_mixture(a, b));
}
BENCHMARK(BM_MmdMixture)->Arg(16)->Arg(64)->Arg(256);

void BM_AttentionWeights(benchmark::State& state) {
  const auto support = static_cast<std::size_t>(state.range(0));
  const Tensor keys = noise({support, 16, 64}, 6), query = noise({16, 64}, 7);
  const Tensor values = noise({support * 16, 64}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(spatial_prototypes(attention_weights(keys, query), values));
}
BENCHMARK(BM_AttentionWeights)->Arg(4)->Arg(16)->Arg(64);

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
