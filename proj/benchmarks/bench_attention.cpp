#include <benchmark/benchmark.h>

#include "delta/costing.hpp"
#include "delta/ops.hpp"

namespace {

using namespace delta;

Tensor randt(Shape shape, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v));
}

void BM_AttentionForward(benchmark::State& state) {
  const int64_t batch = 8;
  const int64_t n = state.range(0);
  const int64_t d = 128;
  NoGradGuard no_grad;
  Tensor q = randt({batch * n, d}, 1);
  Tensor k = randt({batch * n, d}, 2);
  Tensor v = randt({batch * n, d}, 3);
  for (auto _ : state) {
    Tensor y = attention(q, k, v, batch, 4, nullptr, MacCategory::kOther);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch * n * n);
}
BENCHMARK(BM_AttentionForward)->Arg(64)->Arg(256)->Arg(1024);

void BM_AttentionBackward(benchmark::State& state) {
  const int64_t batch = 8;
  const int64_t n = state.range(0);
  const int64_t d = 128;
  for (auto _ : state) {
    Tensor q = randt({batch * n, d}, 1).set_requires_grad(true);
    Tensor k = randt({batch * n, d}, 2).set_requires_grad(true);
    Tensor v = randt({batch * n, d}, 3).set_requires_grad(true);
    Tensor y = attention(q, k, v, batch, 4, nullptr, MacCategory::kOther);
    sum_all(mul(y, y)).backward();
    benchmark::DoNotOptimize(q.grad().data());
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(64)->Arg(256);

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  NoGradGuard no_grad;
  Tensor a = randt({n, n}, 4);
  Tensor b = randt({n, n}, 5);
  for (auto _ : state) {
    Tensor y = matmul(a, b);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(256)->Arg(512);

void BM_CostAudit(benchmark::State& state) {
  AttentionLayout layout{16, 16, 4};
  for (auto _ : state) {
    CostReport rep = attention_cost(layout, 8, state.range(0),
                                    {CostVariant::kOursGlobal});
    benchmark::DoNotOptimize(rep.entries[0].measured_spatial);
  }
}
BENCHMARK(BM_CostAudit)->Arg(256)->Arg(1024)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
