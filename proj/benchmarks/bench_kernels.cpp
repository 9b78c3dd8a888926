#include <benchmark/benchmark.h>

#include "nnc/kernels.hpp"

// Kernel-level comparisons: the naive reference loops against the
// tiled GEMM route they are tuned against.

using namespace nnc;

namespace {

hlir::Attrs conv_attrs(int64_t co, int64_t k, int64_t s) {
    hlir::Attrs a;
    a.out_channels = co;
    a.kernel = {k, k};
    a.stride = {s, s};
    a.padding = hlir::Padding::Same;
    return a;
}

void fill(Tensor& t, uint64_t seed) {
    uint64_t s = seed;
    for (int64_t i = 0; i < t.elements(); ++i) {
        s = s * 6364136223846793005ull + 1442695040888963407ull;
        t.set(i, static_cast<double>(s >> 11) * 0x1.0p-53 - 0.5);
    }
}

} // namespace

static void BM_Conv2DRef(benchmark::State& state) {
    int64_t hw = state.range(0);
    Tensor x(DType::F32, {1, hw, hw, 16});
    Tensor k(DType::F32, {3, 3, 16, 32});
    Tensor y(DType::F32, {1, hw, hw, 32});
    fill(x, 1);
    fill(k, 2);
    auto gm = kernels::conv_geometry(x.dims(), conv_attrs(32, 3, 1));
    for (auto _ : state) {
        kernels::conv2d(x.f32(), k.f32(), static_cast<const float*>(nullptr), y.f32(), gm);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_Conv2DRef)->Arg(16)->Arg(32);

static void BM_Conv2DTiled(benchmark::State& state) {
    int64_t hw = state.range(0);
    Tensor x(DType::F32, {1, hw, hw, 16});
    Tensor k(DType::F32, {3, 3, 16, 32});
    Tensor y(DType::F32, {1, hw, hw, 32});
    auto gm = kernels::conv_geometry(x.dims(), conv_attrs(32, 3, 1));
    Tensor cols(DType::F32, {gm.n * gm.oh * gm.ow, gm.kh * gm.kw * gm.ci});
    fill(x, 1);
    fill(k, 2);
    for (auto _ : state) {
        kernels::conv2d_tiled(x.f32(), k.f32(), static_cast<const float*>(nullptr), y.f32(), cols.f32(), gm);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_Conv2DTiled)->Arg(16)->Arg(32);

static void BM_DenseRef(benchmark::State& state) {
    int64_t n = state.range(0);
    Tensor x(DType::F32, {8, n});
    Tensor w(DType::F32, {n, n});
    Tensor y(DType::F32, {8, n});
    fill(x, 3);
    fill(w, 4);
    for (auto _ : state) {
        kernels::dense(x.f32(), w.f32(), static_cast<const float*>(nullptr), y.f32(), int64_t{8}, n, n);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_DenseRef)->Arg(128)->Arg(512);

static void BM_DenseTiled(benchmark::State& state) {
    int64_t n = state.range(0);
    Tensor x(DType::F32, {8, n});
    Tensor w(DType::F32, {n, n});
    Tensor y(DType::F32, {8, n});
    fill(x, 3);
    fill(w, 4);
    for (auto _ : state) {
        kernels::dense_tiled(x.f32(), w.f32(), static_cast<const float*>(nullptr), y.f32(), int64_t{8}, n, n);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_DenseTiled)->Arg(128)->Arg(512);
