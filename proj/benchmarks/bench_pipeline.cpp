#include <benchmark/benchmark.h>

#include "nnc/autodiff.hpp"
#include "nnc/backends.hpp"
#include "nnc/ingest.hpp"
#include "nnc/passes.hpp"
#include "nnc/plan.hpp"
#include "nnc/runtime.hpp"

// Whole-pipeline timings on a small convolutional model.

using namespace nnc;

namespace {

const char* kModel = R"({
  "dialect": "dlb", "seed": 11,
  "inputs": [{"name": "x", "dtype": "f32", "shape": [2, 16, 16, 3]}],
  "outputs": ["d1"],
  "nodes": [
    {"name": "c1", "op": "conv2d", "inputs": ["x"], "attrs": {"filters": 8, "kernel_size": 3, "padding": "same"}},
    {"name": "r1", "op": "relu", "inputs": ["c1"]},
    {"name": "p1", "op": "max_pooling2d", "inputs": ["r1"], "attrs": {"pool_size": 2}},
    {"name": "f", "op": "flatten", "inputs": ["p1"]},
    {"name": "d1", "op": "dense", "inputs": ["f"], "attrs": {"units": 10}}
  ]
})";

plan::VersionPlans compile_once() {
    auto model = ingest::parse_model(kModel);
    auto opt = passes::optimize(model.graph, {});
    auto versions = autodiff::derive_versions(opt.graph);
    return plan::compile_version_set(
        versions, [](const hlir::Graph& g) { return backends::default_assignment(g); });
}

} // namespace

static void BM_CompileModel(benchmark::State& state) {
    auto model = ingest::parse_model(kModel);
    for (auto _ : state) {
        auto opt = passes::optimize(model.graph, {});
        auto versions = autodiff::derive_versions(opt.graph);
        auto plans = plan::compile_version_set(
            versions, [](const hlir::Graph& g) { return backends::default_assignment(g); });
        benchmark::DoNotOptimize(plans.inference.values.size());
    }
}
BENCHMARK(BM_CompileModel);

static void BM_ExecuteInference(benchmark::State& state) {
    auto model = ingest::parse_model(kModel);
    auto plans = compile_once();
    auto host = runtime::HostModel::from_graph(model.graph);
    Tensor x(DType::F32, {2, 16, 16, 3});
    for (int64_t i = 0; i < x.elements(); ++i) x.set(i, 0.01 * static_cast<double>(i % 97));
    std::map<std::string, Tensor> feed{{"x", x}};
    for (auto _ : state) {
        auto out = runtime::execute(plans.inference, feed, host);
        benchmark::DoNotOptimize(out.begin()->second.data());
    }
}
BENCHMARK(BM_ExecuteInference);

static void BM_TrainStep(benchmark::State& state) {
    auto model = ingest::parse_model(kModel);
    auto plans = compile_once();
    auto host = runtime::HostModel::from_graph(model.graph);
    Tensor x(DType::F32, {2, 16, 16, 3});
    Tensor t(DType::F32, {2, 10});
    for (int64_t i = 0; i < x.elements(); ++i) x.set(i, 0.01 * static_cast<double>(i % 89));
    for (int64_t i = 0; i < t.elements(); ++i) t.set(i, 0.1 * static_cast<double>(i % 7));
    std::map<std::string, Tensor> feed{{"x", x}};
    for (auto _ : state) {
        double loss = runtime::train_step(plans, feed, t, host, 0.001);
        benchmark::DoNotOptimize(loss);
    }
}
BENCHMARK(BM_TrainStep);

BENCHMARK_MAIN();
