#pragma once

// Random well-formed graph generation and the brute-force oracles
// backing the property suites. Everything in tests/harness re-derives
// its results from hlir types alone; none of it may include the
// passes/backends/schedule/runtime implementations it checks.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nnc/hlir.hpp"
#include "nnc/tensor.hpp"

namespace nnc::testing {

/* ------------------------------------------------------------------ */
/*  Deterministic RNG (LCG; no std:: distributions)                    */
/* ------------------------------------------------------------------ */

struct Rng {
    uint64_t state;
    explicit Rng(uint64_t seed) : state(seed * 0x9E3779B97F4A7C15ull + 1) { next(); }

    uint64_t next() {
        state = state * 6364136223846793005ull + 1442695040888963407ull;
        return state;
    }
    int64_t range(int64_t lo, int64_t hi) {  // inclusive
        return lo + static_cast<int64_t>(next() >> 33) % (hi - lo + 1);
    }
    double uniform(double lo, double hi) {
        double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }
    bool chance(double p) { return uniform(0, 1) < p; }
};

/* ------------------------------------------------------------------ */
/*  Graph generator                                                    */
/* ------------------------------------------------------------------ */

struct GenOptions {
    int max_nodes = 10;           // compute + const nodes
    DType dtype = DType::F32;
    bool allow_orphans = true;    // outputs may skip some sinks
    bool mark_dynamic = false;    // random input axes become symbols
    bool for_gradients = false;   // guarantees a trainable op, avoids consts
    bool materialize_inputs = false;
};

/// Deterministic per seed; always passes validate(); extents <= 8,
/// rank <= 4, fixed shapes (symbolic only when mark_dynamic).
hlir::Graph gen_graph(uint64_t seed, const GenOptions& opts = {});

/// Random feed tensors for every graph input.
std::map<std::string, Tensor> gen_inputs(const hlir::Graph& g, uint64_t seed);

} // namespace nnc::testing
