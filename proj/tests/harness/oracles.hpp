#pragma once

// Brute-force reference implementations used only by tests. They share
// the hlir vocabulary with production code and nothing else: each
// oracle re-derives its result by direct simulation or exhaustive
// enumeration.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "nnc/hlir.hpp"
#include "nnc/tensor.hpp"

namespace nnc::testing {

/* ------------------------------------------------------------------ */
/*  Reference evaluator                                                */
/* ------------------------------------------------------------------ */

/// Evaluates every value of the graph with naive per-op loops.
std::map<std::string, Tensor> oracle_eval(const hlir::Graph& g,
                                          const std::map<std::string, Tensor>& inputs);

/* ------------------------------------------------------------------ */
/*  Constraint-closure vdim oracle                                     */
/* ------------------------------------------------------------------ */

/// Free dynamic input axes as (input index, axis), computed by its own
/// symbolic walk plus fixpoint closure over the collected relations.
std::set<std::pair<int, int>> oracle_free_axes(const hlir::Graph& g);

/* ------------------------------------------------------------------ */
/*  Convex-partition oracle                                            */
/* ------------------------------------------------------------------ */

using Partition = std::vector<std::vector<std::string>>;

/// Nodes eligible for grouping (everything but Input/Const).
std::vector<std::string> oracle_compute_nodes(const hlir::Graph& g);

/// Valid = groups are same-backend, connected (undirected dataflow
/// adjacency) and convex; partition covers all compute nodes.
bool oracle_valid_partition(const hlir::Graph& g, const std::map<std::string, int>& backend_of,
                            const Partition& partition);

/// No two groups can merge without leaving the valid set.
bool oracle_maximal_partition(const hlir::Graph& g, const std::map<std::string, int>& backend_of,
                              const Partition& partition);

/// Every valid partition (exhaustive; intended for <= 8 compute nodes).
std::vector<Partition> oracle_all_partitions(const hlir::Graph& g,
                                             const std::map<std::string, int>& backend_of);

/* ------------------------------------------------------------------ */
/*  Memory-event replayer                                              */
/* ------------------------------------------------------------------ */

struct OracleEvent {
    int step = 0;
    bool alloc = true;
    long long bytes = 0;
    std::string value;
};

struct OracleMemory {
    long long peak = 0;
    long long resident_end = 0;
    long long alloc_total = 0;
    long long free_total = 0;
    bool balanced = true;   // no free without a live alloc
};

OracleMemory oracle_replay(const std::vector<OracleEvent>& events);

/* ------------------------------------------------------------------ */
/*  Finite-difference differentiator                                   */
/* ------------------------------------------------------------------ */

/// d/d(initializer) of sum_i |y_i - t_i| summed over the graph
/// outputs, by central differences through oracle_eval.
Tensor oracle_grad_fd(const hlir::Graph& g, const std::map<std::string, Tensor>& inputs,
                      const std::map<std::string, Tensor>& targets, const std::string& weight,
                      double h);

} // namespace nnc::testing
