#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nnc/hlir.hpp"

namespace nnc::backends {

/* ------------------------------------------------------------------ */
/*  Backend registry                                                   */
/* ------------------------------------------------------------------ */

/// REF: naive loops, supports every op. FUSED_EW: elementwise chains
/// (ReLU/Add/Mul/Identity) compiled into one single-pass kernel.
/// GEMM_TILED: Dense and Conv2D via im2col + tiled matmul (tile 32).
/// Enumeration order is the autotuner's tie-break order.
enum class BackendId : uint8_t { REF = 0, FUSED_EW = 1, GEMM_TILED = 2 };

const char* backend_name(BackendId b);
bool parse_backend(const std::string& name, BackendId& out);
bool supports(BackendId b, hlir::OpKind op);
const std::vector<BackendId>& all_backends();

/// Input/Const nodes bind data rather than compute; they take no part
/// in tuning or grouping.
bool is_compute(hlir::OpKind op);

/* ------------------------------------------------------------------ */
/*  Autotuning                                                         */
/* ------------------------------------------------------------------ */

struct CostModel {
    enum class Kind { Measured, Injected };
    Kind kind = Kind::Measured;
    int warmup = 1;
    int trials = 5;
    /// (node, backend) -> cost; must be total over supporting backends.
    std::map<std::pair<std::string, BackendId>, double> injected;

    static CostModel measured() { return {}; }
    static CostModel injected_from(std::map<std::pair<std::string, BackendId>, double> costs);
};

using BackendAssignment = std::map<std::string, BackendId>;

/// Layer-by-layer: each node is timed (or costed) in isolation on
/// seed-shaped random inputs and assigned the cheapest supporting
/// backend; ties go to the lowest BackendId.
BackendAssignment tune(const hlir::Graph& g, const CostModel& cost);

/// Deterministic static preference (GEMM_TILED, then FUSED_EW, then
/// REF) used when reproducible plan bytes matter more than timings.
BackendAssignment default_assignment(const hlir::Graph& g);

struct TuningRecord {
    std::string node;
    BackendId backend;
    double cost;
    bool chosen;
};

struct TuningReport {
    std::vector<TuningRecord> records;   // node-major, backend enumeration order
    BackendAssignment assignment;

    std::string render_text() const;
    std::string render_csv() const;
};

TuningReport tune_with_report(const hlir::Graph& g, const CostModel& cost);

/* ------------------------------------------------------------------ */
/*  Grouping                                                           */
/* ------------------------------------------------------------------ */

/// A maximal connected convex set of same-backend nodes, compiled into
/// one kernel. Convexity: no dataflow path between two members leaves
/// the group.
struct FusionGroup {
    int id = 0;
    BackendId backend = BackendId::REF;
    std::vector<std::string> members;   // topological order
};

/// Deterministic partition of the compute nodes: greedy in topological
/// order joining the latest eligible predecessor group, then adjacent
/// same-backend pairs are merged until no merge preserves convexity.
std::vector<FusionGroup> group_layers(const hlir::Graph& g, const BackendAssignment& assignment);

/// True iff no path between two members passes through a non-member.
bool is_convex(const hlir::Graph& g, const std::vector<std::string>& members);

} // namespace nnc::backends
