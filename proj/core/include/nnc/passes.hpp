#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nnc/hlir.hpp"

namespace nnc::passes {

/* ------------------------------------------------------------------ */
/*  Dimension constraints                                              */
/* ------------------------------------------------------------------ */

/// Relations between symbolic dims collected during shape inference.
/// EqConst pins a symbol to a structural constant (weight channel
/// counts, Dense in_features). EqSym couples two symbols that must
/// stay equal (elementwise operands). Derived links a fresh output
/// symbol to the input symbol it was computed from; for dynamism it
/// behaves like EqSym (fixing either end fixes both), and the rule is
/// kept so enabled chains can be evaluated at bind time. Opaque covers
/// non-affine relations (multi-symbol products at Flatten) and
/// conservatively fixes every participant.
struct Constraint {
    enum class Kind { EqConst, EqSym, Derived, Opaque };
    enum class Rule { None, CeilDiv, ValidWindow, Scale };

    Kind kind = Kind::EqConst;
    int32_t sym = -1;             // EqConst target, EqSym lhs, Derived child
    int32_t other = -1;           // EqSym rhs, Derived parent
    int64_t value = 0;            // EqConst constant
    std::vector<int32_t> syms;    // Opaque participants
    Rule rule = Rule::None;       // Derived: child = rule(parent)
    int64_t p0 = 0, p1 = 0;       // CeilDiv: ceil(x/p0); ValidWindow: (x-p0)/p1+1; Scale: x*p0

    static Constraint eq_const(int32_t s, int64_t v);
    static Constraint eq_sym(int32_t a, int32_t b);
    static Constraint derived(int32_t child, int32_t parent, Rule r, int64_t p0, int64_t p1 = 0);
    static Constraint opaque(std::vector<int32_t> participants);
};

int64_t apply_rule(Constraint::Rule rule, int64_t x, int64_t p0, int64_t p1);

struct ShapeInfo {
    hlir::Graph graph;                     // value_types filled for every value
    std::vector<Constraint> constraints;
};

/// Annotates every value with a TensorType and records dim constraints.
/// Throws Error{RankError, ExtentMismatch} on rule violations.
ShapeInfo infer_shapes(const hlir::Graph& g);

/* ------------------------------------------------------------------ */
/*  Dynamic-dimension report and binding                               */
/* ------------------------------------------------------------------ */

struct VdimReport {
    struct Entry {
        std::string name;
        std::vector<std::string> dims;   // "#k" or a decimal extent
    };
    std::vector<Entry> inputs;
    std::vector<Entry> outputs;

    struct FreeSym {
        int32_t id;        // dense report id (#0, #1, ...)
        int64_t seed;      // extent observed at ingest
    };
    std::vector<FreeSym> free_syms;

    /// graph sym id -> report id for free symbols (absent = fixed).
    std::map<int32_t, int32_t> report_id;

    bool is_free(int32_t graph_sym) const { return report_id.count(graph_sym) != 0; }
    std::string render() const;
};

VdimReport infer_vdims(const hlir::Graph& g);

struct VdimBinding {
    enum class Action { Enable, Disable, Override };
    struct Item {
        Action action = Action::Disable;
        int64_t extent = 0;   // Override only
    };
    std::map<int32_t, Item> items;   // keyed by report id

    static VdimBinding all_disable() { return {}; }
    static VdimBinding enable(std::initializer_list<int32_t> ids);
};

/// Resolves free symbols per the binding: Disable (and unmentioned)
/// collapse to seeds, Override substitutes and re-infers, Enable keeps
/// the symbol dynamic (renumbered to its report id). Returns the graph
/// with shapes re-inferred.
hlir::Graph bind_vdims(const hlir::Graph& g, const VdimReport& report, const VdimBinding& binding);

/* ------------------------------------------------------------------ */
/*  Structural passes                                                  */
/* ------------------------------------------------------------------ */

/// Keeps exactly the nodes backward-reachable from graph outputs;
/// drops initializers with no remaining consumer.
hlir::Graph eliminate_dead(const hlir::Graph& g);

/// Evaluates every maximal fixed-shape constant subgraph once and
/// replaces it with a Const node. Symbolic-shape nodes are skipped.
hlir::Graph fold_constants(const hlir::Graph& g);

/// Splices interior Identity nodes and collapses consecutive Flattens.
/// Node names are preserved; no renaming.
hlir::Graph canonicalize(const hlir::Graph& g);

/* ------------------------------------------------------------------ */
/*  Pipeline                                                           */
/* ------------------------------------------------------------------ */

struct OptimizeResult {
    hlir::Graph graph;       // bound, shape-annotated
    VdimReport report;       // as seen before binding
};

/// canonicalize -> eliminate_dead -> fold_constants -> infer_shapes ->
/// infer_vdims -> bind_vdims.
OptimizeResult optimize(const hlir::Graph& g, const VdimBinding& binding = {});

} // namespace nnc::passes
