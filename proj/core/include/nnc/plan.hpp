#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nnc/autodiff.hpp"
#include "nnc/backends.hpp"
#include "nnc/hlir.hpp"
#include "nnc/schedule.hpp"

namespace nnc::plan {

/* ------------------------------------------------------------------ */
/*  Value table                                                        */
/* ------------------------------------------------------------------ */

/// Buffer entries own schedule-driven storage; FusedRegister entries
/// are values an elementwise group keeps in per-element registers —
/// they appear in the table (every graph value does) but never
/// allocate.
enum class StorageClass : uint8_t { Buffer = 0, FusedRegister = 1 };

struct ValueEntry {
    std::string name;
    schedule::MemCategory category = schedule::MemCategory::Intermediate;
    StorageClass storage = StorageClass::Buffer;
    bool resident = false;              // no Free event in this plan
    std::string source_weight;          // Parameter entries: initializer to bind
    std::vector<hlir::Dim> dims;        // symbolic dims reference vdim ids
};

/* ------------------------------------------------------------------ */
/*  Kernels                                                            */
/* ------------------------------------------------------------------ */

struct KernelStep {
    hlir::OpKind op = hlir::OpKind::Identity;
    hlir::Attrs attrs;
    std::vector<uint32_t> inputs;       // value-table slots
    std::vector<uint32_t> outputs;
    std::vector<uint32_t> weights;
    int32_t workspace = -1;             // im2col scratch slot (tiled conv)
    bool tiled = false;                 // GEMM_TILED lowering
};

/// Per-element program of a fused elementwise group.
struct EwInstr {
    enum class Op : uint8_t { Load = 0, Relu = 1, Add = 2, Mul = 3, Copy = 4, Store = 5 };
    Op op = Op::Load;
    int32_t a = -1, b = -1;             // source registers
    int32_t reg = -1;                   // destination register
    uint32_t slot = 0;                  // value slot for Load/Store
};

struct GroupKernel {
    uint32_t id = 0;
    backends::BackendId backend = backends::BackendId::REF;
    std::string label;                  // report name, e.g. "g0[relu1+mul1]"
    std::vector<std::string> members;
    std::vector<KernelStep> steps;      // REF / GEMM_TILED
    std::vector<EwInstr> ew_program;    // FUSED_EW
    uint32_t ew_regs = 0;
    uint32_t ew_elem_slot = 0;          // slot whose element count drives the loop
};

/* ------------------------------------------------------------------ */
/*  Static schedule                                                    */
/* ------------------------------------------------------------------ */

/// Sizes are resolved at bind time; the serialized schedule carries
/// (step, kind, slot) only.
struct PlanEvent {
    int32_t step = 0;
    bool alloc = true;
    uint32_t slot = 0;
};

/// One executed kernel: a member step of a REF/GEMM group, or the
/// whole single pass of a fused elementwise group (kernel = -1).
/// Schedule step s >= 1 refers to exec_steps[s-1]; step 0 is the
/// prologue.
struct ExecStep {
    uint32_t group = 0;
    int32_t kernel = -1;
    std::string label;
};

/* ------------------------------------------------------------------ */
/*  Dynamic dims                                                       */
/* ------------------------------------------------------------------ */

struct VdimSlot {
    int32_t sym = 0;                    // == report id after binding
    int64_t seed = 1;
};

/// Non-slot symbol computed from a parent: child = rule(parent).
struct DerivedDim {
    int32_t sym = 0;
    int32_t parent = 0;
    uint8_t rule = 0;                   // passes::Constraint::Rule
    int64_t p0 = 0, p1 = 0;
};

/* ------------------------------------------------------------------ */
/*  Plan                                                               */
/* ------------------------------------------------------------------ */

enum class PlanRole : uint8_t { Inference = 0, TrainFwd = 1, TrainBwd = 2 };

struct ExecutionPlan {
    DType dtype = DType::F32;
    PlanRole role = PlanRole::Inference;
    std::vector<VdimSlot> vdims;
    std::vector<DerivedDim> derived;
    std::vector<ValueEntry> values;
    std::vector<GroupKernel> groups;
    std::vector<ExecStep> exec_steps;
    std::vector<PlanEvent> events;
    std::vector<uint32_t> input_slots;     // fed by the caller, feed order
    std::vector<uint32_t> output_slots;    // returned, graph output order
    std::vector<std::string> weight_names; // distinct source weights
    std::string weights_file;              // companion container, may be empty

    int find_value(const std::string& name) const;
};

/// Lowers a grouped graph. The role picks memory categories: save-set
/// values are Saved in the forward training plan; gradient outputs are
/// plan-resident Intermediates of the backward plan.
ExecutionPlan compile_plan(const hlir::Graph& g, const std::vector<backends::FusionGroup>& groups,
                           PlanRole role = PlanRole::Inference,
                           const autodiff::VersionSet* versions = nullptr);

struct VersionPlans {
    ExecutionPlan inference;
    ExecutionPlan train_fwd;
    ExecutionPlan train_bwd;
    std::vector<std::string> save_set;
    std::vector<std::string> output_grads;
    std::map<std::string, std::string> weight_grads;
};

/// Tunes, groups and compiles each version individually with the same
/// assignment policy.
VersionPlans compile_version_set(
    const autodiff::VersionSet& versions,
    const std::function<backends::BackendAssignment(const hlir::Graph&)>& assign);

/* ------------------------------------------------------------------ */
/*  Serialization (SOLP)                                               */
/* ------------------------------------------------------------------ */

std::vector<uint8_t> serialize_plan(const ExecutionPlan& p);
ExecutionPlan load_plan(const std::vector<uint8_t>& bytes);
ExecutionPlan load_plan_file(const std::string& path);
void save_plan_file(const ExecutionPlan& p, const std::string& path);

/* ------------------------------------------------------------------ */
/*  Binding (shared by the estimator and the runtime)                  */
/* ------------------------------------------------------------------ */

struct BoundValue {
    std::vector<int64_t> dims;
    int64_t bytes = 0;        // aligned; 0 for FusedRegister entries
};

struct BoundPlan {
    const ExecutionPlan* plan = nullptr;
    int64_t alignment = 64;
    std::map<int32_t, int64_t> sym_extents;
    std::vector<BoundValue> values;
};

/// Resolves every symbolic dim. Missing bindings fall back to seeds
/// when `allow_seed_fallback` (the estimator's behavior); the runtime
/// requires full bindings and throws UnboundVdim instead.
BoundPlan bind_plan(const ExecutionPlan& p, int64_t alignment,
                    const std::map<int32_t, int64_t>* bindings, bool allow_seed_fallback);

} // namespace nnc::plan
