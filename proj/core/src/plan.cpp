#include "nnc/plan.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "nnc/error.hpp"
#include "nnc/kernels.hpp"
#include "nnc/passes.hpp"

namespace nnc::plan {

using backends::BackendId;
using backends::FusionGroup;
using hlir::Dim;
using hlir::Graph;
using hlir::Node;
using hlir::OpKind;
using schedule::MemCategory;

int ExecutionPlan::find_value(const std::string& name) const {
    for (size_t i = 0; i < values.size(); ++i)
        if (values[i].name == name) return static_cast<int>(i);
    return -1;
}

/* ------------------------------------------------------------------ */
/*  Compilation                                                        */
/* ------------------------------------------------------------------ */

namespace {

// Topological order of the group quotient DAG (convexity guarantees it
// is acyclic); ties broken by smallest member index.
std::vector<size_t> order_groups(const Graph& g, const std::vector<FusionGroup>& groups) {
    std::unordered_map<std::string, size_t> member_group;
    std::unordered_map<std::string, size_t> node_pos;
    auto topo = hlir::topo_order(g);
    for (size_t i = 0; i < topo.size(); ++i) node_pos[topo[i]] = i;
    for (size_t gi = 0; gi < groups.size(); ++gi)
        for (const std::string& m : groups[gi].members) member_group[m] = gi;

    std::unordered_map<std::string, size_t> producer_group;
    for (const auto& fg : groups)
        for (const std::string& m : fg.members)
            for (const std::string& o : g.find_node(m)->outputs)
                producer_group[o] = member_group[m];

    size_t n = groups.size();
    std::vector<std::set<size_t>> succ(n);
    std::vector<int> indeg(n, 0);
    for (size_t gi = 0; gi < n; ++gi) {
        for (const std::string& m : groups[gi].members) {
            for (const std::string& in : g.find_node(m)->inputs) {
                auto it = producer_group.find(in);
                if (it != producer_group.end() && it->second != gi)
                    if (succ[it->second].insert(gi).second) ++indeg[gi];
            }
        }
    }
    auto first_pos = [&](size_t gi) {
        size_t best = SIZE_MAX;
        for (const std::string& m : groups[gi].members) best = std::min(best, node_pos[m]);
        return best;
    };
    std::set<std::pair<size_t, size_t>> ready;  // (first member pos, group)
    for (size_t gi = 0; gi < n; ++gi)
        if (indeg[gi] == 0) ready.insert({first_pos(gi), gi});
    std::vector<size_t> order;
    while (!ready.empty()) {
        auto [pos, gi] = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(gi);
        for (size_t s : succ[gi])
            if (--indeg[s] == 0) ready.insert({first_pos(s), s});
    }
    if (order.size() != n)
        throw Error(Error::Code::UnsupportedInGroup, "group DAG has a cycle (non-convex groups?)");
    return order;
}

struct Compiler {
    const Graph& g;
    PlanRole role;
    const autodiff::VersionSet* versions;
    ExecutionPlan plan;
    std::unordered_map<std::string, uint32_t> slot_of;
    std::unordered_set<std::string> save_set;
    std::unordered_set<std::string> grad_outputs;
    std::unordered_set<std::string> output_set;

    Compiler(const Graph& graph, PlanRole r, const autodiff::VersionSet* vs)
        : g(graph), role(r), versions(vs) {
        plan.dtype = g.dtype;
        plan.role = r;
        output_set.insert(g.outputs.begin(), g.outputs.end());
        // Saved is a training-version category; the inference plan of
        // the same graph must not pin save-set values.
        if (versions && r != PlanRole::Inference)
            save_set.insert(versions->save_set.begin(), versions->save_set.end());
        if (versions && r == PlanRole::TrainBwd)
            for (const auto& [w, v] : versions->weight_grads) grad_outputs.insert(v);
    }

    uint32_t add_value(ValueEntry e) {
        auto it = slot_of.find(e.name);
        if (it != slot_of.end()) return it->second;
        uint32_t slot = static_cast<uint32_t>(plan.values.size());
        slot_of[e.name] = slot;
        plan.values.push_back(std::move(e));
        return slot;
    }

    uint32_t slot(const std::string& name) const {
        auto it = slot_of.find(name);
        if (it == slot_of.end())
            throw Error(Error::Code::ShapeMismatch, "plan: unknown value " + name);
        return it->second;
    }

    std::vector<Dim> dims_of(const std::string& value) const {
        const hlir::TensorType* t = g.type_of(value);
        if (!t) throw Error(Error::Code::ShapeMismatch, "plan: untyped value " + value);
        return t->shape.dims;
    }
};

} // namespace

ExecutionPlan compile_plan(const Graph& input_graph, const std::vector<FusionGroup>& groups,
                           PlanRole role, const autodiff::VersionSet* versions) {
    // Re-infer locally: value types plus the constraint list drive the
    // symbolic-dim tables.
    passes::ShapeInfo si = passes::infer_shapes(input_graph);
    const Graph& g = si.graph;
    if ((role == PlanRole::TrainFwd || role == PlanRole::TrainBwd) && !versions)
        throw Error(Error::Code::BadDocument, "training plans need the version set");

    Compiler c(g, role, versions);
    ExecutionPlan& plan = c.plan;

    // Vdim slots: symbols on graph inputs; derived rules from inference.
    std::map<int32_t, int64_t> slot_syms;
    for (const auto& gi : g.inputs)
        for (const Dim& d : gi.type.shape.dims)
            if (d.is_sym()) slot_syms.emplace(d.sym_id(), d.seed_extent());
    for (const auto& [sym, seed] : slot_syms) plan.vdims.push_back({sym, seed});
    for (const auto& cst : si.constraints) {
        if (cst.kind == passes::Constraint::Kind::Derived)
            plan.derived.push_back({cst.sym, cst.other, static_cast<uint8_t>(cst.rule), cst.p0,
                                    cst.p1});
        if (cst.kind == passes::Constraint::Kind::EqSym && !slot_syms.count(cst.sym))
            // coupled input axes share one slot id after binding; keep a
            // copy rule so either spelling resolves
            plan.derived.push_back({cst.sym, cst.other, 0, 0, 0});
    }

    // Fused-interior values: produced and consumed inside one FUSED_EW
    // group, not externally visible.
    std::unordered_map<std::string, int> group_of_node;
    for (size_t gi = 0; gi < groups.size(); ++gi)
        for (const std::string& m : groups[gi].members) group_of_node[m] = static_cast<int>(gi);
    std::unordered_map<std::string, int> producer_group;
    std::unordered_map<std::string, std::vector<int>> consumer_groups;
    for (const Node& n : g.nodes) {
        auto it = group_of_node.find(n.name);
        int gi = it == group_of_node.end() ? -1 : it->second;
        for (const std::string& o : n.outputs) producer_group[o] = gi;
        for (const std::string& in : n.inputs) consumer_groups[in].push_back(gi);
    }
    auto is_fused_interior = [&](const std::string& value) {
        auto pit = producer_group.find(value);
        if (pit == producer_group.end() || pit->second < 0) return false;
        if (groups[pit->second].backend != BackendId::FUSED_EW) return false;
        if (c.output_set.count(value) || c.save_set.count(value)) return false;
        auto cit = consumer_groups.find(value);
        if (cit == consumer_groups.end()) return false;  // unconsumed: keep visible
        return std::all_of(cit->second.begin(), cit->second.end(),
                           [&](int gi) { return gi == pit->second; });
    };

    // --- value table -------------------------------------------------
    // Parameters first (initializer map order), Const outputs aliased
    // to their payloads.
    std::set<std::string> const_payloads;
    for (const Node& n : g.nodes)
        if (n.op == OpKind::Const) const_payloads.insert(n.weights[0]);
    std::set<std::string> referenced_inits;
    for (const Node& n : g.nodes) {
        for (const std::string& w : n.weights)
            if (n.op != OpKind::Const) referenced_inits.insert(w);
        for (const std::string& in : n.inputs)
            if (g.initializers.count(in)) referenced_inits.insert(in);
    }
    for (const std::string& o : g.outputs)
        if (g.initializers.count(o)) referenced_inits.insert(o);

    for (const auto& [name, tensor] : g.initializers) {
        if (!referenced_inits.count(name)) continue;
        ValueEntry e;
        e.name = name;
        e.category = MemCategory::Parameter;
        e.resident = true;
        e.source_weight = name;
        e.dims = hlir::Shape::fixed(tensor.dims()).dims;
        c.add_value(std::move(e));
        plan.weight_names.push_back(name);
    }
    for (const Node& n : g.nodes) {
        if (n.op != OpKind::Const) continue;
        ValueEntry e;
        e.name = n.outputs[0];
        e.category = MemCategory::Parameter;
        e.resident = true;
        e.source_weight = n.weights[0];
        e.dims = c.dims_of(n.outputs[0]);
        c.add_value(std::move(e));
        if (std::find(plan.weight_names.begin(), plan.weight_names.end(), n.weights[0]) ==
            plan.weight_names.end())
            plan.weight_names.push_back(n.weights[0]);
    }

    // Graph inputs. In the backward plan, saved forward values arrive
    // as inputs too; only the "d.<output>" gradients count as Input.
    for (const auto& gi : g.inputs) {
        ValueEntry e;
        e.name = gi.name;
        bool is_grad_in =
            versions && std::find(versions->output_grads.begin(), versions->output_grads.end(),
                                  gi.name) != versions->output_grads.end();
        if (role == PlanRole::TrainBwd)
            e.category = is_grad_in ? MemCategory::Input : MemCategory::Saved;
        else
            e.category = c.save_set.count(gi.name) ? MemCategory::Saved : MemCategory::Input;
        e.resident = c.output_set.count(gi.name) ||
                     (role != PlanRole::TrainBwd && c.save_set.count(gi.name));
        e.dims = gi.type.shape.dims;
        uint32_t s = c.add_value(std::move(e));
        plan.input_slots.push_back(s);
    }

    // Node outputs and workspaces, group execution order.
    auto group_order = order_groups(g, groups);
    for (size_t step = 0; step < group_order.size(); ++step) {
        const FusionGroup& fg = groups[group_order[step]];
        for (const std::string& m : fg.members) {
            const Node& n = *g.find_node(m);
            for (const std::string& o : n.outputs) {
                ValueEntry e;
                e.name = o;
                bool grad_out = role == PlanRole::TrainBwd && c.grad_outputs.count(o);
                if (grad_out)
                    e.category = MemCategory::Intermediate;  // gradient buffer
                else if (role == PlanRole::TrainFwd && c.save_set.count(o))
                    e.category = MemCategory::Saved;
                else if (c.output_set.count(o))
                    e.category = MemCategory::Output;
                else
                    e.category = MemCategory::Intermediate;
                e.resident = c.output_set.count(o) ||
                             (role == PlanRole::TrainFwd && c.save_set.count(o)) || grad_out;
                e.storage = is_fused_interior(o) ? StorageClass::FusedRegister
                                                 : StorageClass::Buffer;
                e.dims = c.dims_of(o);
                c.add_value(std::move(e));
            }
            if (fg.backend == BackendId::GEMM_TILED && n.op == OpKind::Conv2D) {
                auto out_dims = c.dims_of(n.outputs[0]);
                const Tensor& k = g.initializers.at(n.weights[0]);
                int64_t cols = k.dims()[0] * k.dims()[1] * k.dims()[2];
                ValueEntry e;
                e.name = n.name + ".im2col";
                e.category = MemCategory::Intermediate;
                e.dims = {out_dims[0], out_dims[1], out_dims[2], Dim::fixed(cols)};
                c.add_value(std::move(e));
            }
        }
    }

    for (const std::string& o : g.outputs) plan.output_slots.push_back(c.slot(o));

    // --- kernels ------------------------------------------------------
    for (size_t step = 0; step < group_order.size(); ++step) {
        const FusionGroup& fg = groups[group_order[step]];
        GroupKernel gk;
        gk.id = static_cast<uint32_t>(step);
        gk.backend = fg.backend;
        gk.members = fg.members;
        std::string label;
        for (const std::string& m : fg.members) label += (label.empty() ? "" : "+") + m;
        gk.label = label;

        if (fg.backend == BackendId::FUSED_EW) {
            std::unordered_map<std::string, int32_t> reg_of;
            int32_t next_reg = 0;
            auto load = [&](const std::string& value) {
                auto it = reg_of.find(value);
                if (it != reg_of.end()) return it->second;
                EwInstr li;
                li.op = EwInstr::Op::Load;
                li.slot = c.slot(value);
                li.reg = next_reg++;
                gk.ew_program.push_back(li);
                reg_of[value] = li.reg;
                return li.reg;
            };
            for (const std::string& m : fg.members) {
                const Node& n = *g.find_node(m);
                EwInstr in;
                switch (n.op) {
                    case OpKind::ReLU: in.op = EwInstr::Op::Relu; break;
                    case OpKind::Add: in.op = EwInstr::Op::Add; break;
                    case OpKind::Mul: in.op = EwInstr::Op::Mul; break;
                    case OpKind::Identity: in.op = EwInstr::Op::Copy; break;
                    default:
                        throw Error(Error::Code::UnsupportedInGroup,
                                    n.name + ": not elementwise-fusable");
                }
                in.a = load(n.inputs[0]);
                if (n.inputs.size() > 1) in.b = load(n.inputs[1]);
                in.reg = next_reg++;
                reg_of[n.outputs[0]] = in.reg;
                gk.ew_program.push_back(in);
                if (plan.values[c.slot(n.outputs[0])].storage == StorageClass::Buffer) {
                    EwInstr st;
                    st.op = EwInstr::Op::Store;
                    st.a = in.reg;
                    st.slot = c.slot(n.outputs[0]);
                    gk.ew_program.push_back(st);
                }
            }
            gk.ew_regs = static_cast<uint32_t>(next_reg);
            gk.ew_elem_slot = c.slot(g.find_node(fg.members[0])->outputs[0]);
            // All member values share one shape by the elementwise rules.
        } else {
            for (const std::string& m : fg.members) {
                const Node& n = *g.find_node(m);
                if (n.op == OpKind::Input || n.op == OpKind::Const) continue;
                KernelStep ks;
                ks.op = n.op;
                ks.attrs = n.attrs;
                ks.tiled = fg.backend == BackendId::GEMM_TILED;
                for (const std::string& v : n.inputs) ks.inputs.push_back(c.slot(v));
                for (const std::string& v : n.outputs) ks.outputs.push_back(c.slot(v));
                for (const std::string& w : n.weights) ks.weights.push_back(c.slot(w));
                if (ks.tiled && n.op == OpKind::Conv2D)
                    ks.workspace = static_cast<int32_t>(c.slot(n.name + ".im2col"));
                gk.steps.push_back(std::move(ks));
            }
        }
        plan.groups.push_back(std::move(gk));
    }

    // --- execution steps ------------------------------------------------
    // One schedule step per executed kernel: each member of a REF/GEMM
    // group runs as its own step, a fused elementwise group runs as one.
    for (size_t gi = 0; gi < plan.groups.size(); ++gi) {
        const GroupKernel& gk = plan.groups[gi];
        if (gk.backend == BackendId::FUSED_EW) {
            plan.exec_steps.push_back({static_cast<uint32_t>(gi), -1, gk.label});
        } else {
            // groups hold compute nodes only, so members and steps align
            for (size_t k = 0; k < gk.steps.size(); ++k)
                plan.exec_steps.push_back(
                    {static_cast<uint32_t>(gi), static_cast<int32_t>(k), gk.members[k]});
        }
    }

    // --- static schedule ----------------------------------------------
    // Production and last-consumption step per slot (step 0 = prologue).
    std::vector<int32_t> prod_step(plan.values.size(), 0);
    std::vector<int32_t> last_use(plan.values.size(), 0);
    std::vector<bool> is_workspace(plan.values.size(), false);
    for (size_t si = 0; si < plan.exec_steps.size(); ++si) {
        const ExecStep& es = plan.exec_steps[si];
        const GroupKernel& gk = plan.groups[es.group];
        int32_t s = static_cast<int32_t>(si) + 1;
        if (es.kernel < 0) {
            for (const EwInstr& in : gk.ew_program) {
                if (in.op == EwInstr::Op::Load) last_use[in.slot] = std::max(last_use[in.slot], s);
                if (in.op == EwInstr::Op::Store) prod_step[in.slot] = s;
            }
        } else {
            const KernelStep& ks = gk.steps[es.kernel];
            for (uint32_t v : ks.inputs) last_use[v] = std::max(last_use[v], s);
            for (uint32_t v : ks.weights) last_use[v] = std::max(last_use[v], s);
            for (uint32_t v : ks.outputs) prod_step[v] = s;
            if (ks.workspace >= 0) is_workspace[ks.workspace] = true;
        }
    }

    auto push_event = [&](int32_t step, bool alloc, uint32_t slot) {
        plan.events.push_back({step, alloc, slot});
    };
    // Prologue: parameters then inputs.
    for (uint32_t s = 0; s < plan.values.size(); ++s) {
        if (plan.values[s].category == MemCategory::Parameter) push_event(0, true, s);
    }
    for (uint32_t s : plan.input_slots) push_event(0, true, s);
    for (uint32_t s : plan.input_slots)
        if (!plan.values[s].resident && last_use[s] == 0) push_event(0, false, s);

    auto allocatable = [&](uint32_t vs) {
        return plan.values[vs].storage == StorageClass::Buffer &&
               plan.values[vs].category != MemCategory::Parameter &&
               plan.values[vs].category != MemCategory::Input;
    };

    for (size_t si = 0; si < plan.exec_steps.size(); ++si) {
        const ExecStep& es = plan.exec_steps[si];
        const GroupKernel& gk = plan.groups[es.group];
        int32_t s = static_cast<int32_t>(si) + 1;
        std::vector<uint32_t> allocs;
        if (es.kernel < 0) {
            for (const EwInstr& in : gk.ew_program)
                if (in.op == EwInstr::Op::Store && allocatable(in.slot)) allocs.push_back(in.slot);
        } else {
            const KernelStep& ks = gk.steps[es.kernel];
            if (ks.workspace >= 0) allocs.push_back(static_cast<uint32_t>(ks.workspace));
            for (uint32_t v : ks.outputs)
                if (allocatable(v)) allocs.push_back(v);
        }
        for (uint32_t v : allocs) push_event(s, true, v);
        // Workspaces die with their kernel, then anything whose last use
        // (or production, for values nothing consumes) is this step.
        for (uint32_t v : allocs)
            if (is_workspace[v]) push_event(s, false, v);
        for (uint32_t v = 0; v < plan.values.size(); ++v) {
            const ValueEntry& e = plan.values[v];
            if (e.resident || e.storage != StorageClass::Buffer || is_workspace[v]) continue;
            if (e.category == MemCategory::Parameter) continue;
            if (std::max(last_use[v], prod_step[v]) == s) push_event(s, false, v);
        }
    }
    return plan;
}

VersionPlans compile_version_set(
    const autodiff::VersionSet& versions,
    const std::function<backends::BackendAssignment(const hlir::Graph&)>& assign) {
    VersionPlans out;
    auto build = [&](const Graph& g, PlanRole role) {
        auto assignment = assign(g);
        auto groups = backends::group_layers(g, assignment);
        return compile_plan(g, groups, role, &versions);
    };
    out.inference = build(versions.inference, PlanRole::Inference);
    out.train_fwd = build(versions.train_fwd, PlanRole::TrainFwd);
    out.train_bwd = build(versions.train_bwd, PlanRole::TrainBwd);
    out.save_set = versions.save_set;
    out.output_grads = versions.output_grads;
    out.weight_grads = versions.weight_grads;
    return out;
}

/* ------------------------------------------------------------------ */
/*  Binding                                                            */
/* ------------------------------------------------------------------ */

BoundPlan bind_plan(const ExecutionPlan& p, int64_t alignment,
                    const std::map<int32_t, int64_t>* bindings, bool allow_seed_fallback) {
    BoundPlan bp;
    bp.plan = &p;
    bp.alignment = alignment;

    for (const VdimSlot& vs : p.vdims) {
        int64_t extent = 0;
        if (bindings) {
            auto it = bindings->find(vs.sym);
            if (it != bindings->end()) extent = it->second;
        }
        if (extent == 0) {
            if (!allow_seed_fallback)
                throw Error(Error::Code::UnboundVdim, "unbound vdim #" + std::to_string(vs.sym));
            extent = vs.seed;
        }
        bp.sym_extents[vs.sym] = extent;
    }
    // Derivation records were emitted parents-first.
    for (const DerivedDim& d : p.derived) {
        auto it = bp.sym_extents.find(d.parent);
        if (it == bp.sym_extents.end())
            throw Error(Error::Code::UnboundVdim,
                        "derived vdim #" + std::to_string(d.sym) + " has unbound parent");
        bp.sym_extents[d.sym] =
            passes::apply_rule(static_cast<passes::Constraint::Rule>(d.rule), it->second, d.p0,
                               d.p1);
    }

    bp.values.resize(p.values.size());
    for (size_t i = 0; i < p.values.size(); ++i) {
        const ValueEntry& e = p.values[i];
        BoundValue bv;
        for (const Dim& d : e.dims) {
            if (d.is_sym()) {
                auto it = bp.sym_extents.find(d.sym_id());
                if (it == bp.sym_extents.end())
                    throw Error(Error::Code::UnboundVdim,
                                e.name + ": unbound vdim #" + std::to_string(d.sym_id()));
                bv.dims.push_back(it->second);
            } else {
                bv.dims.push_back(d.seed_extent());
            }
        }
        if (e.storage == StorageClass::Buffer) {
            int64_t raw = element_count(bv.dims) * static_cast<int64_t>(dtype_size(p.dtype));
            bv.bytes = schedule::align_bytes(raw, alignment);
        }
        bp.values[i] = std::move(bv);
    }
    return bp;
}

/* ------------------------------------------------------------------ */
/*  Serialization                                                      */
/* ------------------------------------------------------------------ */

namespace {

constexpr char kMagic[4] = {'S', 'O', 'L', 'P'};
constexpr uint32_t kVersion = 1;
constexpr uint64_t kDimSentinel = 0xFFFFFFFFull;

struct Writer {
    std::vector<uint8_t> out;
    void u8(uint8_t v) { out.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    void dim(const Dim& d) {
        if (d.is_sym())
            u64((static_cast<uint64_t>(static_cast<uint32_t>(d.sym_id())) << 32) | kDimSentinel);
        else
            u64(static_cast<uint64_t>(d.seed_extent()));
    }
};

struct PlanReader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > bytes.size())
            throw Error(Error::Code::BadMagic, "truncated plan file");
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    Dim dim(const ExecutionPlan& p) {
        uint64_t v = u64();
        if ((v & 0xFFFFFFFFull) == kDimSentinel) {
            int32_t sym = static_cast<int32_t>(v >> 32);
            int64_t seed = 1;
            for (const VdimSlot& s : p.vdims)
                if (s.sym == sym) seed = s.seed;
            return Dim::sym(sym, seed);
        }
        return Dim::fixed(static_cast<int64_t>(v));
    }
};

void write_attrs(Writer& w, const hlir::Attrs& a) {
    w.i64(a.out_channels);
    w.i64(a.kernel[0]);
    w.i64(a.kernel[1]);
    w.i64(a.stride[0]);
    w.i64(a.stride[1]);
    w.u8(static_cast<uint8_t>(a.padding));
    w.u8(a.has_bias ? 1 : 0);
    w.i64(a.out_hw[0]);
    w.i64(a.out_hw[1]);
    w.i64(a.out_features);
    w.i64(a.axis);
    w.u8(a.exclusive ? 1 : 0);
    w.u8(a.reverse ? 1 : 0);
    w.u32(static_cast<uint32_t>(a.fwd_dims.size()));
    for (int64_t d : a.fwd_dims) w.i64(d);
}

hlir::Attrs read_attrs(PlanReader& r) {
    hlir::Attrs a;
    a.out_channels = r.i64();
    a.kernel = {r.i64(), r.i64()};
    a.stride = {r.i64(), r.i64()};
    a.padding = static_cast<hlir::Padding>(r.u8());
    a.has_bias = r.u8() != 0;
    a.out_hw = {r.i64(), r.i64()};
    a.out_features = r.i64();
    a.axis = r.i64();
    a.exclusive = r.u8() != 0;
    a.reverse = r.u8() != 0;
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) a.fwd_dims.push_back(r.i64());
    return a;
}

} // namespace

std::vector<uint8_t> serialize_plan(const ExecutionPlan& p) {
    Writer w;
    w.out.insert(w.out.end(), kMagic, kMagic + 4);
    w.u32(kVersion);
    w.u8(static_cast<uint8_t>(p.dtype));
    w.u8(static_cast<uint8_t>(p.role));

    w.u32(static_cast<uint32_t>(p.vdims.size()));
    for (const VdimSlot& v : p.vdims) {
        w.u32(static_cast<uint32_t>(v.sym));
        w.u64(static_cast<uint64_t>(v.seed));
    }
    w.u32(static_cast<uint32_t>(p.derived.size()));
    for (const DerivedDim& d : p.derived) {
        w.u32(static_cast<uint32_t>(d.sym));
        w.u32(static_cast<uint32_t>(d.parent));
        w.u8(d.rule);
        w.i64(d.p0);
        w.i64(d.p1);
    }

    w.u32(static_cast<uint32_t>(p.values.size()));
    for (const ValueEntry& e : p.values) {
        w.str(e.name);
        w.u8(static_cast<uint8_t>(e.category));
        w.u8(static_cast<uint8_t>(e.storage));
        w.u8(e.resident ? 1 : 0);
        w.str(e.source_weight);
        w.u32(static_cast<uint32_t>(e.dims.size()));
        for (const Dim& d : e.dims) w.dim(d);
    }

    w.u32(static_cast<uint32_t>(p.groups.size()));
    for (const GroupKernel& gk : p.groups) {
        w.u32(gk.id);
        w.u8(static_cast<uint8_t>(gk.backend));
        w.str(gk.label);
        w.u32(static_cast<uint32_t>(gk.members.size()));
        for (const std::string& m : gk.members) w.str(m);
        w.u32(static_cast<uint32_t>(gk.steps.size()));
        for (const KernelStep& ks : gk.steps) {
            w.u8(static_cast<uint8_t>(ks.op));
            write_attrs(w, ks.attrs);
            w.u32(static_cast<uint32_t>(ks.inputs.size()));
            for (uint32_t v : ks.inputs) w.u32(v);
            w.u32(static_cast<uint32_t>(ks.outputs.size()));
            for (uint32_t v : ks.outputs) w.u32(v);
            w.u32(static_cast<uint32_t>(ks.weights.size()));
            for (uint32_t v : ks.weights) w.u32(v);
            w.u32(static_cast<uint32_t>(ks.workspace));
            w.u8(ks.tiled ? 1 : 0);
        }
        w.u32(gk.ew_regs);
        w.u32(gk.ew_elem_slot);
        w.u32(static_cast<uint32_t>(gk.ew_program.size()));
        for (const EwInstr& in : gk.ew_program) {
            w.u8(static_cast<uint8_t>(in.op));
            w.u32(static_cast<uint32_t>(in.a));
            w.u32(static_cast<uint32_t>(in.b));
            w.u32(static_cast<uint32_t>(in.reg));
            w.u32(in.slot);
        }
    }

    w.u32(static_cast<uint32_t>(p.exec_steps.size()));
    for (const ExecStep& es : p.exec_steps) {
        w.u32(es.group);
        w.u32(static_cast<uint32_t>(es.kernel));
        w.str(es.label);
    }
    w.u32(static_cast<uint32_t>(p.events.size()));
    for (const PlanEvent& e : p.events) {
        w.u32(static_cast<uint32_t>(e.step));
        w.u8(e.alloc ? 1 : 0);
        w.u32(e.slot);
    }
    w.u32(static_cast<uint32_t>(p.input_slots.size()));
    for (uint32_t s : p.input_slots) w.u32(s);
    w.u32(static_cast<uint32_t>(p.output_slots.size()));
    for (uint32_t s : p.output_slots) w.u32(s);
    w.u32(static_cast<uint32_t>(p.weight_names.size()));
    for (const std::string& n : p.weight_names) w.str(n);
    w.str(p.weights_file);
    return w.out;
}

ExecutionPlan load_plan(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw Error(Error::Code::BadMagic, "not a SOLP plan");
    PlanReader r{bytes, 4};
    uint32_t version = r.u32();
    if (version != kVersion)
        throw Error(Error::Code::BadMagic, "unsupported SOLP version " + std::to_string(version));

    ExecutionPlan p;
    p.dtype = static_cast<DType>(r.u8());
    p.role = static_cast<PlanRole>(r.u8());

    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        VdimSlot v;
        v.sym = static_cast<int32_t>(r.u32());
        v.seed = static_cast<int64_t>(r.u64());
        p.vdims.push_back(v);
    }
    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        DerivedDim d;
        d.sym = static_cast<int32_t>(r.u32());
        d.parent = static_cast<int32_t>(r.u32());
        d.rule = r.u8();
        d.p0 = r.i64();
        d.p1 = r.i64();
        p.derived.push_back(d);
    }

    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        ValueEntry e;
        e.name = r.str();
        e.category = static_cast<MemCategory>(r.u8());
        e.storage = static_cast<StorageClass>(r.u8());
        e.resident = r.u8() != 0;
        e.source_weight = r.str();
        uint32_t rank = r.u32();
        for (uint32_t d = 0; d < rank; ++d) e.dims.push_back(r.dim(p));
        p.values.push_back(std::move(e));
    }

    auto check_slot = [&](uint32_t s) {
        if (s >= p.values.size()) throw Error(Error::Code::BadMagic, "plan slot out of range");
        return s;
    };

    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        GroupKernel gk;
        gk.id = r.u32();
        gk.backend = static_cast<BackendId>(r.u8());
        gk.label = r.str();
        uint32_t m = r.u32();
        for (uint32_t k = 0; k < m; ++k) gk.members.push_back(r.str());
        uint32_t steps = r.u32();
        for (uint32_t k = 0; k < steps; ++k) {
            KernelStep ks;
            ks.op = static_cast<OpKind>(r.u8());
            ks.attrs = read_attrs(r);
            uint32_t c = r.u32();
            for (uint32_t j = 0; j < c; ++j) ks.inputs.push_back(check_slot(r.u32()));
            c = r.u32();
            for (uint32_t j = 0; j < c; ++j) ks.outputs.push_back(check_slot(r.u32()));
            c = r.u32();
            for (uint32_t j = 0; j < c; ++j) ks.weights.push_back(check_slot(r.u32()));
            ks.workspace = static_cast<int32_t>(r.u32());
            if (ks.workspace >= 0) check_slot(static_cast<uint32_t>(ks.workspace));
            ks.tiled = r.u8() != 0;
            gk.steps.push_back(std::move(ks));
        }
        gk.ew_regs = r.u32();
        gk.ew_elem_slot = r.u32();
        uint32_t instrs = r.u32();
        for (uint32_t k = 0; k < instrs; ++k) {
            EwInstr in;
            in.op = static_cast<EwInstr::Op>(r.u8());
            in.a = static_cast<int32_t>(r.u32());
            in.b = static_cast<int32_t>(r.u32());
            in.reg = static_cast<int32_t>(r.u32());
            in.slot = r.u32();
            if (in.op == EwInstr::Op::Load || in.op == EwInstr::Op::Store) check_slot(in.slot);
            gk.ew_program.push_back(in);
        }
        p.groups.push_back(std::move(gk));
    }

    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        ExecStep es;
        es.group = r.u32();
        es.kernel = static_cast<int32_t>(r.u32());
        es.label = r.str();
        if (es.group >= p.groups.size())
            throw Error(Error::Code::BadMagic, "plan exec step group out of range");
        p.exec_steps.push_back(std::move(es));
    }
    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        PlanEvent e;
        e.step = static_cast<int32_t>(r.u32());
        e.alloc = r.u8() != 0;
        e.slot = check_slot(r.u32());
        p.events.push_back(e);
    }
    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) p.input_slots.push_back(check_slot(r.u32()));
    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) p.output_slots.push_back(check_slot(r.u32()));
    n = r.u32();
    for (uint32_t i = 0; i < n; ++i) p.weight_names.push_back(r.str());
    p.weights_file = r.str();
    return p;
}

ExecutionPlan load_plan_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Error::Code::BadDocument, "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return load_plan(bytes);
}

void save_plan_file(const ExecutionPlan& p, const std::string& path) {
    auto bytes = serialize_plan(p);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Error::Code::BadDocument, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

} // namespace nnc::plan
