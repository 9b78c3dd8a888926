#include "nnc/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nnc/error.hpp"
#include "nnc/kernels.hpp"
#include "nnc/schedule.hpp"

namespace nnc::runtime {

using plan::BoundPlan;
using plan::EwInstr;
using plan::ExecutionPlan;
using plan::KernelStep;
using plan::StorageClass;
using schedule::MemCategory;

/* ------------------------------------------------------------------ */
/*  HostModel                                                          */
/* ------------------------------------------------------------------ */

HostModel HostModel::from_graph(const hlir::Graph& g) {
    HostModel m;
    for (const auto& [name, t] : g.initializers) {
        m.weights.emplace(name, t);
        m.stamps[name] = 0;
    }
    return m;
}

HostModel HostModel::from_store(const ingest::WeightStore& store) {
    HostModel m;
    for (const auto& [name, t] : store.tensors) {
        m.weights.emplace(name, t);
        m.stamps[name] = 0;
    }
    return m;
}

ingest::WeightStore HostModel::to_store() const {
    ingest::WeightStore s;
    s.tensors = weights;
    return s;
}

const Tensor& HostModel::tensor(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end())
        throw Error(Error::Code::ShapeMismatch, "model has no weight " + name);
    return it->second;
}

uint64_t HostModel::stamp(const std::string& name) const {
    auto it = stamps.find(name);
    return it == stamps.end() ? 0 : it->second;
}

void HostModel::set(const std::string& name, Tensor value) {
    weights[name] = std::move(value);
    ++stamps[name];
}

void HostModel::bump(const std::string& name) { ++stamps[name]; }

/* ------------------------------------------------------------------ */
/*  OffloadDevice                                                      */
/* ------------------------------------------------------------------ */

uint8_t* OffloadDevice::sync_weight(const std::string& name, const Tensor& host, uint64_t stamp,
                                    int64_t aligned_bytes) {
    auto it = cache_.find(name);
    if (it != cache_.end() && it->second.stamp == stamp &&
        static_cast<int64_t>(it->second.bytes.size()) == aligned_bytes)
        return it->second.bytes.data();

    CachedWeight cw;
    cw.bytes.assign(static_cast<size_t>(aligned_bytes), 0);
    std::memcpy(cw.bytes.data(), host.data(), host.byte_size());
    cw.stamp = stamp;
    auto [pos, inserted] = cache_.insert_or_assign(name, std::move(cw));
    stats_.h2d_bytes += static_cast<uint64_t>(aligned_bytes);
    stats_.weight_bytes += static_cast<uint64_t>(aligned_bytes);
    ++stats_.weight_transfers[name];
    return pos->second.bytes.data();
}

SyncStats OffloadDevice::sync_stats(bool reset) {
    SyncStats out = stats_;
    if (reset) stats_ = {};
    return out;
}

void OffloadDevice::preseed(const std::string& name, const Tensor& host, uint64_t stamp,
                            int64_t aligned_bytes) {
    CachedWeight cw;
    cw.bytes.assign(static_cast<size_t>(aligned_bytes), 0);
    std::memcpy(cw.bytes.data(), host.data(), host.byte_size());
    cw.stamp = stamp;
    cache_.insert_or_assign(name, std::move(cw));
}

/* ------------------------------------------------------------------ */
/*  ExecutionContext                                                   */
/* ------------------------------------------------------------------ */

uint8_t* ExecutionContext::data(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end())
        throw Error(Error::Code::ShapeMismatch, "no live buffer for " + name);
    return it->second.ptr;
}

uint8_t* ExecutionContext::alloc(const std::string& name, int64_t bytes) {
    if (buffers_.count(name))
        throw Error(Error::Code::ArenaOverflow, "double allocation of " + name);
    Buffer b;
    b.owned.assign(static_cast<size_t>(bytes), 0);
    b.ptr = b.owned.data();
    b.bytes = bytes;
    current_ += bytes;
    high_ = std::max(high_, current_);
    if (capacity >= 0 && current_ > capacity)
        throw Error(Error::Code::ArenaOverflow, "arena capacity exceeded at " + name);
    return buffers_.emplace(name, std::move(b)).first->second.ptr;
}

void ExecutionContext::adopt(const std::string& name, uint8_t* ptr, int64_t bytes) {
    if (buffers_.count(name))
        throw Error(Error::Code::ArenaOverflow, "double allocation of " + name);
    Buffer b;
    b.ptr = ptr;
    b.bytes = bytes;
    current_ += bytes;
    high_ = std::max(high_, current_);
    if (capacity >= 0 && current_ > capacity)
        throw Error(Error::Code::ArenaOverflow, "arena capacity exceeded at " + name);
    buffers_.emplace(name, std::move(b));
}

void ExecutionContext::release(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) return;
    current_ -= it->second.bytes;
    buffers_.erase(it);
}

void ExecutionContext::release_all() {
    buffers_.clear();
    current_ = 0;
}

/* ------------------------------------------------------------------ */
/*  Kernel dispatch                                                    */
/* ------------------------------------------------------------------ */

namespace {

template <typename T>
void run_step(const KernelStep& ks, const BoundPlan& bp, ExecutionContext& ctx) {
    const ExecutionPlan& p = *bp.plan;
    auto dims = [&](uint32_t slot) -> const std::vector<int64_t>& {
        return bp.values[slot].dims;
    };
    auto ptr = [&](uint32_t slot) {
        return reinterpret_cast<T*>(ctx.data(p.values[slot].name));
    };
    auto in = [&](size_t i) { return ptr(ks.inputs[i]); };
    auto out = [&](size_t i) { return ptr(ks.outputs[i]); };
    auto elems = [&](uint32_t slot) { return element_count(dims(slot)); };
    const hlir::Attrs& a = ks.attrs;

    switch (ks.op) {
        case hlir::OpKind::Identity:
            kernels::copy(in(0), out(0), elems(ks.inputs[0]));
            break;
        case hlir::OpKind::ReLU:
            kernels::relu(in(0), out(0), elems(ks.inputs[0]));
            break;
        case hlir::OpKind::ReluGrad:
            kernels::relu_grad(in(0), in(1), out(0), elems(ks.inputs[0]));
            break;
        case hlir::OpKind::Add:
            kernels::add(in(0), in(1), out(0), elems(ks.inputs[0]));
            break;
        case hlir::OpKind::Mul:
            kernels::mul(in(0), in(1), out(0), elems(ks.inputs[0]));
            break;
        case hlir::OpKind::CumSum:
            kernels::cumsum(in(0), out(0), dims(ks.inputs[0]), a.axis, a.exclusive, a.reverse);
            break;
        case hlir::OpKind::Flatten:
        case hlir::OpKind::Unflatten:
            kernels::copy(in(0), out(0), elems(ks.inputs[0]));
            break;
        case hlir::OpKind::Dense: {
            const auto& xd = dims(ks.inputs[0]);
            const T* bias = a.has_bias ? ptr(ks.weights[1]) : nullptr;
            if (ks.tiled)
                kernels::dense_tiled(in(0), ptr(ks.weights[0]), bias, out(0), xd[0], xd[1],
                                     a.out_features);
            else
                kernels::dense(in(0), ptr(ks.weights[0]), bias, out(0), xd[0], xd[1],
                               a.out_features);
            break;
        }
        case hlir::OpKind::DenseGradInput: {
            const auto& gd = dims(ks.inputs[0]);
            const auto& od = dims(ks.outputs[0]);
            kernels::dense_grad_input(in(0), ptr(ks.weights[0]), out(0), gd[0], od[1], gd[1]);
            break;
        }
        case hlir::OpKind::DenseGradWeight: {
            const auto& xd = dims(ks.inputs[0]);
            const auto& gd = dims(ks.inputs[1]);
            kernels::dense_grad_weight(in(0), in(1), out(0), xd[0], xd[1], gd[1]);
            break;
        }
        case hlir::OpKind::SumCols: {
            const auto& gd = dims(ks.inputs[0]);
            kernels::sum_cols(in(0), out(0), gd[0], gd[1]);
            break;
        }
        case hlir::OpKind::Conv2D: {
            auto gm = kernels::conv_geometry(dims(ks.inputs[0]), a);
            const T* bias = a.has_bias ? ptr(ks.weights[1]) : nullptr;
            if (ks.tiled)
                kernels::conv2d_tiled(in(0), ptr(ks.weights[0]), bias, out(0),
                                      ptr(static_cast<uint32_t>(ks.workspace)), gm);
            else
                kernels::conv2d(in(0), ptr(ks.weights[0]), bias, out(0), gm);
            break;
        }
        case hlir::OpKind::Conv2DGradInput: {
            auto gm = kernels::conv_geometry(dims(ks.outputs[0]), a);
            kernels::conv2d_grad_input(in(0), ptr(ks.weights[0]), out(0), gm);
            break;
        }
        case hlir::OpKind::Conv2DGradWeight: {
            auto gm = kernels::conv_geometry(dims(ks.inputs[0]), a);
            kernels::conv2d_grad_weight(in(0), in(1), out(0), gm);
            break;
        }
        case hlir::OpKind::SumNHW: {
            const auto& gd = dims(ks.inputs[0]);
            kernels::sum_nhw(in(0), out(0), gd[0], gd[1], gd[2], gd[3]);
            break;
        }
        case hlir::OpKind::MaxPool2D: {
            auto gm = kernels::pool_geometry(dims(ks.inputs[0]), a);
            T* idx = ks.outputs.size() == 2 ? out(1) : nullptr;
            kernels::maxpool2d(in(0), out(0), idx, gm);
            break;
        }
        case hlir::OpKind::MaxPool2DGrad: {
            auto gm = kernels::pool_geometry(dims(ks.outputs[0]), a);
            kernels::maxpool2d_grad(in(0), in(1), out(0), gm);
            break;
        }
        case hlir::OpKind::AdaptiveAvgPool2D: {
            const auto& xd = dims(ks.inputs[0]);
            kernels::adaptive_avg_pool2d(in(0), out(0), xd[0], xd[1], xd[2], xd[3], a.out_hw[0],
                                         a.out_hw[1]);
            break;
        }
        case hlir::OpKind::AdaptiveAvgPool2DGrad: {
            const auto& gd = dims(ks.inputs[0]);
            const auto& od = dims(ks.outputs[0]);
            kernels::adaptive_avg_pool2d_grad(in(0), out(0), gd[0], od[1], od[2], gd[3], gd[1],
                                              gd[2]);
            break;
        }
        default:
            throw Error(Error::Code::UnsupportedInGroup,
                        std::string("no runtime kernel for ") + hlir::op_name(ks.op));
    }
}

template <typename T>
void run_ew(const plan::GroupKernel& gk, const BoundPlan& bp, ExecutionContext& ctx) {
    const ExecutionPlan& p = *bp.plan;
    int64_t n = element_count(bp.values[gk.ew_elem_slot].dims);
    std::vector<T*> slot_ptr(gk.ew_program.size(), nullptr);
    for (size_t i = 0; i < gk.ew_program.size(); ++i) {
        const EwInstr& in = gk.ew_program[i];
        if (in.op == EwInstr::Op::Load || in.op == EwInstr::Op::Store)
            slot_ptr[i] = reinterpret_cast<T*>(ctx.data(p.values[in.slot].name));
    }
    std::vector<T> regs(std::max<uint32_t>(gk.ew_regs, 1));
    for (int64_t i = 0; i < n; ++i) {
        for (size_t k = 0; k < gk.ew_program.size(); ++k) {
            const EwInstr& instr = gk.ew_program[k];
            switch (instr.op) {
                case EwInstr::Op::Load: regs[instr.reg] = slot_ptr[k][i]; break;
                case EwInstr::Op::Relu:
                    regs[instr.reg] = regs[instr.a] > T(0) ? regs[instr.a] : T(0);
                    break;
                case EwInstr::Op::Add: regs[instr.reg] = regs[instr.a] + regs[instr.b]; break;
                case EwInstr::Op::Mul: regs[instr.reg] = regs[instr.a] * regs[instr.b]; break;
                case EwInstr::Op::Copy: regs[instr.reg] = regs[instr.a]; break;
                case EwInstr::Op::Store: slot_ptr[k][i] = regs[instr.a]; break;
            }
        }
    }
}

} // namespace

/* ------------------------------------------------------------------ */
/*  execute                                                            */
/* ------------------------------------------------------------------ */

std::map<std::string, Tensor> execute(const ExecutionPlan& p,
                                      const std::map<std::string, Tensor>& inputs,
                                      const HostModel& model, OffloadDevice* device,
                                      const ExecOptions& opts, ExecutionContext* shared_ctx) {
    // 1. Resolve vdim bindings from explicit options and input shapes.
    std::map<int32_t, int64_t> bindings = opts.bindings;
    std::set<int32_t> slot_syms;
    for (const auto& vs : p.vdims) slot_syms.insert(vs.sym);
    for (uint32_t slot : p.input_slots) {
        const plan::ValueEntry& e = p.values[slot];
        auto fed = inputs.find(e.name);
        if (fed == inputs.end()) continue;
        const auto& got = fed->second.dims();
        if (got.size() != e.dims.size())
            throw Error(Error::Code::ShapeMismatch,
                        e.name + ": rank " + std::to_string(got.size()) + ", plan expects " +
                            std::to_string(e.dims.size()));
        for (size_t i = 0; i < got.size(); ++i) {
            if (!e.dims[i].is_sym()) {
                if (e.dims[i].seed_extent() != got[i])
                    throw Error(Error::Code::ShapeMismatch,
                                e.name + ": axis " + std::to_string(i) + " expected " +
                                    std::to_string(e.dims[i].seed_extent()) + ", got " +
                                    std::to_string(got[i]));
            } else if (slot_syms.count(e.dims[i].sym_id())) {
                auto [it, fresh] = bindings.emplace(e.dims[i].sym_id(), got[i]);
                if (!fresh && it->second != got[i])
                    throw Error(Error::Code::ShapeMismatch,
                                e.name + ": conflicting extents for vdim #" +
                                    std::to_string(e.dims[i].sym_id()));
            }
        }
    }
    BoundPlan bp = plan::bind_plan(p, opts.alignment, &bindings, /*allow_seed_fallback=*/false);

    // Fed inputs must match their fully bound shapes.
    for (uint32_t slot : p.input_slots) {
        auto fed = inputs.find(p.values[slot].name);
        if (fed == inputs.end()) continue;
        if (fed->second.dims() != bp.values[slot].dims)
            throw Error(Error::Code::ShapeMismatch,
                        p.values[slot].name + ": expected " +
                            dims_to_string(bp.values[slot].dims) + ", got " +
                            dims_to_string(fed->second.dims()));
        if (fed->second.dtype() != p.dtype)
            throw Error(Error::Code::ShapeMismatch, p.values[slot].name + ": dtype mismatch");
    }

    ExecutionContext local_ctx(opts.alignment);
    ExecutionContext& ctx = shared_ctx ? *shared_ctx : local_ctx;

    auto trace = [&](const std::string& line) {
        if (opts.trace) opts.trace->push_back(line);
    };

    // 2. Replay the static schedule, running each group at its step.
    size_t ei = 0;
    auto process_events = [&](int32_t step) {
        for (; ei < p.events.size() && p.events[ei].step == step; ++ei) {
            const plan::PlanEvent& e = p.events[ei];
            const plan::ValueEntry& v = p.values[e.slot];
            int64_t bytes = bp.values[e.slot].bytes;
            if (!e.alloc) {
                ctx.release(v.name);
                continue;
            }
            if (ctx.live(v.name)) continue;  // carried over (training boundary)
            if (v.category == MemCategory::Parameter) {
                const Tensor& host = model.tensor(v.source_weight);
                if (static_cast<int64_t>(host.byte_size()) > bytes ||
                    host.dtype() != p.dtype)
                    throw Error(Error::Code::ShapeMismatch,
                                v.source_weight + ": stored weight does not match plan");
                if (device) {
                    uint8_t* dev =
                        device->sync_weight(v.source_weight, host, model.stamp(v.source_weight),
                                            bytes);
                    ctx.adopt(v.name, dev, bytes);
                } else {
                    uint8_t* dst = ctx.alloc(v.name, bytes);
                    std::memcpy(dst, host.data(), host.byte_size());
                }
            } else {
                auto fed = inputs.find(v.name);
                if (fed == inputs.end())
                    throw Error(Error::Code::ShapeMismatch, "missing input " + v.name);
                uint8_t* dst = ctx.alloc(v.name, bytes);
                std::memcpy(dst, fed->second.data(), fed->second.byte_size());
                if (device) device->count_h2d(bytes);
            }
        }
    };

    process_events(0);
    for (size_t si = 0; si < p.exec_steps.size(); ++si) {
        const plan::ExecStep& es = p.exec_steps[si];
        const plan::GroupKernel& gk = p.groups[es.group];
        int32_t step = static_cast<int32_t>(si) + 1;
        // Allocs precede frees within a step's event run; the kernel
        // runs in between.
        size_t alloc_end = ei;
        while (alloc_end < p.events.size() && p.events[alloc_end].step == step &&
               p.events[alloc_end].alloc)
            ++alloc_end;
        for (; ei < alloc_end; ++ei) {
            const plan::PlanEvent& e = p.events[ei];
            if (!ctx.live(p.values[e.slot].name))
                ctx.alloc(p.values[e.slot].name, bp.values[e.slot].bytes);
        }
        trace("exec:" + es.label);
        if (es.kernel < 0) {
            if (p.dtype == DType::F32)
                run_ew<float>(gk, bp, ctx);
            else
                run_ew<double>(gk, bp, ctx);
        } else {
            const KernelStep& ks = gk.steps[es.kernel];
            if (p.dtype == DType::F32)
                run_step<float>(ks, bp, ctx);
            else
                run_step<double>(ks, bp, ctx);
        }
        process_events(step);  // remaining frees of this step
    }

    // 3. Materialize outputs.
    std::map<std::string, Tensor> out;
    for (uint32_t slot : p.output_slots) {
        const plan::ValueEntry& v = p.values[slot];
        if (opts.materialize && !opts.materialize->count(v.name)) continue;
        Tensor t(p.dtype, bp.values[slot].dims);
        std::memcpy(t.data(), ctx.data(v.name), t.byte_size());
        if (device) device->count_d2h(bp.values[slot].bytes);
        out.emplace(v.name, std::move(t));
    }

    if (!shared_ctx) {
        // Residency check: what stays alive is exactly the resident set.
        int64_t expect = 0;
        for (size_t i = 0; i < p.values.size(); ++i)
            if ((p.values[i].resident || p.values[i].category == MemCategory::Parameter) &&
                p.values[i].storage == StorageClass::Buffer)
                expect += bp.values[i].bytes;
        if (ctx.current_bytes() != expect)
            throw Error(Error::Code::ArenaOverflow,
                        "live bytes after completion diverge from the resident set");
    }
    return out;
}

/* ------------------------------------------------------------------ */
/*  Loss, update, training loop                                        */
/* ------------------------------------------------------------------ */

L1Result l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.dims() != target.dims() || pred.dtype() != target.dtype())
        throw Error(Error::Code::ShapeMismatch, "l1_loss: operand shapes differ");
    L1Result r;
    r.grad = Tensor(pred.dtype(), pred.dims());
    int64_t n = pred.elements();
    double inv = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        double d = pred.get(i) - target.get(i);
        acc += std::abs(d);
        r.grad.set(i, d > 0 ? inv : (d < 0 ? -inv : 0.0));
    }
    r.loss = acc * inv;
    return r;
}

void sgd_step(HostModel& model, const std::map<std::string, Tensor>& grads, double lr) {
    for (const auto& [name, g] : grads) {
        auto it = model.weights.find(name);
        if (it == model.weights.end())
            throw Error(Error::Code::MissingGrad, "gradient for unknown weight " + name);
        Tensor& w = it->second;
        if (w.dims() != g.dims())
            throw Error(Error::Code::ShapeMismatch, name + ": gradient shape mismatch");
        for (int64_t i = 0; i < w.elements(); ++i) w.set(i, w.get(i) - lr * g.get(i));
        model.bump(name);
    }
}

double train_step(const plan::VersionPlans& plans, const std::map<std::string, Tensor>& inputs,
                  const Tensor& target, HostModel& model, double lr, OffloadDevice* device,
                  const ExecOptions& opts, ExecutionContext* shared_ctx) {
    if (plans.inference.output_slots.size() != 1)
        throw Error(Error::Code::BadDocument, "train_step expects exactly one prediction output");
    const std::string pred_name =
        plans.inference.values[plans.inference.output_slots[0]].name;

    auto trace = [&](const char* phase) {
        if (opts.trace) opts.trace->push_back(phase);
    };

    ExecutionContext local_ctx(opts.alignment);
    ExecutionContext& ctx = shared_ctx ? *shared_ctx : local_ctx;

    trace("forward");
    ExecOptions fwd_opts = opts;
    std::set<std::string> want{pred_name};
    fwd_opts.materialize = &want;
    auto fwd_out = execute(plans.train_fwd, inputs, model, device, fwd_opts, &ctx);

    trace("loss");
    L1Result l1 = l1_loss(fwd_out.at(pred_name), target);

    trace("backward");
    std::map<std::string, Tensor> bwd_feed;
    bwd_feed.emplace("d." + pred_name, std::move(l1.grad));
    auto bwd_out = execute(plans.train_bwd, bwd_feed, model, device, opts, &ctx);

    trace("update");
    std::map<std::string, Tensor> grads;
    for (const auto& [weight, value] : plans.weight_grads) {
        auto it = bwd_out.find(value);
        if (it == bwd_out.end())
            throw Error(Error::Code::MissingGrad, "backward produced no gradient for " + weight);
        grads.emplace(weight, it->second);
    }
    sgd_step(model, grads, lr);
    return l1.loss;
}

} // namespace nnc::runtime
