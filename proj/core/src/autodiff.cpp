#include "nnc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "nnc/error.hpp"
#include "nnc/ingest.hpp"
#include "nnc/kernels.hpp"
#include "nnc/passes.hpp"

namespace nnc::autodiff {

using hlir::Attrs;
using hlir::Graph;
using hlir::Node;
using hlir::OpKind;
using hlir::TensorType;

std::vector<std::string> trainable_weights(const Graph& g) {
    std::set<std::string> found;
    for (const Node& n : g.nodes) {
        if (n.op != OpKind::Conv2D && n.op != OpKind::Dense) continue;
        for (const std::string& w : n.weights) found.insert(w);
    }
    return {found.begin(), found.end()};
}

namespace {

struct BwdBuilder {
    const Graph& fwd;                         // shape-annotated forward graph
    Graph bwd;
    // Gradient contributions per forward value / weight.
    std::map<std::string, std::vector<std::string>> contrib;
    std::unordered_set<std::string> bwd_value_names;
    int acc_counter = 0;

    explicit BwdBuilder(const Graph& f) : fwd(f) { bwd.dtype = f.dtype; }

    std::string unique(std::string base) {
        std::string name = base;
        int k = 0;
        while (bwd_value_names.count(name)) name = base + "_" + std::to_string(k++);
        bwd_value_names.insert(name);
        return name;
    }

    std::string emit(std::string base, OpKind op, std::vector<std::string> inputs, Attrs attrs = {},
                     std::vector<std::string> weights = {}) {
        Node n;
        n.name = unique(std::move(base));
        n.op = op;
        n.attrs = std::move(attrs);
        n.inputs = std::move(inputs);
        n.outputs = {n.name};
        n.weights = std::move(weights);
        bwd.nodes.push_back(n);
        return bwd.nodes.back().name;
    }

    void add_contrib(const std::string& target, const std::string& grad_value) {
        contrib[target].push_back(grad_value);
    }

    // Collapses the contribution list of a target into one value.
    std::string finalize(const std::string& target) {
        auto it = contrib.find(target);
        if (it == contrib.end() || it->second.empty()) return {};
        std::vector<std::string>& list = it->second;
        std::string acc = list[0];
        for (size_t i = 1; i < list.size(); ++i)
            acc = emit("d." + target + ".acc" + std::to_string(acc_counter++), OpKind::Add,
                       {acc, list[i]});
        return acc;
    }

    const std::vector<int64_t> seed_dims_of(const std::string& value) const {
        const TensorType* t = fwd.type_of(value);
        if (!t) throw Error(Error::Code::ShapeMismatch, "untyped forward value " + value);
        return t->shape.seed_dims();
    }
};

} // namespace

VersionSet derive_versions(const Graph& input, const DeriveOptions& opts) {
    Graph g = input.value_types.empty() ? passes::infer_shapes(input).graph : input;

    VersionSet vs;
    vs.inference = g;

    BwdBuilder b(g);

    // Seed output gradients.
    for (const std::string& o : g.outputs) {
        std::string grad_in = "d." + o;
        vs.output_grads.push_back(grad_in);
        b.bwd_value_names.insert(grad_in);
        b.add_contrib(o, grad_in);
    }

    // Reverse topological walk, emitting vector-Jacobian products.
    auto order = hlir::topo_order(g);
    std::unordered_map<std::string, const Node*> by_name;
    for (const Node& n : g.nodes) by_name[n.name] = &n;

    std::unordered_set<std::string> argmax_needed;  // MaxPool2D node names

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node& n = *by_name.at(*it);
        if (n.op == OpKind::Input || n.op == OpKind::Const) continue;

        std::string g_out = b.finalize(n.outputs[0]);
        if (g_out.empty()) continue;  // does not influence any output

        const Attrs& a = n.attrs;
        switch (n.op) {
            case OpKind::Identity:
                b.add_contrib(n.inputs[0], g_out);
                break;
            case OpKind::ReLU: {
                std::string d = b.emit("d." + n.inputs[0] + ".relu", OpKind::ReluGrad,
                                       {n.inputs[0], g_out});
                b.add_contrib(n.inputs[0], d);
                break;
            }
            case OpKind::Add:
                b.add_contrib(n.inputs[0], g_out);
                b.add_contrib(n.inputs[1], g_out);
                break;
            case OpKind::Mul: {
                std::string da = b.emit("d." + n.inputs[0] + ".mul", OpKind::Mul,
                                        {g_out, n.inputs[1]});
                std::string db = b.emit("d." + n.inputs[1] + ".mul", OpKind::Mul,
                                        {g_out, n.inputs[0]});
                b.add_contrib(n.inputs[0], da);
                b.add_contrib(n.inputs[1], db);
                break;
            }
            case OpKind::CumSum: {
                Attrs ga = a;
                ga.reverse = !a.reverse;
                std::string d = b.emit("d." + n.inputs[0] + ".cumsum", OpKind::CumSum, {g_out}, ga);
                b.add_contrib(n.inputs[0], d);
                break;
            }
            case OpKind::Flatten: {
                auto xd = b.seed_dims_of(n.inputs[0]);
                Attrs ga;
                ga.fwd_dims.assign(xd.begin() + 1, xd.end());
                std::string d = b.emit("d." + n.inputs[0] + ".unflatten", OpKind::Unflatten,
                                       {g_out}, ga);
                b.add_contrib(n.inputs[0], d);
                break;
            }
            case OpKind::Dense: {
                std::string dx = b.emit("d." + n.inputs[0] + ".dense", OpKind::DenseGradInput,
                                        {g_out}, {}, {n.weights[0]});
                b.add_contrib(n.inputs[0], dx);
                std::string dw = b.emit("d." + n.weights[0], OpKind::DenseGradWeight,
                                        {n.inputs[0], g_out});
                b.add_contrib(n.weights[0], dw);
                if (a.has_bias) {
                    std::string db = b.emit("d." + n.weights[1], OpKind::SumCols, {g_out});
                    b.add_contrib(n.weights[1], db);
                }
                break;
            }
            case OpKind::Conv2D: {
                auto xd = b.seed_dims_of(n.inputs[0]);
                Attrs ga = a;
                ga.fwd_dims = {xd[1], xd[2], xd[3]};
                std::string dx = b.emit("d." + n.inputs[0] + ".conv", OpKind::Conv2DGradInput,
                                        {g_out}, ga, {n.weights[0]});
                b.add_contrib(n.inputs[0], dx);
                Attrs gw = a;
                std::string dw = b.emit("d." + n.weights[0], OpKind::Conv2DGradWeight,
                                        {n.inputs[0], g_out}, gw);
                b.add_contrib(n.weights[0], dw);
                if (a.has_bias) {
                    std::string db = b.emit("d." + n.weights[1], OpKind::SumNHW, {g_out});
                    b.add_contrib(n.weights[1], db);
                }
                break;
            }
            case OpKind::MaxPool2D: {
                auto xd = b.seed_dims_of(n.inputs[0]);
                Attrs ga = a;
                ga.fwd_dims = {xd[1], xd[2]};
                std::string idx = n.name + ".argmax";
                argmax_needed.insert(n.name);
                std::string d = b.emit("d." + n.inputs[0] + ".maxpool", OpKind::MaxPool2DGrad,
                                       {idx, g_out}, ga);
                b.add_contrib(n.inputs[0], d);
                break;
            }
            case OpKind::AdaptiveAvgPool2D: {
                auto xd = b.seed_dims_of(n.inputs[0]);
                Attrs ga = a;
                ga.fwd_dims = {xd[1], xd[2]};
                std::string d = b.emit("d." + n.inputs[0] + ".avgpool",
                                       OpKind::AdaptiveAvgPool2DGrad, {g_out}, ga);
                b.add_contrib(n.inputs[0], d);
                break;
            }
            default:
                throw Error(Error::Code::NonDifferentiable,
                            n.name + ": no backward rule for " + hlir::op_name(n.op));
        }
    }

    // Gradient outputs: one per trainable initializer.
    Graph& bwd = b.bwd;
    for (const std::string& w : trainable_weights(g)) {
        std::string gv = b.finalize(w);
        if (gv.empty())
            throw Error(Error::Code::NonDifferentiable,
                        w + ": trainable weight unreachable from outputs (run the pass "
                            "pipeline first)");
        vs.weight_grads[w] = gv;
        bwd.outputs.push_back(gv);
    }
    if (opts.input_gradients) {
        for (const auto& gi : g.inputs) {
            std::string gv = b.finalize(gi.name);
            if (!gv.empty()) {
                vs.input_grads[gi.name] = gv;
                bwd.outputs.push_back(gv);
            }
        }
    }

    // Referenced forward values become backward graph inputs; weights
    // referenced by backward kernels come along as initializers.
    std::unordered_set<std::string> produced;
    for (const Node& n : bwd.nodes)
        for (const std::string& o : n.outputs) produced.insert(o);
    std::set<std::string> fwd_refs;
    for (const Node& n : bwd.nodes) {
        for (const std::string& v : n.inputs)
            if (!produced.count(v)) fwd_refs.insert(v);
        for (const std::string& w : n.weights) {
            auto init = g.initializers.find(w);
            if (init != g.initializers.end()) bwd.initializers.emplace(w, init->second);
        }
    }

    auto fwd_type = [&](const std::string& v) -> TensorType {
        if (auto* t = g.type_of(v)) return *t;
        // MaxPool argmax taps share the pool output type.
        auto dot = v.rfind(".argmax");
        if (dot != std::string::npos) {
            const Node* pool = g.find_node(v.substr(0, dot));
            if (pool) return *g.type_of(pool->outputs[0]);
        }
        throw Error(Error::Code::ShapeMismatch, "untyped backward input " + v);
    };

    for (const std::string& og : vs.output_grads) {
        TensorType t = fwd_type(og.substr(2));
        bwd.inputs.push_back({og, t});
    }
    for (const std::string& v : fwd_refs) {
        if (std::find(vs.output_grads.begin(), vs.output_grads.end(), v) != vs.output_grads.end())
            continue;
        bwd.inputs.push_back({v, fwd_type(v)});
    }
    bwd.next_sym_id = g.next_sym_id;

    // Drop emission debris that feeds no gradient output, then prune
    // the saved-input list to what is actually consumed.
    bwd = passes::eliminate_dead(bwd);
    std::unordered_set<std::string> consumed;
    for (const Node& n : bwd.nodes)
        for (const std::string& v : n.inputs) consumed.insert(v);
    for (const std::string& o : bwd.outputs) consumed.insert(o);
    std::vector<hlir::GraphInput> kept;
    for (auto& gi : bwd.inputs)
        if (consumed.count(gi.name)) kept.push_back(gi);
    bwd.inputs = std::move(kept);

    // SaveSet: backward inputs that are forward values, ordered by
    // forward production (graph inputs first, then topo order).
    std::unordered_set<std::string> bwd_input_set;
    for (const auto& gi : bwd.inputs) bwd_input_set.insert(gi.name);
    for (const std::string& og : vs.output_grads) bwd_input_set.erase(og);

    for (const auto& gi : g.inputs)
        if (bwd_input_set.count(gi.name)) vs.save_set.push_back(gi.name);
    for (const std::string& node_name : order) {
        const Node& n = *by_name.at(node_name);
        for (const std::string& o : n.outputs)
            if (bwd_input_set.count(o)) vs.save_set.push_back(o);
        if (argmax_needed.count(n.name) && bwd_input_set.count(n.name + ".argmax"))
            vs.save_set.push_back(n.name + ".argmax");
    }

    // Forward training version: argmax taps plus SaveSet outputs.
    Graph fwd = g;
    for (Node& n : fwd.nodes) {
        if (n.op == OpKind::MaxPool2D && argmax_needed.count(n.name) &&
            bwd_input_set.count(n.name + ".argmax") && n.outputs.size() == 1)
            n.outputs.push_back(n.name + ".argmax");
    }
    std::unordered_set<std::string> out_set(fwd.outputs.begin(), fwd.outputs.end());
    for (const std::string& v : vs.save_set) {
        if (!out_set.count(v)) {
            fwd.outputs.push_back(v);
            out_set.insert(v);
        }
    }

    vs.train_fwd = passes::infer_shapes(fwd).graph;
    vs.train_bwd = passes::infer_shapes(bwd).graph;
    return vs;
}

/* ------------------------------------------------------------------ */
/*  Finite-difference verification                                     */
/* ------------------------------------------------------------------ */

double grad_check(const Graph& input, uint64_t seed, double h) {
    if (input.dtype != DType::F64)
        throw Error(Error::Code::BadDocument, "grad_check requires an f64 graph");
    Graph g = input.value_types.empty() ? passes::infer_shapes(input).graph : input;
    for (const auto& [name, t] : g.value_types) {
        if (!t.shape.fully_fixed())
            throw Error(Error::Code::UnboundVdim, "grad_check requires fixed shapes: " + name);
    }

    VersionSet vs = derive_versions(g);

    // Inputs and per-output targets, deterministic in the seed.
    std::map<std::string, Tensor> feed;
    for (const auto& gi : g.inputs) {
        Tensor t(DType::F64, gi.type.shape.seed_dims());
        ingest::InitStream rng(seed, "in." + gi.name);
        for (int64_t i = 0; i < t.elements(); ++i) t.set(i, rng.uniform(-1.0, 1.0));
        feed.emplace(gi.name, std::move(t));
    }
    std::map<std::string, Tensor> targets;
    for (const std::string& o : g.outputs) {
        Tensor y(DType::F64, g.type_of(o)->shape.seed_dims());
        ingest::InitStream rng(seed, "target." + o);
        // Kept away from typical activation magnitudes so |y - t| stays
        // clear of the kink during probing.
        for (int64_t i = 0; i < y.elements(); ++i) y.set(i, rng.uniform(4.0, 6.0));
        targets.emplace(o, std::move(y));
    }

    auto loss_of = [&](const std::map<std::string, Tensor>* weight_override) {
        auto values = kernels::eval_graph(g, feed, weight_override);
        double loss = 0;
        for (const std::string& o : g.outputs) {
            const Tensor& y = values.at(o);
            const Tensor& t = targets.at(o);
            for (int64_t i = 0; i < y.elements(); ++i) loss += std::abs(y.get(i) - t.get(i));
        }
        return loss;
    };

    // Analytic gradients through the derived backward graph.
    auto fwd_values = kernels::eval_graph(vs.train_fwd, feed, nullptr);
    std::map<std::string, Tensor> bwd_feed;
    for (const std::string& o : g.outputs) {
        const Tensor& y = fwd_values.at(o);
        const Tensor& t = targets.at(o);
        Tensor grad(DType::F64, y.dims());
        for (int64_t i = 0; i < y.elements(); ++i) {
            double d = y.get(i) - t.get(i);
            grad.set(i, d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        }
        bwd_feed.emplace("d." + o, std::move(grad));
    }
    for (const std::string& v : vs.save_set) bwd_feed.emplace(v, fwd_values.at(v));
    auto bwd_values = kernels::eval_graph(vs.train_bwd, bwd_feed, nullptr);

    double worst = 0;
    for (const auto& [w_name, grad_value] : vs.weight_grads) {
        const Tensor& analytic = bwd_values.at(grad_value);
        std::map<std::string, Tensor> probe;
        probe.emplace(w_name, g.initializers.at(w_name));
        Tensor& wt = probe.at(w_name);
        for (int64_t i = 0; i < wt.elements(); ++i) {
            double w0 = wt.get(i);
            wt.set(i, w0 + h);
            double lp = loss_of(&probe);
            wt.set(i, w0 - h);
            double lm = loss_of(&probe);
            wt.set(i, w0);
            double fd = (lp - lm) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(analytic.get(i)), 1e-8});
            worst = std::max(worst, std::abs(fd - analytic.get(i)) / denom);
        }
    }
    return worst;
}

} // namespace nnc::autodiff
