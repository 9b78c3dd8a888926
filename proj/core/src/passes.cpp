#include "nnc/passes.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "nnc/error.hpp"
#include "nnc/kernels.hpp"

namespace nnc::passes {

using hlir::Dim;
using hlir::Graph;
using hlir::Layout;
using hlir::Node;
using hlir::OpKind;
using hlir::Padding;
using hlir::Shape;
using hlir::TensorType;

Constraint Constraint::eq_const(int32_t s, int64_t v) {
    Constraint c;
    c.kind = Kind::EqConst;
    c.sym = s;
    c.value = v;
    return c;
}

Constraint Constraint::eq_sym(int32_t a, int32_t b) {
    Constraint c;
    c.kind = Kind::EqSym;
    c.sym = a;
    c.other = b;
    return c;
}

Constraint Constraint::derived(int32_t child, int32_t parent, Rule r, int64_t p0, int64_t p1) {
    Constraint c;
    c.kind = Kind::Derived;
    c.sym = child;
    c.other = parent;
    c.rule = r;
    c.p0 = p0;
    c.p1 = p1;
    return c;
}

Constraint Constraint::opaque(std::vector<int32_t> participants) {
    Constraint c;
    c.kind = Kind::Opaque;
    c.syms = std::move(participants);
    return c;
}

int64_t apply_rule(Constraint::Rule rule, int64_t x, int64_t p0, int64_t p1) {
    switch (rule) {
        case Constraint::Rule::CeilDiv: return (x + p0 - 1) / p0;
        case Constraint::Rule::ValidWindow: return (x - p0) / p1 + 1;
        case Constraint::Rule::Scale: return x * p0;
        case Constraint::Rule::None: return x;
    }
    return x;
}

/* ------------------------------------------------------------------ */
/*  Shape inference                                                    */
/* ------------------------------------------------------------------ */

namespace {

struct InferCtx {
    Graph& g;
    std::vector<Constraint>& constraints;

    [[noreturn]] void rank_error(const Node& n, const std::string& msg) {
        throw Error(Error::Code::RankError, n.name + ": " + msg);
    }
    [[noreturn]] void extent_error(const Node& n, const std::string& msg) {
        throw Error(Error::Code::ExtentMismatch, n.name + ": " + msg);
    }

    // Asserts two axes carry equal extents; records the coupling when
    // symbols are involved.
    void require_equal(const Node& n, const Dim& a, const Dim& b, size_t axis) {
        if (!a.is_sym() && !b.is_sym()) {
            if (a.seed_extent() != b.seed_extent())
                extent_error(n, "axis " + std::to_string(axis) + ": " +
                                    std::to_string(a.seed_extent()) + " vs " +
                                    std::to_string(b.seed_extent()));
            return;
        }
        if (a.seed_extent() != b.seed_extent())
            extent_error(n, "axis " + std::to_string(axis) + ": seed extents differ");
        if (a.is_sym() && b.is_sym()) {
            if (a.sym_id() != b.sym_id())
                constraints.push_back(Constraint::eq_sym(a.sym_id(), b.sym_id()));
        } else {
            const Dim& s = a.is_sym() ? a : b;
            const Dim& f = a.is_sym() ? b : a;
            constraints.push_back(Constraint::eq_const(s.sym_id(), f.seed_extent()));
        }
    }

    // Pins a (possibly symbolic) axis to a structural constant.
    void require_extent(const Node& n, const Dim& d, int64_t want, const std::string& what) {
        if (d.seed_extent() != want)
            extent_error(n, what + ": expected " + std::to_string(want) + ", got " +
                                std::to_string(d.seed_extent()));
        if (d.is_sym()) constraints.push_back(Constraint::eq_const(d.sym_id(), want));
    }

    // Strided-window rule on one axis. Identity when the rule is the
    // identity function; otherwise symbolic inputs yield a fresh
    // derived symbol.
    Dim window_axis(const Node& n, const Dim& in, int64_t k, int64_t stride, Padding padding) {
        bool identity = padding == Padding::Same ? stride == 1 : (k == 1 && stride == 1);
        if (identity) return in;
        if (!in.is_sym()) {
            if (padding == Padding::Valid && in.seed_extent() < k)
                extent_error(n, "window larger than input extent " +
                                    std::to_string(in.seed_extent()));
            return Dim::fixed(kernels::window_out_extent(in.seed_extent(), k, stride, padding));
        }
        if (padding == Padding::Valid && in.seed_extent() < k)
            extent_error(n, "window larger than seed extent");
        int64_t seed = kernels::window_out_extent(in.seed_extent(), k, stride, padding);
        Dim out = Dim::sym(g.fresh_sym(), seed);
        if (padding == Padding::Same)
            constraints.push_back(Constraint::derived(out.sym_id(), in.sym_id(),
                                                      Constraint::Rule::CeilDiv, stride));
        else
            constraints.push_back(Constraint::derived(out.sym_id(), in.sym_id(),
                                                      Constraint::Rule::ValidWindow, k, stride));
        return out;
    }

    const Tensor& weight(const Node& n, size_t i) {
        if (i >= n.weights.size())
            throw Error(Error::Code::ShapeMismatch, n.name + ": missing weight " + std::to_string(i));
        auto it = g.initializers.find(n.weights[i]);
        if (it == g.initializers.end())
            throw Error(Error::Code::ShapeMismatch, n.name + ": unknown initializer " + n.weights[i]);
        return it->second;
    }
};

Layout layout_for_rank(size_t rank) {
    switch (rank) {
        case 4: return Layout::NHWC;
        case 2: return Layout::FLAT;
        case 0: return Layout::SCALAR;
        default: return Layout::RAW;
    }
}

Shape with_layout(std::vector<Dim> dims) {
    Shape s;
    s.dims = std::move(dims);
    s.layout = layout_for_rank(s.dims.size());
    return s;
}

} // namespace

ShapeInfo infer_shapes(const Graph& input_graph) {
    ShapeInfo info;
    info.graph = input_graph;
    Graph& g = info.graph;
    g.value_types.clear();
    InferCtx ctx{g, info.constraints};

    for (const auto& gi : g.inputs) g.value_types[gi.name] = gi.type;
    for (const auto& [name, tensor] : g.initializers) {
        TensorType t;
        t.dtype = g.dtype;
        t.shape = Shape::fixed(tensor.dims(), layout_for_rank(tensor.rank()));
        g.value_types.emplace(name, std::move(t));
    }

    auto order = topo_order(g);
    std::unordered_map<std::string, const Node*> by_name;
    for (const Node& n : g.nodes) by_name[n.name] = &n;

    for (const std::string& name : order) {
        const Node& n = *by_name.at(name);
        auto in_type = [&](size_t i) -> const TensorType& {
            auto it = g.value_types.find(n.inputs[i]);
            if (it == g.value_types.end())
                throw Error(Error::Code::ShapeMismatch, n.name + ": untyped input " + n.inputs[i]);
            return it->second;
        };
        auto need_rank = [&](size_t i, size_t r) -> const Shape& {
            const Shape& s = in_type(i).shape;
            if (s.rank() != r)
                ctx.rank_error(n, "input " + std::to_string(i) + " must be rank " +
                                      std::to_string(r) + ", got " + std::to_string(s.rank()));
            return s;
        };
        auto set_out = [&](size_t i, Shape s) {
            TensorType t;
            t.dtype = g.dtype;
            t.shape = std::move(s);
            g.value_types[n.outputs[i]] = std::move(t);
        };

        switch (n.op) {
            case OpKind::Input: break;  // typed via graph inputs
            case OpKind::Const: {
                const Tensor& payload = ctx.weight(n, 0);
                set_out(0, Shape::fixed(payload.dims(), layout_for_rank(payload.rank())));
                break;
            }
            case OpKind::Identity:
            case OpKind::ReLU:
                set_out(0, in_type(0).shape);
                break;
            case OpKind::CumSum: {
                const Shape& s = in_type(0).shape;
                if (n.attrs.axis < 0 || n.attrs.axis >= static_cast<int64_t>(s.rank()))
                    ctx.rank_error(n, "cumsum axis out of range");
                set_out(0, s);
                break;
            }
            case OpKind::Add:
            case OpKind::Mul:
            case OpKind::ReluGrad: {
                const Shape& a = in_type(0).shape;
                const Shape& b = in_type(1).shape;
                if (a.rank() != b.rank()) ctx.rank_error(n, "operand ranks differ");
                for (size_t i = 0; i < a.rank(); ++i)
                    ctx.require_equal(n, a.dims[i], b.dims[i], i);
                set_out(0, a);
                break;
            }
            case OpKind::Flatten: {
                const Shape& s = in_type(0).shape;
                if (s.rank() < 2) ctx.rank_error(n, "flatten requires rank >= 2");
                std::vector<const Dim*> sym_rest;
                int64_t fixed_product = 1;
                int64_t seed_product = 1;
                for (size_t i = 1; i < s.rank(); ++i) {
                    seed_product *= s.dims[i].seed_extent();
                    if (s.dims[i].is_sym())
                        sym_rest.push_back(&s.dims[i]);
                    else
                        fixed_product *= s.dims[i].seed_extent();
                }
                Dim out1 = Dim::fixed(1);
                if (sym_rest.empty()) {
                    out1 = Dim::fixed(fixed_product);
                } else if (sym_rest.size() == 1 && fixed_product == 1) {
                    out1 = *sym_rest[0];  // identity on that axis
                } else if (sym_rest.size() == 1) {
                    out1 = Dim::sym(g.fresh_sym(), seed_product);
                    info.constraints.push_back(Constraint::derived(
                        out1.sym_id(), sym_rest[0]->sym_id(), Constraint::Rule::Scale,
                        fixed_product));
                } else {
                    out1 = Dim::sym(g.fresh_sym(), seed_product);
                    std::vector<int32_t> parts;
                    for (const Dim* d : sym_rest) parts.push_back(d->sym_id());
                    parts.push_back(out1.sym_id());
                    info.constraints.push_back(Constraint::opaque(std::move(parts)));
                }
                set_out(0, with_layout({s.dims[0], out1}));
                break;
            }
            case OpKind::Unflatten: {
                const Shape& s = need_rank(0, 2);
                std::vector<Dim> dims{s.dims[0]};
                for (int64_t e : n.attrs.fwd_dims) dims.push_back(Dim::fixed(e));
                set_out(0, with_layout(std::move(dims)));
                break;
            }
            case OpKind::Dense: {
                const Shape& s = need_rank(0, 2);
                const Tensor& w = ctx.weight(n, 0);
                if (w.rank() != 2)
                    throw Error(Error::Code::ShapeMismatch, n.name + ": dense weight must be rank 2");
                if (w.dims()[1] != n.attrs.out_features)
                    throw Error(Error::Code::ShapeMismatch,
                                n.name + ": weight out_features mismatch");
                ctx.require_extent(n, s.dims[1], w.dims()[0], "in_features");
                if (n.attrs.has_bias) {
                    const Tensor& b = ctx.weight(n, 1);
                    if (b.rank() != 1 || b.dims()[0] != n.attrs.out_features)
                        throw Error(Error::Code::ShapeMismatch, n.name + ": bias shape mismatch");
                }
                set_out(0, with_layout({s.dims[0], Dim::fixed(n.attrs.out_features)}));
                break;
            }
            case OpKind::DenseGradInput: {
                const Shape& s = need_rank(0, 2);
                const Tensor& w = ctx.weight(n, 0);
                ctx.require_extent(n, s.dims[1], w.dims()[1], "grad out_features");
                set_out(0, with_layout({s.dims[0], Dim::fixed(w.dims()[0])}));
                break;
            }
            case OpKind::DenseGradWeight: {
                const Shape& x = need_rank(0, 2);
                const Shape& gr = need_rank(1, 2);
                ctx.require_equal(n, x.dims[0], gr.dims[0], 0);
                set_out(0, with_layout({Dim::fixed(x.dims[1].seed_extent()),
                                        Dim::fixed(gr.dims[1].seed_extent())}));
                break;
            }
            case OpKind::SumCols: {
                const Shape& s = need_rank(0, 2);
                set_out(0, with_layout({s.dims[1]}));
                break;
            }
            case OpKind::Conv2D: {
                const Shape& s = need_rank(0, 4);
                const Tensor& k = ctx.weight(n, 0);
                if (k.rank() != 4)
                    throw Error(Error::Code::ShapeMismatch, n.name + ": conv kernel must be rank 4");
                if (k.dims()[0] != n.attrs.kernel[0] || k.dims()[1] != n.attrs.kernel[1] ||
                    k.dims()[3] != n.attrs.out_channels)
                    throw Error(Error::Code::ShapeMismatch, n.name + ": kernel attrs mismatch");
                ctx.require_extent(n, s.dims[3], k.dims()[2], "in_channels");
                if (n.attrs.has_bias) {
                    const Tensor& b = ctx.weight(n, 1);
                    if (b.rank() != 1 || b.dims()[0] != n.attrs.out_channels)
                        throw Error(Error::Code::ShapeMismatch, n.name + ": bias shape mismatch");
                }
                Dim oh = ctx.window_axis(n, s.dims[1], n.attrs.kernel[0], n.attrs.stride[0],
                                         n.attrs.padding);
                Dim ow = ctx.window_axis(n, s.dims[2], n.attrs.kernel[1], n.attrs.stride[1],
                                         n.attrs.padding);
                set_out(0, with_layout({s.dims[0], oh, ow, Dim::fixed(n.attrs.out_channels)}));
                break;
            }
            case OpKind::Conv2DGradInput: {
                const Shape& s = need_rank(0, 4);
                if (n.attrs.fwd_dims.size() != 3) ctx.rank_error(n, "fwd_dims must be [ih,iw,ci]");
                set_out(0, with_layout({s.dims[0], Dim::fixed(n.attrs.fwd_dims[0]),
                                        Dim::fixed(n.attrs.fwd_dims[1]),
                                        Dim::fixed(n.attrs.fwd_dims[2])}));
                break;
            }
            case OpKind::Conv2DGradWeight: {
                const Shape& x = need_rank(0, 4);
                const Shape& gr = need_rank(1, 4);
                ctx.require_equal(n, x.dims[0], gr.dims[0], 0);
                set_out(0, with_layout({Dim::fixed(n.attrs.kernel[0]), Dim::fixed(n.attrs.kernel[1]),
                                        Dim::fixed(x.dims[3].seed_extent()),
                                        Dim::fixed(n.attrs.out_channels)}));
                break;
            }
            case OpKind::SumNHW: {
                const Shape& s = need_rank(0, 4);
                set_out(0, with_layout({s.dims[3]}));
                break;
            }
            case OpKind::MaxPool2D: {
                const Shape& s = need_rank(0, 4);
                Dim oh = ctx.window_axis(n, s.dims[1], n.attrs.kernel[0], n.attrs.stride[0],
                                         Padding::Valid);
                Dim ow = ctx.window_axis(n, s.dims[2], n.attrs.kernel[1], n.attrs.stride[1],
                                         Padding::Valid);
                Shape out = with_layout({s.dims[0], oh, ow, s.dims[3]});
                set_out(0, out);
                if (n.outputs.size() == 2) set_out(1, out);
                break;
            }
            case OpKind::MaxPool2DGrad: {
                const Shape& idx = need_rank(0, 4);
                const Shape& gr = need_rank(1, 4);
                ctx.require_equal(n, idx.dims[0], gr.dims[0], 0);
                if (n.attrs.fwd_dims.size() != 2) ctx.rank_error(n, "fwd_dims must be [ih,iw]");
                set_out(0, with_layout({gr.dims[0], Dim::fixed(n.attrs.fwd_dims[0]),
                                        Dim::fixed(n.attrs.fwd_dims[1]), gr.dims[3]}));
                break;
            }
            case OpKind::AdaptiveAvgPool2D: {
                const Shape& s = need_rank(0, 4);
                set_out(0, with_layout({s.dims[0], Dim::fixed(n.attrs.out_hw[0]),
                                        Dim::fixed(n.attrs.out_hw[1]), s.dims[3]}));
                break;
            }
            case OpKind::AdaptiveAvgPool2DGrad: {
                const Shape& s = need_rank(0, 4);
                if (n.attrs.fwd_dims.size() != 2) ctx.rank_error(n, "fwd_dims must be [ih,iw]");
                set_out(0, with_layout({s.dims[0], Dim::fixed(n.attrs.fwd_dims[0]),
                                        Dim::fixed(n.attrs.fwd_dims[1]), s.dims[3]}));
                break;
            }
        }
    }

    // Graph outputs naming initializers or inputs directly are already typed.
    for (const std::string& out : g.outputs) {
        if (!g.value_types.count(out))
            throw Error(Error::Code::ShapeMismatch, "graph output untyped: " + out);
    }
    return info;
}

/* ------------------------------------------------------------------ */
/*  Vdim inference                                                     */
/* ------------------------------------------------------------------ */

namespace {

struct UnionFind {
    std::vector<int32_t> parent;
    explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int32_t find(int32_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int32_t a, int32_t b) { parent[find(a)] = find(b); }
};

} // namespace

VdimReport infer_vdims(const Graph& g) {
    ShapeInfo si = infer_shapes(g);
    const Graph& ag = si.graph;
    int32_t sym_count = ag.next_sym_id;

    UnionFind uf(std::max(sym_count, 1));
    for (const Constraint& c : si.constraints) {
        if (c.kind == Constraint::Kind::EqSym || c.kind == Constraint::Kind::Derived)
            uf.unite(c.sym, c.other);
    }
    std::vector<bool> class_fixed(std::max(sym_count, 1), false);
    for (const Constraint& c : si.constraints) {
        if (c.kind == Constraint::Kind::EqConst) class_fixed[uf.find(c.sym)] = true;
        if (c.kind == Constraint::Kind::Opaque)
            for (int32_t s : c.syms) class_fixed[uf.find(s)] = true;
    }

    VdimReport report;
    std::map<int32_t, int32_t> class_to_report;
    for (const auto& gi : ag.inputs) {
        for (const Dim& d : gi.type.shape.dims) {
            if (!d.is_sym()) continue;
            int32_t root = uf.find(d.sym_id());
            if (class_fixed[root]) continue;
            if (!class_to_report.count(root)) {
                int32_t id = static_cast<int32_t>(report.free_syms.size());
                class_to_report[root] = id;
                report.free_syms.push_back({id, d.seed_extent()});
            }
        }
    }
    for (int32_t s = 0; s < sym_count; ++s) {
        auto it = class_to_report.find(uf.find(s));
        if (it != class_to_report.end()) report.report_id[s] = it->second;
    }

    auto render_entry = [&](const std::string& name, const Shape& shape) {
        VdimReport::Entry e;
        e.name = name;
        for (const Dim& d : shape.dims) {
            if (d.is_sym()) {
                auto it = report.report_id.find(d.sym_id());
                if (it != report.report_id.end()) {
                    e.dims.push_back("#" + std::to_string(it->second));
                    continue;
                }
            }
            e.dims.push_back(std::to_string(d.seed_extent()));
        }
        return e;
    };

    for (const auto& gi : ag.inputs) report.inputs.push_back(render_entry(gi.name, gi.type.shape));
    for (const std::string& out : ag.outputs) {
        const TensorType* t = ag.type_of(out);
        report.outputs.push_back(render_entry(out, t->shape));
    }
    return report;
}

std::string VdimReport::render() const {
    std::ostringstream os;
    auto block = [&](const char* label, const std::vector<Entry>& entries) {
        std::string head = std::string(label);
        for (size_t i = 0; i < entries.size(); ++i) {
            os << (i == 0 ? head : std::string(head.size(), ' '));
            os << entries[i].name << " [";
            for (size_t j = 0; j < entries[i].dims.size(); ++j) {
                if (j) os << ", ";
                os << entries[i].dims[j];
            }
            os << "]\n";
        }
        if (entries.empty()) os << head << "(none)\n";
    };
    block("Inputs:  ", inputs);
    block("Outputs: ", outputs);
    os << "Dynamic: ";
    if (free_syms.empty()) {
        os << "none\n";
    } else {
        for (size_t i = 0; i < free_syms.size(); ++i) {
            if (i) os << ", ";
            os << "#" << free_syms[i].id << " (seed " << free_syms[i].seed << ")";
        }
        os << "\n";
    }
    return os.str();
}

/* ------------------------------------------------------------------ */
/*  Binding                                                            */
/* ------------------------------------------------------------------ */

VdimBinding VdimBinding::enable(std::initializer_list<int32_t> ids) {
    VdimBinding b;
    for (int32_t id : ids) b.items[id] = {Action::Enable, 0};
    return b;
}

Graph bind_vdims(const Graph& g, const VdimReport& report, const VdimBinding& binding) {
    for (const auto& [id, item] : binding.items) {
        bool known = std::any_of(report.free_syms.begin(), report.free_syms.end(),
                                 [&](const VdimReport::FreeSym& f) { return f.id == id; });
        if (!known)
            throw Error(Error::Code::UnknownSymbol, "unknown vdim #" + std::to_string(id));
        if (item.action == VdimBinding::Action::Override && item.extent < 1)
            throw Error(Error::Code::IllegalOverride,
                        "#" + std::to_string(id) + ": override extent must be >= 1");
    }

    Graph out = g;
    out.value_types.clear();
    out.next_sym_id = 0;
    for (auto& gi : out.inputs) {
        for (Dim& d : gi.type.shape.dims) {
            if (!d.is_sym()) continue;
            auto it = report.report_id.find(d.sym_id());
            if (it == report.report_id.end()) {
                d = Dim::fixed(d.seed_extent());   // fixed by structure
                continue;
            }
            int32_t rid = it->second;
            auto bit = binding.items.find(rid);
            VdimBinding::Action action =
                bit == binding.items.end() ? VdimBinding::Action::Disable : bit->second.action;
            switch (action) {
                case VdimBinding::Action::Disable:
                    d = Dim::fixed(d.seed_extent());
                    break;
                case VdimBinding::Action::Override:
                    d = Dim::fixed(bit->second.extent);
                    break;
                case VdimBinding::Action::Enable:
                    d = Dim::sym(rid, d.seed_extent());
                    out.next_sym_id = std::max(out.next_sym_id, rid + 1);
                    break;
            }
        }
    }

    try {
        return infer_shapes(out).graph;
    } catch (const Error& e) {
        if (e.code() == Error::Code::ExtentMismatch)
            throw Error(Error::Code::IllegalOverride, std::string("binding failed: ") + e.what());
        throw;
    }
}

/* ------------------------------------------------------------------ */
/*  Dead-layer elimination                                             */
/* ------------------------------------------------------------------ */

Graph eliminate_dead(const Graph& g) {
    std::unordered_map<std::string, int> producers;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        for (const std::string& out : g.nodes[i].outputs) producers[out] = static_cast<int>(i);

    std::vector<bool> keep(g.nodes.size(), false);
    std::vector<std::string> work(g.outputs.begin(), g.outputs.end());
    while (!work.empty()) {
        std::string v = work.back();
        work.pop_back();
        auto it = producers.find(v);
        if (it == producers.end() || keep[it->second]) continue;
        keep[it->second] = true;
        for (const std::string& in : g.nodes[it->second].inputs) work.push_back(in);
    }

    Graph out = g;
    out.nodes.clear();
    std::unordered_set<std::string> live_values;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        if (!keep[i]) continue;
        out.nodes.push_back(g.nodes[i]);
        for (const std::string& v : g.nodes[i].outputs) live_values.insert(v);
    }

    // Drop initializers nothing consumes any more.
    std::unordered_set<std::string> consumed;
    for (const Node& n : out.nodes) {
        for (const std::string& v : n.inputs) consumed.insert(v);
        for (const std::string& v : n.weights) consumed.insert(v);
    }
    for (const std::string& v : g.outputs) consumed.insert(v);
    for (auto it = out.initializers.begin(); it != out.initializers.end();) {
        if (!consumed.count(it->first))
            it = out.initializers.erase(it);
        else
            ++it;
    }
    for (auto it = out.value_types.begin(); it != out.value_types.end();) {
        bool alive = live_values.count(it->first) || out.is_graph_input(it->first) ||
                     out.initializers.count(it->first);
        it = alive ? std::next(it) : out.value_types.erase(it);
    }
    return out;
}

/* ------------------------------------------------------------------ */
/*  Constant folding                                                   */
/* ------------------------------------------------------------------ */

Graph fold_constants(const Graph& input_graph) {
    ShapeInfo si = infer_shapes(input_graph);
    Graph g = si.graph;

    std::unordered_set<std::string> referenced_before;
    for (const Node& n : g.nodes) {
        for (const std::string& v : n.inputs) referenced_before.insert(v);
        for (const std::string& v : n.weights) referenced_before.insert(v);
    }

    // Values with known constant contents.
    std::unordered_map<std::string, const Tensor*> known;
    for (const auto& [name, t] : g.initializers) known[name] = &t;

    auto order = topo_order(g);
    std::unordered_map<std::string, Node*> by_name;
    for (Node& n : g.nodes) by_name[n.name] = &n;

    for (const std::string& name : order) {
        Node& n = *by_name.at(name);
        if (n.op == OpKind::Input || n.op == OpKind::Const) {
            if (n.op == OpKind::Const) known[n.outputs[0]] = &g.initializers.at(n.weights[0]);
            continue;
        }
        if (n.outputs.size() != 1) continue;
        const TensorType* t = g.type_of(n.outputs[0]);
        if (!t || !t->shape.fully_fixed()) continue;
        bool inputs_known = std::all_of(n.inputs.begin(), n.inputs.end(),
                                        [&](const std::string& v) { return known.count(v); });
        if (!inputs_known) continue;
        bool weights_known = std::all_of(n.weights.begin(), n.weights.end(), [&](const std::string& v) {
            return g.initializers.count(v);
        });
        if (!weights_known) continue;
        bool input_shapes_fixed = std::all_of(n.inputs.begin(), n.inputs.end(), [&](const std::string& v) {
            const TensorType* it = g.type_of(v);
            return it && it->shape.fully_fixed();
        });
        if (!input_shapes_fixed) continue;

        std::vector<const Tensor*> ins, ws;
        for (const std::string& v : n.inputs) ins.push_back(known.at(v));
        for (const std::string& v : n.weights) ws.push_back(&g.initializers.at(v));
        Tensor value = kernels::eval_node(n, ins, ws)[0];

        std::string payload = n.outputs[0] + ".const";
        while (g.initializers.count(payload)) payload += "_";
        g.initializers.emplace(payload, std::move(value));
        n.op = OpKind::Const;
        n.attrs = {};
        n.inputs.clear();
        n.weights = {payload};
        known[n.outputs[0]] = &g.initializers.at(payload);
    }

    // Sweep Const nodes (and initializers) the folding itself orphaned.
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_set<std::string> referenced;
        for (const Node& n : g.nodes) {
            for (const std::string& v : n.inputs) referenced.insert(v);
            for (const std::string& v : n.weights) referenced.insert(v);
        }
        for (const std::string& v : g.outputs) referenced.insert(v);
        for (auto it = g.nodes.begin(); it != g.nodes.end(); ++it) {
            if (it->op != OpKind::Const) continue;
            const std::string& out = it->outputs[0];
            if (!referenced.count(out) && referenced_before.count(out)) {
                g.nodes.erase(it);
                changed = true;
                break;
            }
        }
    }
    std::unordered_set<std::string> referenced_after;
    for (const Node& n : g.nodes) {
        for (const std::string& v : n.inputs) referenced_after.insert(v);
        for (const std::string& v : n.weights) referenced_after.insert(v);
    }
    for (const std::string& v : g.outputs) referenced_after.insert(v);
    for (auto it = g.initializers.begin(); it != g.initializers.end();) {
        bool orphaned_by_fold = !referenced_after.count(it->first) &&
                                (referenced_before.count(it->first) ||
                                 it->first.find(".const") != std::string::npos);
        it = orphaned_by_fold ? g.initializers.erase(it) : std::next(it);
    }
    return infer_shapes(g).graph;
}

/* ------------------------------------------------------------------ */
/*  Canonicalization                                                   */
/* ------------------------------------------------------------------ */

Graph canonicalize(const Graph& g) {
    Graph out = g;
    out.value_types.clear();

    std::unordered_set<std::string> output_set(out.outputs.begin(), out.outputs.end());

    // Splice interior Identity nodes.
    bool changed = true;
    while (changed) {
        changed = false;
        for (size_t i = 0; i < out.nodes.size(); ++i) {
            Node& n = out.nodes[i];
            if (n.op != OpKind::Identity || output_set.count(n.outputs[0])) continue;
            const std::string from = n.outputs[0];
            const std::string to = n.inputs[0];
            for (Node& m : out.nodes)
                for (std::string& in : m.inputs)
                    if (in == from) in = to;
            out.nodes.erase(out.nodes.begin() + static_cast<long>(i));
            changed = true;
            break;
        }
    }

    // Collapse Flatten chains: a Flatten fed by a Flatten reads the
    // original input. Only flattens bypassed here may be swept after.
    std::unordered_set<std::string> bypassed;
    changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, const Node*> producer;
        for (const Node& n : out.nodes)
            for (const std::string& o : n.outputs) producer[o] = &n;
        for (Node& n : out.nodes) {
            if (n.op != OpKind::Flatten) continue;
            auto it = producer.find(n.inputs[0]);
            if (it != producer.end() && it->second->op == OpKind::Flatten && it->second != &n) {
                bypassed.insert(n.inputs[0]);
                n.inputs[0] = it->second->inputs[0];
                changed = true;
            }
        }
    }
    changed = true;
    while (changed) {
        changed = false;
        std::unordered_set<std::string> referenced;
        for (const Node& n : out.nodes)
            for (const std::string& v : n.inputs) referenced.insert(v);
        for (const std::string& v : out.outputs) referenced.insert(v);
        for (size_t i = 0; i < out.nodes.size(); ++i) {
            const Node& n = out.nodes[i];
            if (n.op == OpKind::Flatten && bypassed.count(n.outputs[0]) &&
                !referenced.count(n.outputs[0])) {
                out.nodes.erase(out.nodes.begin() + static_cast<long>(i));
                changed = true;
                break;
            }
        }
    }
    return out;
}

/* ------------------------------------------------------------------ */
/*  Pipeline                                                           */
/* ------------------------------------------------------------------ */

OptimizeResult optimize(const Graph& g, const VdimBinding& binding) {
    Graph cur = canonicalize(g);
    cur = eliminate_dead(cur);
    cur = fold_constants(cur);
    cur = infer_shapes(cur).graph;
    VdimReport report = infer_vdims(cur);
    Graph bound = bind_vdims(cur, report, binding);
    return {std::move(bound), std::move(report)};
}

} // namespace nnc::passes
