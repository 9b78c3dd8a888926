#include <stdexcept>

#include "oracles.hpp"

// Independent dynamic-dimension analysis: every dynamic input axis gets
// a variable, the graph is walked with hand-written symbolic rules that
// record relations, and a brute-force fixpoint closure marks everything
// forced static. No union-find; no shared code with the pass.

namespace nnc::testing {

using hlir::Graph;
using hlir::Node;
using hlir::OpKind;
using hlir::Padding;

namespace {

struct Term {  // one axis: a constant or a variable
    bool is_var = false;
    int var = -1;
    int64_t extent = 1;

    static Term fixed(int64_t e) { return {false, -1, e}; }
    static Term variable(int v, int64_t seed) { return {true, v, seed}; }
};

struct Relations {
    std::vector<std::pair<int, int>> coupled;        // var ~ var (either fixes both)
    std::vector<int> pinned;                         // var = const
    std::vector<std::vector<int>> opaque;            // all fixed

    int next_var = 0;
    int fresh() { return next_var++; }

    void pin_if_var(const Term& t) {
        if (t.is_var) pinned.push_back(t.var);
    }
    void equal(const Term& a, const Term& b) {
        if (a.is_var && b.is_var) {
            if (a.var != b.var) coupled.push_back({a.var, b.var});
        } else if (a.is_var || b.is_var) {
            pinned.push_back(a.is_var ? a.var : b.var);
        }
    }
};

using ShapeT = std::vector<Term>;

Term window_term(Relations& rel, const Term& in, int64_t k, int64_t s, Padding p) {
    bool identity = p == Padding::Same ? s == 1 : (k == 1 && s == 1);
    if (identity) return in;
    int64_t e = p == Padding::Same ? (in.extent + s - 1) / s : (in.extent - k) / s + 1;
    if (!in.is_var) return Term::fixed(e);
    Term out = Term::variable(rel.fresh(), e);
    rel.coupled.push_back({out.var, in.var});
    return out;
}

} // namespace

std::set<std::pair<int, int>> oracle_free_axes(const Graph& g) {
    Relations rel;
    std::map<std::string, ShapeT> shapes;
    std::map<int, std::pair<int, int>> var_axis;  // var -> (input idx, axis)

    for (size_t ii = 0; ii < g.inputs.size(); ++ii) {
        ShapeT st;
        const auto& dims = g.inputs[ii].type.shape.dims;
        for (size_t ax = 0; ax < dims.size(); ++ax) {
            if (dims[ax].is_sym()) {
                Term t = Term::variable(rel.fresh(), dims[ax].seed_extent());
                var_axis[t.var] = {static_cast<int>(ii), static_cast<int>(ax)};
                st.push_back(t);
            } else {
                st.push_back(Term::fixed(dims[ax].seed_extent()));
            }
        }
        shapes[g.inputs[ii].name] = st;
    }
    for (const auto& [name, t] : g.initializers) {
        ShapeT st;
        for (int64_t d : t.dims()) st.push_back(Term::fixed(d));
        shapes.emplace(name, st);
    }

    // Ready-set walk with local symbolic rules.
    std::vector<const Node*> pending;
    for (const Node& n : g.nodes) pending.push_back(&n);
    bool progress = true;
    while (!pending.empty() && progress) {
        progress = false;
        for (size_t i = 0; i < pending.size(); ++i) {
            const Node& n = *pending[i];
            bool ready = n.op == OpKind::Input || n.op == OpKind::Const;
            if (!ready) {
                ready = true;
                for (const std::string& v : n.inputs) ready &= shapes.count(v) != 0;
            }
            if (!ready) continue;

            const hlir::Attrs& a = n.attrs;
            switch (n.op) {
                case OpKind::Input: break;
                case OpKind::Const: {
                    ShapeT st;
                    for (int64_t d : g.initializers.at(n.weights[0]).dims())
                        st.push_back(Term::fixed(d));
                    shapes[n.outputs[0]] = st;
                    break;
                }
                case OpKind::Identity:
                case OpKind::ReLU:
                case OpKind::CumSum:
                    shapes[n.outputs[0]] = shapes.at(n.inputs[0]);
                    break;
                case OpKind::Add:
                case OpKind::Mul: {
                    const ShapeT& x = shapes.at(n.inputs[0]);
                    const ShapeT& y = shapes.at(n.inputs[1]);
                    for (size_t ax = 0; ax < x.size(); ++ax) rel.equal(x[ax], y[ax]);
                    shapes[n.outputs[0]] = x;
                    break;
                }
                case OpKind::Flatten: {
                    const ShapeT& x = shapes.at(n.inputs[0]);
                    std::vector<int> vars;
                    int64_t extent = 1;
                    int64_t fixed_extent = 1;
                    for (size_t ax = 1; ax < x.size(); ++ax) {
                        extent *= x[ax].extent;
                        if (x[ax].is_var)
                            vars.push_back(x[ax].var);
                        else
                            fixed_extent *= x[ax].extent;
                    }
                    Term out;
                    if (vars.empty()) {
                        out = Term::fixed(extent);
                    } else if (vars.size() == 1) {
                        // Affine in one variable: coupled, not opaque.
                        out = Term::variable(rel.fresh(), extent);
                        rel.coupled.push_back({out.var, vars[0]});
                    } else {
                        out = Term::variable(rel.fresh(), extent);
                        std::vector<int> group = vars;
                        group.push_back(out.var);
                        rel.opaque.push_back(group);
                    }
                    (void)fixed_extent;
                    shapes[n.outputs[0]] = {x[0], out};
                    break;
                }
                case OpKind::Dense: {
                    const ShapeT& x = shapes.at(n.inputs[0]);
                    rel.pin_if_var(x[1]);
                    shapes[n.outputs[0]] = {x[0], Term::fixed(a.out_features)};
                    break;
                }
                case OpKind::Conv2D: {
                    const ShapeT& x = shapes.at(n.inputs[0]);
                    rel.pin_if_var(x[3]);
                    shapes[n.outputs[0]] = {
                        x[0], window_term(rel, x[1], a.kernel[0], a.stride[0], a.padding),
                        window_term(rel, x[2], a.kernel[1], a.stride[1], a.padding),
                        Term::fixed(a.out_channels)};
                    break;
                }
                case OpKind::MaxPool2D: {
                    const ShapeT& x = shapes.at(n.inputs[0]);
                    shapes[n.outputs[0]] = {
                        x[0], window_term(rel, x[1], a.kernel[0], a.stride[0], Padding::Valid),
                        window_term(rel, x[2], a.kernel[1], a.stride[1], Padding::Valid), x[3]};
                    break;
                }
                case OpKind::AdaptiveAvgPool2D: {
                    const ShapeT& x = shapes.at(n.inputs[0]);
                    shapes[n.outputs[0]] = {x[0], Term::fixed(a.out_hw[0]),
                                            Term::fixed(a.out_hw[1]), x[3]};
                    break;
                }
                default:
                    throw std::logic_error("oracle_free_axes: unsupported op");
            }
            pending.erase(pending.begin() + static_cast<long>(i));
            progress = true;
            break;
        }
    }
    if (!pending.empty()) throw std::logic_error("oracle_free_axes: graph did not converge");

    // Fixpoint closure: pinned and opaque vars are fixed; a coupled
    // pair fixes together.
    std::vector<bool> fixed(rel.next_var, false);
    for (int v : rel.pinned) fixed[v] = true;
    for (const auto& group : rel.opaque)
        for (int v : group) fixed[v] = true;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& [a, b] : rel.coupled) {
            if (fixed[a] != fixed[b]) {
                fixed[a] = fixed[b] = true;
                changed = true;
            }
        }
    }

    std::set<std::pair<int, int>> free;
    for (const auto& [var, axis] : var_axis)
        if (!fixed[var]) free.insert(axis);
    return free;
}

} // namespace nnc::testing
