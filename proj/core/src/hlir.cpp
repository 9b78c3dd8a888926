#include "nnc/hlir.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace nnc::hlir {

Dim Dim::fixed(int64_t extent) {
    if (extent < 1) throw std::invalid_argument("Dim: fixed extents must be >= 1");
    Dim d;
    d.extent_ = extent;
    d.sym_id_ = -1;
    return d;
}

Dim Dim::sym(int32_t id, int64_t seed) {
    if (id < 0) throw std::invalid_argument("Dim: symbol ids are non-negative");
    if (seed < 1) throw std::invalid_argument("Dim: symbol seeds must be >= 1");
    Dim d;
    d.extent_ = seed;
    d.sym_id_ = id;
    return d;
}

std::string Dim::render() const {
    if (is_sym()) return "#" + std::to_string(sym_id_);
    return std::to_string(extent_);
}

bool Shape::fully_fixed() const {
    return std::none_of(dims.begin(), dims.end(), [](const Dim& d) { return d.is_sym(); });
}

int64_t Shape::seed_elements() const {
    int64_t n = 1;
    for (const Dim& d : dims) n *= d.seed_extent();
    return n;
}

std::vector<int64_t> Shape::seed_dims() const {
    std::vector<int64_t> out;
    out.reserve(dims.size());
    for (const Dim& d : dims) out.push_back(d.seed_extent());
    return out;
}

std::string Shape::render() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ", ";
        os << dims[i].render();
    }
    os << ']';
    return os.str();
}

Shape Shape::fixed(const std::vector<int64_t>& extents, Layout layout) {
    Shape s;
    s.layout = layout;
    for (int64_t e : extents) s.dims.push_back(Dim::fixed(e));
    return s;
}

Shape parse_shape(const std::string& text) {
    Shape s;
    size_t i = 0;
    auto skip_ws = [&] { while (i < text.size() && text[i] == ' ') ++i; };
    skip_ws();
    if (i >= text.size() || text[i] != '[') throw std::invalid_argument("parse_shape: expected '['");
    ++i;
    skip_ws();
    if (i < text.size() && text[i] == ']') return s;
    while (true) {
        skip_ws();
        bool sym = false;
        if (i < text.size() && text[i] == '#') {
            sym = true;
            ++i;
        }
        size_t start = i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        if (i == start) throw std::invalid_argument("parse_shape: expected digits");
        long long v = std::strtoll(text.substr(start, i - start).c_str(), nullptr, 10);
        s.dims.push_back(sym ? Dim::sym(static_cast<int32_t>(v), 1) : Dim::fixed(v));
        skip_ws();
        if (i < text.size() && text[i] == ',') {
            ++i;
            continue;
        }
        if (i < text.size() && text[i] == ']') break;
        throw std::invalid_argument("parse_shape: expected ',' or ']'");
    }
    return s;
}

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Input: return "Input";
        case OpKind::Const: return "Const";
        case OpKind::Conv2D: return "Conv2D";
        case OpKind::MaxPool2D: return "MaxPool2D";
        case OpKind::AdaptiveAvgPool2D: return "AdaptiveAvgPool2D";
        case OpKind::Dense: return "Dense";
        case OpKind::ReLU: return "ReLU";
        case OpKind::Flatten: return "Flatten";
        case OpKind::Add: return "Add";
        case OpKind::Mul: return "Mul";
        case OpKind::CumSum: return "CumSum";
        case OpKind::Identity: return "Identity";
        case OpKind::DenseGradInput: return "DenseGradInput";
        case OpKind::DenseGradWeight: return "DenseGradWeight";
        case OpKind::SumCols: return "SumCols";
        case OpKind::Conv2DGradInput: return "Conv2DGradInput";
        case OpKind::Conv2DGradWeight: return "Conv2DGradWeight";
        case OpKind::SumNHW: return "SumNHW";
        case OpKind::ReluGrad: return "ReluGrad";
        case OpKind::MaxPool2DGrad: return "MaxPool2DGrad";
        case OpKind::AdaptiveAvgPool2DGrad: return "AdaptiveAvgPool2DGrad";
        case OpKind::Unflatten: return "Unflatten";
    }
    return "?";
}

std::pair<int, int> op_arity(OpKind op) {
    switch (op) {
        case OpKind::Input:
        case OpKind::Const: return {0, 0};
        case OpKind::Add:
        case OpKind::Mul:
        case OpKind::ReluGrad:
        case OpKind::MaxPool2DGrad:
        case OpKind::DenseGradWeight:
        case OpKind::Conv2DGradWeight: return {2, 2};
        default: return {1, 1};
    }
}

const Node* Graph::find_node(const std::string& name) const {
    for (const Node& n : nodes)
        if (n.name == name) return &n;
    return nullptr;
}

int Graph::producer_of(const std::string& value) const {
    for (size_t i = 0; i < nodes.size(); ++i)
        for (const std::string& out : nodes[i].outputs)
            if (out == value) return static_cast<int>(i);
    return -1;
}

bool Graph::is_graph_input(const std::string& value) const {
    for (const GraphInput& gi : inputs)
        if (gi.name == value) return true;
    return false;
}

const TensorType* Graph::type_of(const std::string& value) const {
    auto it = value_types.find(value);
    return it == value_types.end() ? nullptr : &it->second;
}

/* ------------------------------------------------------------------ */
/*  validate                                                           */
/* ------------------------------------------------------------------ */

std::vector<Diagnostic> validate(const Graph& g) {
    std::vector<Diagnostic> diags;
    auto bad = [&](const std::string& node, std::string msg) {
        diags.push_back({node, std::move(msg)});
    };

    std::unordered_map<std::string, int> producers;  // value -> node index
    std::unordered_set<std::string> node_names;
    std::set<std::string> input_names;
    for (const GraphInput& gi : g.inputs) {
        if (!input_names.insert(gi.name).second)
            bad("", "duplicate graph input " + gi.name);
        for (const Dim& d : gi.type.shape.dims)
            if (d.seed_extent() < 1) bad("", "graph input " + gi.name + " has extent < 1");
    }

    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        if (!node_names.insert(n.name).second) bad(n.name, "duplicate node name");
        auto [lo, hi] = op_arity(n.op);
        int arity = static_cast<int>(n.inputs.size());
        if (arity < lo || arity > hi)
            bad(n.name, std::string(op_name(n.op)) + " expects " + std::to_string(lo) +
                            (hi != lo ? ".." + std::to_string(hi) : "") + " inputs, got " +
                            std::to_string(arity));
        if (n.outputs.empty()) bad(n.name, "node produces no outputs");
        // MaxPool2D may carry a second output (the argmax tap in training
        // forward graphs); everything else produces exactly one value.
        size_t max_outputs = n.op == OpKind::MaxPool2D ? 2 : 1;
        if (n.outputs.size() > max_outputs) bad(n.name, "too many outputs");
        for (const std::string& out : n.outputs) {
            auto [it, fresh] = producers.emplace(out, static_cast<int>(i));
            if (!fresh)
                bad(n.name, "value " + out + " already produced by " + g.nodes[it->second].name);
            if (input_names.count(out) && n.op != OpKind::Input)
                bad(n.name, "value " + out + " shadows a graph input");
        }
        if (n.op == OpKind::Input) {
            if (n.outputs.size() != 1 || !input_names.count(n.outputs[0]))
                bad(n.name, "Input node output must name a graph input");
        }
        for (const std::string& w : n.weights)
            if (!g.initializers.count(w)) bad(n.name, "unknown initializer " + w);
        // Attribute sanity.
        const Attrs& a = n.attrs;
        switch (n.op) {
            case OpKind::Conv2D:
                if (a.out_channels < 1) bad(n.name, "out_channels must be positive");
                [[fallthrough]];
            case OpKind::MaxPool2D:
                if (a.kernel[0] < 1 || a.kernel[1] < 1) bad(n.name, "kernel extents must be positive");
                if (a.stride[0] < 1 || a.stride[1] < 1) bad(n.name, "stride extents must be positive");
                break;
            case OpKind::AdaptiveAvgPool2D:
                if (a.out_hw[0] < 1 || a.out_hw[1] < 1) bad(n.name, "out_hw extents must be positive");
                break;
            case OpKind::Dense:
                if (a.out_features < 1) bad(n.name, "out_features must be positive");
                break;
            case OpKind::CumSum:
                if (a.axis < 0) bad(n.name, "axis must be non-negative");
                break;
            default: break;
        }
    }

    // Every consumed value must be produced somewhere.
    for (const Node& n : g.nodes) {
        for (const std::string& in : n.inputs) {
            if (!producers.count(in) && !input_names.count(in) && !g.initializers.count(in))
                bad(n.name, "unknown input " + in);
        }
    }
    for (const std::string& out : g.outputs) {
        if (!producers.count(out) && !input_names.count(out) && !g.initializers.count(out))
            bad("", "graph output " + out + " is not produced");
    }

    // Acyclicity via Kahn; only meaningful if references resolved.
    if (diags.empty()) {
        std::vector<int> indeg(g.nodes.size(), 0);
        std::vector<std::vector<int>> succ(g.nodes.size());
        for (size_t i = 0; i < g.nodes.size(); ++i) {
            for (const std::string& in : g.nodes[i].inputs) {
                auto it = producers.find(in);
                if (it != producers.end() && it->second != static_cast<int>(i)) {
                    succ[it->second].push_back(static_cast<int>(i));
                    ++indeg[i];
                } else if (it != producers.end() && it->second == static_cast<int>(i)) {
                    bad(g.nodes[i].name, "cycle detected");
                }
            }
        }
        std::deque<int> ready;
        for (size_t i = 0; i < indeg.size(); ++i)
            if (indeg[i] == 0) ready.push_back(static_cast<int>(i));
        size_t seen = 0;
        while (!ready.empty()) {
            int v = ready.front();
            ready.pop_front();
            ++seen;
            for (int s : succ[v])
                if (--indeg[s] == 0) ready.push_back(s);
        }
        if (seen != g.nodes.size() && diags.empty()) bad("", "cycle detected");
    }
    return diags;
}

std::vector<std::string> topo_order(const Graph& g) {
    std::unordered_map<std::string, int> producers;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        for (const std::string& out : g.nodes[i].outputs) producers[out] = static_cast<int>(i);

    std::vector<int> indeg(g.nodes.size(), 0);
    std::vector<std::vector<int>> succ(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        for (const std::string& in : g.nodes[i].inputs) {
            auto it = producers.find(in);
            if (it != producers.end()) {
                succ[it->second].push_back(static_cast<int>(i));
                ++indeg[i];
            }
        }
    }
    // Min-heap on insertion index keeps ties deterministic.
    std::set<int> ready;
    for (size_t i = 0; i < indeg.size(); ++i)
        if (indeg[i] == 0) ready.insert(static_cast<int>(i));

    std::vector<std::string> order;
    order.reserve(g.nodes.size());
    while (!ready.empty()) {
        int v = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(g.nodes[v].name);
        for (int s : succ[v])
            if (--indeg[s] == 0) ready.insert(s);
    }
    if (order.size() != g.nodes.size()) throw CycleError("topo_order: cycle detected");
    return order;
}

/* ------------------------------------------------------------------ */
/*  GraphBuilder                                                       */
/* ------------------------------------------------------------------ */

GraphBuilder& GraphBuilder::input(const std::string& name, TensorType type, bool materialize_node) {
    type.dtype = g_.dtype;
    g_.inputs.push_back({name, type});
    for (const Dim& d : type.shape.dims)
        if (d.is_sym()) g_.next_sym_id = std::max(g_.next_sym_id, d.sym_id() + 1);
    if (materialize_node) {
        Node n;
        n.name = name;
        n.op = OpKind::Input;
        n.outputs = {name};
        g_.nodes.push_back(std::move(n));
    }
    return *this;
}

GraphBuilder& GraphBuilder::initializer(const std::string& name, Tensor value) {
    g_.initializers.emplace(name, std::move(value));
    return *this;
}

GraphBuilder& GraphBuilder::node(const std::string& name, OpKind op,
                                 std::vector<std::string> inputs, Attrs attrs,
                                 std::vector<std::string> weights) {
    Node n;
    n.name = name;
    n.op = op;
    n.attrs = std::move(attrs);
    n.inputs = std::move(inputs);
    n.outputs = {name};
    n.weights = std::move(weights);
    g_.nodes.push_back(std::move(n));
    return *this;
}

GraphBuilder& GraphBuilder::output(const std::string& value) {
    g_.outputs.push_back(value);
    return *this;
}

GraphBuilder& GraphBuilder::outputs(std::vector<std::string> values) {
    for (auto& v : values) g_.outputs.push_back(std::move(v));
    return *this;
}

} // namespace nnc::hlir
