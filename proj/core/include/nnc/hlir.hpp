#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nnc/tensor.hpp"

namespace nnc::hlir {

/* ------------------------------------------------------------------ */
/*  Dimensions and shapes                                              */
/* ------------------------------------------------------------------ */

/// A dimension is either a fixed extent or a symbolic one ("#k").
/// Symbolic dims carry the extent observed at ingest time (the seed),
/// used whenever concrete evaluation is required before binding.
/// Equality compares structure (fixed extent / symbol id); the seed is
/// evaluation metadata, not identity.
class Dim {
public:
    static Dim fixed(int64_t extent);
    static Dim sym(int32_t id, int64_t seed);

    bool is_sym() const { return sym_id_ >= 0; }
    int32_t sym_id() const { return sym_id_; }
    /// Concrete extent: the fixed extent, or the seed for symbolic dims.
    int64_t seed_extent() const { return extent_; }

    std::string render() const;

    friend bool operator==(const Dim& a, const Dim& b) {
        if (a.is_sym() != b.is_sym()) return false;
        return a.is_sym() ? a.sym_id_ == b.sym_id_ : a.extent_ == b.extent_;
    }

private:
    int64_t extent_ = 1;
    int32_t sym_id_ = -1;
};

enum class Layout : uint8_t { NHWC = 0, FLAT = 1, SCALAR = 2, RAW = 3 };

struct Shape {
    std::vector<Dim> dims;
    Layout layout = Layout::RAW;

    size_t rank() const { return dims.size(); }
    bool fully_fixed() const;
    int64_t seed_elements() const;
    std::vector<int64_t> seed_dims() const;
    std::string render() const;

    static Shape fixed(const std::vector<int64_t>& extents, Layout layout = Layout::RAW);

    friend bool operator==(const Shape& a, const Shape& b) { return a.dims == b.dims; }
};

/// Parses the render() format, e.g. "[#0, 5, #1]". Symbol seeds default to 1.
Shape parse_shape(const std::string& text);

struct TensorType {
    Shape shape;
    DType dtype = DType::F32;

    friend bool operator==(const TensorType& a, const TensorType& b) {
        return a.shape == b.shape && a.dtype == b.dtype;
    }
};

/* ------------------------------------------------------------------ */
/*  Operators                                                          */
/* ------------------------------------------------------------------ */

enum class OpKind : uint8_t {
    Input,
    Const,
    Conv2D,
    MaxPool2D,
    AdaptiveAvgPool2D,
    Dense,
    ReLU,
    Flatten,
    Add,
    Mul,
    CumSum,
    Identity,
    // Gradient kernels, emitted by version derivation only.
    DenseGradInput,
    DenseGradWeight,
    SumCols,
    Conv2DGradInput,
    Conv2DGradWeight,
    SumNHW,
    ReluGrad,
    MaxPool2DGrad,
    AdaptiveAvgPool2DGrad,
    Unflatten,
};

const char* op_name(OpKind op);

enum class Padding : uint8_t { Same = 0, Valid = 1 };

/// Attribute bag; which fields are meaningful depends on the OpKind.
struct Attrs {
    int64_t out_channels = 0;              // Conv2D
    std::array<int64_t, 2> kernel{0, 0};   // Conv2D, MaxPool2D (and their grads)
    std::array<int64_t, 2> stride{1, 1};
    Padding padding = Padding::Valid;
    bool has_bias = false;                 // Conv2D, Dense
    std::array<int64_t, 2> out_hw{0, 0};   // AdaptiveAvgPool2D
    int64_t out_features = 0;              // Dense
    int64_t axis = 0;                      // CumSum
    bool exclusive = false;
    bool reverse = false;
    // Forward-side dims a gradient kernel cannot recover from its own
    // inputs: spatial extents for Conv2DGradInput / MaxPool2DGrad /
    // AdaptiveAvgPool2DGrad, the non-batch dims for Unflatten.
    std::vector<int64_t> fwd_dims;

    friend bool operator==(const Attrs&, const Attrs&) = default;
};

struct Node {
    std::string name;
    OpKind op = OpKind::Identity;
    Attrs attrs;
    std::vector<std::string> inputs;    // value names consumed
    std::vector<std::string> outputs;   // value names produced
    std::vector<std::string> weights;   // references into Graph::initializers
};

/* ------------------------------------------------------------------ */
/*  Graph                                                              */
/* ------------------------------------------------------------------ */

struct GraphInput {
    std::string name;
    TensorType type;
};

struct Diagnostic {
    std::string node;    // empty when graph-level
    std::string message;
};

/// Directed acyclic multigraph of operator nodes. Immutable by
/// convention once built: passes return transformed copies.
///
/// Graph inputs may exist as bare (name, type) entries or additionally
/// be materialized as Input nodes (ingest does the latter so summaries
/// include an InputLayer row). An Input node's single output name must
/// match a graph input entry.
struct Graph {
    DType dtype = DType::F32;
    std::vector<Node> nodes;
    std::vector<GraphInput> inputs;
    std::vector<std::string> outputs;
    std::map<std::string, Tensor> initializers;

    /// Filled by passes::infer_shapes; keyed by value name.
    std::map<std::string, TensorType> value_types;

    /// Dense symbol allocator; ids are unique within one graph.
    int32_t next_sym_id = 0;

    int32_t fresh_sym() { return next_sym_id++; }

    const Node* find_node(const std::string& name) const;
    /// Producing node index of a value, or -1 for graph inputs / initializers.
    int producer_of(const std::string& value) const;
    bool is_graph_input(const std::string& value) const;
    const TensorType* type_of(const std::string& value) const;

    /// Value names consumed by a node, weights excluded.
    static const std::vector<std::string>& consumed(const Node& n) { return n.inputs; }
};

/// Structural well-formedness. Returns an empty list iff all Graph and
/// Node invariants hold; never throws on malformed input.
std::vector<Diagnostic> validate(const Graph& g);

struct CycleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Deterministic topological order of node names (ties broken by node
/// insertion index). Throws CycleError if a cycle survived validation.
std::vector<std::string> topo_order(const Graph& g);

/// Node input arity for validation: (min, max) inputs by kind.
std::pair<int, int> op_arity(OpKind op);

/* ------------------------------------------------------------------ */
/*  Builder                                                            */
/* ------------------------------------------------------------------ */

/// Convenience for constructing graphs in ingest and tests.
class GraphBuilder {
public:
    explicit GraphBuilder(DType dt = DType::F32) { g_.dtype = dt; }

    /// Adds a graph input; when `materialize_node` an Input node is created.
    GraphBuilder& input(const std::string& name, TensorType type, bool materialize_node = false);
    GraphBuilder& initializer(const std::string& name, Tensor value);
    /// Adds a node with a single output named after the node.
    GraphBuilder& node(const std::string& name, OpKind op, std::vector<std::string> inputs,
                       Attrs attrs = {}, std::vector<std::string> weights = {});
    GraphBuilder& output(const std::string& value);
    GraphBuilder& outputs(std::vector<std::string> values);

    Graph build() const { return g_; }
    Graph& graph() { return g_; }

private:
    Graph g_;
};

} // namespace nnc::hlir
