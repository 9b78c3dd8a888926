#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gen.hpp"
#include "nnc/error.hpp"
#include "nnc/ingest.hpp"
#include "nnc/passes.hpp"
#include "oracles.hpp"

using namespace nnc;
using namespace nnc::hlir;
using namespace nnc::passes;

namespace {

std::string test_path(const std::string& rel) { return std::string(NNC_TEST_DIR) + "/" + rel; }

Graph alexnet() { return ingest::load_model_file(test_path("models/alexnet.dlb.json")).graph; }

Graph branchy() { return ingest::load_model_file(test_path("models/branchy.dla.json")).graph; }

// Production free set as (input index, axis) pairs, comparable with
// the oracle's.
std::set<std::pair<int, int>> production_free_axes(const Graph& g) {
    VdimReport report = infer_vdims(g);
    std::set<std::pair<int, int>> out;
    for (size_t i = 0; i < g.inputs.size(); ++i) {
        const auto& dims = g.inputs[i].type.shape.dims;
        for (size_t ax = 0; ax < dims.size(); ++ax)
            if (dims[ax].is_sym() && report.is_free(dims[ax].sym_id()))
                out.insert({static_cast<int>(i), static_cast<int>(ax)});
    }
    return out;
}

bool same_structure(const Graph& a, const Graph& b) {
    if (a.nodes.size() != b.nodes.size()) return false;
    for (size_t i = 0; i < a.nodes.size(); ++i) {
        if (a.nodes[i].name != b.nodes[i].name || a.nodes[i].op != b.nodes[i].op ||
            a.nodes[i].inputs != b.nodes[i].inputs)
            return false;
    }
    return a.outputs == b.outputs;
}

} // namespace

TEST_CASE("shape rules reproduce the reference CNN shapes") {
    Graph g = infer_shapes(alexnet()).graph;
    auto dims = [&](const char* v) { return g.type_of(v)->shape.seed_dims(); };
    CHECK(dims("conv2d") == std::vector<int64_t>{1, 56, 56, 64});
    CHECK(dims("max_pooling2d") == std::vector<int64_t>{1, 27, 27, 64});
    CHECK(dims("conv2d_1") == std::vector<int64_t>{1, 27, 27, 192});
    CHECK(dims("max_pooling2d_1") == std::vector<int64_t>{1, 13, 13, 192});
    CHECK(dims("conv2d_2") == std::vector<int64_t>{1, 13, 13, 384});
    CHECK(dims("max_pooling2d_2") == std::vector<int64_t>{1, 6, 6, 256});
    CHECK(dims("flatten") == std::vector<int64_t>{1, 9216});
    CHECK(dims("dense_2") == std::vector<int64_t>{1, 1000});
}

TEST_CASE("identity propagation keeps symbol ids") {
    GraphBuilder b;
    Shape s;
    s.dims = {Dim::sym(0, 2), Dim::fixed(5), Dim::sym(1, 3)};
    b.input("x", TensorType{s, DType::F32});
    b.graph().next_sym_id = 2;
    b.node("i", OpKind::Identity, {"x"});
    b.output("i");
    Graph g = infer_shapes(b.build()).graph;
    const Shape& out = g.type_of("i")->shape;
    CHECK(out.dims[0] == Dim::sym(0, 2));
    CHECK(out.dims[1] == Dim::fixed(5));
    CHECK(out.dims[2] == Dim::sym(1, 3));
}

TEST_CASE("extent mismatch is an error") {
    GraphBuilder b;
    b.input("a", TensorType{Shape::fixed({2, 3}), DType::F32});
    b.input("c", TensorType{Shape::fixed({2, 4}), DType::F32});
    b.node("s", OpKind::Add, {"a", "c"});
    b.output("s");
    try {
        (void)infer_shapes(b.build());
        FAIL("expected ExtentMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Error::Code::ExtentMismatch);
    }
}

TEST_CASE("rank errors are reported") {
    GraphBuilder b;
    b.input("a", TensorType{Shape::fixed({2, 3}), DType::F32});
    Attrs pool;
    pool.kernel = {2, 2};
    pool.stride = {1, 1};
    b.node("p", OpKind::MaxPool2D, {"a"}, pool);
    b.output("p");
    try {
        (void)infer_shapes(b.build());
        FAIL("expected RankError");
    } catch (const Error& e) {
        CHECK(e.code() == Error::Code::RankError);
    }
}

TEST_CASE("vdims: rank-4 branchy analog frees all input symbols") {
    Graph g = branchy();
    VdimReport report = infer_vdims(g);
    REQUIRE(report.free_syms.size() == 3);
    CHECK(report.free_syms[0].seed == 2);
    CHECK(report.free_syms[1].seed == 6);
    CHECK(report.free_syms[2].seed == 8);

    std::string expected =
        "Inputs:  in_0 [#0, #1, #2, 3]\n"
        "Outputs: A [#0, #1, #2, 3]\n"
        "         B [#0, 3, 3, 3]\n"
        "         C [#0, 5, 7, 3]\n"
        "Dynamic: #0 (seed 2), #1 (seed 6), #2 (seed 8)\n";
    CHECK(report.render() == expected);

    auto oracle = testing::oracle_free_axes(g);
    CHECK(production_free_axes(g) == oracle);
    CHECK(oracle == std::set<std::pair<int, int>>{{0, 0}, {0, 1}, {0, 2}});
}

TEST_CASE("vdims: fully dynamic alexnet frees only the batch") {
    Graph g = ingest::load_model_file(test_path("models/alexnet_dyn.dlb.json")).graph;
    VdimReport report = infer_vdims(g);
    REQUIRE(report.free_syms.size() == 1);
    CHECK(report.free_syms[0].seed == 1);

    auto oracle = testing::oracle_free_axes(g);
    CHECK(production_free_axes(g) == oracle);
    CHECK(oracle == std::set<std::pair<int, int>>{{0, 0}});
}

TEST_CASE("vdims: single relu keeps its symbol free") {
    GraphBuilder b;
    Shape s;
    s.dims = {Dim::sym(0, 4)};
    b.input("x", TensorType{s, DType::F32});
    b.graph().next_sym_id = 1;
    b.node("r", OpKind::ReLU, {"x"});
    b.output("r");
    VdimReport report = infer_vdims(b.build());
    REQUIRE(report.free_syms.size() == 1);
    CHECK(report.free_syms[0].id == 0);
}

TEST_CASE("vdims: union-find matches the closure oracle on generated graphs") {
    testing::GenOptions opts;
    opts.mark_dynamic = true;
    int nontrivial = 0;
    for (uint64_t seed = 0; seed < 250; ++seed) {
        Graph g = testing::gen_graph(seed, opts);
        auto prod = production_free_axes(g);
        auto oracle = testing::oracle_free_axes(g);
        CAPTURE(seed);
        CHECK(prod == oracle);
        if (!oracle.empty()) ++nontrivial;
    }
    CHECK(nontrivial > 25);  // the comparison is not vacuous
}

TEST_CASE("bind: all-disable bakes seeds") {
    Graph g = branchy();
    VdimReport report = infer_vdims(g);
    Graph bound = bind_vdims(g, report, {});
    for (const auto& gi : bound.inputs)
        for (const Dim& d : gi.type.shape.dims) CHECK_FALSE(d.is_sym());
    CHECK(bound.type_of("A")->shape.seed_dims() == std::vector<int64_t>{2, 6, 8, 3});
}

TEST_CASE("bind: override rescales, enable keeps symbols, node set is stable") {
    Graph g = ingest::load_model_file(test_path("models/alexnet_dyn.dlb.json")).graph;
    VdimReport report = infer_vdims(g);

    VdimBinding over;
    over.items[0] = {VdimBinding::Action::Override, 8};
    Graph bound = bind_vdims(g, report, over);
    CHECK(bound.type_of("conv2d")->shape.seed_dims() == std::vector<int64_t>{8, 56, 56, 64});
    CHECK(bound.type_of("dense_2")->shape.seed_dims() == std::vector<int64_t>{8, 1000});
    CHECK(bound.nodes.size() == g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) CHECK(bound.nodes[i].name == g.nodes[i].name);

    Graph enabled = bind_vdims(g, report, VdimBinding::enable({0}));
    CHECK(enabled.type_of("dense_2")->shape.dims[0].is_sym());
    CHECK(enabled.type_of("dense_2")->shape.dims[0].sym_id() == 0);

    VdimBinding bad;
    bad.items[7] = {VdimBinding::Action::Enable, 0};
    try {
        (void)bind_vdims(g, report, bad);
        FAIL("expected UnknownSymbol");
    } catch (const Error& e) {
        CHECK(e.code() == Error::Code::UnknownSymbol);
    }
}

TEST_CASE("dead elimination: orphan removal, fixpoint, idempotence") {
    GraphBuilder b;
    b.input("in", TensorType{Shape::fixed({4}), DType::F32});
    b.node("a", OpKind::ReLU, {"in"});
    b.node("b", OpKind::Identity, {"a"});
    b.node("c", OpKind::ReLU, {"in"});  // orphan
    b.output("b");
    Graph g = b.build();
    Graph pruned = eliminate_dead(g);
    CHECK(pruned.nodes.size() == 2);
    CHECK(pruned.find_node("c") == nullptr);

    Graph again = eliminate_dead(pruned);
    CHECK(same_structure(pruned, again));  // fixpoint
    CHECK(again.nodes.size() <= pruned.nodes.size());  // monotone

    // graph whose outputs reference every node is unchanged
    GraphBuilder b2;
    b2.input("in", TensorType{Shape::fixed({4}), DType::F32});
    b2.node("a", OpKind::ReLU, {"in"});
    b2.node("b", OpKind::Identity, {"a"});
    b2.outputs({"a", "b"});
    Graph g2 = b2.build();
    CHECK(same_structure(eliminate_dead(g2), g2));
}

TEST_CASE("dead elimination on alexnet with an extra unused branch") {
    Graph g = alexnet();
    // bolt on an unused conv branch with its own weights
    Attrs conv;
    conv.out_channels = 7;
    conv.kernel = {3, 3};
    conv.stride = {1, 1};
    conv.padding = Padding::Same;
    conv.has_bias = false;
    Node extra;
    extra.name = "stray";
    extra.op = OpKind::Conv2D;
    extra.attrs = conv;
    extra.inputs = {"input_1"};
    extra.outputs = {"stray"};
    extra.weights = {"stray.weight"};
    g.nodes.push_back(extra);
    g.initializers.emplace("stray.weight", Tensor(DType::F32, {3, 3, 3, 7}));

    Graph pruned = eliminate_dead(g);
    CHECK(pruned.find_node("stray") == nullptr);
    CHECK(pruned.initializers.count("stray.weight") == 0);
    auto [rows, total] = ingest::count_params(infer_shapes(pruned).graph);
    CHECK(total == 61100840);
}

TEST_CASE("constant folding") {
    GraphBuilder b(DType::F32);
    b.initializer("k1", Tensor::from_f32({2}, {1, 2}));
    b.initializer("k2", Tensor::from_f32({2}, {3, 4}));
    b.node("c1", OpKind::Const, {}, {}, {"k1"});
    b.node("c2", OpKind::Const, {}, {}, {"k2"});
    b.node("sum", OpKind::Add, {"c1", "c2"});
    b.output("sum");
    Graph folded = fold_constants(b.build());
    const Node* n = folded.find_node("sum");
    REQUIRE(n);
    CHECK(n->op == OpKind::Const);
    const Tensor& payload = folded.initializers.at(n->weights[0]);
    CHECK(payload.get(0) == 4);
    CHECK(payload.get(1) == 6);
    // interior consts swept
    CHECK(folded.find_node("c1") == nullptr);
    CHECK(folded.initializers.count("k1") == 0);

    GraphBuilder br(DType::F32);
    br.initializer("k", Tensor::from_f32({2}, {-1, 2}));
    br.node("c", OpKind::Const, {}, {}, {"k"});
    br.node("r", OpKind::ReLU, {"c"});
    br.output("r");
    Graph folded_r = fold_constants(br.build());
    const Tensor& rp = folded_r.initializers.at(folded_r.find_node("r")->weights[0]);
    CHECK(rp.get(0) == 0);
    CHECK(rp.get(1) == 2);
}

TEST_CASE("constant folding: reversed exclusive cumsum, against the oracle") {
    // oracle first: reversed exclusive prefix sum of [1,2,3]
    GraphBuilder oracle_b(DType::F32);
    oracle_b.initializer("k", Tensor::from_f32({3}, {1, 2, 3}));
    Attrs cs;
    cs.axis = 0;
    cs.exclusive = true;
    cs.reverse = true;
    oracle_b.node("c", OpKind::Const, {}, {}, {"k"});
    oracle_b.node("s", OpKind::CumSum, {"c"}, cs);
    oracle_b.output("s");
    Graph g = oracle_b.build();
    auto oracle_vals = testing::oracle_eval(g, {});
    CHECK(oracle_vals.at("s").get(0) == 5);
    CHECK(oracle_vals.at("s").get(1) == 3);
    CHECK(oracle_vals.at("s").get(2) == 0);

    Graph folded = fold_constants(g);
    const Node* n = folded.find_node("s");
    REQUIRE(n);
    REQUIRE(n->op == OpKind::Const);
    CHECK(folded.initializers.at(n->weights[0]).same_values(oracle_vals.at("s"), 1e-12));
}

TEST_CASE("fold skips symbolic shapes and preserves output shapes") {
    testing::GenOptions opts;
    for (uint64_t seed = 0; seed < 80; ++seed) {
        Graph g = testing::gen_graph(seed, opts);
        Graph before = infer_shapes(g).graph;
        Graph after = fold_constants(g);
        for (const std::string& o : g.outputs)
            CHECK(before.type_of(o)->shape.seed_dims() == after.type_of(o)->shape.seed_dims());
    }
}

TEST_CASE("canonicalize: identity splice and flatten collapse") {
    GraphBuilder b;
    b.input("in", TensorType{Shape::fixed({4}), DType::F32});
    b.node("i1", OpKind::Identity, {"in"});
    b.node("i2", OpKind::Identity, {"i1"});
    b.node("r", OpKind::ReLU, {"i2"});
    b.output("r");
    Graph g = canonicalize(b.build());
    CHECK(g.nodes.size() == 1);
    CHECK(g.nodes[0].name == "r");
    CHECK(g.nodes[0].inputs == std::vector<std::string>{"in"});

    GraphBuilder b2;
    b2.input("in", TensorType{Shape::fixed({2, 3, 4}), DType::F32});
    b2.node("f1", OpKind::Flatten, {"in"});
    b2.node("f2", OpKind::Flatten, {"f1"});
    b2.output("f2");
    Graph g2 = canonicalize(b2.build());
    CHECK(g2.nodes.size() == 1);
    CHECK(g2.nodes[0].name == "f2");
    CHECK(g2.nodes[0].inputs == std::vector<std::string>{"in"});

    Graph g3 = canonicalize(g2);
    CHECK(same_structure(g2, g3));  // already canonical -> fixpoint
}

TEST_CASE("passes preserve well-formedness and semantics on generated graphs") {
    testing::GenOptions opts;
    opts.dtype = DType::F64;
    using PassFn = Graph (*)(const Graph&);
    std::pair<const char*, PassFn> passes_under_test[] = {
        {"canonicalize", &canonicalize},
        {"eliminate_dead", &eliminate_dead},
        {"fold_constants", &fold_constants},
    };
    for (uint64_t seed = 0; seed < 60; ++seed) {
        Graph g = testing::gen_graph(seed, opts);
        for (auto [name, pass] : passes_under_test) {
            Graph out = pass(g);
            CAPTURE(seed);
            CAPTURE(name);
            CHECK(validate(out).empty());
            for (int trial = 0; trial < 5; ++trial) {
                auto feed = testing::gen_inputs(g, seed * 31 + trial);
                auto before = testing::oracle_eval(g, feed);
                auto after = testing::oracle_eval(out, feed);
                for (const std::string& o : g.outputs)
                    CHECK(max_rel_diff(before.at(o), after.at(o)) < 1e-6);
            }
        }
    }
}

TEST_CASE("optimize pipeline end to end") {
    Graph g = branchy();
    OptimizeResult result = optimize(g, {});
    CHECK(validate(result.graph).empty());
    CHECK(result.report.free_syms.size() == 3);
    for (const auto& gi : result.graph.inputs)
        for (const Dim& d : gi.type.shape.dims) CHECK_FALSE(d.is_sym());
}
