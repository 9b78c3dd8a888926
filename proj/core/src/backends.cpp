#include "nnc/backends.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "nnc/error.hpp"
#include "nnc/ingest.hpp"
#include "nnc/kernels.hpp"
#include "nnc/passes.hpp"

namespace nnc::backends {

using hlir::Graph;
using hlir::Node;
using hlir::OpKind;

const char* backend_name(BackendId b) {
    switch (b) {
        case BackendId::REF: return "ref";
        case BackendId::FUSED_EW: return "fused_ew";
        case BackendId::GEMM_TILED: return "gemm_tiled";
    }
    return "?";
}

bool parse_backend(const std::string& name, BackendId& out) {
    for (BackendId b : all_backends()) {
        if (name == backend_name(b)) {
            out = b;
            return true;
        }
    }
    return false;
}

const std::vector<BackendId>& all_backends() {
    static const std::vector<BackendId> ids{BackendId::REF, BackendId::FUSED_EW,
                                            BackendId::GEMM_TILED};
    return ids;
}

bool is_compute(OpKind op) { return op != OpKind::Input && op != OpKind::Const; }

bool supports(BackendId b, OpKind op) {
    switch (b) {
        case BackendId::REF: return true;
        case BackendId::FUSED_EW:
            return op == OpKind::ReLU || op == OpKind::Add || op == OpKind::Mul ||
                   op == OpKind::Identity;
        case BackendId::GEMM_TILED: return op == OpKind::Dense || op == OpKind::Conv2D;
    }
    return false;
}

CostModel CostModel::injected_from(std::map<std::pair<std::string, BackendId>, double> costs) {
    CostModel m;
    m.kind = Kind::Injected;
    m.injected = std::move(costs);
    return m;
}

/* ------------------------------------------------------------------ */
/*  Measured costs                                                     */
/* ------------------------------------------------------------------ */

namespace {

// Times one node in isolation on seed-shaped random inputs, routed
// through the backend's kernel path.
double measure_node(const Graph& g, const Node& n, BackendId backend, int warmup, int trials) {
    std::vector<Tensor> input_storage;
    std::vector<const Tensor*> ins, ws;
    for (const std::string& v : n.inputs) {
        const hlir::TensorType* t = g.type_of(v);
        Tensor tensor(g.dtype, t->shape.seed_dims());
        ingest::InitStream rng(1, "tune." + v);
        for (int64_t i = 0; i < tensor.elements(); ++i) tensor.set(i, rng.uniform(-1.0, 1.0));
        input_storage.push_back(std::move(tensor));
    }
    for (const Tensor& t : input_storage) ins.push_back(&t);
    for (const std::string& w : n.weights) ws.push_back(&g.initializers.at(w));

    auto run_ref = [&] { kernels::eval_node(n, ins, ws); };
    auto run_gemm = [&] {
        if (n.op == OpKind::Dense) {
            int64_t batch = ins[0]->dims()[0], in = ins[0]->dims()[1];
            int64_t out = n.attrs.out_features;
            Tensor y(g.dtype, {batch, out});
            const bool bias = n.attrs.has_bias;
            if (g.dtype == DType::F32)
                kernels::dense_tiled(ins[0]->f32(), ws[0]->f32(), bias ? ws[1]->f32() : nullptr,
                                     y.f32(), batch, in, out);
            else
                kernels::dense_tiled(ins[0]->f64(), ws[0]->f64(), bias ? ws[1]->f64() : nullptr,
                                     y.f64(), batch, in, out);
        } else {
            auto gm = kernels::conv_geometry(ins[0]->dims(), n.attrs);
            Tensor y(g.dtype, {gm.n, gm.oh, gm.ow, gm.co});
            Tensor cols(g.dtype, {gm.n * gm.oh * gm.ow, gm.kh * gm.kw * gm.ci});
            const bool bias = n.attrs.has_bias;
            if (g.dtype == DType::F32)
                kernels::conv2d_tiled(ins[0]->f32(), ws[0]->f32(), bias ? ws[1]->f32() : nullptr,
                                      y.f32(), cols.f32(), gm);
            else
                kernels::conv2d_tiled(ins[0]->f64(), ws[0]->f64(), bias ? ws[1]->f64() : nullptr,
                                      y.f64(), cols.f64(), gm);
        }
    };

    std::vector<double> samples;
    for (int t = 0; t < warmup + trials; ++t) {
        auto start = std::chrono::steady_clock::now();
        if (backend == BackendId::GEMM_TILED)
            run_gemm();
        else
            run_ref();  // FUSED_EW on a single node is the same elementwise pass
        auto stop = std::chrono::steady_clock::now();
        if (t >= warmup)
            samples.push_back(std::chrono::duration<double, std::micro>(stop - start).count());
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
}

} // namespace

TuningReport tune_with_report(const Graph& g, const CostModel& cost) {
    TuningReport report;
    Graph annotated;
    const Graph* gp = &g;
    if (g.value_types.empty() && !g.nodes.empty()) {
        annotated = passes::infer_shapes(g).graph;
        gp = &annotated;
    }

    for (const std::string& name : hlir::topo_order(*gp)) {
        const Node& n = *gp->find_node(name);
        if (!is_compute(n.op)) continue;

        double best_cost = 0;
        bool have_best = false;
        BackendId best = BackendId::REF;
        size_t first_record = report.records.size();
        for (BackendId b : all_backends()) {
            if (!supports(b, n.op)) continue;
            double c;
            if (cost.kind == CostModel::Kind::Injected) {
                auto it = cost.injected.find({n.name, b});
                if (it == cost.injected.end())
                    throw Error(Error::Code::BadDocument,
                                "injected cost model misses (" + n.name + ", " +
                                    backend_name(b) + ")");
                c = it->second;
            } else {
                c = measure_node(*gp, n, b, cost.warmup, cost.trials);
            }
            report.records.push_back({n.name, b, c, false});
            if (!have_best || c < best_cost) {  // strict: ties keep lowest BackendId
                have_best = true;
                best_cost = c;
                best = b;
            }
        }
        if (!have_best) throw Error(Error::Code::NoBackend, n.name + ": no supporting backend");
        for (size_t i = first_record; i < report.records.size(); ++i)
            report.records[i].chosen = report.records[i].backend == best;
        report.assignment[n.name] = best;
    }
    return report;
}

BackendAssignment tune(const Graph& g, const CostModel& cost) {
    return tune_with_report(g, cost).assignment;
}

BackendAssignment default_assignment(const Graph& g) {
    BackendAssignment a;
    for (const Node& n : g.nodes) {
        if (!is_compute(n.op)) continue;
        if (supports(BackendId::GEMM_TILED, n.op))
            a[n.name] = BackendId::GEMM_TILED;
        else if (supports(BackendId::FUSED_EW, n.op))
            a[n.name] = BackendId::FUSED_EW;
        else
            a[n.name] = BackendId::REF;
    }
    return a;
}

std::string TuningReport::render_text() const {
    std::ostringstream os;
    os << "node,candidates\n";
    std::string last;
    for (const TuningRecord& r : records) {
        if (r.node != last) {
            if (!last.empty()) os << '\n';
            os << r.node << ":";
            last = r.node;
        }
        os << "  " << backend_name(r.backend) << "=" << r.cost << (r.chosen ? "*" : "");
    }
    if (!last.empty()) os << '\n';
    return os.str();
}

std::string TuningReport::render_csv() const {
    std::ostringstream os;
    os << "node,backend,cost,chosen\n";
    for (const TuningRecord& r : records)
        os << r.node << ',' << backend_name(r.backend) << ',' << r.cost << ','
           << (r.chosen ? 1 : 0) << '\n';
    return os.str();
}

/* ------------------------------------------------------------------ */
/*  Grouping                                                           */
/* ------------------------------------------------------------------ */

namespace {

struct GroupingCtx {
    std::vector<std::string> order;                   // compute nodes, topo
    std::unordered_map<std::string, int> index;       // name -> dense index
    std::vector<std::vector<bool>> reach;             // dataflow reachability
    std::vector<std::vector<bool>> adjacent;          // undirected edges
    std::vector<BackendId> backend;
};

GroupingCtx build_ctx(const Graph& g, const BackendAssignment& assignment) {
    GroupingCtx ctx;
    for (const std::string& name : hlir::topo_order(g))
        if (is_compute(g.find_node(name)->op)) {
            ctx.index[name] = static_cast<int>(ctx.order.size());
            ctx.order.push_back(name);
        }
    size_t n = ctx.order.size();
    ctx.reach.assign(n, std::vector<bool>(n, false));
    ctx.adjacent.assign(n, std::vector<bool>(n, false));
    ctx.backend.resize(n);

    std::unordered_map<std::string, int> producer;
    for (size_t i = 0; i < n; ++i) {
        const Node& node = *g.find_node(ctx.order[i]);
        auto it = assignment.find(node.name);
        if (it == assignment.end())
            throw Error(Error::Code::NoBackend, node.name + ": unassigned node");
        if (!supports(it->second, node.op))
            throw Error(Error::Code::NoBackend,
                        node.name + ": assigned backend does not support op");
        ctx.backend[i] = it->second;
        for (const std::string& out : node.outputs) producer[out] = static_cast<int>(i);
    }
    // reach[u][v]: a dataflow path u -> v. Processing in topo order, a
    // node inherits the reachability of its producers.
    for (size_t v = 0; v < n; ++v) {
        const Node& node = *g.find_node(ctx.order[v]);
        for (const std::string& in : node.inputs) {
            auto it = producer.find(in);
            if (it == producer.end()) continue;
            int u = it->second;
            ctx.adjacent[u][v] = ctx.adjacent[v][u] = true;
            ctx.reach[u][v] = true;
            for (size_t w = 0; w < n; ++w)
                if (ctx.reach[w][u]) ctx.reach[w][v] = true;
        }
    }
    return ctx;
}

// Convex: for members u, v and any outside node w, not (u -> w -> v).
bool convex_set(const GroupingCtx& ctx, const std::vector<bool>& in_set) {
    size_t n = ctx.order.size();
    for (size_t u = 0; u < n; ++u) {
        if (!in_set[u]) continue;
        for (size_t w = 0; w < n; ++w) {
            if (in_set[w] || !ctx.reach[u][w]) continue;
            for (size_t v = 0; v < n; ++v)
                if (in_set[v] && ctx.reach[w][v]) return false;
        }
    }
    return true;
}

bool connected_set(const GroupingCtx& ctx, const std::vector<bool>& in_set, size_t count) {
    if (count <= 1) return true;
    size_t n = ctx.order.size();
    size_t start = 0;
    while (start < n && !in_set[start]) ++start;
    std::vector<bool> seen(n, false);
    std::vector<size_t> stack{start};
    seen[start] = true;
    size_t visited = 0;
    while (!stack.empty()) {
        size_t u = stack.back();
        stack.pop_back();
        ++visited;
        for (size_t v = 0; v < n; ++v)
            if (in_set[v] && !seen[v] && ctx.adjacent[u][v]) {
                seen[v] = true;
                stack.push_back(v);
            }
    }
    return visited == count;
}

} // namespace

bool is_convex(const Graph& g, const std::vector<std::string>& members) {
    BackendAssignment all_ref;
    for (const Node& n : g.nodes)
        if (is_compute(n.op)) all_ref[n.name] = BackendId::REF;
    GroupingCtx ctx = build_ctx(g, all_ref);
    std::vector<bool> in_set(ctx.order.size(), false);
    for (const std::string& m : members) in_set[ctx.index.at(m)] = true;
    return convex_set(ctx, in_set);
}

std::vector<FusionGroup> group_layers(const Graph& g, const BackendAssignment& assignment) {
    GroupingCtx ctx = build_ctx(g, assignment);
    size_t n = ctx.order.size();

    std::vector<int> group_of(n, -1);
    std::vector<std::vector<int>> groups;  // member indices, creation order

    auto members_set = [&](const std::vector<int>& g1, const std::vector<int>& g2,
                           int extra = -1) {
        std::vector<bool> in_set(n, false);
        for (int m : g1) in_set[m] = true;
        for (int m : g2) in_set[m] = true;
        if (extra >= 0) in_set[extra] = true;
        return in_set;
    };

    // Greedy: join each node to the latest eligible predecessor group.
    for (size_t v = 0; v < n; ++v) {
        int joined = -1;
        std::vector<int> candidates;
        for (size_t u = 0; u < v; ++u)
            if (ctx.adjacent[u][v] && ctx.backend[u] == ctx.backend[v])
                candidates.push_back(group_of[u]);
        std::sort(candidates.rbegin(), candidates.rend());  // latest group first
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        for (int gi : candidates) {
            auto in_set = members_set(groups[gi], {}, static_cast<int>(v));
            if (convex_set(ctx, in_set)) {
                joined = gi;
                break;
            }
        }
        if (joined >= 0) {
            groups[joined].push_back(static_cast<int>(v));
            group_of[v] = joined;
        } else {
            group_of[v] = static_cast<int>(groups.size());
            groups.push_back({static_cast<int>(v)});
        }
    }

    // Merge adjacent same-backend pairs while convexity holds; greedy
    // alone is not maximal on fan-in joins.
    bool merged = true;
    while (merged) {
        merged = false;
        for (size_t i = 0; i < groups.size() && !merged; ++i) {
            if (groups[i].empty()) continue;
            for (size_t j = i + 1; j < groups.size() && !merged; ++j) {
                if (groups[j].empty()) continue;
                if (ctx.backend[groups[i][0]] != ctx.backend[groups[j][0]]) continue;
                bool touch = false;
                for (int a : groups[i])
                    for (int b : groups[j]) touch |= ctx.adjacent[a][b];
                if (!touch) continue;
                auto in_set = members_set(groups[i], groups[j]);
                if (!convex_set(ctx, in_set)) continue;
                groups[i].insert(groups[i].end(), groups[j].begin(), groups[j].end());
                std::sort(groups[i].begin(), groups[i].end());
                groups[j].clear();
                merged = true;
            }
        }
    }

    std::vector<FusionGroup> out;
    for (const auto& members : groups) {
        if (members.empty()) continue;
        FusionGroup fg;
        fg.id = static_cast<int>(out.size());
        fg.backend = ctx.backend[members[0]];
        for (int m : members) fg.members.push_back(ctx.order[m]);
        // sanity: the partition must stay connected per group
        auto in_set = members_set(members, {});
        if (!connected_set(ctx, in_set, members.size()))
            throw Error(Error::Code::UnsupportedInGroup, "grouping produced a disconnected group");
        out.push_back(std::move(fg));
    }
    return out;
}

} // namespace nnc::backends
