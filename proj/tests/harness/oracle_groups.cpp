#include <algorithm>
#include <functional>

#include "oracles.hpp"

// Exhaustive partition machinery for the grouping tests. Reachability
// and connectivity are recomputed here with plain DFS.

namespace nnc::testing {

using hlir::Graph;
using hlir::Node;
using hlir::OpKind;

namespace {

struct Ctx {
    std::vector<std::string> nodes;
    std::map<std::string, int> index;
    std::vector<std::vector<int>> succ;   // direct dataflow edges
    std::vector<std::vector<bool>> adj;   // undirected
    std::vector<std::vector<bool>> reach; // DFS-computed transitive closure
};

Ctx build(const Graph& g) {
    Ctx ctx;
    for (const Node& n : g.nodes) {
        if (n.op == OpKind::Input || n.op == OpKind::Const) continue;
        ctx.index[n.name] = static_cast<int>(ctx.nodes.size());
        ctx.nodes.push_back(n.name);
    }
    size_t m = ctx.nodes.size();
    ctx.succ.assign(m, {});
    ctx.adj.assign(m, std::vector<bool>(m, false));
    std::map<std::string, int> producer;
    for (const Node& n : g.nodes) {
        auto it = ctx.index.find(n.name);
        if (it == ctx.index.end()) continue;
        for (const std::string& o : n.outputs) producer[o] = it->second;
    }
    for (const Node& n : g.nodes) {
        auto it = ctx.index.find(n.name);
        if (it == ctx.index.end()) continue;
        for (const std::string& in : n.inputs) {
            auto p = producer.find(in);
            if (p != producer.end() && p->second != it->second) {
                ctx.succ[p->second].push_back(it->second);
                ctx.adj[p->second][it->second] = ctx.adj[it->second][p->second] = true;
            }
        }
    }
    ctx.reach.assign(m, std::vector<bool>(m, false));
    for (size_t u = 0; u < m; ++u) {
        std::function<void(int)> dfs = [&](int x) {
            for (int v : ctx.succ[x]) {
                if (!ctx.reach[u][v]) {
                    ctx.reach[u][v] = true;
                    dfs(v);
                }
            }
        };
        dfs(static_cast<int>(u));
    }
    return ctx;
}

bool group_ok(const Ctx& ctx, const std::map<std::string, int>& backend_of,
              const std::vector<std::string>& group) {
    if (group.empty()) return false;
    int backend = backend_of.at(group[0]);
    std::vector<bool> in_set(ctx.nodes.size(), false);
    for (const std::string& m : group) {
        if (backend_of.at(m) != backend) return false;
        in_set[ctx.index.at(m)] = true;
    }
    // connectivity over undirected adjacency
    std::vector<int> members;
    for (size_t i = 0; i < in_set.size(); ++i)
        if (in_set[i]) members.push_back(static_cast<int>(i));
    std::vector<bool> seen(ctx.nodes.size(), false);
    std::vector<int> stack{members[0]};
    seen[members[0]] = true;
    size_t visited = 0;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        ++visited;
        for (int v : members)
            if (!seen[v] && ctx.adj[u][v]) {
                seen[v] = true;
                stack.push_back(v);
            }
    }
    if (visited != members.size()) return false;
    // convexity: no outside node sits on a path between two members
    for (int w = 0; w < static_cast<int>(ctx.nodes.size()); ++w) {
        if (in_set[w]) continue;
        bool entered = false, leaves = false;
        for (int u : members) {
            entered |= ctx.reach[u][w];
            leaves |= ctx.reach[w][u];
        }
        if (entered && leaves) return false;
    }
    return true;
}

} // namespace

std::vector<std::string> oracle_compute_nodes(const Graph& g) {
    std::vector<std::string> out;
    for (const Node& n : g.nodes)
        if (n.op != OpKind::Input && n.op != OpKind::Const) out.push_back(n.name);
    return out;
}

bool oracle_valid_partition(const Graph& g, const std::map<std::string, int>& backend_of,
                            const Partition& partition) {
    Ctx ctx = build(g);
    std::set<std::string> seen;
    size_t total = 0;
    for (const auto& group : partition) {
        if (!group_ok(ctx, backend_of, group)) return false;
        for (const std::string& m : group) {
            if (!seen.insert(m).second) return false;  // overlap
        }
        total += group.size();
    }
    return total == ctx.nodes.size();
}

bool oracle_maximal_partition(const Graph& g, const std::map<std::string, int>& backend_of,
                              const Partition& partition) {
    if (!oracle_valid_partition(g, backend_of, partition)) return false;
    Ctx ctx = build(g);
    for (size_t i = 0; i < partition.size(); ++i) {
        for (size_t j = i + 1; j < partition.size(); ++j) {
            if (backend_of.at(partition[i][0]) != backend_of.at(partition[j][0])) continue;
            bool adjacent = false;
            for (const std::string& a : partition[i])
                for (const std::string& b : partition[j])
                    adjacent |= ctx.adj[ctx.index.at(a)][ctx.index.at(b)];
            if (!adjacent) continue;
            std::vector<std::string> merged = partition[i];
            merged.insert(merged.end(), partition[j].begin(), partition[j].end());
            if (group_ok(ctx, backend_of, merged)) return false;  // a legal merge exists
        }
    }
    return true;
}

std::vector<Partition> oracle_all_partitions(const Graph& g,
                                             const std::map<std::string, int>& backend_of) {
    Ctx ctx = build(g);
    std::vector<Partition> out;
    size_t m = ctx.nodes.size();
    if (m == 0) return {{}};
    // Enumerate set partitions via restricted growth strings.
    std::vector<int> assign(m, 0);
    std::function<void(size_t, int)> rec = [&](size_t i, int max_used) {
        if (i == m) {
            Partition p(static_cast<size_t>(max_used) + 1);
            for (size_t k = 0; k < m; ++k) p[assign[k]].push_back(ctx.nodes[k]);
            if (oracle_valid_partition(g, backend_of, p)) out.push_back(std::move(p));
            return;
        }
        for (int c = 0; c <= max_used + 1; ++c) {
            assign[i] = c;
            rec(i + 1, std::max(max_used, c));
        }
    };
    rec(0, -1);
    return out;
}

} // namespace nnc::testing
