#include "topofault/topo_synth.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include "topofault/errors.hpp"

namespace topofault {
namespace {

class CycleSearch {
public:
    CycleSearch(const DiskGraph& g, uint64_t budget) : g_(g), n_(g.size()), budget_(budget), on_path_(n_, 0) {
        for (RobotId i = 0; i < n_; ++i) adj_.push_back(g.neighbors(i));
    }

    CycleSearchResult run() {
        for (RobotId s = 0; s < n_ && !aborted_; ++s) {
            // Cycles whose smallest vertex is s can use at most the vertices >= s.
            if (n_ - s <= best_.size()) break;
            start_ = s;
            path_ = {s};
            on_path_[s] = 1;
            extend(s);
            on_path_[s] = 0;
            if (best_.size() == n_) break;
        }
        return {best_, !aborted_, expansions_};
    }

private:
    // Vertices >= start_, off the path, reachable from `from` without touching the path.
    std::size_t reachable_bound(RobotId from) {
        std::vector<char> seen(n_, 0);
        std::vector<RobotId> stack{from};
        seen[from] = 1;
        std::size_t count = 0;
        while (!stack.empty()) {
            auto u = stack.back();
            stack.pop_back();
            for (auto v : adj_[u]) {
                if (v < start_ || seen[v] || on_path_[v]) continue;
                seen[v] = 1;
                ++count;
                stack.push_back(v);
            }
        }
        return count;
    }

    void extend(RobotId u) {
        if (aborted_) return;
        if (budget_ != 0 && ++expansions_ > budget_) {
            aborted_ = true;
            return;
        } else if (budget_ == 0) {
            ++expansions_;
        }
        if (path_.size() >= 3 && g_.edge(u, start_) && path_.size() > best_.size()) best_ = path_;
        if (best_.size() == n_) return;
        if (path_.size() + reachable_bound(u) <= best_.size()) return;

        for (auto v : adj_[u]) {
            if (v <= start_ || on_path_[v]) continue;
            on_path_[v] = 1;
            path_.push_back(v);
            extend(v);
            path_.pop_back();
            on_path_[v] = 0;
            if (aborted_ || best_.size() == n_) return;
        }
    }

    const DiskGraph& g_;
    std::size_t n_;
    uint64_t budget_;
    std::vector<std::vector<RobotId>> adj_;
    std::vector<char> on_path_;
    std::vector<RobotId> path_;
    std::vector<RobotId> best_;
    RobotId start_ = 0;
    uint64_t expansions_ = 0;
    bool aborted_ = false;
};

// Insert off-cycle vertices between adjacent cycle vertices while possible.
void grow_by_insertion(const DiskGraph& g, std::vector<RobotId>& cycle) {
    bool changed = true;
    while (changed && cycle.size() < g.size()) {
        changed = false;
        std::vector<char> in(g.size(), 0);
        for (auto c : cycle) in[c] = 1;
        for (RobotId v = 0; v < g.size() && !changed; ++v) {
            if (in[v]) continue;
            for (std::size_t k = 0; k < cycle.size(); ++k) {
                auto a = cycle[k], b = cycle[(k + 1) % cycle.size()];
                if (g.edge(a, v) && g.edge(v, b)) {
                    cycle.insert(cycle.begin() + static_cast<std::ptrdiff_t>(k + 1), v);
                    changed = true;
                    break;
                }
            }
        }
    }
}

// Greedy triangle seed when the exact search found nothing before its budget ran out.
std::vector<RobotId> seed_triangle(const DiskGraph& g) {
    for (RobotId a = 0; a < g.size(); ++a)
        for (RobotId b = a + 1; b < g.size(); ++b)
            if (g.edge(a, b))
                for (RobotId c = b + 1; c < g.size(); ++c)
                    if (g.edge(a, c) && g.edge(b, c)) return {a, b, c};
    return {};
}

}  // namespace

CycleSearchResult longest_cycle(const DiskGraph& graph, uint64_t budget) { return CycleSearch(graph, budget).run(); }

Topology synthesize_topology(const NetworkSnapshot& snapshot, const SynthConfig& cfg) {
    return synthesize_topology(snapshot, build_disk_graph(snapshot), cfg);
}

Topology synthesize_topology(const NetworkSnapshot& snapshot, const DiskGraph& graph, const SynthConfig& cfg) {
    if (cfg.cycle_search_budget == 0) throw InvalidInput("cycle search budget must be positive");
    const auto n = snapshot.size();
    std::set<RobotId> all;
    for (RobotId i = 0; i < n; ++i) all.insert(i);
    if (!is_connected(graph, all)) throw SynthesisInfeasible("disk graph is disconnected");

    auto search = longest_cycle(graph, cfg.cycle_search_budget);
    std::vector<RobotId> cycle = search.cycle;
    if (!search.exact) {
        if (cfg.fallback == CycleFallback::MstOnly) {
            cycle.clear();
        } else {
            if (cycle.empty()) cycle = seed_triangle(graph);
            if (!cycle.empty()) grow_by_insertion(graph, cycle);
        }
    }

    Topology topo(n, {});
    std::vector<char> in_tree(n, 0);
    if (!cycle.empty()) {
        for (std::size_t k = 0; k < cycle.size(); ++k) {
            topo.add_edge(cycle[k], cycle[(k + 1) % cycle.size()]);
            in_tree[cycle[k]] = 1;
        }
    } else {
        in_tree[0] = 1;
    }

    // Branches: repeatedly take the shortest disk edge leaving the tree; ties by (tree id, new id).
    for (;;) {
        std::tuple<double, RobotId, RobotId> best{std::numeric_limits<double>::infinity(), 0, 0};
        bool found = false;
        for (RobotId u = 0; u < n; ++u) {
            if (!in_tree[u]) continue;
            for (RobotId v = 0; v < n; ++v) {
                if (in_tree[v] || !graph.edge(u, v)) continue;
                std::tuple<double, RobotId, RobotId> cand{distance(snapshot[u], snapshot[v]), u, v};
                if (!found || cand < best) {
                    best = cand;
                    found = true;
                }
            }
        }
        if (!found) break;
        topo.add_edge(std::get<1>(best), std::get<2>(best));
        in_tree[std::get<2>(best)] = 1;
    }
    return topo;
}

bool recoverability_oracle(const NetworkSnapshot& snapshot, const FaultEvent& fault) {
    fault.validate(snapshot.size());
    const auto faulty = fault.robot_set();
    std::set<RobotId> survivors;
    for (RobotId r = 0; r < snapshot.size(); ++r)
        if (!faulty.count(r)) survivors.insert(r);
    if (survivors.empty()) throw InvalidInput("every robot is faulty");
    return is_connected(build_disk_graph(snapshot), survivors);
}

}  // namespace topofault
