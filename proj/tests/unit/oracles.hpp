#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "topofault/net_core.hpp"
#include "topofault/seeding.hpp"

namespace oracle {

using topofault::Coordinate;
using topofault::RobotId;

inline std::vector<Coordinate> random_positions(topofault::rng::Engine& eng, std::size_t n, double side) {
    std::vector<Coordinate> p(n);
    for (auto& c : p) c = {topofault::rng::uniform(eng, 0, side), topofault::rng::uniform(eng, 0, side)};
    return p;
}

inline std::vector<std::vector<char>> distance_adjacency(const std::vector<Coordinate>& p, double delta) {
    const auto n = p.size();
    std::vector<std::vector<char>> a(n, std::vector<char>(n, 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double dx = p[i].x - p[j].x, dy = p[i].y - p[j].y;
            a[i][j] = (i != j && dx * dx + dy * dy <= delta * delta) ? 1 : 0;
        }
    return a;
}

/// Recursive DFS component count over the included vertices.
inline int dfs_component_count(const std::vector<std::vector<char>>& adj, const std::set<RobotId>& include) {
    std::vector<char> seen(adj.size(), 0);
    std::function<void(RobotId)> visit = [&](RobotId u) {
        seen[u] = 1;
        for (RobotId v = 0; v < adj.size(); ++v)
            if (adj[u][v] && include.count(v) && !seen[v]) visit(v);
    };
    int count = 0;
    for (auto s : include)
        if (!seen[s]) {
            ++count;
            visit(s);
        }
    return count;
}

/// Tarjan low-link articulation points of a connected graph.
inline std::set<RobotId> articulation_points(const std::vector<std::vector<char>>& adj) {
    const auto n = adj.size();
    std::vector<int> disc(n, -1), low(n, 0);
    std::set<RobotId> out;
    int timer = 0;
    std::function<void(RobotId, int)> dfs = [&](RobotId u, int parent) {
        disc[u] = low[u] = timer++;
        int children = 0;
        for (RobotId v = 0; v < n; ++v) {
            if (!adj[u][v]) continue;
            if (disc[v] < 0) {
                ++children;
                dfs(v, static_cast<int>(u));
                low[u] = std::min(low[u], low[v]);
                if (parent >= 0 && low[v] >= disc[u]) out.insert(u);
            } else if (static_cast<int>(v) != parent) {
                low[u] = std::min(low[u], disc[v]);
            }
        }
        if (parent < 0 && children > 1) out.insert(u);
    };
    for (RobotId s = 0; s < n; ++s)
        if (disc[s] < 0) dfs(s, -1);
    return out;
}

/// Longest simple cycle by exhaustive enumeration (tiny graphs only).
inline std::size_t exhaustive_longest_cycle(const std::vector<std::vector<char>>& adj) {
    const auto n = adj.size();
    std::size_t best = 0;
    std::vector<char> used(n, 0);
    std::function<void(RobotId, RobotId, std::size_t)> go = [&](RobotId start, RobotId u, std::size_t len) {
        if (len >= 3 && adj[u][start]) best = std::max(best, len);
        for (RobotId v = start + 1; v < n; ++v)
            if (adj[u][v] && !used[v]) {
                used[v] = 1;
                go(start, v, len + 1);
                used[v] = 0;
            }
    };
    for (RobotId s = 0; s < n; ++s) {
        used[s] = 1;
        go(s, s, 1);
        used[s] = 0;
    }
    return best;
}

}  // namespace oracle

namespace oracle {

// Window of `frames` frames jittered by N(0, sigma) around fixed positions.
inline topofault::Window tight_window(topofault::rng::Engine& eng, const std::vector<topofault::Coordinate>& base,
                                      std::size_t frames, double sigma) {
    topofault::Window w;
    for (std::size_t t = 0; t < frames; ++t) {
        topofault::Frame f;
        f.time = static_cast<double>(t);
        for (const auto& c : base)
            f.positions.push_back({c.x + sigma * topofault::rng::normal(eng), c.y + sigma * topofault::rng::normal(eng)});
        w.push_back(std::move(f));
    }
    return w;
}

// P[at least one] by inclusion-exclusion over all non-empty subsets.
inline double inclusion_exclusion(const std::vector<double>& ps) {
    const std::size_t m = ps.size();
    double total = 0.0;
    for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
        double prod = 1.0;
        int bits = 0;
        for (std::size_t k = 0; k < m; ++k)
            if (mask >> k & 1) {
                prod *= ps[k];
                ++bits;
            }
        total += (bits % 2 ? 1.0 : -1.0) * prod;
    }
    return total;
}

}  // namespace oracle
