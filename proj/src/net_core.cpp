#include "topofault/net_core.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "topofault/errors.hpp"

namespace topofault {

bool Coordinate::finite() const { return std::isfinite(x) && std::isfinite(y); }

double distance(const Coordinate& a, const Coordinate& b) { return std::hypot(a.x - b.x, a.y - b.y); }

NetworkSnapshot::NetworkSnapshot(std::vector<Coordinate> positions, double delta)
    : positions_(std::move(positions)), delta_(delta) {
    if (positions_.size() < 2) throw InvalidInput("snapshot needs at least 2 robots");
    if (!(delta_ > 0.0) || !std::isfinite(delta_)) throw InvalidInput("connectivity threshold must be positive");
    for (const auto& p : positions_)
        if (!p.finite()) throw InvalidInput("non-finite robot position");
}

DiskGraph::DiskGraph(std::size_t n) : n_(n), adj_(n * n, 0) {}

void DiskGraph::add_edge(RobotId i, RobotId j) {
    if (i >= n_ || j >= n_) throw InvalidInput("robot id out of range");
    if (i == j) return;
    adj_[i * n_ + j] = 1;
    adj_[j * n_ + i] = 1;
}

std::vector<RobotId> DiskGraph::neighbors(RobotId i) const {
    std::vector<RobotId> out;
    for (RobotId j = 0; j < n_; ++j)
        if (edge(i, j)) out.push_back(j);
    return out;
}

std::size_t DiskGraph::edge_count() const {
    return static_cast<std::size_t>(std::count(adj_.begin(), adj_.end(), 1)) / 2;
}

Topology::Topology(std::size_t n, const std::vector<Edge>& edges) : n_(n) {
    for (const auto& [a, b] : edges) add_edge(a, b);
}

bool Topology::has_edge(RobotId a, RobotId b) const { return edges_.count({std::min(a, b), std::max(a, b)}) != 0; }

void Topology::add_edge(RobotId a, RobotId b) {
    if (a >= n_ || b >= n_ || a == b) throw InvalidInput("invalid topology edge");
    edges_.insert({std::min(a, b), std::max(a, b)});
}

std::vector<std::vector<RobotId>> Topology::adjacency() const {
    std::vector<std::vector<RobotId>> adj(n_);
    for (const auto& [a, b] : edges_) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& l : adj) std::sort(l.begin(), l.end());
    return adj;
}

const char* to_string(FaultKind kind) { return kind == FaultKind::Collision ? "collision" : "congestion"; }

FaultKind fault_kind_from_string(const std::string& s) {
    if (s == "collision") return FaultKind::Collision;
    if (s == "congestion") return FaultKind::Congestion;
    throw InvalidInput("unknown fault kind '" + s + "'");
}

void FaultEvent::validate(std::size_t n) const {
    if (robots.empty()) throw InvalidInput("fault event names no robots");
    if (kinds.size() != robots.size()) throw InvalidInput("fault kinds do not match fault robots");
    for (auto r : robots)
        if (r >= n) throw InvalidInput("fault robot id out of range");
}

DiskGraph build_disk_graph(const NetworkSnapshot& snapshot) {
    const auto n = snapshot.size();
    DiskGraph g(n);
    for (RobotId i = 0; i < n; ++i)
        for (RobotId j = i + 1; j < n; ++j)
            if (distance(snapshot[i], snapshot[j]) <= snapshot.delta()) g.add_edge(i, j);
    return g;
}

DiskGraph graph_of(const Topology& topology) {
    DiskGraph g(topology.robot_count());
    for (const auto& [a, b] : topology.edges()) g.add_edge(a, b);
    return g;
}

std::vector<std::vector<RobotId>> components(const DiskGraph& graph, const std::set<RobotId>& include) {
    const auto n = graph.size();
    std::vector<char> allowed(n, 0), seen(n, 0);
    for (auto r : include) {
        if (r >= n) throw InvalidInput("robot id out of range");
        allowed[r] = 1;
    }
    std::vector<std::vector<RobotId>> out;
    for (auto start : include) {
        if (seen[start]) continue;
        std::vector<RobotId> comp;
        std::queue<RobotId> q;
        q.push(start);
        seen[start] = 1;
        while (!q.empty()) {
            auto u = q.front();
            q.pop();
            comp.push_back(u);
            for (RobotId v = 0; v < n; ++v)
                if (allowed[v] && !seen[v] && graph.edge(u, v)) {
                    seen[v] = 1;
                    q.push(v);
                }
        }
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
    }
    return out;
}

bool is_connected(const DiskGraph& graph, const std::set<RobotId>& include) {
    if (include.empty()) throw InvalidInput("connectivity query over an empty robot set");
    return components(graph, include).size() == 1;
}

NeighborSet neighbor_set(const Topology& topology, RobotId i) {
    if (i >= topology.robot_count()) throw InvalidInput("robot id out of range");
    NeighborSet ns{i, {}};
    for (const auto& [a, b] : topology.edges()) {
        if (a == i) ns.members.insert(b);
        if (b == i) ns.members.insert(a);
    }
    return ns;
}

std::vector<int> surviving_component_labels(const Topology& topology, const std::set<RobotId>& faulty,
                                            std::size_t* main_component) {
    const auto n = topology.robot_count();
    std::set<RobotId> survivors;
    for (RobotId r = 0; r < n; ++r)
        if (!faulty.count(r)) survivors.insert(r);
    if (survivors.empty()) throw InvalidInput("fault set covers the entire network");

    const auto comps = components(graph_of(topology), survivors);
    std::size_t main = 0;
    // components() is ordered by smallest id, so strict '>' keeps the lowest-id tie-break.
    for (std::size_t c = 1; c < comps.size(); ++c)
        if (comps[c].size() > comps[main].size()) main = c;
    if (main_component) *main_component = main;

    std::vector<int> label(n, -1);
    for (std::size_t c = 0; c < comps.size(); ++c)
        for (auto r : comps[c]) label[r] = static_cast<int>(c);
    return label;
}

OrphanSet orphan_set(const Topology& topology, const FaultEvent& fault) {
    fault.validate(topology.robot_count());
    const auto faulty = fault.robot_set();
    std::size_t main = 0;
    const auto label = surviving_component_labels(topology, faulty, &main);

    OrphanSet out{faulty, {}};
    for (auto f : faulty)
        for (auto j : neighbor_set(topology, f).members)
            if (label[j] >= 0 && static_cast<std::size_t>(label[j]) != main) out.members.insert(j);
    return out;
}

std::vector<RobotId> mass_neighborhood(std::size_t n, RobotId i, double d, const LinkProbability& link_prob) {
    std::vector<RobotId> members{i};
    for (RobotId j = 0; j < n; ++j)
        if (j != i && link_prob(i, j) > d) members.push_back(j);
    return members;
}

Coordinate center_of_mass(const NetworkSnapshot& snapshot, RobotId i, double d, const LinkProbability& link_prob) {
    if (i >= snapshot.size()) throw InvalidInput("robot id out of range");
    const auto members = mass_neighborhood(snapshot.size(), i, d, link_prob);
    Coordinate c;
    for (auto j : members) {
        c.x += snapshot[j].x;
        c.y += snapshot[j].y;
    }
    c.x /= static_cast<double>(members.size());
    c.y /= static_cast<double>(members.size());
    return c;
}

}  // namespace topofault
