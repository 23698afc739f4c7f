#pragma once

#include <cstddef>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace topofault {

using RobotId = std::size_t;

struct Coordinate {
    double x = 0.0;
    double y = 0.0;

    bool finite() const;
    friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

double distance(const Coordinate& a, const Coordinate& b);

/// Robot positions at one instant plus the connectivity threshold.
class NetworkSnapshot {
public:
    NetworkSnapshot(std::vector<Coordinate> positions, double delta);

    std::size_t size() const { return positions_.size(); }
    const std::vector<Coordinate>& positions() const { return positions_; }
    const Coordinate& operator[](RobotId i) const { return positions_.at(i); }
    double delta() const { return delta_; }

private:
    std::vector<Coordinate> positions_;
    double delta_;
};

/// Symmetric, irreflexive adjacency: edge(i,j) iff |p_i - p_j| <= delta.
class DiskGraph {
public:
    explicit DiskGraph(std::size_t n);

    std::size_t size() const { return n_; }
    bool edge(RobotId i, RobotId j) const { return adj_[i * n_ + j] != 0; }
    void add_edge(RobotId i, RobotId j);
    std::vector<RobotId> neighbors(RobotId i) const;
    std::size_t edge_count() const;

private:
    std::size_t n_;
    std::vector<unsigned char> adj_;
};

/// One timestamped position frame of a trajectory window.
struct Frame {
    double time = 0.0;
    std::vector<Coordinate> positions;
};
using Window = std::vector<Frame>;

using Edge = std::pair<RobotId, RobotId>;

/// Unordered edge set over robot ids; edges are stored with first < second.
class Topology {
public:
    Topology() = default;
    Topology(std::size_t n, const std::vector<Edge>& edges);

    std::size_t robot_count() const { return n_; }
    const std::set<Edge>& edges() const { return edges_; }
    bool has_edge(RobotId a, RobotId b) const;
    void add_edge(RobotId a, RobotId b);
    bool empty() const { return edges_.empty(); }

    /// Adjacency lists (sorted ascending).
    std::vector<std::vector<RobotId>> adjacency() const;

private:
    std::size_t n_ = 0;
    std::set<Edge> edges_;
};

struct NeighborSet {
    RobotId owner = 0;
    std::set<RobotId> members;
};

struct OrphanSet {
    std::set<RobotId> faulty;
    std::set<RobotId> members;
};

enum class FaultKind { Collision, Congestion };

const char* to_string(FaultKind kind);
FaultKind fault_kind_from_string(const std::string& s);

struct FaultEvent {
    std::vector<RobotId> robots;
    std::vector<FaultKind> kinds;  // parallel to robots

    FaultEvent() = default;
    FaultEvent(RobotId robot, FaultKind kind) : robots{robot}, kinds{kind} {}

    std::set<RobotId> robot_set() const { return {robots.begin(), robots.end()}; }
    void validate(std::size_t n) const;
};

DiskGraph build_disk_graph(const NetworkSnapshot& snapshot);

/// Build from a topology edge set (for connectivity queries on a topology).
DiskGraph graph_of(const Topology& topology);

bool is_connected(const DiskGraph& graph, const std::set<RobotId>& include);

/// Connected components of the subgraph induced on `include`, each sorted, ordered by smallest id.
std::vector<std::vector<RobotId>> components(const DiskGraph& graph, const std::set<RobotId>& include);

NeighborSet neighbor_set(const Topology& topology, RobotId i);

/// Topological neighbours of faulty robots that fall outside the main surviving component.
/// Main component = largest surviving topology component, ties toward the lowest robot id.
OrphanSet orphan_set(const Topology& topology, const FaultEvent& fault);

/// Surviving component membership after removing `faulty`: index into components(), or -1 for faulty robots.
std::vector<int> surviving_component_labels(const Topology& topology, const std::set<RobotId>& faulty,
                                            std::size_t* main_component = nullptr);

using LinkProbability = std::function<double(RobotId, RobotId)>;

/// Members of the d-neighbourhood B_i^d = {j != i : link_prob(i,j) > d} plus i itself.
std::vector<RobotId> mass_neighborhood(std::size_t n, RobotId i, double d, const LinkProbability& link_prob);

Coordinate center_of_mass(const NetworkSnapshot& snapshot, RobotId i, double d, const LinkProbability& link_prob);

}  // namespace topofault
