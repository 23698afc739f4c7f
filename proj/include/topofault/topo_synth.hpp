#pragma once

#include <cstdint>
#include <vector>

#include "topofault/net_core.hpp"

namespace topofault {

enum class CycleFallback { Greedy, MstOnly };

struct SynthConfig {
    uint64_t cycle_search_budget = 2'000'000;  // node expansions of the exact search
    CycleFallback fallback = CycleFallback::Greedy;
};

struct CycleSearchResult {
    std::vector<RobotId> cycle;  // vertex order; empty when the graph is acyclic
    bool exact = false;          // search finished within budget
    uint64_t expansions = 0;
};

/// Branch-and-bound longest simple cycle. A budget of 0 means unbounded.
CycleSearchResult longest_cycle(const DiskGraph& graph, uint64_t budget);

/// Cycle backbone plus nearest-edge-first tree branches.
Topology synthesize_topology(const NetworkSnapshot& snapshot, const SynthConfig& cfg = {});
Topology synthesize_topology(const NetworkSnapshot& snapshot, const DiskGraph& graph, const SynthConfig& cfg);

/// Ground truth: the delta-disk graph induced on surviving robots is connected.
bool recoverability_oracle(const NetworkSnapshot& snapshot, const FaultEvent& fault);

}  // namespace topofault
