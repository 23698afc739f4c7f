#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topofault/baselines.hpp"
#include "topofault/bgmm.hpp"
#include "topofault/evaluation.hpp"
#include "topofault/inference.hpp"
#include "topofault/simulator.hpp"

namespace topofault {

/// Everything a run depends on. `sim.thresholds` mirrors `thresholds` after normalize().
struct RunConfig {
    Thresholds thresholds;
    BgmmConfig bgmm;
    QuadratureConfig quadrature;
    SimConfig sim;
    EsnConfig esn;
    SplitSpec split;
    GridOptions grid;
    unsigned threads = 1;

    /// Copies shared settings into the nested structs, then validates every part.
    void normalize();
};

/// "section.key" -> raw value.
using Settings = std::map<std::string, std::string>;

/// Parses
///     # comment
///     [section]
///     key = value
/// Throws InvalidInput naming `origin` and the line on malformed input.
Settings parse_settings(std::istream& in, const std::string& origin = "config");
Settings read_settings_file(const std::string& path);

/// PREFIX_SECTION_KEY=value pairs from the environment, e.g. TOPOFAULT_THRESHOLDS_Q_B=0.8.
Settings env_settings(const std::string& prefix = "TOPOFAULT_");
/// Same, over an explicit environment block.
Settings env_settings(const std::vector<std::string>& environ_entries, const std::string& prefix = "TOPOFAULT_");

/// Applies settings in order; an unknown key or unparsable value throws InvalidInput.
void apply_settings(RunConfig& cfg, const Settings& s);

/// Every known key with its current value, in the file format parse_settings reads.
std::string dump_settings(const RunConfig& cfg);
std::vector<std::string> known_keys();

/// Effective configuration for echoing into artifacts (thread count left out: it never changes results).
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace topofault
