#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topofault/inference.hpp"
#include "topofault/net_core.hpp"
#include "topofault/seeding.hpp"
#include "topofault/topo_synth.hpp"

namespace topofault {

inline constexpr const char* kDatasetSchema = "topofault.dataset/1";

/// Meta navigation function parameters (defaults: beta 8, lambda 0.5 / 0.10 / 0.001, alpha 1).
struct NavParams {
    double beta = 8.0;
    double lambda1 = 0.5;
    double lambda2 = 0.10;
    double lambda3 = 0.001;
    double alpha = 1.0;
    double step_size = 5e-5;
    int max_steps = 200'000;

    void validate() const;
};

struct Bounds {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

std::vector<Coordinate> place_uniform(std::size_t n, const Bounds& bounds, rng::Engine& eng);

/// psi for robot i placed at q, with every other robot at positions[j]. Throws SingularPotential
/// when q coincides with another robot.
double nav_potential(RobotId i, const Coordinate& q, const std::vector<Coordinate>& positions,
                     const std::vector<Coordinate>& targets, const NavParams& p);

struct SimConfig {
    NavParams nav;
    Thresholds thresholds;
    int congestion_cap = 4;      // minimum |B_i^d|, the robot itself included
    int cadence = 5;             // integration steps per recorded frame
    int window = 200;            // frames kept before the fault frame
    double arena_side = 0.0;     // 0 picks 5 * sqrt(n / 10)
    double arrival_tol = 1e-2;
    int max_retries = 100;
    SynthConfig synth;

    void validate() const;
    double side_for(std::size_t n) const;
};

nlohmann::json to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j);

struct Trajectory {
    Window frames;  // last window + 1 frames; the final one is the fault (or arrival) frame
    std::optional<FaultEvent> fault;
    int steps = 0;
    bool arrived = false;
};

/// Collision on the lower id of the first pair closer than omega; else congestion on the lowest id with
/// |X_i - X̄_i| < lambda and |B_i^d| >= cap (disk-graph neighbourhood); else nothing.
std::optional<FaultEvent> inject_fault(const std::vector<Coordinate>& frame, const Thresholds& t, int congestion_cap);

/// Gradient descent on psi for every robot, speed capped by the kernel beta |q - q^t|.
/// Fault checks start once `window` frames are buffered.
Trajectory coordinate(const std::vector<Coordinate>& start, const std::vector<Coordinate>& targets, const SimConfig& cfg);

struct DatasetRecord {
    uint64_t network_id = 0;
    Window window;
    Topology topology;
    FaultEvent fault;
    Verdict label = Verdict::Irrecoverable;
    std::size_t orphan_count = 0;

    const std::vector<Coordinate>& final_frame() const { return window.back().positions; }
    std::size_t robots() const { return window.back().positions.size(); }
};

struct DatasetHeader {
    std::string schema = kDatasetSchema;
    std::size_t robots = 0;
    std::size_t records = 0;
    uint64_t seed = 0;
    SimConfig config;
    uint64_t redraws = 0;
};

struct Dataset {
    DatasetHeader header;
    std::vector<DatasetRecord> records;
};

nlohmann::json to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const nlohmann::json& j);

/// Place, synthesize, coordinate, fault, label. Record k draws from derive(seed, "record", k), so
/// records are independent of each other and of the thread count.
Dataset generate_dataset(std::size_t n_robots, std::size_t n_records, const SimConfig& cfg, uint64_t seed,
                         unsigned threads = 1);

/// Label and orphan count for a record whose window, topology and fault are set.
void label_record(DatasetRecord& r, double delta);

/// q -> q + U[-scale q, scale q] on every coordinate of every frame; label kept.
DatasetRecord perturb_noise(const DatasetRecord& r, rng::Engine& eng, double scale = 0.1);

void write_dataset(std::ostream& os, const Dataset& ds);
void write_dataset(const std::string& path, const Dataset& ds);
/// Throws SchemaMismatch for a foreign header, InvalidInput for malformed lines.
Dataset read_dataset(std::istream& is);
Dataset read_dataset(const std::string& path);

}  // namespace topofault
