#include "topofault/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <thread>

#include "topofault/errors.hpp"

namespace topofault {

void NavParams::validate() const {
    if (!(beta > 0 && lambda1 > 0 && lambda2 > 0 && lambda3 > 0 && alpha > 0))
        throw InvalidInput("navigation factors must be positive");
    if (!(step_size > 0)) throw InvalidInput("step size must be positive");
    if (max_steps < 1) throw InvalidInput("max_steps must be >= 1");
}

void SimConfig::validate() const {
    nav.validate();
    thresholds.validate();
    if (congestion_cap < 1) throw InvalidInput("congestion cap must be >= 1");
    if (cadence < 1) throw InvalidInput("cadence must be >= 1");
    if (window < 1) throw InvalidInput("window must be >= 1");
    if (arena_side < 0) throw InvalidInput("arena side must be >= 0");
    if (!(arrival_tol > 0)) throw InvalidInput("arrival tolerance must be positive");
    if (max_retries < 1) throw InvalidInput("max_retries must be >= 1");
}

double SimConfig::side_for(std::size_t n) const {
    return arena_side > 0 ? arena_side : 5.0 * std::sqrt(static_cast<double>(n) / 10.0);
}

nlohmann::json to_json(const SimConfig& c) {
    return {{"nav",
             {{"beta", c.nav.beta},
              {"lambda1", c.nav.lambda1},
              {"lambda2", c.nav.lambda2},
              {"lambda3", c.nav.lambda3},
              {"alpha", c.nav.alpha},
              {"step_size", c.nav.step_size},
              {"max_steps", c.nav.max_steps}}},
            {"thresholds", to_json(c.thresholds)},
            {"congestion_cap", c.congestion_cap},
            {"cadence", c.cadence},
            {"window", c.window},
            {"arena_side", c.arena_side},
            {"arrival_tol", c.arrival_tol},
            {"max_retries", c.max_retries},
            {"synth",
             {{"cycle_search_budget", c.synth.cycle_search_budget},
              {"fallback", c.synth.fallback == CycleFallback::Greedy ? "greedy" : "mst_only"}}}};
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
    SimConfig c;
    const auto& nav = j.at("nav");
    c.nav.beta = nav.at("beta").get<double>();
    c.nav.lambda1 = nav.at("lambda1").get<double>();
    c.nav.lambda2 = nav.at("lambda2").get<double>();
    c.nav.lambda3 = nav.at("lambda3").get<double>();
    c.nav.alpha = nav.at("alpha").get<double>();
    c.nav.step_size = nav.at("step_size").get<double>();
    c.nav.max_steps = nav.at("max_steps").get<int>();
    c.thresholds = thresholds_from_json(j.at("thresholds"));
    c.congestion_cap = j.at("congestion_cap").get<int>();
    c.cadence = j.at("cadence").get<int>();
    c.window = j.at("window").get<int>();
    c.arena_side = j.at("arena_side").get<double>();
    c.arrival_tol = j.at("arrival_tol").get<double>();
    c.max_retries = j.at("max_retries").get<int>();
    c.synth.cycle_search_budget = j.at("synth").at("cycle_search_budget").get<uint64_t>();
    c.synth.fallback = j.at("synth").at("fallback").get<std::string>() == "greedy" ? CycleFallback::Greedy
                                                                                    : CycleFallback::MstOnly;
    c.validate();
    return c;
}

std::vector<Coordinate> place_uniform(std::size_t n, const Bounds& b, rng::Engine& eng) {
    if (n < 2) throw InvalidInput("need at least 2 robots");
    if (!(b.x1 > b.x0 && b.y1 > b.y0)) throw InvalidInput("degenerate bounds");
    std::vector<Coordinate> out(n);
    for (auto& c : out) {
        c.x = rng::uniform(eng, b.x0, b.x1);
        c.y = rng::uniform(eng, b.y0, b.y1);
    }
    return out;
}

double nav_potential(RobotId i, const Coordinate& q, const std::vector<Coordinate>& positions,
                     const std::vector<Coordinate>& targets, const NavParams& p) {
    const double to_goal = distance(q, targets.at(i));
    const double g2 = to_goal * to_goal;
    double repulse = 0.0, assoc = 0.0;
    const double num = std::pow(to_goal, 1.0 / p.alpha);
    for (RobotId j = 0; j < positions.size(); ++j) {
        if (j == i) continue;
        const double dx = q.x - positions[j].x, dy = q.y - positions[j].y;
        const double d2 = dx * dx + dy * dy;
        if (d2 == 0.0) throw SingularPotential("robot " + std::to_string(i) + " coincides with robot " + std::to_string(j));
        repulse += num / d2;
        const double e = distance(positions[j], targets[j]);
        assoc += e * e;
    }
    return p.lambda1 * g2 + p.lambda2 / p.alpha * repulse + p.lambda3 * g2 * assoc;
}

std::optional<FaultEvent> inject_fault(const std::vector<Coordinate>& frame, const Thresholds& t, int congestion_cap) {
    const std::size_t n = frame.size();
    for (RobotId i = 0; i < n; ++i)
        for (RobotId j = i + 1; j < n; ++j)
            if (distance(frame[i], frame[j]) < t.omega) return FaultEvent(i, FaultKind::Collision);
    for (RobotId i = 0; i < n; ++i) {
        Coordinate c = frame[i];
        std::size_t members = 1;
        for (RobotId j = 0; j < n; ++j)
            if (j != i && distance(frame[i], frame[j]) <= t.delta) {
                c.x += frame[j].x;
                c.y += frame[j].y;
                ++members;
            }
        c.x /= static_cast<double>(members);
        c.y /= static_cast<double>(members);
        if (members >= static_cast<std::size_t>(congestion_cap) && distance(c, frame[i]) < t.lambda)
            return FaultEvent(i, FaultKind::Congestion);
    }
    return std::nullopt;
}

namespace {

constexpr double kGradStep = 1e-5;

std::optional<FaultEvent> coincident(const std::vector<Coordinate>& q) {
    for (RobotId i = 0; i < q.size(); ++i)
        for (RobotId j = i + 1; j < q.size(); ++j)
            if (q[i] == q[j]) return FaultEvent(i, FaultKind::Collision);
    return std::nullopt;
}

}  // namespace

Trajectory coordinate(const std::vector<Coordinate>& start, const std::vector<Coordinate>& targets, const SimConfig& cfg) {
    cfg.validate();
    if (start.size() != targets.size()) throw InvalidInput("start and target counts differ");
    const std::size_t n = start.size();
    const auto& p = cfg.nav;
    const std::size_t keep = static_cast<std::size_t>(cfg.window) + 1;

    Trajectory out;
    std::deque<Frame> buf;
    std::size_t recorded = 0;
    std::vector<Coordinate> q = start;

    auto arrived = [&] {
        for (RobotId i = 0; i < n; ++i)
            if (distance(q[i], targets[i]) > cfg.arrival_tol) return false;
        return true;
    };
    auto push = [&](int step) {
        buf.push_back({step * p.step_size, q});
        if (buf.size() > keep) buf.pop_front();
        ++recorded;
    };
    auto finish = [&] {
        out.frames.assign(buf.begin(), buf.end());
        return out;
    };

    push(0);
    std::vector<Coordinate> next(n);
    for (int step = 1; step <= p.max_steps; ++step) {
        if (arrived()) {
            out.arrived = true;
            return finish();
        }
        try {
            for (RobotId i = 0; i < n; ++i) {
                const double gx = (nav_potential(i, {q[i].x + kGradStep, q[i].y}, q, targets, p) -
                                   nav_potential(i, {q[i].x - kGradStep, q[i].y}, q, targets, p)) /
                                  (2 * kGradStep);
                const double gy = (nav_potential(i, {q[i].x, q[i].y + kGradStep}, q, targets, p) -
                                   nav_potential(i, {q[i].x, q[i].y - kGradStep}, q, targets, p)) /
                                  (2 * kGradStep);
                double vx = -gx, vy = -gy;
                const double speed = std::hypot(vx, vy);
                const double cap = p.beta * distance(q[i], targets[i]);
                if (speed > cap && speed > 0) {
                    vx *= cap / speed;
                    vy *= cap / speed;
                }
                next[i] = {q[i].x + p.step_size * vx, q[i].y + p.step_size * vy};
            }
        } catch (const SingularPotential&) {
            push(step);
            out.steps = step;
            out.fault = coincident(q);
            return finish();
        }
        q.swap(next);
        out.steps = step;
        if (step % cfg.cadence == 0) {
            push(step);
            if (recorded >= keep) {
                if (auto f = inject_fault(q, cfg.thresholds, cfg.congestion_cap)) {
                    out.fault = f;
                    return finish();
                }
            }
        }
    }
    if (buf.back().positions != q) push(out.steps);
    return finish();
}

void label_record(DatasetRecord& r, double delta) {
    const NetworkSnapshot snap(r.final_frame(), delta);
    r.label = recoverability_oracle(snap, r.fault) ? Verdict::Recoverable : Verdict::Irrecoverable;
    r.orphan_count = orphan_set(r.topology, r.fault).members.size();
}

namespace {

FaultEvent forced_fault(const std::vector<Coordinate>& frame, const Thresholds& t, rng::Engine& eng) {
    const std::size_t n = frame.size();
    const RobotId u = rng::uniform_index(eng, n);
    double nearest = std::numeric_limits<double>::infinity();
    Coordinate c = frame[u];
    std::size_t members = 1;
    for (RobotId j = 0; j < n; ++j) {
        if (j == u) continue;
        const double d = distance(frame[u], frame[j]);
        nearest = std::min(nearest, d);
        if (d <= t.delta) {
            c.x += frame[j].x;
            c.y += frame[j].y;
            ++members;
        }
    }
    c.x /= static_cast<double>(members);
    c.y /= static_cast<double>(members);
    // whichever condition the robot is closest to triggering
    const bool collision = nearest / t.omega <= distance(c, frame[u]) / t.lambda;
    return FaultEvent(u, collision ? FaultKind::Collision : FaultKind::Congestion);
}

bool connected(const std::vector<Coordinate>& pos, double delta) {
    std::set<RobotId> all;
    for (RobotId i = 0; i < pos.size(); ++i) all.insert(i);
    return is_connected(build_disk_graph(NetworkSnapshot(pos, delta)), all);
}

DatasetRecord generate_record(std::size_t n, const SimConfig& cfg, uint64_t seed, uint64_t id, uint64_t& redraws) {
    auto eng = rng::make_engine(seed, "record", id);
    const double side = cfg.side_for(n);
    const Bounds arena{0.0, 0.0, side, side};
    const double delta = cfg.thresholds.delta;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) ++redraws;
        const auto start = place_uniform(n, arena, eng);
        if (!connected(start, delta)) continue;
        const auto targets = place_uniform(n, arena, eng);
        auto traj = coordinate(start, targets, cfg);
        const auto& last = traj.frames.back().positions;
        if (!connected(last, delta)) continue;
        DatasetRecord r;
        r.network_id = id;
        r.fault = traj.fault ? *traj.fault : forced_fault(last, cfg.thresholds, eng);
        r.window = std::move(traj.frames);
        r.topology = synthesize_topology(NetworkSnapshot(r.final_frame(), delta), cfg.synth);
        label_record(r, delta);
        return r;
    }
    throw SynthesisInfeasible("record " + std::to_string(id) + ": no connected configuration after " +
                              std::to_string(cfg.max_retries) + " redraws");
}

}  // namespace

Dataset generate_dataset(std::size_t n_robots, std::size_t n_records, const SimConfig& cfg, uint64_t seed,
                         unsigned threads) {
    cfg.validate();
    if (n_records < 1) throw InvalidInput("need at least one record");
    if (n_robots < 2) throw InvalidInput("need at least 2 robots");
    Dataset ds;
    ds.header.robots = n_robots;
    ds.header.records = n_records;
    ds.header.seed = seed;
    ds.header.config = cfg;
    ds.records.resize(n_records);
    std::vector<uint64_t> redraws(n_records, 0);
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_records)));
    std::vector<std::exception_ptr> errors(threads);
    auto work = [&](unsigned t) {
        try {
            for (std::size_t k = t; k < n_records; k += threads)
                ds.records[k] = generate_record(n_robots, cfg, seed, k, redraws[k]);
        } catch (...) {
            errors[t] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (auto r : redraws) ds.header.redraws += r;
    return ds;
}

DatasetRecord perturb_noise(const DatasetRecord& r, rng::Engine& eng, double scale) {
    DatasetRecord out = r;
    auto jitter = [&](double q) {
        const double a = -scale * q, b = scale * q;
        return q + rng::uniform(eng, std::min(a, b), std::max(a, b));
    };
    for (auto& f : out.window)
        for (auto& c : f.positions) {
            c.x = jitter(c.x);
            c.y = jitter(c.y);
        }
    return out;
}

nlohmann::json to_json(const DatasetRecord& r) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : r.window) {
        std::vector<double> flat;
        flat.reserve(2 * f.positions.size());
        for (const auto& c : f.positions) {
            flat.push_back(c.x);
            flat.push_back(c.y);
        }
        frames.push_back({{"t", f.time}, {"p", std::move(flat)}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (auto [a, b] : r.topology.edges()) edges.push_back({a, b});
    std::vector<std::string> kinds;
    for (auto k : r.fault.kinds) kinds.emplace_back(to_string(k));
    return {{"network_id", r.network_id},
            {"frames", std::move(frames)},
            {"topology", std::move(edges)},
            {"fault", {{"robots", r.fault.robots}, {"kinds", kinds}}},
            {"label", to_string(r.label)},
            {"orphan_count", r.orphan_count}};
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    r.network_id = j.at("network_id").get<uint64_t>();
    for (const auto& f : j.at("frames")) {
        Frame fr;
        fr.time = f.at("t").get<double>();
        const auto flat = f.at("p").get<std::vector<double>>();
        if (flat.size() % 2) throw InvalidInput("odd coordinate count in frame");
        for (std::size_t k = 0; k < flat.size(); k += 2) fr.positions.push_back({flat[k], flat[k + 1]});
        r.window.push_back(std::move(fr));
    }
    if (r.window.empty()) throw InvalidInput("record without frames");
    std::vector<Edge> edges;
    for (const auto& e : j.at("topology")) edges.emplace_back(e.at(0).get<RobotId>(), e.at(1).get<RobotId>());
    r.topology = Topology(r.robots(), edges);
    r.fault.robots = j.at("fault").at("robots").get<std::vector<RobotId>>();
    for (const auto& k : j.at("fault").at("kinds")) r.fault.kinds.push_back(fault_kind_from_string(k.get<std::string>()));
    r.fault.validate(r.robots());
    r.label = verdict_from_string(j.at("label").get<std::string>());
    r.orphan_count = j.at("orphan_count").get<std::size_t>();
    return r;
}

void write_dataset(std::ostream& os, const Dataset& ds) {
    const nlohmann::json header = {{"schema", ds.header.schema},   {"robots", ds.header.robots},
                                   {"records", ds.header.records}, {"seed", ds.header.seed},
                                   {"redraws", ds.header.redraws}, {"config", to_json(ds.header.config)}};
    os << header.dump() << '\n';
    for (const auto& r : ds.records) os << to_json(r).dump() << '\n';
    if (!os) throw InvalidInput("dataset write failed");
}

void write_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
    write_dataset(os, ds);
}

Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidInput("empty dataset");
    Dataset ds;
    try {
        const auto h = nlohmann::json::parse(line);
        ds.header.schema = h.at("schema").get<std::string>();
        if (ds.header.schema != kDatasetSchema)
            throw SchemaMismatch("dataset schema '" + ds.header.schema + "', expected '" + kDatasetSchema + "'");
        ds.header.robots = h.at("robots").get<std::size_t>();
        ds.header.records = h.at("records").get<std::size_t>();
        ds.header.seed = h.at("seed").get<uint64_t>();
        ds.header.redraws = h.value("redraws", uint64_t{0});
        ds.header.config = sim_config_from_json(h.at("config"));
        std::size_t lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            ds.records.push_back(record_from_json(nlohmann::json::parse(line)));
            if (ds.records.back().robots() != ds.header.robots)
                throw InvalidInput("line " + std::to_string(lineno) + ": robot count differs from header");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed dataset: ") + e.what());
    }
    if (ds.records.size() != ds.header.records)
        throw InvalidInput("dataset has " + std::to_string(ds.records.size()) + " records, header says " +
                           std::to_string(ds.header.records));
    return ds;
}

Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("cannot open '" + path + "'");
    return read_dataset(is);
}

}  // namespace topofault
