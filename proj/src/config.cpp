#include "topofault/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "topofault/errors.hpp"

extern char** environ;

namespace topofault {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw InvalidInput("bad value '" + v + "' for " + key);
    return out;
}

template <class T>
std::string show(T v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

struct Field {
    std::string name;  // section.key
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Getter>
Field number_field(std::string name, Getter ref) {
    using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
    return {name,
            [name, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(name, v); },
            [ref](const RunConfig& c) {
                RunConfig copy = c;
                return show(ref(copy));
            }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(number_field("thresholds.delta", [](RunConfig& c) -> double& { return c.thresholds.delta; }));
        f.push_back(number_field("thresholds.omega", [](RunConfig& c) -> double& { return c.thresholds.omega; }));
        f.push_back(number_field("thresholds.lambda", [](RunConfig& c) -> double& { return c.thresholds.lambda; }));
        f.push_back(number_field("thresholds.mass_d", [](RunConfig& c) -> double& { return c.thresholds.mass_d; }));
        f.push_back(number_field("thresholds.q_b", [](RunConfig& c) -> double& { return c.thresholds.q_b; }));
        f.push_back(number_field("thresholds.q_d", [](RunConfig& c) -> double& { return c.thresholds.q_d; }));

        f.push_back(number_field("bgmm.max_components", [](RunConfig& c) -> int& { return c.bgmm.max_components; }));
        f.push_back({"bgmm.covariance_type",
                     [](RunConfig& c, const std::string& v) { c.bgmm.covariance_type = covariance_type_from_string(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.bgmm.covariance_type)); }});
        f.push_back(number_field("bgmm.n_init", [](RunConfig& c) -> int& { return c.bgmm.n_init; }));
        f.push_back({"bgmm.prior_type",
                     [](RunConfig& c, const std::string& v) { c.bgmm.prior_type = weight_prior_from_string(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.bgmm.prior_type)); }});
        f.push_back(number_field("bgmm.gamma0", [](RunConfig& c) -> double& { return c.bgmm.gamma0; }));
        f.push_back(number_field("bgmm.max_iter", [](RunConfig& c) -> int& { return c.bgmm.max_iter; }));
        f.push_back(number_field("bgmm.convergence_tol", [](RunConfig& c) -> double& { return c.bgmm.convergence_tol; }));
        f.push_back(number_field("bgmm.reg_covar", [](RunConfig& c) -> double& { return c.bgmm.reg_covar; }));
        f.push_back(number_field("bgmm.prune_weight", [](RunConfig& c) -> double& { return c.bgmm.prune_weight; }));
        f.push_back(number_field("bgmm.seed", [](RunConfig& c) -> uint64_t& { return c.bgmm.seed; }));
        f.push_back(number_field("bgmm.angular_nodes", [](RunConfig& c) -> int& { return c.quadrature.angular_nodes; }));

        f.push_back(number_field("nav.beta", [](RunConfig& c) -> double& { return c.sim.nav.beta; }));
        f.push_back(number_field("nav.lambda1", [](RunConfig& c) -> double& { return c.sim.nav.lambda1; }));
        f.push_back(number_field("nav.lambda2", [](RunConfig& c) -> double& { return c.sim.nav.lambda2; }));
        f.push_back(number_field("nav.lambda3", [](RunConfig& c) -> double& { return c.sim.nav.lambda3; }));
        f.push_back(number_field("nav.alpha", [](RunConfig& c) -> double& { return c.sim.nav.alpha; }));
        f.push_back(number_field("nav.step_size", [](RunConfig& c) -> double& { return c.sim.nav.step_size; }));
        f.push_back(number_field("nav.max_steps", [](RunConfig& c) -> int& { return c.sim.nav.max_steps; }));

        f.push_back(number_field("sim.congestion_cap", [](RunConfig& c) -> int& { return c.sim.congestion_cap; }));
        f.push_back(number_field("sim.cadence", [](RunConfig& c) -> int& { return c.sim.cadence; }));
        f.push_back(number_field("sim.window", [](RunConfig& c) -> int& { return c.sim.window; }));
        f.push_back(number_field("sim.arena_side", [](RunConfig& c) -> double& { return c.sim.arena_side; }));
        f.push_back(number_field("sim.arrival_tol", [](RunConfig& c) -> double& { return c.sim.arrival_tol; }));
        f.push_back(number_field("sim.max_retries", [](RunConfig& c) -> int& { return c.sim.max_retries; }));
        f.push_back(number_field("sim.cycle_search_budget",
                                 [](RunConfig& c) -> uint64_t& { return c.sim.synth.cycle_search_budget; }));
        f.push_back({"sim.cycle_fallback",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "greedy") c.sim.synth.fallback = CycleFallback::Greedy;
                         else if (v == "mst_only") c.sim.synth.fallback = CycleFallback::MstOnly;
                         else throw InvalidInput("bad value '" + v + "' for sim.cycle_fallback");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.sim.synth.fallback == CycleFallback::Greedy ? "greedy" : "mst_only");
                     }});

        f.push_back(number_field("esn.reservoir", [](RunConfig& c) -> int& { return c.esn.reservoir; }));
        f.push_back(number_field("esn.spectral_radius", [](RunConfig& c) -> double& { return c.esn.spectral_radius; }));
        f.push_back(number_field("esn.kappa", [](RunConfig& c) -> double& { return c.esn.kappa; }));
        f.push_back(number_field("esn.tau", [](RunConfig& c) -> double& { return c.esn.tau; }));
        f.push_back(number_field("esn.ridge", [](RunConfig& c) -> double& { return c.esn.ridge; }));
        f.push_back(number_field("esn.input_scale", [](RunConfig& c) -> double& { return c.esn.input_scale; }));
        f.push_back(number_field("esn.washout", [](RunConfig& c) -> int& { return c.esn.washout; }));
        f.push_back(number_field("esn.stride", [](RunConfig& c) -> int& { return c.esn.stride; }));
        f.push_back(number_field("esn.seed", [](RunConfig& c) -> uint64_t& { return c.esn.seed; }));

        f.push_back(number_field("split.train", [](RunConfig& c) -> std::size_t& { return c.split.train; }));
        f.push_back(number_field("split.validation", [](RunConfig& c) -> std::size_t& { return c.split.validation; }));
        f.push_back(number_field("split.test", [](RunConfig& c) -> std::size_t& { return c.split.test; }));
        f.push_back(number_field("split.seed", [](RunConfig& c) -> uint64_t& { return c.split.seed; }));

        f.push_back(number_field("grid.folds", [](RunConfig& c) -> int& { return c.grid.folds; }));
        f.push_back(number_field("grid.holdout_fraction", [](RunConfig& c) -> double& { return c.grid.holdout_fraction; }));
        f.push_back(number_field("grid.seed", [](RunConfig& c) -> uint64_t& { return c.grid.seed; }));

        f.push_back(number_field("run.threads", [](RunConfig& c) -> unsigned& { return c.threads; }));
        return f;
    }();
    return table;
}

const Field& field(const std::string& name) {
    for (const auto& f : fields())
        if (f.name == name) return f;
    throw InvalidInput("unknown config key '" + name + "'");
}

}  // namespace

void RunConfig::normalize() {
    thresholds.validate();
    bgmm.validate();
    if (quadrature.angular_nodes < 2) throw InvalidInput("angular_nodes must be >= 2");
    sim.thresholds = thresholds;
    sim.validate();
    esn.validate();
    if (grid.folds < 1) throw InvalidInput("grid.folds must be >= 1");
    if (!(grid.holdout_fraction > 0.0 && grid.holdout_fraction < 1.0))
        throw InvalidInput("grid.holdout_fraction must be in (0,1)");
    if (split.train == 0 || split.test == 0) throw InvalidInput("split needs non-empty train and test parts");
    if (threads == 0) throw InvalidInput("run.threads must be >= 1");
    grid.threads = threads;
    grid.quadrature = quadrature;
}

Settings parse_settings(std::istream& in, const std::string& origin) {
    Settings s;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw InvalidInput(where + ": unterminated section header");
            section = lower(trim(line.substr(1, line.size() - 2)));
            if (section.empty()) throw InvalidInput(where + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidInput(where + ": expected key = value");
        if (section.empty()) throw InvalidInput(where + ": key outside any section");
        const std::string key = lower(trim(line.substr(0, eq)));
        if (key.empty()) throw InvalidInput(where + ": empty key");
        s[section + "." + key] = trim(line.substr(eq + 1));
    }
    return s;
}

Settings read_settings_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file '" + path + "'");
    return parse_settings(in, path);
}

Settings env_settings(const std::vector<std::string>& entries, const std::string& prefix) {
    Settings s;
    for (const auto& e : entries) {
        if (e.rfind(prefix, 0) != 0) continue;
        const auto eq = e.find('=');
        if (eq == std::string::npos) continue;
        const std::string name = lower(e.substr(prefix.size(), eq - prefix.size()));
        const auto us = name.find('_');
        if (us == std::string::npos || us == 0 || us + 1 == name.size()) continue;
        s[name.substr(0, us) + "." + name.substr(us + 1)] = e.substr(eq + 1);
    }
    return s;
}

Settings env_settings(const std::string& prefix) {
    std::vector<std::string> entries;
    for (char** e = environ; e && *e; ++e) entries.emplace_back(*e);
    return env_settings(entries, prefix);
}

void apply_settings(RunConfig& cfg, const Settings& s) {
    for (const auto& [k, v] : s) field(k).set(cfg, v);
}

std::string dump_settings(const RunConfig& cfg) {
    std::ostringstream out;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.name.find('.');
        const std::string sec = f.name.substr(0, dot);
        if (sec != section) {
            out << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
            section = sec;
        }
        out << f.name.substr(dot + 1) << " = " << f.get(cfg) << "\n";
    }
    return out.str();
}

std::vector<std::string> known_keys() {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.name);
    return k;
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : fields()) {
        if (f.name == "run.threads") continue;
        const auto dot = f.name.find('.');
        j[f.name.substr(0, dot)][f.name.substr(dot + 1)] = f.get(cfg);
    }
    return j;
}

}  // namespace topofault
