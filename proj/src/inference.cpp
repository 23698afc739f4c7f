#include "topofault/inference.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <thread>

#include "topofault/errors.hpp"
#include "topofault/seeding.hpp"

namespace topofault {

namespace {

constexpr double kEps = 1e-9;

Edge ordered(RobotId i, RobotId j) { return i < j ? Edge{i, j} : Edge{j, i}; }

[[noreturn]] void rethrow_staged(const Error& e, const std::string& stage) {
    if (!e.stage().empty()) throw;
    const std::string msg = e.what();
    if (dynamic_cast<const InvalidInput*>(&e)) throw InvalidInput(msg, stage);
    if (dynamic_cast<const InsufficientData*>(&e)) throw InsufficientData(msg, stage);
    if (dynamic_cast<const InferenceIncomplete*>(&e)) throw InferenceIncomplete(msg, stage);
    throw Error(msg, stage);
}

template <class F>
auto staged(const std::string& stage, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        rethrow_staged(e, stage);
    }
}

// Union over the given links, dropping links that on their own formed an earlier factor.
// Returns 1 when every link is already established.
double chain_factor(RobotId v, const std::vector<RobotId>& partners, std::set<Edge>& established,
                    const LinkProbability& link) {
    std::vector<Edge> fresh;
    for (auto u : partners)
        if (!established.count(ordered(u, v))) fresh.push_back(ordered(u, v));
    if (fresh.empty()) return 1.0;
    std::vector<double> ps;
    for (auto [a, b] : fresh) ps.push_back(link(a, b));
    if (fresh.size() == 1) established.insert(fresh.front());
    return union_probability(ps);
}

}  // namespace

void Thresholds::validate() const {
    if (!(delta > 0.0)) throw InvalidInput("delta must be positive");
    if (!(omega > 0.0 && omega < delta)) throw InvalidInput("omega must lie in (0, delta)");
    if (!(lambda > 0.0 && lambda < delta)) throw InvalidInput("lambda must lie in (0, delta)");
    if (!(mass_d > 0.0 && mass_d < 1.0)) throw InvalidInput("mass factor must lie in (0, 1)");
    if (!(q_b > 0.0 && q_b < 1.0)) throw InvalidInput("q_b must lie in (0, 1)");
    if (!(q_d > 0.0 && q_d < 1.0)) throw InvalidInput("q_d must lie in (0, 1)");
}

nlohmann::json to_json(const Thresholds& t) {
    return {{"delta", t.delta}, {"omega", t.omega}, {"lambda", t.lambda},
            {"mass_d", t.mass_d}, {"q_b", t.q_b},     {"q_d", t.q_d}};
}

Thresholds thresholds_from_json(const nlohmann::json& j) {
    Thresholds t;
    t.delta = j.at("delta").get<double>();
    t.omega = j.at("omega").get<double>();
    t.lambda = j.at("lambda").get<double>();
    t.mass_d = j.at("mass_d").get<double>();
    t.q_b = j.at("q_b").get<double>();
    t.q_d = j.at("q_d").get<double>();
    t.validate();
    return t;
}

const char* to_string(Verdict v) { return v == Verdict::Recoverable ? "recoverable" : "irrecoverable"; }

Verdict verdict_from_string(const std::string& s) {
    if (s == "recoverable") return Verdict::Recoverable;
    if (s == "irrecoverable") return Verdict::Irrecoverable;
    throw InvalidInput("unknown verdict '" + s + "'");
}

// ---------------------------------------------------------------------------------------------

PairwiseModels::PairwiseModels(Window window, double delta, BgmmConfig cfg, QuadratureConfig quad, std::set<Edge> links)
    : store_(std::make_shared<Store>()), delta_(delta) {
    if (window.empty()) throw InvalidInput("empty snapshot window");
    if (!(delta > 0.0)) throw InvalidInput("delta must be positive");
    cfg.validate();
    auto d = std::make_shared<Data>();
    d->n = window.front().positions.size();
    for (const auto& f : window) {
        if (f.positions.size() != d->n) throw InvalidInput("frames disagree on robot count");
        for (const auto& c : f.positions)
            if (!c.finite()) throw InvalidInput("non-finite position in window");
    }
    const std::size_t n = d->n;
    d->mean_dist.assign(n * n, 0.0);
    d->last_dist.assign(n * n, 0.0);
    std::vector<Coordinate> centre(n, Coordinate{0.0, 0.0});
    for (const auto& f : window)
        for (RobotId i = 0; i < n; ++i) {
            centre[i].x += f.positions[i].x / static_cast<double>(window.size());
            centre[i].y += f.positions[i].y / static_cast<double>(window.size());
        }
    for (RobotId i = 0; i < n; ++i)
        for (RobotId j = i + 1; j < n; ++j) {
            d->mean_dist[i * n + j] = d->mean_dist[j * n + i] = distance(centre[i], centre[j]);
            d->last_dist[i * n + j] = d->last_dist[j * n + i] = distance(window.back().positions[i], window.back().positions[j]);
        }
    for (auto [i, j] : links) {
        if (i == j || i >= n || j >= n) throw InvalidInput("declared link out of range");
        d->links.insert(ordered(i, j));
    }
    d->window = std::move(window);
    d->cfg = cfg;
    d->quad = quad;
    data_ = std::move(d);
}

PairwiseModels::PairwiseModels(std::shared_ptr<const Data> data, std::shared_ptr<Store> store, double delta)
    : data_(std::move(data)), store_(std::move(store)), delta_(delta) {}

PairwiseModels PairwiseModels::with_delta(double delta) const {
    if (!(delta > 0.0)) throw InvalidInput("delta must be positive");
    return PairwiseModels(data_, store_, delta);
}

void PairwiseModels::flag(std::string f) {
    std::lock_guard lock(*flag_mu_);
    flags_.insert(std::move(f));
}

double PairwiseModels::mean_distance(RobotId i, RobotId j) const {
    const std::size_t n = data_->n;
    if (i >= n || j >= n) throw InvalidInput("robot id out of range");
    return data_->mean_dist[i * n + j];
}

bool PairwiseModels::in_mean_range(RobotId i, RobotId j) const {
    return i != j && mean_distance(i, j) <= delta_;
}

bool PairwiseModels::potentially_communicating(RobotId i, RobotId j) const {
    if (in_mean_range(i, j)) return true;
    return i != j && (data_->last_dist[i * data_->n + j] <= delta_ || data_->links.count(ordered(i, j)));
}

BgmmConfig PairwiseModels::seeded(std::string_view tag, uint64_t index) const {
    BgmmConfig c = data_->cfg;
    c.seed = rng::derive(c.seed, tag, index);
    return c;
}

BgmmModel PairwiseModels::fit_pair(RobotId i, RobotId j) const {
    std::vector<Vec2> xs;
    xs.reserve(data_->window.size());
    for (const auto& f : data_->window)
        xs.emplace_back(f.positions[j].x - f.positions[i].x, f.positions[j].y - f.positions[i].y);
    return fit(xs, seeded("pair", i * data_->n + j));
}

const BgmmModel* PairwiseModels::pair_model(RobotId i, RobotId j) {
    if (!potentially_communicating(i, j)) return nullptr;
    const Edge e = ordered(i, j);
    {
        std::lock_guard lock(store_->mu);
        if (auto it = store_->pairs.find(e); it != store_->pairs.end()) return &it->second;
    }
    auto model = fit_pair(e.first, e.second);
    std::lock_guard lock(store_->mu);
    return &store_->pairs.try_emplace(e, std::move(model)).first->second;
}

void PairwiseModels::fit_pairs(const std::vector<Edge>& pairs, unsigned threads) {
    std::vector<Edge> todo;
    {
        std::lock_guard lock(store_->mu);
        std::set<Edge> seen;
        for (auto [i, j] : pairs) {
            const Edge e = ordered(i, j);
            if (potentially_communicating(i, j) && !store_->pairs.count(e) && seen.insert(e).second) todo.push_back(e);
        }
    }
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(todo.size())));
    if (threads <= 1) {
        for (auto [i, j] : todo) pair_model(i, j);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t k = t; k < todo.size(); k += threads) pair_model(todo[k].first, todo[k].second);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double PairwiseModels::link_probability(RobotId i, RobotId j, double radius, bool /*strict*/) {
    const BgmmModel* m = pair_model(i, j);
    if (!m) {
        const Edge e = ordered(i, j);
        flag("no-model:" + std::to_string(e.first) + "-" + std::to_string(e.second));
        return 0.0;
    }
    // Model is on X_hi - X_lo; the disk is symmetric so orientation does not matter.
    return radial_probability(*m, radius, data_->quad);
}

const BgmmModel& PairwiseModels::com_model(RobotId i, double mass_d) {
    if (i >= data_->n) throw InvalidInput("robot id out of range");
    const auto key = std::make_tuple(i, mass_d, delta_);
    {
        std::lock_guard lock(store_->mu);
        if (auto it = store_->com.find(key); it != store_->com.end()) {
            if (it->second.lone) flag("lone-com:" + std::to_string(i));
            return it->second.model;
        }
    }
    std::vector<RobotId> members{i};
    for (RobotId j = 0; j < data_->n; ++j)
        if (j != i && link_probability(i, j, delta_) > mass_d) members.push_back(j);
    if (members.size() == 1) flag("lone-com:" + std::to_string(i));
    std::vector<Vec2> xs;
    xs.reserve(data_->window.size());
    for (const auto& f : data_->window) {
        Vec2 c = Vec2::Zero();
        for (auto j : members) c += Vec2(f.positions[j].x, f.positions[j].y);
        c /= static_cast<double>(members.size());
        xs.push_back(c - Vec2(f.positions[i].x, f.positions[i].y));
    }
    auto model = fit(xs, seeded("com", i));
    std::lock_guard lock(store_->mu);
    return store_->com.try_emplace(key, ComFit{std::move(model), members.size() == 1}).first->second.model;
}

std::size_t PairwiseModels::pair_fit_count() const {
    std::lock_guard lock(store_->mu);
    return store_->pairs.size();
}

std::size_t PairwiseModels::com_fit_count() const {
    std::lock_guard lock(store_->mu);
    return store_->com.size();
}

std::set<std::string> PairwiseModels::flags() const {
    std::lock_guard lock(*flag_mu_);
    return flags_;
}

// ---------------------------------------------------------------------------------------------

double union_probability(std::span<const double> ps) {
    double miss = 1.0;
    for (double p : ps) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("probability outside [0,1]");
        miss *= 1.0 - p;
    }
    return 1.0 - miss;
}

double prior_connectivity(const Topology& topology, const LinkProbability& link) {
    if (topology.empty()) throw InvalidInput("empty topology");
    const auto adj = topology.adjacency();
    const std::size_t n = topology.robot_count();
    std::vector<bool> visited(n, false);
    std::set<Edge> established;
    std::deque<RobotId> queue{0};
    visited[0] = true;
    double p = chain_factor(0, adj[0], established, link);
    std::size_t reached = 1;
    while (!queue.empty()) {
        const RobotId u = queue.front();
        queue.pop_front();
        for (auto v : adj[u]) {
            if (visited[v]) continue;
            std::vector<RobotId> back;
            for (auto w : adj[v])
                if (visited[w]) back.push_back(w);
            p *= chain_factor(v, back, established, link);
            visited[v] = true;
            ++reached;
            queue.push_back(v);
        }
    }
    if (reached < n) p = 0.0;
    return std::clamp(p, kEps, 1.0);
}

double collision_marginal(const std::vector<RobotId>& faulty, const Topology& topology, const LinkProbability& link,
                          std::set<std::string>* flags) {
    std::vector<double> per_robot;
    for (auto i : faulty) {
        const auto xi = neighbor_set(topology, i).members;
        if (xi.empty() && flags) flags->insert("isolated:" + std::to_string(i));
        std::vector<double> ps;
        for (auto j : xi) ps.push_back(link(i, j));
        per_robot.push_back(union_probability(ps));
    }
    return union_probability(per_robot);
}

double fault_likelihood(double a, double b) {
    if (!(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0)) throw InvalidInput("probability outside [0,1]");
    return a + b - a * b;
}

LikelihoodTerms fault_likelihood(const std::vector<RobotId>& faulty, const Topology& topology, PairwiseModels& models,
                                 const Thresholds& t) {
    std::vector<double> as, bs, vals, congs, reaches;
    for (auto i : faulty) {
        const auto xi = neighbor_set(topology, i).members;
        std::vector<double> close, reach;
        for (auto j : xi) {
            close.push_back(models.link_probability(i, j, t.omega, true));
            reach.push_back(models.link_probability(i, j, t.delta));
        }
        double cong;
        try {
            cong = radial_probability(models.com_model(i, t.mass_d), t.lambda);
        } catch (const InsufficientData& e) {
            throw InferenceIncomplete(std::string("no centre-of-mass model: ") + e.what());
        }
        const double a = union_probability(close);
        const double r = union_probability(reach);
        as.push_back(a);
        congs.push_back(cong);
        reaches.push_back(r);
        bs.push_back(cong * r);
        vals.push_back(fault_likelihood(a, cong * r));
    }
    LikelihoodTerms out;
    out.a = union_probability(as);
    out.b = union_probability(bs);
    out.congestion = union_probability(congs);
    out.reach = union_probability(reaches);
    out.value = union_probability(vals);
    return out;
}

Posterior pre_fault_posterior(double prior, double likelihood, double marginal) {
    for (double v : {prior, likelihood, marginal})
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("probability outside [0,1]");
    Posterior p;
    p.degenerate = marginal < kEps;
    const double raw = (p.degenerate && likelihood < kEps) ? prior : likelihood * prior / std::max(marginal, kEps);
    p.clamped = raw > 1.0;
    p.value = std::clamp(raw, 0.0, 1.0);
    return p;
}

double post_fault_prediction(const OrphanSet& orphans, const Topology& topology, const InRange& in_range,
                             const LinkProbability& link) {
    if (orphans.members.empty()) return 1.0;
    std::size_t main = 0;
    const auto label = surviving_component_labels(topology, orphans.faulty, &main);
    std::set<int> joined{static_cast<int>(main)};
    std::set<Edge> established;
    std::set<RobotId> pending = orphans.members;
    double p = 1.0;
    auto candidates = [&](RobotId j) {
        std::vector<RobotId> cands;
        for (RobotId k = 0; k < label.size(); ++k)
            if (k != j && label[k] >= 0 && joined.count(label[k]) && in_range(j, k)) cands.push_back(k);
        return cands;
    };
    // Lowest-id orphan that can reach the network rebuilt so far; an orphan may attach through
    // one that joined before it.
    while (!pending.empty()) {
        bool progressed = false;
        for (auto j : pending) {
            const auto cands = candidates(j);
            if (cands.empty()) continue;
            p *= chain_factor(j, cands, established, link);
            joined.insert(label[j]);
            pending.erase(j);
            progressed = true;
            break;
        }
        if (!progressed) return 0.0;
    }
    return p;
}

Verdict decide(double p_pre, double p_post, const Thresholds& t) {
    // Absorbs representation error, e.g. 0.8 - 0.65 evaluating to 0.15000000000000002.
    constexpr double eps = 1e-12;
    return (p_pre >= t.q_b - eps && p_post >= t.q_b - eps && std::abs(p_pre - p_post) <= t.q_d + eps)
               ? Verdict::Recoverable
               : Verdict::Irrecoverable;
}

double prediction_score(double p_pre, double p_post, const Thresholds& t) {
    const double excess = std::max(0.0, std::abs(p_pre - p_post) - t.q_d);
    return std::clamp(std::min(p_pre, p_post) * (1.0 - excess), 1e-6, 1.0 - 1e-6);
}

nlohmann::json to_json(const PredictionResult& r) {
    return {{"p_pre", r.p_pre},
            {"p_post", r.p_post},
            {"verdict", to_string(r.verdict)},
            {"score", r.score},
            {"diagnostics",
             {{"prior", r.prior},
              {"marginal", r.marginal},
              {"likelihood", r.likelihood},
              {"collision_term", r.likelihood_terms.a},
              {"congestion_term", r.likelihood_terms.b},
              {"com_probability", r.likelihood_terms.congestion},
              {"reach_probability", r.likelihood_terms.reach},
              {"posterior_clamped", r.posterior_clamped},
              {"posterior_degenerate", r.posterior_degenerate},
              {"orphans", r.orphans},
              {"pair_fits", r.pair_fits},
              {"com_fits", r.com_fits},
              {"flags", r.flags}}}};
}

PredictionResult prediction_from_json(const nlohmann::json& j) {
    PredictionResult r;
    r.p_pre = j.at("p_pre").get<double>();
    r.p_post = j.at("p_post").get<double>();
    r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    r.score = j.at("score").get<double>();
    const auto& d = j.at("diagnostics");
    r.prior = d.at("prior").get<double>();
    r.marginal = d.at("marginal").get<double>();
    r.likelihood = d.at("likelihood").get<double>();
    r.likelihood_terms.a = d.at("collision_term").get<double>();
    r.likelihood_terms.b = d.at("congestion_term").get<double>();
    r.likelihood_terms.congestion = d.at("com_probability").get<double>();
    r.likelihood_terms.reach = d.at("reach_probability").get<double>();
    r.likelihood_terms.value = r.likelihood;
    r.posterior_clamped = d.at("posterior_clamped").get<bool>();
    r.posterior_degenerate = d.at("posterior_degenerate").get<bool>();
    r.orphans = d.at("orphans").get<std::vector<RobotId>>();
    r.pair_fits = d.at("pair_fits").get<std::size_t>();
    r.com_fits = d.at("com_fits").get<std::size_t>();
    r.flags = d.at("flags").get<std::vector<std::string>>();
    return r;
}

PredictionResult predict(const Window& window, const Topology& topology, const FaultEvent& fault,
                         const Thresholds& thresholds, const BgmmConfig& bgmm, const PredictOptions& opts) {
    staged("input", [&] {
        thresholds.validate();
        if (window.empty()) throw InvalidInput("empty snapshot window");
        return 0;
    });
    PairwiseModels models = staged("models", [&] {
        return PairwiseModels(window, thresholds.delta, bgmm, opts.quadrature, topology.edges());
    });
    return predict(models, topology, fault, thresholds, opts);
}

PredictionResult predict(PairwiseModels& shared, const Topology& topology, const FaultEvent& fault,
                         const Thresholds& thresholds, const PredictOptions& opts) {
    staged("input", [&] {
        thresholds.validate();
        fault.validate(shared.robot_count());
        if (topology.robot_count() != shared.robot_count())
            throw InvalidInput("topology and window disagree on robot count");
        return 0;
    });
    PairwiseModels models = shared.with_delta(thresholds.delta);
    const std::size_t n = models.robot_count();
    const auto faulty = fault.robot_set();

    const OrphanSet orphans = staged("orphans", [&] { return orphan_set(topology, fault); });
    staged("fit", [&] {
        // Pairs the two pathways will query: topology links, the faulty robots' neighbourhoods,
        // and orphan reconnection candidates.
        std::vector<Edge> needed(topology.edges().begin(), topology.edges().end());
        for (auto f : faulty)
            for (RobotId j = 0; j < n; ++j)
                if (j != f) needed.push_back(ordered(f, j));
        for (auto o : orphans.members)
            for (RobotId k = 0; k < n; ++k)
                if (k != o && !faulty.count(k)) needed.push_back(ordered(o, k));
        models.fit_pairs(needed, opts.threads);
        return 0;
    });

    PredictionResult r;
    auto at = [&](double radius) -> LinkProbability {
        return [&models, radius](RobotId i, RobotId j) { return models.link_probability(i, j, radius); };
    };
    std::set<std::string> flags;
    r.prior = staged("prior", [&] { return prior_connectivity(topology, at(thresholds.delta)); });
    r.marginal = staged("marginal", [&] {
        return collision_marginal(fault.robots, topology, at(thresholds.omega), &flags);
    });
    r.likelihood_terms = staged("likelihood", [&] { return fault_likelihood(fault.robots, topology, models, thresholds); });
    r.likelihood = r.likelihood_terms.value;
    const auto post = staged("posterior", [&] { return pre_fault_posterior(r.prior, r.likelihood, r.marginal); });
    r.p_pre = post.value;
    r.posterior_clamped = post.clamped;
    r.posterior_degenerate = post.degenerate;

    r.p_post = staged("post-fault", [&] {
        return post_fault_prediction(
            orphans, topology, [&](RobotId a, RobotId b) { return models.in_mean_range(a, b); },
            at(thresholds.delta));
    });
    r.verdict = decide(r.p_pre, r.p_post, thresholds);
    r.score = prediction_score(r.p_pre, r.p_post, thresholds);
    r.orphans.assign(orphans.members.begin(), orphans.members.end());
    r.pair_fits = models.pair_fit_count();
    r.com_fits = models.com_fit_count();
    for (const auto& f : models.flags()) flags.insert(f);
    r.flags.assign(flags.begin(), flags.end());
    return r;
}

}  // namespace topofault
