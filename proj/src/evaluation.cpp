#include "topofault/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <tuple>

#include "parallel.hpp"
#include "topofault/errors.hpp"
#include "topofault/seeding.hpp"

namespace topofault {

namespace {

double logloss(bool actual, double score) {
    const double s = std::clamp(score, 1e-15, 1.0 - 1e-15);
    return actual ? -std::log(s) : -std::log1p(-s);
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

std::vector<std::size_t> shuffled_indices(std::size_t n, uint64_t seed, std::string_view tag) {
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k;
    auto eng = rng::make_engine(seed, tag);
    for (std::size_t k = n; k > 1; --k) std::swap(idx[k - 1], idx[rng::uniform_index(eng, k)]);
    return idx;
}

Partition::Partition(std::vector<DatasetRecord> records, const SplitSpec& spec) : spec_(spec) {
    if (records.size() < spec.total())
        throw InvalidInput("dataset has " + std::to_string(records.size()) + " records, split needs " +
                           std::to_string(spec.total()));
    const auto order = shuffled_indices(records.size(), spec.seed);
    records_.reserve(spec.total());
    for (std::size_t k = 0; k < spec.total(); ++k) records_.push_back(std::move(records[order[k]]));
}

Partition split(std::vector<DatasetRecord> records, const SplitSpec& spec) { return Partition(std::move(records), spec); }

Rates rates(const Confusion& c) {
    Rates r;
    r.tpr = 100.0 * safe_ratio(c.tp, c.tp + c.fn);
    r.tnr = 100.0 * safe_ratio(c.tn, c.tn + c.fp);
    r.balanced_accuracy = (r.tpr + r.tnr) / 2.0;
    r.precision = 100.0 * safe_ratio(c.tp, c.tp + c.fp);
    r.f1 = safe_ratio(2.0 * r.precision * r.tpr, r.precision + r.tpr);
    return r;
}

MetricsReport evaluate(std::span<const Outcome> outcomes) {
    if (outcomes.empty()) throw InvalidInput("nothing to evaluate");
    MetricsReport m;
    double pos = 0.0, neg = 0.0;
    std::size_t npos = 0, nneg = 0;
    for (const auto& o : outcomes) {
        if (o.actual) {
            (o.predicted ? m.confusion.tp : m.confusion.fn)++;
            pos += logloss(true, o.score);
            ++npos;
        } else {
            (o.predicted ? m.confusion.fp : m.confusion.tn)++;
            neg += logloss(false, o.score);
            ++nneg;
        }
        ++m.orphan_histogram[o.orphans];
        m.failures += o.failed;
    }
    m.rates = rates(m.confusion);
    m.logloss_positive = safe_ratio(pos, static_cast<double>(npos));
    m.logloss_negative = safe_ratio(neg, static_cast<double>(nneg));
    m.logloss_total = (pos + neg) / static_cast<double>(outcomes.size());
    return m;
}

nlohmann::json to_json(const MetricsReport& m) {
    nlohmann::json hist = nlohmann::json::array();
    for (auto [bin, count] : m.orphan_histogram) hist.push_back({bin, count});
    return {{"count", m.confusion.total()},
            {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}}},
            {"tpr", m.rates.tpr},
            {"tnr", m.rates.tnr},
            {"balanced_accuracy", m.rates.balanced_accuracy},
            {"precision", m.rates.precision},
            {"f1", m.rates.f1},
            {"logloss", {{"positive", m.logloss_positive}, {"negative", m.logloss_negative}, {"total", m.logloss_total}}},
            {"orphan_histogram", hist},
            {"failures", m.failures}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
    MetricsReport m;
    const auto& c = j.at("confusion");
    m.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                   c.at("fn").get<std::size_t>()};
    m.rates = {j.at("tpr").get<double>(), j.at("tnr").get<double>(), j.at("balanced_accuracy").get<double>(),
               j.at("precision").get<double>(), j.at("f1").get<double>()};
    const auto& l = j.at("logloss");
    m.logloss_positive = l.at("positive").get<double>();
    m.logloss_negative = l.at("negative").get<double>();
    m.logloss_total = l.at("total").get<double>();
    for (const auto& row : j.at("orphan_histogram")) m.orphan_histogram[row.at(0).get<std::size_t>()] = row.at(1).get<std::size_t>();
    m.failures = j.value("failures", std::size_t{0});
    return m;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& m) {
    out << "metric,value\n"
        << "count," << m.confusion.total() << "\n"
        << "tp," << m.confusion.tp << "\nfp," << m.confusion.fp << "\ntn," << m.confusion.tn << "\nfn," << m.confusion.fn
        << "\n"
        << "tpr," << fixed(m.rates.tpr, 1) << "\n"
        << "tnr," << fixed(m.rates.tnr, 1) << "\n"
        << "balanced_accuracy," << fixed(m.rates.balanced_accuracy, 1) << "\n"
        << "precision," << fixed(m.rates.precision, 1) << "\n"
        << "f1," << fixed(m.rates.f1, 1) << "\n"
        << "logloss_positive," << fixed(m.logloss_positive, 3) << "\n"
        << "logloss_negative," << fixed(m.logloss_negative, 3) << "\n"
        << "logloss_total," << fixed(m.logloss_total, 3) << "\n"
        << "failures," << m.failures << "\n";
}

void write_orphan_histogram_csv(std::ostream& out, const MetricsReport& m) {
    out << "bin,count\n";
    for (auto [bin, count] : m.orphan_histogram) out << bin << "," << count << "\n";
}

void write_confusion_csv(std::ostream& out, const MetricsReport& m) {
    out << "actual,predicted,count\n"
        << "recoverable,recoverable," << m.confusion.tp << "\n"
        << "recoverable,irrecoverable," << m.confusion.fn << "\n"
        << "irrecoverable,recoverable," << m.confusion.fp << "\n"
        << "irrecoverable,irrecoverable," << m.confusion.tn << "\n";
}

const char* to_string(Method m) {
    switch (m) {
        case Method::Bgmm: return "bgmm";
        case Method::Mlr: return "mlr";
        case Method::Esn: return "esn";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "bgmm") return Method::Bgmm;
    if (s == "mlr") return Method::Mlr;
    if (s == "esn") return Method::Esn;
    throw InvalidInput("unknown method '" + s + "'");
}

nlohmann::json to_json(const EvalConfig& c) {
    return {{"thresholds", to_json(c.thresholds)},
            {"bgmm", to_json(c.bgmm)},
            {"esn", to_json(c.esn)},
            {"angular_nodes", c.quadrature.angular_nodes}};
}

Outcome outcome_of(const DatasetRecord& r, const PredictionResult& p) {
    return {r.label == Verdict::Recoverable, p.verdict == Verdict::Recoverable, p.score, r.orphan_count, false};
}

std::vector<Outcome> bgmm_outcomes(std::span<const DatasetRecord> records, const EvalConfig& cfg,
                                   std::vector<PredictionResult>* details) {
    std::vector<Outcome> out(records.size());
    std::vector<PredictionResult> res(records.size());
    detail::parallel_for(records.size(), cfg.threads, [&](std::size_t k) {
        const auto& r = records[k];
        try {
            res[k] = predict(r.window, r.topology, r.fault, cfg.thresholds, cfg.bgmm, {1, cfg.quadrature});
            out[k] = outcome_of(r, res[k]);
        } catch (const Error& e) {
            res[k] = PredictionResult{};
            res[k].flags.push_back(std::string("failed: ") + e.what());
            out[k] = {r.label == Verdict::Recoverable, false, 0.5, r.orphan_count, true};
        }
    });
    if (details) *details = std::move(res);
    return out;
}

std::vector<Outcome> mlr_outcomes(const MlrModel& m, std::span<const DatasetRecord> records) {
    std::vector<Outcome> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        const double y = mlr_predict(m, r);
        out.push_back({r.label == Verdict::Recoverable, y > 0.5, regression_score(y), r.orphan_count, false});
    }
    return out;
}

std::vector<Outcome> esn_outcomes(const EsnModel& m, std::span<const DatasetRecord> records, unsigned threads) {
    std::vector<Outcome> out(records.size());
    detail::parallel_for(records.size(), threads, [&](std::size_t k) {
        const auto& r = records[k];
        const double y = esn_predict(m, r);
        out[k] = {r.label == Verdict::Recoverable, y > 0.5, regression_score(y), r.orphan_count, false};
    });
    return out;
}

std::vector<Outcome> method_outcomes(Method method, std::span<const DatasetRecord> train,
                                     std::span<const DatasetRecord> test, const EvalConfig& cfg) {
    switch (method) {
        case Method::Bgmm: return bgmm_outcomes(test, cfg);
        case Method::Mlr: return mlr_outcomes(mlr_fit(std::vector<DatasetRecord>(train.begin(), train.end())), test);
        case Method::Esn:
            return esn_outcomes(esn_fit(cfg.esn, std::vector<DatasetRecord>(train.begin(), train.end())), test, cfg.threads);
    }
    throw InvalidInput("unknown method");
}

std::vector<DatasetRecord> perturb_records(std::span<const DatasetRecord> records, uint64_t seed, double scale) {
    std::vector<DatasetRecord> noisy;
    noisy.reserve(records.size());
    for (std::size_t k = 0; k < records.size(); ++k) {
        auto eng = rng::make_engine(seed, "noise", k);
        noisy.push_back(perturb_noise(records[k], eng, scale));
    }
    return noisy;
}

NoiseStudy noise_study(Method method, std::span<const DatasetRecord> train, std::span<const DatasetRecord> test,
                       const EvalConfig& cfg, uint64_t seed, double scale) {
    const auto noisy = perturb_records(test, seed, scale);
    NoiseStudy s;
    switch (method) {
        case Method::Bgmm:
            s.nominal = evaluate(bgmm_outcomes(test, cfg));
            s.noisy = evaluate(bgmm_outcomes(noisy, cfg));
            break;
        case Method::Mlr: {
            const auto m = mlr_fit(std::vector<DatasetRecord>(train.begin(), train.end()));
            s.nominal = evaluate(mlr_outcomes(m, test));
            s.noisy = evaluate(mlr_outcomes(m, noisy));
            break;
        }
        case Method::Esn: {
            const auto m = esn_fit(cfg.esn, std::vector<DatasetRecord>(train.begin(), train.end()));
            s.nominal = evaluate(esn_outcomes(m, test, cfg.threads));
            s.noisy = evaluate(esn_outcomes(m, noisy, cfg.threads));
            break;
        }
    }
    return s;
}

// ---- grid search ----

ThresholdGrid ThresholdGrid::table() {
    ThresholdGrid g;
    g.delta = {1.6, 1.8, 2.0, 2.2, 2.4};
    g.omega = {0.1, 0.2, 0.3, 0.4, 0.5};
    g.lambda = {0.6, 0.7, 0.8, 0.9, 1.0};
    g.mass_d = {0.3, 0.4, 0.5};
    g.q_b = {0.65, 0.70, 0.75, 0.80};
    g.q_d = {0.1, 0.15, 0.2};
    return g;
}

std::size_t ThresholdGrid::size() const {
    return delta.size() * omega.size() * lambda.size() * mass_d.size() * q_b.size() * q_d.size();
}

BgmmGrid BgmmGrid::table() {
    BgmmGrid g;
    g.max_components = {10, 15, 20, 25};
    g.covariance = {CovarianceType::Full, CovarianceType::Tied};
    g.n_init = {10, 15, 20, 25};
    g.prior = {WeightPrior::DirichletDistribution, WeightPrior::DirichletProcess};
    g.gamma0 = {950, 1000, 1050, 1100};
    g.max_iter = {4000, 5000, 6000};
    return g;
}

std::size_t BgmmGrid::size() const {
    return max_components.size() * covariance.size() * n_init.size() * prior.size() * gamma0.size() * max_iter.size();
}

std::vector<GridCell> enumerate_grid(const ThresholdGrid& t, const BgmmGrid& b, const BgmmConfig& base) {
    std::vector<GridCell> cells;
    for (int k : b.max_components)
        for (auto cov : b.covariance)
            for (int ni : b.n_init)
                for (auto pr : b.prior)
                    for (double g0 : b.gamma0)
                        for (int it : b.max_iter) {
                            BgmmConfig c = base;
                            c.max_components = k;
                            c.covariance_type = cov;
                            c.n_init = ni;
                            c.prior_type = pr;
                            c.gamma0 = g0;
                            c.max_iter = it;
                            c.validate();
                            for (double de : t.delta)
                                for (double om : t.omega)
                                    for (double la : t.lambda)
                                        for (double md : t.mass_d)
                                            for (double qb : t.q_b)
                                                for (double qd : t.q_d) {
                                                    const Thresholds th{de, om, la, md, qb, qd};
                                                    try {
                                                        th.validate();
                                                    } catch (const InvalidInput&) {
                                                        continue;
                                                    }
                                                    cells.push_back({th, c});
                                                }
                        }
    return cells;
}

nlohmann::json to_json(const ThresholdGrid& g) {
    return {{"delta", g.delta}, {"omega", g.omega}, {"lambda", g.lambda},
            {"mass_d", g.mass_d}, {"q_b", g.q_b},     {"q_d", g.q_d}};
}

ThresholdGrid threshold_grid_from_json(const nlohmann::json& j) {
    ThresholdGrid g;
    auto take = [&](const char* key, std::vector<double>& v) {
        if (j.contains(key)) v = j.at(key).get<std::vector<double>>();
        if (v.empty()) throw InvalidInput(std::string("empty grid axis '") + key + "'");
    };
    take("delta", g.delta);
    take("omega", g.omega);
    take("lambda", g.lambda);
    take("mass_d", g.mass_d);
    take("q_b", g.q_b);
    take("q_d", g.q_d);
    return g;
}

nlohmann::json to_json(const BgmmGrid& g) {
    std::vector<std::string> cov, pr;
    for (auto c : g.covariance) cov.emplace_back(to_string(c));
    for (auto p : g.prior) pr.emplace_back(to_string(p));
    return {{"max_components", g.max_components}, {"covariance_type", cov}, {"n_init", g.n_init},
            {"prior_type", pr},                   {"gamma0", g.gamma0},     {"max_iter", g.max_iter}};
}

BgmmGrid bgmm_grid_from_json(const nlohmann::json& j) {
    BgmmGrid g;
    if (j.contains("max_components")) g.max_components = j.at("max_components").get<std::vector<int>>();
    if (j.contains("covariance_type")) {
        g.covariance.clear();
        for (const auto& s : j.at("covariance_type")) g.covariance.push_back(covariance_type_from_string(s.get<std::string>()));
    }
    if (j.contains("n_init")) g.n_init = j.at("n_init").get<std::vector<int>>();
    if (j.contains("prior_type")) {
        g.prior.clear();
        for (const auto& s : j.at("prior_type")) g.prior.push_back(weight_prior_from_string(s.get<std::string>()));
    }
    if (j.contains("gamma0")) g.gamma0 = j.at("gamma0").get<std::vector<double>>();
    if (j.contains("max_iter")) g.max_iter = j.at("max_iter").get<std::vector<int>>();
    if (g.size() == 0) throw InvalidInput("empty mixture grid axis");
    return g;
}

GridResult grid_search(std::span<const DatasetRecord> pool, const std::vector<GridCell>& cells, const GridOptions& opts) {
    if (cells.empty()) throw InvalidInput("empty grid");
    if (pool.empty()) throw InvalidInput("empty record pool");
    if (opts.folds < 1) throw InvalidInput("need at least one fold");
    if (!(opts.holdout_fraction > 0.0 && opts.holdout_fraction < 1.0)) throw InvalidInput("holdout fraction must be in (0,1)");

    // Folds: the first `hold` indices of a fresh permutation each time.
    const std::size_t n = pool.size();
    const std::size_t hold = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(opts.holdout_fraction * static_cast<double>(n))), 1, n);
    std::vector<std::vector<std::size_t>> folds;
    std::vector<bool> needed(n, false);
    for (int f = 0; f < opts.folds; ++f) {
        auto perm = shuffled_indices(n, rng::derive(opts.seed, "fold", static_cast<uint64_t>(f)), "fold");
        perm.resize(hold);
        for (auto k : perm) needed[k] = true;
        folds.push_back(std::move(perm));
    }
    std::vector<std::size_t> records;
    for (std::size_t k = 0; k < n; ++k)
        if (needed[k]) records.push_back(k);

    // p_pre and p_post depend on everything but (q_b, q_d); those only enter the decision.
    std::vector<BgmmConfig> groups;
    std::vector<std::string> group_keys;
    using ProbKey = std::tuple<std::size_t, double, double, double, double>;
    std::vector<ProbKey> keys;
    std::map<ProbKey, std::size_t> key_index;
    std::vector<std::size_t> cell_key(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = cells[c];
        cell.thresholds.validate();
        const std::string gk = to_json(cell.bgmm).dump();
        auto git = std::find(group_keys.begin(), group_keys.end(), gk);
        const std::size_t g = static_cast<std::size_t>(git - group_keys.begin());
        if (git == group_keys.end()) {
            group_keys.push_back(gk);
            groups.push_back(cell.bgmm);
        }
        const ProbKey pk{g, cell.thresholds.delta, cell.thresholds.omega, cell.thresholds.lambda, cell.thresholds.mass_d};
        auto [it, fresh] = key_index.try_emplace(pk, keys.size());
        if (fresh) keys.push_back(pk);
        cell_key[c] = it->second;
    }

    struct Probs {
        double p_pre = 0.0, p_post = 0.0;
        bool failed = false;
    };
    std::vector<std::vector<Probs>> probs(keys.size(), std::vector<Probs>(n));
    detail::parallel_for(records.size(), opts.threads, [&](std::size_t slot) {
        const auto& r = pool[records[slot]];
        for (std::size_t g = 0; g < groups.size(); ++g) {
            double dmax = 0.0;
            for (const auto& k : keys)
                if (std::get<0>(k) == g) dmax = std::max(dmax, std::get<1>(k));
            std::optional<PairwiseModels> models;
            try {
                models.emplace(r.window, dmax, groups[g], opts.quadrature, r.topology.edges());
            } catch (const Error&) {
            }
            for (std::size_t q = 0; q < keys.size(); ++q) {
                const auto& [kg, de, om, la, md] = keys[q];
                if (kg != g) continue;
                auto& slotp = probs[q][records[slot]];
                if (!models) {
                    slotp.failed = true;
                    continue;
                }
                try {
                    const auto p = predict(*models, r.topology, r.fault, Thresholds{de, om, la, md, 0.75, 0.1});
                    slotp = {p.p_pre, p.p_post, false};
                } catch (const Error&) {
                    slotp.failed = true;
                }
            }
        }
    });

    GridResult out;
    out.predictions = keys.size() * records.size();
    out.cells.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& th = cells[c].thresholds;
        const auto& pr = probs[cell_key[c]];
        double bal = 0.0, ll = 0.0;
        for (const auto& fold : folds) {
            std::vector<Outcome> os;
            os.reserve(fold.size());
            for (auto k : fold) {
                const auto& r = pool[k];
                const bool actual = r.label == Verdict::Recoverable;
                if (pr[k].failed) {
                    os.push_back({actual, false, 0.5, r.orphan_count, true});
                } else {
                    os.push_back({actual, decide(pr[k].p_pre, pr[k].p_post, th) == Verdict::Recoverable,
                                  prediction_score(pr[k].p_pre, pr[k].p_post, th), r.orphan_count, false});
                }
            }
            const auto m = evaluate(os);
            bal += m.rates.balanced_accuracy;
            ll += m.logloss_total;
        }
        out.cells.push_back({cells[c], bal / static_cast<double>(folds.size()), ll / static_cast<double>(folds.size())});
    }
    for (std::size_t c = 1; c < out.cells.size(); ++c) {
        const auto& a = out.cells[c];
        const auto& b = out.cells[out.best];
        if (a.balanced_accuracy > b.balanced_accuracy || (a.balanced_accuracy == b.balanced_accuracy && a.logloss < b.logloss))
            out.best = c;
    }
    return out;
}

nlohmann::json to_json(const GridResult& g) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : g.cells)
        rows.push_back({{"thresholds", to_json(c.cell.thresholds)},
                        {"bgmm", to_json(c.cell.bgmm)},
                        {"balanced_accuracy", c.balanced_accuracy},
                        {"logloss", c.logloss}});
    return {{"cells", rows},
            {"best", g.best},
            {"selected", rows.empty() ? nlohmann::json(nullptr) : rows.at(g.best)},
            {"predictions", g.predictions}};
}

void write_grid_csv(std::ostream& out, const GridResult& g) {
    out << "cell,delta,omega,lambda,mass_d,q_b,q_d,max_components,covariance_type,n_init,prior_type,gamma0,max_iter,"
           "balanced_accuracy,logloss,selected\n";
    for (std::size_t k = 0; k < g.cells.size(); ++k) {
        const auto& t = g.cells[k].cell.thresholds;
        const auto& b = g.cells[k].cell.bgmm;
        out << k << "," << t.delta << "," << t.omega << "," << t.lambda << "," << t.mass_d << "," << t.q_b << "," << t.q_d
            << "," << b.max_components << "," << to_string(b.covariance_type) << "," << b.n_init << ","
            << to_string(b.prior_type) << "," << b.gamma0 << "," << b.max_iter << ","
            << fixed(g.cells[k].balanced_accuracy, 1) << "," << fixed(g.cells[k].logloss, 3) << ","
            << (k == g.best ? 1 : 0) << "\n";
    }
}

}  // namespace topofault
