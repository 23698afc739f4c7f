#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "topofault/errors.hpp"
#include "topofault/evaluation.hpp"

using namespace topofault;

namespace {

std::vector<DatasetRecord> numbered(std::size_t n) {
    std::vector<DatasetRecord> v(n);
    for (std::size_t k = 0; k < n; ++k) {
        v[k].network_id = k;
        v[k].window = {{0.0, {{0.0, 0.0}, {1.0, 0.0}}}};
        v[k].topology = Topology(2, {{0, 1}});
        v[k].fault = FaultEvent(0, FaultKind::Collision);
    }
    return v;
}

std::vector<Outcome> from_confusion(std::size_t tp, std::size_t fn, std::size_t tn, std::size_t fp) {
    std::vector<Outcome> v;
    for (std::size_t k = 0; k < tp; ++k) v.push_back({true, true, 0.9});
    for (std::size_t k = 0; k < fn; ++k) v.push_back({true, false, 0.2});
    for (std::size_t k = 0; k < tn; ++k) v.push_back({false, false, 0.1});
    for (std::size_t k = 0; k < fp; ++k) v.push_back({false, true, 0.8});
    return v;
}

BgmmConfig quick_cfg() {
    BgmmConfig c;
    c.n_init = 2;
    return c;
}

// Small labelled records on near point-mass windows.
std::vector<DatasetRecord> tight_records(std::size_t count, uint64_t seed) {
    auto eng = rng::make_engine(seed, "tight-records");
    std::vector<DatasetRecord> out;
    while (out.size() < count) {
        const auto base = oracle::random_positions(eng, 7, 4.0);
        const NetworkSnapshot snap(base, 2.0);
        const auto g = build_disk_graph(snap);
        std::set<RobotId> all;
        for (RobotId i = 0; i < 7; ++i) all.insert(i);
        if (!is_connected(g, all)) continue;
        DatasetRecord r;
        r.network_id = out.size();
        r.window = oracle::tight_window(eng, base, 30, 1e-3);
        r.topology = synthesize_topology(snap);
        r.fault = FaultEvent(rng::uniform_index(eng, 7), FaultKind::Collision);
        r.label = recoverability_oracle(snap, r.fault) ? Verdict::Recoverable : Verdict::Irrecoverable;
        r.orphan_count = orphan_set(r.topology, r.fault).members.size();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("split") {
    const auto p = split(numbered(4600), SplitSpec{});
    CHECK(p.train().size() == 4000);
    CHECK(p.validation().size() == 400);
    CHECK(p.test().size() == 200);
    std::vector<uint64_t> ids;
    for (auto part : {p.train(), p.validation(), p.test()})
        for (const auto& r : part) ids.push_back(r.network_id);
    std::sort(ids.begin(), ids.end());
    std::vector<uint64_t> all(4600);
    std::iota(all.begin(), all.end(), 0);
    CHECK(ids == all);

    const auto q = split(numbered(4600), SplitSpec{});
    CHECK(q.test()[17].network_id == p.test()[17].network_id);
    CHECK(q.train()[0].network_id == p.train()[0].network_id);
    SplitSpec other;
    other.seed = 1;
    CHECK(split(numbered(4600), other).test()[0].network_id != p.test()[0].network_id);
    CHECK_THROWS_AS(split(numbered(4599), SplitSpec{}), InvalidInput);
    CHECK(p.pool().size() == 4400);
}

TEST_CASE("rates") {
    const auto r = rates({45, 10, 40, 5});
    CHECK(r.tpr == doctest::Approx(90.0));
    CHECK(r.tnr == doctest::Approx(80.0));
    CHECK(r.balanced_accuracy == doctest::Approx(85.0));
    CHECK(r.precision == doctest::Approx(81.818).epsilon(1e-4));
    CHECK(r.f1 == doctest::Approx(85.714).epsilon(1e-4));

    auto eng = rng::make_engine(81, "test-rates");
    for (int t = 0; t < 200; ++t) {
        const Confusion c{rng::uniform_index(eng, 50) + 1, rng::uniform_index(eng, 50) + 1, rng::uniform_index(eng, 50) + 1,
                          rng::uniform_index(eng, 50) + 1};
        const auto m = rates(c);
        CHECK(m.balanced_accuracy == (m.tpr + m.tnr) / 2.0);
        CHECK(m.f1 == doctest::Approx(2.0 / (1.0 / m.precision + 1.0 / m.tpr)));
    }
    const auto empty = rates({0, 0, 3, 0});
    CHECK(empty.tpr == 0.0);
    CHECK(empty.f1 == 0.0);
}

TEST_CASE("evaluate") {
    const auto os = from_confusion(45, 5, 40, 10);
    const auto m = evaluate(os);
    CHECK(m.confusion.tp == 45);
    CHECK(m.confusion.fp == 10);
    CHECK(m.confusion.total() == 100);
    CHECK(m.rates.balanced_accuracy == doctest::Approx(85.0));
    const double pos = (45 * -std::log(0.9) + 5 * -std::log(0.2)) / 50.0;
    const double neg = (40 * -std::log(0.9) + 10 * -std::log(0.2)) / 50.0;
    CHECK(m.logloss_positive == doctest::Approx(pos));
    CHECK(m.logloss_negative == doctest::Approx(neg));
    CHECK(m.logloss_total == doctest::Approx((pos + neg) / 2.0));

    auto eng = rng::make_engine(82, "test-half");
    for (int t = 0; t < 20; ++t) {
        std::vector<Outcome> half;
        const auto count = rng::uniform_index(eng, 40) + 1;
        for (std::size_t k = 0; k < count; ++k) half.push_back({rng::uniform01(eng) < 0.3, false, 0.5});
        CHECK(evaluate(half).logloss_total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    std::vector<Outcome> perfect{{true, true, 1.0 - 1e-6, 2}, {false, false, 1e-6, 0}, {true, true, 1.0 - 1e-6, 2}};
    const auto p = evaluate(perfect);
    CHECK(p.rates.balanced_accuracy == 100.0);
    CHECK(p.logloss_total < 1.01e-6);
    CHECK(p.orphan_histogram.at(2) == 2);
    CHECK(p.orphan_histogram.at(0) == 1);
    CHECK_THROWS_AS(evaluate({}), InvalidInput);

    const auto back = metrics_from_json(nlohmann::json::parse(to_json(m).dump()));
    CHECK(to_json(back) == to_json(m));
    std::ostringstream csv, hist, conf;
    write_metrics_csv(csv, m);
    write_orphan_histogram_csv(hist, p);
    write_confusion_csv(conf, m);
    CHECK(csv.str().find("balanced_accuracy,85.0\n") != std::string::npos);
    CHECK(csv.str().find("precision,81.8\n") != std::string::npos);
    CHECK(csv.str().find("f1,85.7\n") != std::string::npos);
    CHECK(hist.str() == "bin,count\n0,1\n2,2\n");
    CHECK(conf.str().find("irrecoverable,recoverable,10\n") != std::string::npos);
}

TEST_CASE("grid enumeration") {
    CHECK(enumerate_grid(ThresholdGrid::table(), BgmmGrid{}).size() == 4500);
    CHECK(ThresholdGrid::table().size() == 4500);
    CHECK(BgmmGrid::table().size() == 768);
    const auto cells = enumerate_grid(ThresholdGrid::table(), BgmmGrid{});
    bool has_default = false;
    for (const auto& c : cells) has_default |= to_json(c.thresholds) == to_json(Thresholds{});
    CHECK(has_default);
    ThresholdGrid bad;
    bad.omega = {0.4, 3.0};
    CHECK(enumerate_grid(bad, BgmmGrid{}).size() == 1);
    const auto g = threshold_grid_from_json(to_json(ThresholdGrid::table()));
    CHECK(g.size() == 4500);
    CHECK(bgmm_grid_from_json(to_json(BgmmGrid::table())).size() == 768);
}

TEST_CASE("grid search") {
    const auto pool = tight_records(24, 83);
    BgmmGrid b;
    b.n_init = {2};
    ThresholdGrid t;
    t.delta = {1.8, 2.0};
    t.q_b = {0.75, 0.999};
    const auto cells = enumerate_grid(t, b);
    REQUIRE(cells.size() == 4);
    GridOptions opts;
    opts.folds = 3;
    opts.holdout_fraction = 0.5;
    opts.seed = 2;
    const auto res = grid_search(pool, cells, opts);
    REQUIRE(res.cells.size() == 4);
    for (std::size_t c = 0; c < 4; ++c) {
        const auto& a = res.cells[c];
        const auto& best = res.cells[res.best];
        CHECK((a.balanced_accuracy < best.balanced_accuracy ||
               (a.balanced_accuracy == best.balanced_accuracy && (a.logloss > best.logloss || (a.logloss == best.logloss && c >= res.best)))));
    }
    // two delta values and one mixture config: q_b shares the probabilities
    CHECK(res.predictions <= 2 * pool.size());

    // single cell is returned as is
    const auto one = grid_search(pool, {cells[2]}, opts);
    CHECK(one.best == 0);
    CHECK(one.cells[0].balanced_accuracy == res.cells[2].balanced_accuracy);

    // k = 1 equals a direct evaluation of the holdout
    GridOptions single = opts;
    single.folds = 1;
    const auto k1 = grid_search(pool, {cells[0]}, single);
    auto perm = shuffled_indices(pool.size(), rng::derive(single.seed, "fold", 0), "fold");
    perm.resize(12);
    std::vector<DatasetRecord> held;
    for (auto k : perm) held.push_back(pool[k]);
    EvalConfig ec;
    ec.thresholds = cells[0].thresholds;
    ec.bgmm = cells[0].bgmm;
    const auto direct = evaluate(bgmm_outcomes(held, ec));
    CHECK(k1.cells[0].balanced_accuracy == direct.rates.balanced_accuracy);
    CHECK(k1.cells[0].logloss == doctest::Approx(direct.logloss_total).epsilon(1e-12));

    // reversing the grid changes only the position of the winner
    std::vector<GridCell> rev(cells.rbegin(), cells.rend());
    const auto r = grid_search(pool, rev, opts);
    for (std::size_t c = 0; c < 4; ++c) CHECK(r.cells[3 - c].balanced_accuracy == res.cells[c].balanced_accuracy);
    const auto& w1 = res.cells[res.best];
    const auto& w2 = r.cells[r.best];
    CHECK(w1.balanced_accuracy == w2.balanced_accuracy);
    CHECK(w1.logloss == w2.logloss);

    opts.threads = 3;
    const auto threaded = grid_search(pool, cells, opts);
    for (std::size_t c = 0; c < 4; ++c) CHECK(threaded.cells[c].logloss == res.cells[c].logloss);

    CHECK_THROWS_AS(grid_search(pool, {}, opts), InvalidInput);
    std::ostringstream csv;
    write_grid_csv(csv, res);
    const std::string text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
}

TEST_CASE("pipelines and noise study") {
    const auto recs = tight_records(16, 84);
    EvalConfig cfg;
    cfg.bgmm = quick_cfg();
    std::vector<PredictionResult> details;
    const auto os = bgmm_outcomes(recs, cfg, &details);
    REQUIRE(details.size() == recs.size());
    for (std::size_t k = 0; k < recs.size(); ++k) {
        CHECK(os[k].score == details[k].score);
        CHECK(os[k].actual == (recs[k].label == Verdict::Recoverable));
    }
    cfg.threads = 2;
    const auto os2 = bgmm_outcomes(recs, cfg);
    for (std::size_t k = 0; k < recs.size(); ++k) CHECK(os2[k].score == os[k].score);

    const std::span<const DatasetRecord> all(recs);
    const auto zero = noise_study(Method::Bgmm, all.first(8), all.last(8), cfg, 3, 0.0);
    CHECK(to_json(zero.nominal) == to_json(zero.noisy));
    const auto mlr_a = noise_study(Method::Mlr, all.first(8), all.last(8), cfg, 3);
    const auto mlr_b = noise_study(Method::Mlr, all.first(8), all.last(8), cfg, 3);
    CHECK(to_json(mlr_a.noisy) == to_json(mlr_b.noisy));
    CHECK(method_from_string("esn") == Method::Esn);
    CHECK_THROWS_AS(method_from_string("svm"), InvalidInput);
}
