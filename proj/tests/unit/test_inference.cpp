#include <map>

#include "doctest.h"
#include "oracles.hpp"
#include "topofault/errors.hpp"
#include "topofault/inference.hpp"
#include "topofault/topo_synth.hpp"

using namespace topofault;

namespace {

LinkProbability table(std::map<Edge, double> probs) {
    return [probs = std::move(probs)](RobotId i, RobotId j) {
        auto it = probs.find(i < j ? Edge{i, j} : Edge{j, i});
        return it == probs.end() ? 0.0 : it->second;
    };
}

LinkProbability constant(double p) {
    return [p](RobotId, RobotId) { return p; };
}

std::set<RobotId> everyone(std::size_t n) {
    std::set<RobotId> s;
    for (RobotId i = 0; i < n; ++i) s.insert(i);
    return s;
}

BgmmConfig quick_cfg() {
    BgmmConfig c;
    c.n_init = 2;
    return c;
}

}  // namespace

TEST_CASE("thresholds validation") {
    CHECK_NOTHROW(Thresholds{}.validate());
    Thresholds t;
    t.omega = 2.5;
    CHECK_THROWS_AS(t.validate(), InvalidInput);
    t = {};
    t.lambda = 0.0;
    CHECK_THROWS_AS(t.validate(), InvalidInput);
    t = {};
    t.q_b = 1.0;
    CHECK_THROWS_AS(t.validate(), InvalidInput);
    t = {};
    t.mass_d = 1.0;
    CHECK_THROWS_AS(t.validate(), InvalidInput);
    const auto back = thresholds_from_json(to_json(Thresholds{}));
    CHECK(back.lambda == 0.9);
}

TEST_CASE("union probability") {
    const std::vector<double> zero{0.0}, certain{1.0, 0.3}, halves{0.5, 0.5};
    CHECK(union_probability(zero) == 0.0);
    CHECK(union_probability(certain) == 1.0);
    CHECK(union_probability(halves) == doctest::Approx(0.75));
    CHECK(union_probability(std::vector<double>{}) == 0.0);
    const std::vector<double> bad{0.5, 1.2};
    CHECK_THROWS_AS(union_probability(bad), InvalidInput);

    auto eng = rng::make_engine(41, "test-union");
    for (int t = 0; t < 200; ++t) {
        std::vector<double> ps(1 + rng::uniform_index(eng, 8));
        for (auto& p : ps) p = rng::uniform01(eng);
        CHECK(std::abs(union_probability(ps) - oracle::inclusion_exclusion(ps)) < 1e-12);
    }
}

TEST_CASE("link probability with near point-mass windows") {
    auto eng = rng::make_engine(42, "test-link");
    const auto w = oracle::tight_window(eng, {{0, 0}, {1, 0}, {3, 0}, {0, 5}}, 60, 1e-3);
    PairwiseModels wide(w, 4.0, quick_cfg());
    CHECK(wide.link_probability(0, 1, 2.0) >= 1 - 1e-3);
    CHECK(wide.link_probability(1, 0, 2.0) >= 1 - 1e-3);
    CHECK(wide.link_probability(0, 2, 2.0) <= 1e-3);
    CHECK(wide.link_probability(0, 2, 2.0, true) == wide.link_probability(0, 2, 2.0, false));

    PairwiseModels models(w, 2.0, quick_cfg());
    CHECK(models.potentially_communicating(0, 1));
    CHECK_FALSE(models.potentially_communicating(0, 3));
    CHECK(models.pair_model(0, 3) == nullptr);
    CHECK(models.link_probability(0, 3, 2.0) == 0.0);
    CHECK(models.flags().count("no-model:0-3"));
    CHECK(models.mean_distance(0, 2) == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("mean range uses window-mean positions") {
    // Robot 1 jitters +-0.5 across the line: every frame is 2.042 away, the mean positions 1.98.
    Window w;
    for (int t = 0; t < 40; ++t) w.push_back(Frame{static_cast<double>(t), {{0, 0}, {1.98, t % 2 ? 0.5 : -0.5}, {9, 9}}});
    PairwiseModels m(w, 2.0, quick_cfg());
    CHECK(m.mean_distance(0, 1) == doctest::Approx(1.98));
    CHECK(m.mean_distance(1, 0) == doctest::Approx(1.98));
    CHECK(m.in_mean_range(0, 1));
    CHECK_FALSE(m.in_mean_range(0, 2));
    CHECK_FALSE(m.in_mean_range(1, 1));
}

TEST_CASE("pair fits are cached and deterministic") {
    auto eng = rng::make_engine(43, "test-cache");
    const auto w = oracle::tight_window(eng, {{0, 0}, {1, 0}, {1, 1}}, 40, 0.05);
    PairwiseModels a(w, 2.0, quick_cfg()), b(w, 2.0, quick_cfg());
    a.fit_pairs({{0, 1}, {1, 0}, {0, 2}, {1, 2}}, 3);
    CHECK(a.pair_fit_count() == 3);
    a.link_probability(0, 1, 2.0);
    CHECK(a.pair_fit_count() == 3);
    b.fit_pairs({{0, 1}, {0, 2}, {1, 2}}, 1);
    CHECK(to_json(*a.pair_model(0, 2)).dump() == to_json(*b.pair_model(0, 2)).dump());
    CHECK_THROWS_AS(PairwiseModels(Window{}, 2.0, quick_cfg()), InvalidInput);
}

TEST_CASE("prior connectivity") {
    CHECK(prior_connectivity(Topology(2, {{0, 1}}), constant(0.9)) == doctest::Approx(0.9));
    const Topology triangle(3, {{0, 1}, {1, 2}, {0, 2}});
    CHECK(prior_connectivity(triangle, constant(0.8)) == doctest::Approx(0.96 * 0.8 * 0.96).epsilon(1e-12));
    CHECK(prior_connectivity(triangle, constant(0.8)) == doctest::Approx(0.73728));
    CHECK(prior_connectivity(triangle, constant(1.0)) == 1.0);
    CHECK_THROWS_AS(prior_connectivity(Topology(3, {}), constant(1.0)), InvalidInput);

    // chain 0-1-2: factors p01, p01 again (not counted), p12
    CHECK(prior_connectivity(Topology(3, {{0, 1}, {1, 2}}), table({{{0, 1}, 0.9}, {{1, 2}, 0.6}})) ==
          doctest::Approx(0.9 * 0.6));

    auto eng = rng::make_engine(44, "test-prior");
    for (int t = 0; t < 50; ++t) {
        const auto pos = oracle::random_positions(eng, 10, 3.0);
        const NetworkSnapshot snap(pos, 2.0);
        if (!is_connected(build_disk_graph(snap), everyone(10))) continue;
        const auto topo = synthesize_topology(snap);
        CHECK(prior_connectivity(topo, constant(1.0)) == 1.0);
        // a robot whose every link is 0 zeroes the product
        const RobotId dead = rng::uniform_index(eng, 10);
        const auto p = prior_connectivity(topo, [&](RobotId i, RobotId j) { return (i == dead || j == dead) ? 0.0 : 0.95; });
        CHECK(p <= 1e-9);
        const double r = prior_connectivity(topo, [&](RobotId i, RobotId j) { return 0.5 + 0.05 * ((i + j) % 10); });
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("collision marginal") {
    const Topology star(3, {{0, 1}, {0, 2}});
    CHECK(collision_marginal({1}, star, table({{{0, 1}, 0.2}})) == doctest::Approx(0.2));
    CHECK(collision_marginal({0}, star, table({{{0, 1}, 0.2}, {{0, 2}, 0.5}})) == doctest::Approx(0.6));
    // two faulty robots combine by union
    CHECK(collision_marginal({1, 2}, star, table({{{0, 1}, 0.2}, {{0, 2}, 0.5}})) == doctest::Approx(0.6));
    std::set<std::string> flags;
    CHECK(collision_marginal({2}, Topology(3, {{0, 1}}), constant(0.7), &flags) == 0.0);
    CHECK(flags.count("isolated:2"));

    auto eng = rng::make_engine(45, "test-marginal");
    const auto w = oracle::tight_window(eng, {{0, 0}, {1, 0}, {0, 1.5}, {-0.8, -0.8}}, 50, 1e-3);
    PairwiseModels models(w, 2.0, quick_cfg());
    const Topology hub(4, {{0, 1}, {0, 2}, {0, 3}});
    const LinkProbability at_omega = [&](RobotId i, RobotId j) { return models.link_probability(i, j, 0.4, true); };
    CHECK(collision_marginal({0}, hub, at_omega) <= 1e-3);
}

TEST_CASE("fault likelihood") {
    CHECK(fault_likelihood(0.3, 0.5) == doctest::Approx(0.65));
    CHECK(fault_likelihood(0.0, 0.0) == 0.0);
    CHECK(fault_likelihood(1.0, 0.37) == 1.0);
    CHECK_THROWS_AS(fault_likelihood(-0.1, 0.5), InvalidInput);

    // Hub at the centre of its neighbours: centre-of-mass displacement is ~0, so B ~ 1.
    auto eng = rng::make_engine(46, "test-likelihood");
    const auto w = oracle::tight_window(eng, {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}, 50, 1e-3);
    PairwiseModels models(w, 2.0, quick_cfg());
    const Topology hub(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}});
    const auto terms = fault_likelihood({0}, hub, models, Thresholds{});
    CHECK(terms.a <= 1e-3);
    CHECK(terms.congestion >= 1 - 1e-3);
    CHECK(terms.reach >= 1 - 1e-3);
    CHECK(terms.value == doctest::Approx(terms.a + terms.b - terms.a * terms.b));
    // Leaf: centre of mass of {leaf, hub} is 0.5 m away, beyond lambda = 0.4 but inside 0.9
    Thresholds t;
    t.lambda = 0.4;
    CHECK(fault_likelihood({1}, hub, models, t).congestion <= 1e-3);
    CHECK(fault_likelihood({1}, hub, models, Thresholds{}).congestion >= 1 - 1e-3);
    CHECK(models.com_fit_count() == 2);
}

TEST_CASE("pre-fault posterior") {
    CHECK(pre_fault_posterior(0.8, 0.5, 0.5).value == doctest::Approx(0.8));
    CHECK(pre_fault_posterior(0.8, 0.0, 0.5).value == 0.0);
    const auto over = pre_fault_posterior(0.9, 0.9, 0.5);
    CHECK(over.value == 1.0);
    CHECK(over.clamped);
    const auto zero_marg = pre_fault_posterior(0.9, 0.3, 0.0);
    CHECK(zero_marg.value == 1.0);
    CHECK(zero_marg.degenerate);
    const auto empty = pre_fault_posterior(0.85, 0.0, 0.0);
    CHECK(empty.value == doctest::Approx(0.85));
    CHECK(empty.degenerate);
    CHECK_THROWS_AS(pre_fault_posterior(1.5, 0.5, 0.5), InvalidInput);
}

TEST_CASE("post-fault prediction") {
    // 3 hangs off 0; faulting 1 leaves {0,3} as the main component and 2 as the orphan.
    const Topology topo(4, {{0, 1}, {1, 2}, {0, 3}});
    const FaultEvent fault(1, FaultKind::Collision);
    const auto orphans = orphan_set(topo, fault);
    REQUIRE(orphans.members == std::set<RobotId>{2});
    const InRange only_3 = [](RobotId a, RobotId b) { return (a == 2 && b == 3) || (a == 3 && b == 2); };
    CHECK(post_fault_prediction(orphans, topo, only_3, table({{{2, 3}, 0.7}})) == doctest::Approx(0.7));
    const InRange none = [](RobotId, RobotId) { return false; };
    CHECK(post_fault_prediction(orphans, topo, none, constant(1.0)) == 0.0);
    // the faulty robot is never a candidate
    const InRange only_1 = [](RobotId a, RobotId b) { return a + b == 3 && (a == 1 || b == 1); };
    CHECK(post_fault_prediction(orphans, topo, only_1, constant(1.0)) == 0.0);

    const Topology cycle(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});
    const auto no_orphans = orphan_set(cycle, FaultEvent(1, FaultKind::Congestion));
    CHECK(post_fault_prediction(no_orphans, cycle, none, constant(0.0)) == 1.0);

    // Two orphans: 4 reaches the main component only through the earlier orphan 3.
    const Topology star(6, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 5}, {2, 5}});
    const auto two = orphan_set(star, FaultEvent(0, FaultKind::Collision));
    REQUIRE(two.members == std::set<RobotId>{3, 4});
    const InRange chain = [](RobotId a, RobotId b) {
        const auto e = a < b ? Edge{a, b} : Edge{b, a};
        return e == Edge{3, 5} || e == Edge{3, 4};
    };
    CHECK(post_fault_prediction(two, star, chain, table({{{3, 5}, 0.9}, {{3, 4}, 0.8}})) == doctest::Approx(0.72));
    // Reversed: the lower id 3 reaches the main component only through 4.
    const InRange reversed = [](RobotId a, RobotId b) {
        const auto e = a < b ? Edge{a, b} : Edge{b, a};
        return e == Edge{4, 5} || e == Edge{3, 4};
    };
    CHECK(post_fault_prediction(two, star, reversed, table({{{4, 5}, 0.9}, {{3, 4}, 0.8}})) == doctest::Approx(0.72));
    // Neither can reach the main component.
    const InRange island = [](RobotId a, RobotId b) { return a + b == 7 && (a == 3 || a == 4); };
    CHECK(post_fault_prediction(two, star, island, constant(1.0)) == 0.0);
}

TEST_CASE("decision rule and score") {
    const Thresholds t;
    CHECK(decide(0.80, 0.78, t) == Verdict::Recoverable);
    CHECK(decide(0.80, 0.60, t) == Verdict::Irrecoverable);
    CHECK(decide(0.90, 0.76, t) == Verdict::Irrecoverable);
    // Integer grid units of 0.05 keep the reference free of rounding.
    for (int qb : {13, 14, 15, 16})
        for (int qd : {2, 3, 4}) {
            Thresholds u;
            u.q_b = qb / 20.0;
            u.q_d = qd / 20.0;
            for (int a = 0; a <= 20; ++a)
                for (int b = 0; b <= 20; ++b) {
                    const bool rec = a >= qb && b >= qb && std::abs(a - b) <= qd;
                    CHECK((decide(a / 20.0, b / 20.0, u) == Verdict::Recoverable) == rec);
                    const double s = prediction_score(a / 20.0, b / 20.0, u);
                    CHECK(s >= 1e-6);
                    CHECK(s <= 1 - 1e-6);
                }
        }
    CHECK(decide(0.80, 0.65, Thresholds{2.0, 0.4, 0.9, 0.5, 0.65, 0.15}) == Verdict::Recoverable);
    CHECK(prediction_score(0.9, 0.6, t) == doctest::Approx(0.6 * (1 - 0.2)));
    CHECK(prediction_score(1.0, 1.0, t) == doctest::Approx(1 - 1e-6));
    CHECK(prediction_score(0.0, 1.0, t) == doctest::Approx(1e-6));
}

TEST_CASE("predict: chain with middle fault") {
    auto eng = rng::make_engine(47, "test-predict-chain");
    const std::vector<Coordinate> base{{0, 0}, {1.5, 0}, {3, 0}};
    const auto w = oracle::tight_window(eng, base, 60, 1e-3);
    const Topology topo(3, {{0, 1}, {1, 2}});
    const auto r = predict(w, topo, FaultEvent(1, FaultKind::Collision), Thresholds{}, quick_cfg());
    CHECK(r.p_post <= 1e-6);
    CHECK(r.verdict == Verdict::Irrecoverable);
    CHECK(r.verdict == (recoverability_oracle(NetworkSnapshot(base, 2.0), FaultEvent(1, FaultKind::Collision))
                            ? Verdict::Recoverable
                            : Verdict::Irrecoverable));
    CHECK(r.pair_fits <= 3);
    const auto back = prediction_from_json(nlohmann::json::parse(to_json(r).dump()));
    CHECK(back.p_pre == r.p_pre);
    CHECK(back.p_post == r.p_post);
    CHECK(back.verdict == r.verdict);
    CHECK(back.orphans == r.orphans);
}

TEST_CASE("predict: dense cluster with leaf fault") {
    auto eng = rng::make_engine(48, "test-predict-dense");
    const auto base = oracle::random_positions(eng, 10, 1.4);
    const NetworkSnapshot snap(base, 2.0);
    const auto topo = synthesize_topology(snap);
    const auto w = oracle::tight_window(eng, base, 60, 1e-3);
    RobotId leaf = 0;
    for (RobotId i = 0; i < 10; ++i)
        if (neighbor_set(topo, i).members.size() < neighbor_set(topo, leaf).members.size()) leaf = i;
    const FaultEvent f(leaf, FaultKind::Congestion);
    REQUIRE(recoverability_oracle(snap, f));
    const auto r = predict(w, topo, f, Thresholds{}, quick_cfg(), {2, {}});
    CHECK(r.verdict == Verdict::Recoverable);
    CHECK(r.pair_fits <= 45);
    CHECK(r.com_fits == 1);
}

TEST_CASE("predict: errors carry a stage") {
    auto eng = rng::make_engine(49, "test-predict-err");
    const auto w = oracle::tight_window(eng, {{0, 0}, {1, 0}}, 10, 1e-3);
    try {
        predict(w, Topology(2, {{0, 1}}), FaultEvent(5, FaultKind::Collision), Thresholds{}, quick_cfg());
        FAIL("expected an error");
    } catch (const InvalidInput& e) {
        CHECK(e.stage() == "input");
    }
    const auto one = oracle::tight_window(eng, {{0, 0}, {1, 0}}, 1, 1e-3);
    CHECK_THROWS_AS(predict(one, Topology(2, {{0, 1}}), FaultEvent(0, FaultKind::Collision), Thresholds{}, quick_cfg()),
                    InsufficientData);
}

TEST_CASE("predict agrees with the oracle on near point-mass windows") {
    auto eng = rng::make_engine(50, "test-predict-degenerate");
    int total = 0, agree = 0;
    while (total < 30) {
        const auto base = oracle::random_positions(eng, 8, 4.5);
        const NetworkSnapshot snap(base, 2.0);
        if (!is_connected(build_disk_graph(snap), everyone(8))) continue;
        const auto topo = synthesize_topology(snap);
        const FaultEvent f(rng::uniform_index(eng, 8), FaultKind::Collision);
        const auto r = predict(oracle::tight_window(eng, base, 40, 1e-3), topo, f, Thresholds{}, quick_cfg());
        CHECK(r.pair_fits <= 28);
        ++total;
        agree += (r.verdict == Verdict::Recoverable) == recoverability_oracle(snap, f);
    }
    CHECK(agree >= 27);
}

TEST_CASE("predict on shared models matches fresh predictions") {
    auto eng = rng::make_engine(51, "test-predict-shared");
    std::vector<Coordinate> base;
    do {
        base = oracle::random_positions(eng, 7, 3.5);
    } while (!is_connected(build_disk_graph(NetworkSnapshot(base, 1.8)), everyone(7)));
    const auto topo = synthesize_topology(NetworkSnapshot(base, 1.8));
    const auto w = oracle::tight_window(eng, base, 40, 0.1);
    const FaultEvent f(3, FaultKind::Congestion);
    PairwiseModels shared(w, 2.4, quick_cfg());
    for (double delta : {2.4, 1.8, 2.0}) {
        for (double d : {0.3, 0.5}) {
            Thresholds t;
            t.delta = delta;
            t.mass_d = d;
            const auto a = predict(shared, topo, f, t);
            const auto b = predict(w, topo, f, t, quick_cfg());
            CHECK(a.p_pre == b.p_pre);
            CHECK(a.p_post == b.p_post);
            CHECK(a.likelihood == b.likelihood);
            CHECK(a.flags == b.flags);
        }
    }
    const auto fits = shared.pair_fit_count();
    Thresholds t;
    predict(shared, topo, f, t);
    CHECK(shared.pair_fit_count() == fits);
    CHECK(shared.com_fit_count() == 6);
}

TEST_CASE("model coverage: declared links and the fault-instant frame") {
    auto eng = rng::make_engine(52, "test-coverage");
    // robot 2 walks from 3.5 m to 1.5 m away from robot 0; mean distance 2.5 m
    Window w;
    for (int t = 0; t <= 40; ++t) {
        const double x = 3.5 - 2.0 * t / 40.0;
        w.push_back({static_cast<double>(t), {{0, 0}, {1, 0}, {x, 0.001 * rng::normal(eng)}, {0, 6}}});
    }
    PairwiseModels plain(w, 2.0, quick_cfg());
    CHECK_FALSE(plain.in_mean_range(0, 2));
    CHECK(plain.potentially_communicating(0, 2));
    CHECK(plain.pair_model(0, 2) != nullptr);
    CHECK_FALSE(plain.potentially_communicating(0, 3));
    CHECK(plain.pair_model(0, 3) == nullptr);
    CHECK(plain.link_probability(0, 3, 2.0) == 0.0);
    CHECK(plain.flags().count("no-model:0-3") == 1);

    PairwiseModels declared(w, 2.0, quick_cfg(), {}, {{0, 3}});
    CHECK_FALSE(declared.in_mean_range(0, 3));
    CHECK(declared.potentially_communicating(3, 0));
    REQUIRE(declared.pair_model(0, 3) != nullptr);
    CHECK(declared.link_probability(0, 3, 2.0) < 1e-6);
    CHECK(declared.with_delta(1.0).potentially_communicating(0, 3));
    CHECK_THROWS_AS(PairwiseModels(w, 2.0, quick_cfg(), {}, {{0, 7}}), InvalidInput);
}
