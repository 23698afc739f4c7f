#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "topofault/baselines.hpp"
#include "topofault/errors.hpp"

using namespace topofault;

namespace {

Eigen::MatrixXd random_design(rng::Engine& eng, int rows, int cols) {
    Eigen::MatrixXd x(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) x(r, c) = rng::uniform(eng, 0.0, 5.0);
    return x;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("mlr exact and constant labels") {
    auto eng = rng::make_engine(71, "test-mlr");
    const Eigen::MatrixXd x = random_design(eng, 40, 4);
    const Eigen::Vector4d w(0.3, -1.2, 2.0, 0.05);
    const Eigen::VectorXd y = (x * w).array() + 0.7;
    const auto m = mlr_fit(x, y);
    CHECK(m.readout.theta.size() == 5);
    for (int r = 0; r < x.rows(); ++r) CHECK(std::abs(mlr_predict(m, Eigen::VectorXd(x.row(r).transpose())) - y[r]) < 1e-8);

    const auto c = mlr_fit(x, Eigen::VectorXd::Constant(40, 0.25));
    CHECK(c.readout.theta[0] == doctest::Approx(0.25));
    CHECK(c.readout.theta.tail(4).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mlr matches normal equations") {
    auto eng = rng::make_engine(72, "test-mlr-ne");
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd x = random_design(eng, 50, 5);
        Eigen::VectorXd y(50);
        for (int r = 0; r < 50; ++r) y[r] = rng::normal(eng);
        Eigen::MatrixXd a(50, 6);
        a << Eigen::VectorXd::Ones(50), x;
        const Eigen::VectorXd beta = (a.transpose() * a).ldlt().solve(a.transpose() * y);
        const auto m = mlr_fit(x, y);
        for (int r = 0; r < 50; ++r) {
            const Eigen::VectorXd row = x.row(r).transpose();
            CHECK(std::abs(mlr_predict(m, row) - a.row(r).dot(beta)) < 1e-8);
        }
        // back to raw coefficients
        const Eigen::VectorXd slope = m.readout.theta.tail(5).cwiseQuotient(m.readout.norm.scale);
        CHECK((slope - beta.tail(5)).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(std::abs(m.readout.theta[0] - slope.dot(m.readout.norm.mean) - beta[0]) < 1e-8);
    }
}

TEST_CASE("mlr rank deficient design") {
    auto eng = rng::make_engine(73, "test-mlr-rank");
    Eigen::MatrixXd x = random_design(eng, 30, 3);
    x.col(2) = 2.0 * x.col(0) - x.col(1);
    Eigen::VectorXd y(30);
    for (int r = 0; r < 30; ++r) y[r] = rng::normal(eng);
    const auto m = mlr_fit(x, y);
    CHECK(m.readout.theta.allFinite());
    // one-hot block summing to one is collinear with the intercept
    Eigen::MatrixXd oh = Eigen::MatrixXd::Zero(30, 3);
    for (int r = 0; r < 30; ++r) oh(r, r % 3) = 1.0;
    CHECK(mlr_fit(oh, y).readout.theta.allFinite());
    CHECK_THROWS_AS(mlr_fit(x.topRows(1), y.head(1)), InvalidInput);
}

TEST_CASE("record features") {
    DatasetRecord r;
    r.window = {{0.0, {{1, 2}, {3, 4}, {5, 6}}}, {1.0, {{1.5, 2}, {3, 4}, {5, 6.5}}}};
    r.fault = FaultEvent(1, FaultKind::Congestion);
    const auto f = record_features(r);
    CHECK(f.size() == 9);
    CHECK(f[0] == 1.5);
    CHECK(f[5] == 6.5);
    CHECK(f[6] == 0.0);
    CHECK(f[7] == 1.0);
    const auto s = record_sequence(r);
    CHECK(s.rows() == 2);
    CHECK(s(0, 0) == 1.0);
    CHECK(s(1, 7) == 1.0);
}

TEST_CASE("esn step") {
    EsnConfig cfg;
    cfg.reservoir = 8;
    cfg.seed = 4;
    const auto m = esn_init(cfg, 3);
    const Eigen::VectorXd zero_u = Eigen::VectorXd::Zero(3), zero_tau = Eigen::VectorXd::Zero(8);

    // hand iteration with zero input and feedback
    Eigen::VectorXd h = Eigen::VectorXd::Zero(8), expect = h;
    for (int t = 0; t < 3; ++t) {
        h = esn_step(m, h, zero_u, 0.0, zero_tau);
        Eigen::VectorXd next(8);
        for (int r = 0; r < 8; ++r) {
            double pre = 0.0;
            for (int c = 0; c < 8; ++c) pre += m.w_res(r, c) * expect[c];
            next[r] = 0.9 * sig(pre) + 0.1 * expect[r];
        }
        expect = next;
        CHECK((h - expect).cwiseAbs().maxCoeff() < 1e-14);
    }
    CHECK(h.minCoeff() > 0.0);
    CHECK(std::abs(Eigen::VectorXd(esn_step(m, Eigen::VectorXd::Zero(8), zero_u, 0.0, zero_tau))[0] - 0.45) < 1e-15);

    EsnConfig pure = cfg;
    pure.kappa = 1.0;
    const auto still = esn_init(pure, 3);
    const Eigen::VectorXd h0 = Eigen::VectorXd::LinSpaced(8, -2.0, 3.0);
    CHECK(esn_step(still, h0, Eigen::VectorXd::Ones(3), 1.0, zero_tau) == h0);

    EsnModel bad = m;
    bad.w_res(0, 0) = std::nan("");
    CHECK_THROWS_AS(esn_step(bad, Eigen::VectorXd::Ones(8), zero_u, 0.0, zero_tau), ReservoirExplosion);

    // matrices depend only on (seed, sizes)
    CHECK(esn_init(cfg, 3).w_res == m.w_res);
    CHECK(esn_init(cfg, 3).w_in == m.w_in);
    EsnConfig other = cfg;
    other.seed = 5;
    CHECK(esn_init(other, 3).w_res != m.w_res);
    const double rho = Eigen::EigenSolver<Eigen::MatrixXd>(m.w_res, false).eigenvalues().cwiseAbs().maxCoeff();
    CHECK(rho == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("esn state bound") {
    auto eng = rng::make_engine(74, "test-esn-bound");
    EsnConfig cfg;
    cfg.reservoir = 20;
    for (int trial = 0; trial < 30; ++trial) {
        cfg.kappa = rng::uniform(eng, 0.01, 0.99);
        cfg.seed = trial;
        const auto m = esn_init(cfg, 4);
        Eigen::VectorXd h(20);
        for (int k = 0; k < 20; ++k) h[k] = rng::uniform(eng, -3.0, 3.0);
        double bound = std::max(h.cwiseAbs().maxCoeff(), 1.0);
        for (int t = 0; t < 50; ++t) {
            Eigen::VectorXd u(4), tau(20);
            for (int k = 0; k < 4; ++k) u[k] = 10.0 * rng::normal(eng);
            for (int k = 0; k < 20; ++k) tau[k] = rng::uniform(eng, -1e-3, 1e-3);
            h = esn_step(m, h, u, rng::uniform01(eng), tau);
            CHECK(h.cwiseAbs().maxCoeff() <= bound + 1e-12);
            bound = std::max(h.cwiseAbs().maxCoeff(), 1.0);
        }
    }
}

TEST_CASE("ridge readout separates separable states") {
    auto eng = rng::make_engine(75, "test-ridge-sep");
    Eigen::MatrixXd x(200, 6);
    Eigen::VectorXd y(200);
    const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(6, -1.0, 1.5);
    for (int r = 0; r < 200; ++r) {
        for (int c = 0; c < 6; ++c) x(r, c) = rng::uniform(eng, 0.0, 1.0);
        const double s = x.row(r).dot(w) - 0.6;
        // margin keeps the classes cleanly apart
        if (std::abs(s) < 0.2) x(r, 5) += s > 0 ? 0.5 : -0.5;
        y[r] = x.row(r).dot(w) - 0.6 > 0 ? 1.0 : 0.0;
    }
    // oracle: the separating direction exists
    int separable = 0;
    for (int r = 0; r < 200; ++r) separable += (x.row(r).dot(w) - 0.6 > 0) == (y[r] > 0.5);
    REQUIRE(separable == 200);
    const auto fit = ridge_fit(x, y, 1.5);
    int correct = 0;
    for (int r = 0; r < 200; ++r) correct += (fit.predict(x.row(r).transpose()) > 0.5) == (y[r] > 0.5);
    CHECK(correct == 200);
}

TEST_CASE("esn fit and predict") {
    auto eng = rng::make_engine(76, "test-esn-fit");
    std::vector<Eigen::MatrixXd> seqs;
    std::vector<double> labels;
    for (int s = 0; s < 60; ++s) {
        const double lab = s % 2;
        Eigen::MatrixXd q(15, 2);
        for (int t = 0; t < 15; ++t) {
            q(t, 0) = lab * 2.0 + 0.1 * rng::normal(eng);
            q(t, 1) = rng::normal(eng);
        }
        seqs.push_back(q);
        labels.push_back(lab);
    }
    EsnConfig cfg;
    cfg.reservoir = 30;
    cfg.washout = 2;
    cfg.stride = 1;
    const auto m = esn_fit(cfg, seqs, labels);
    int correct = 0;
    for (int s = 0; s < 60; ++s) correct += (esn_predict(m, seqs[s], s) > 0.5) == (labels[s] > 0.5);
    CHECK(correct >= 57);
    CHECK(esn_predict(m, seqs[3], 9) == esn_predict(m, seqs[3], 9));
    CHECK(esn_fit(cfg, seqs, labels).readout.theta == m.readout.theta);

    const auto back = esn_model_from_json(nlohmann::json::parse(to_json(m).dump()));
    CHECK(back.w_res == m.w_res);
    CHECK(esn_predict(back, seqs[5], 2) == esn_predict(m, seqs[5], 2));
    CHECK_THROWS_AS(esn_predict(esn_init(cfg, 2), seqs[0]), InvalidInput);
    CHECK_THROWS_AS(esn_predict(m, Eigen::MatrixXd::Zero(3, 5)), InvalidInput);
}

TEST_CASE("mlr json and scores") {
    auto eng = rng::make_engine(77, "test-mlr-json");
    const Eigen::MatrixXd x = random_design(eng, 20, 3);
    const Eigen::VectorXd y = x.col(0) * 0.1;
    const auto m = mlr_fit(x, y);
    const auto back = mlr_model_from_json(nlohmann::json::parse(to_json(m).dump()));
    CHECK(back.readout.theta == m.readout.theta);
    CHECK(regression_score(-3.0) == 1e-6);
    CHECK(regression_score(7.0) == 1.0 - 1e-6);
    CHECK(regression_score(0.3) == 0.3);
    CHECK_THROWS_AS(mlr_model_from_json({{"kind", "esn"}}), InvalidInput);
}
