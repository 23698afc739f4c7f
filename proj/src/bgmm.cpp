#include "topofault/bgmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <boost/math/special_functions/digamma.hpp>

#include "topofault/errors.hpp"
#include "topofault/quadrature.hpp"
#include "topofault/seeding.hpp"

namespace topofault {

const char* to_string(CovarianceType t) { return t == CovarianceType::Full ? "full" : "tied"; }
const char* to_string(WeightPrior p) {
    return p == WeightPrior::DirichletDistribution ? "dirichlet_distribution" : "dirichlet_process";
}

CovarianceType covariance_type_from_string(const std::string& s) {
    if (s == "full") return CovarianceType::Full;
    if (s == "tied") return CovarianceType::Tied;
    throw InvalidInput("unknown covariance type '" + s + "'");
}

WeightPrior weight_prior_from_string(const std::string& s) {
    if (s == "dirichlet_distribution") return WeightPrior::DirichletDistribution;
    if (s == "dirichlet_process") return WeightPrior::DirichletProcess;
    throw InvalidInput("unknown weight prior '" + s + "'");
}

void BgmmConfig::validate() const {
    if (max_components < 1) throw InvalidInput("max_components must be >= 1");
    if (n_init < 1) throw InvalidInput("n_init must be >= 1");
    if (!(gamma0 > 0.0)) throw InvalidInput("gamma0 must be positive");
    if (max_iter < 1) throw InvalidInput("max_iter must be >= 1");
    if (!(convergence_tol > 0.0)) throw InvalidInput("convergence_tol must be positive");
    if (!(reg_covar > 0.0)) throw InvalidInput("reg_covar must be positive");
}

namespace {

constexpr double kDim = 2.0;
constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)

double digamma(double x) { return boost::math::digamma(x); }

// ln B(W, nu) of the Wishart normaliser, D = 2.
double log_wishart_norm(double log_det_w, double nu) {
    return -0.5 * nu * log_det_w - nu * std::log(2.0) - 0.5 * std::log(std::numbers::pi) - std::lgamma(0.5 * nu) -
           std::lgamma(0.5 * (nu - 1.0));
}

double expected_log_det(double log_det_w, double nu) {
    return digamma(0.5 * nu) + digamma(0.5 * (nu - 1.0)) + 2.0 * std::log(2.0) + log_det_w;
}

struct Prior {
    double gamma0;
    double beta0 = 1.0;
    double nu0 = kDim;
    Vec2 m0;
    Mat2 w0_inv;
    double log_det_w0;
};

// Sufficient statistics of the responsibilities.
struct Stats {
    std::vector<double> n;
    std::vector<Vec2> mean;
    std::vector<Mat2> scatter;  // covariance, i.e. divided by n_k
};

class VariationalMixture {
public:
    VariationalMixture(std::span<const Vec2> x, const BgmmConfig& cfg, const Prior& prior)
        : x_(x), cfg_(cfg), prior_(prior), k_(static_cast<std::size_t>(cfg.max_components)),
          tied_(cfg.covariance_type == CovarianceType::Tied), resp_(x.size() * k_) {
        const std::size_t nw = tied_ ? 1 : k_;
        alpha_.assign(k_, 0.0);
        stick_b_.assign(k_, 0.0);
        beta_.assign(k_, 0.0);
        m_.assign(k_, Vec2::Zero());
        w_inv_.assign(nw, Mat2::Identity());
        w_.assign(nw, Mat2::Identity());
        nu_.assign(nw, 0.0);
        log_det_w_.assign(nw, 0.0);
        eln_lambda_.assign(nw, 0.0);
        eln_pi_.assign(k_, 0.0);
    }

    void random_init(rng::Engine& eng) {
        const auto n = x_.size();
        neg_entropy_ = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double* r = &resp_[i * k_];
            double s = 0.0;
            for (std::size_t k = 0; k < k_; ++k) s += (r[k] = rng::uniform01(eng) + 1e-12);
            for (std::size_t k = 0; k < k_; ++k) {
                r[k] /= s;
                neg_entropy_ += r[k] * std::log(r[k]);
            }
        }
    }

    void m_step() {
        stats_ = compute_stats();
        const auto& nk = stats_.n;
        for (std::size_t k = 0; k < k_; ++k) {
            if (cfg_.prior_type == WeightPrior::DirichletDistribution) {
                alpha_[k] = prior_.gamma0 + nk[k];
            } else {
                double tail = 0.0;
                for (std::size_t j = k + 1; j < k_; ++j) tail += nk[j];
                alpha_[k] = 1.0 + nk[k];
                stick_b_[k] = prior_.gamma0 + tail;
            }
            beta_[k] = prior_.beta0 + nk[k];
            m_[k] = (prior_.beta0 * prior_.m0 + nk[k] * stats_.mean[k]) / beta_[k];
        }

        auto spread = [&](std::size_t k) -> Mat2 {
            const Vec2 diff = stats_.mean[k] - prior_.m0;
            return nk[k] * stats_.scatter[k] +
                   (prior_.beta0 * nk[k] / (prior_.beta0 + nk[k])) * (diff * diff.transpose());
        };
        if (tied_) {
            Mat2 acc = prior_.w0_inv;
            double total = 0.0;
            for (std::size_t k = 0; k < k_; ++k) {
                acc += spread(k);
                total += nk[k];
            }
            w_inv_[0] = acc;
            nu_[0] = prior_.nu0 + total;
        } else {
            for (std::size_t k = 0; k < k_; ++k) {
                w_inv_[k] = prior_.w0_inv + spread(k);
                nu_[k] = prior_.nu0 + nk[k];
            }
        }
        for (std::size_t w = 0; w < w_.size(); ++w) {
            w_inv_[w] = 0.5 * (w_inv_[w] + w_inv_[w].transpose());
            w_[w] = w_inv_[w].inverse();
            log_det_w_[w] = -std::log(w_inv_[w].determinant());
            eln_lambda_[w] = expected_log_det(log_det_w_[w], nu_[w]);
        }

        if (cfg_.prior_type == WeightPrior::DirichletDistribution) {
            double sum = 0.0;
            for (auto a : alpha_) sum += a;
            const double dsum = digamma(sum);
            for (std::size_t k = 0; k < k_; ++k) eln_pi_[k] = digamma(alpha_[k]) - dsum;
        } else {
            double carried = 0.0;
            for (std::size_t k = 0; k < k_; ++k) {
                const double dab = digamma(alpha_[k] + stick_b_[k]);
                eln_pi_[k] = digamma(alpha_[k]) - dab + carried;
                carried += digamma(stick_b_[k]) - dab;
            }
        }
    }

    void e_step() {
        const auto n = x_.size();
        std::vector<double> base(k_), p00(k_), p01(k_), p11(k_);
        for (std::size_t k = 0; k < k_; ++k) {
            const auto w = wi(k);
            base[k] = eln_pi_[k] + 0.5 * eln_lambda_[w] - kLog2Pi - 0.5 * kDim / beta_[k];
            p00[k] = nu_[w] * w_[w](0, 0);
            p01[k] = 2.0 * nu_[w] * w_[w](0, 1);
            p11[k] = nu_[w] * w_[w](1, 1);
        }
        std::vector<double> logp(k_);
        neg_entropy_ = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = x_[i].x(), yi = x_[i].y();
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < k_; ++k) {
                const double dx = xi - m_[k].x(), dy = yi - m_[k].y();
                logp[k] = base[k] - 0.5 * (p00[k] * dx * dx + p01[k] * dx * dy + p11[k] * dy * dy);
                mx = std::max(mx, logp[k]);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < k_; ++k) s += std::exp(logp[k] - mx);
            const double lse = mx + std::log(s);
            double* r = &resp_[i * k_];
            for (std::size_t k = 0; k < k_; ++k) {
                const double lr = logp[k] - lse;
                r[k] = std::exp(lr);
                neg_entropy_ += r[k] * lr;
            }
        }
    }

    // Evidence lower bound for the current responsibilities and the posterior computed from them.
    double elbo() const {
        const auto& nk = stats_.n;
        double lik = 0.0, lz = 0.0, mu_prior = 0.0, q_mu = 0.0;
        for (std::size_t k = 0; k < k_; ++k) {
            const auto w = wi(k);
            const Vec2 dm = stats_.mean[k] - m_[k];
            lik += 0.5 * nk[k] *
                   (eln_lambda_[w] - kDim / beta_[k] - nu_[w] * (stats_.scatter[k] * w_[w]).trace() -
                    nu_[w] * dm.dot(w_[w] * dm) - kDim * kLog2Pi);
            lz += nk[k] * eln_pi_[k];
            const Vec2 d0 = m_[k] - prior_.m0;
            mu_prior += 0.5 * (kDim * (std::log(prior_.beta0) - kLog2Pi) + eln_lambda_[w] -
                               kDim * prior_.beta0 / beta_[k] - prior_.beta0 * nu_[w] * d0.dot(w_[w] * d0));
            q_mu += 0.5 * eln_lambda_[w] + 0.5 * kDim * (std::log(beta_[k]) - kLog2Pi) - 0.5 * kDim;
        }
        double lambda_prior = 0.0, q_lambda = 0.0;
        const double log_b0 = log_wishart_norm(prior_.log_det_w0, prior_.nu0);
        const Mat2 w0_inv = prior_.w0_inv;
        for (std::size_t w = 0; w < w_.size(); ++w) {
            lambda_prior += log_b0 + 0.5 * (prior_.nu0 - kDim - 1.0) * eln_lambda_[w] -
                            0.5 * nu_[w] * (w0_inv * w_[w]).trace();
            q_lambda += log_wishart_norm(log_det_w_[w], nu_[w]) + 0.5 * (nu_[w] - kDim - 1.0) * eln_lambda_[w] -
                        0.5 * nu_[w] * kDim;
        }

        double pi_terms = 0.0;
        if (cfg_.prior_type == WeightPrior::DirichletDistribution) {
            const double kk = static_cast<double>(k_);
            double sum_alpha = 0.0, lgamma_alpha = 0.0, prior_acc = 0.0, q_acc = 0.0;
            for (std::size_t k = 0; k < k_; ++k) {
                sum_alpha += alpha_[k];
                lgamma_alpha += std::lgamma(alpha_[k]);
                prior_acc += (prior_.gamma0 - 1.0) * eln_pi_[k];
                q_acc += (alpha_[k] - 1.0) * eln_pi_[k];
            }
            const double log_c0 = std::lgamma(kk * prior_.gamma0) - kk * std::lgamma(prior_.gamma0);
            const double log_c = std::lgamma(sum_alpha) - lgamma_alpha;
            pi_terms = (log_c0 + prior_acc) - (q_acc + log_c);
        } else {
            const double log_norm0 = std::lgamma(1.0 + prior_.gamma0) - std::lgamma(prior_.gamma0);
            for (std::size_t k = 0; k < k_; ++k) {
                const double a = alpha_[k], b = stick_b_[k];
                const double dab = digamma(a + b);
                const double elv = digamma(a) - dab, el1v = digamma(b) - dab;
                pi_terms += log_norm0 + (prior_.gamma0 - 1.0) * el1v;
                pi_terms -= std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * elv + (b - 1.0) * el1v;
            }
        }

        return lik + lz + pi_terms + mu_prior + lambda_prior - q_mu - q_lambda - neg_entropy_;
    }

    BgmmModel export_model(std::vector<double> trace, bool converged) const {
        std::vector<double> w(k_);
        if (cfg_.prior_type == WeightPrior::DirichletDistribution) {
            for (std::size_t k = 0; k < k_; ++k) w[k] = alpha_[k];
        } else {
            double remaining = 1.0;
            for (std::size_t k = 0; k < k_; ++k) {
                const double v = alpha_[k] / (alpha_[k] + stick_b_[k]);
                w[k] = v * remaining;
                remaining *= 1.0 - v;
            }
        }
        double sum = 0.0;
        for (auto v : w) sum += v;
        for (auto& v : w) v /= sum;

        BgmmModel model;
        model.config = cfg_;
        model.elbo_trace = std::move(trace);
        model.converged = converged;
        double kept = 0.0;
        for (std::size_t k = 0; k < k_; ++k)
            if (w[k] >= cfg_.prune_weight) kept += w[k];
        for (std::size_t k = 0; k < k_; ++k) {
            if (w[k] < cfg_.prune_weight) continue;
            model.weights.push_back(w[k] / kept);
            model.means.push_back(m_[k]);
            Mat2 cov = w_inv_[wi(k)] / nu_[wi(k)];
            model.covariances.push_back(0.5 * (cov + cov.transpose()));
        }
        return model;
    }

private:
    std::size_t wi(std::size_t k) const { return tied_ ? 0 : k; }

    // One pass over the data, moments taken about the prior mean.
    Stats compute_stats() const {
        constexpr double kTiny = 10.0 * std::numeric_limits<double>::epsilon();
        std::vector<double> sn(k_, 0.0), sx(k_, 0.0), sy(k_, 0.0), sxx(k_, 0.0), sxy(k_, 0.0), syy(k_, 0.0);
        const auto n = x_.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = x_[i].x() - prior_.m0.x(), dy = x_[i].y() - prior_.m0.y();
            const double* r = &resp_[i * k_];
            for (std::size_t k = 0; k < k_; ++k) {
                const double rk = r[k];
                sn[k] += rk;
                sx[k] += rk * dx;
                sy[k] += rk * dy;
                sxx[k] += rk * dx * dx;
                sxy[k] += rk * dx * dy;
                syy[k] += rk * dy * dy;
            }
        }
        Stats s;
        s.n.resize(k_);
        s.mean.resize(k_);
        s.scatter.resize(k_);
        for (std::size_t k = 0; k < k_; ++k) {
            const double nk = sn[k] + kTiny;
            const double mx = sx[k] / nk, my = sy[k] / nk;
            s.n[k] = nk;
            s.mean[k] = prior_.m0 + Vec2(mx, my);
            const double cxy = sxy[k] / nk - mx * my;
            s.scatter[k] << std::max(0.0, sxx[k] / nk - mx * mx), cxy, cxy, std::max(0.0, syy[k] / nk - my * my);
        }
        return s;
    }

    std::span<const Vec2> x_;
    const BgmmConfig& cfg_;
    const Prior& prior_;
    std::size_t k_;
    bool tied_;
    std::vector<double> resp_;
    double neg_entropy_ = 0.0;  // sum r log r
    Stats stats_;
    std::vector<double> alpha_, stick_b_, beta_;
    std::vector<Vec2> m_;
    std::vector<Mat2> w_inv_, w_;
    std::vector<double> nu_, log_det_w_, eln_lambda_, eln_pi_;
};

Prior make_prior(std::span<const Vec2> x, const BgmmConfig& cfg) {
    const double n = static_cast<double>(x.size());
    Prior p;
    p.gamma0 = cfg.gamma0;
    p.m0 = Vec2::Zero();
    for (const auto& v : x) p.m0 += v;
    p.m0 /= n;
    Mat2 cov = Mat2::Zero();
    for (const auto& v : x) cov += (v - p.m0) * (v - p.m0).transpose();
    cov /= (n - 1.0);
    // Folding the floor into the Wishart scale keeps every update an exact coordinate-ascent step
    // and bounds each exported covariance W_k^-1 / nu_k from below by reg_covar.
    p.w0_inv = cov + cfg.reg_covar * (p.nu0 + n) * Mat2::Identity();
    p.log_det_w0 = -std::log(p.w0_inv.determinant());
    return p;
}

}  // namespace

BgmmModel fit(std::span<const Vec2> samples, const BgmmConfig& cfg) {
    cfg.validate();
    if (samples.size() < 2) throw InsufficientData("mixture fit needs at least 2 samples");
    for (const auto& s : samples)
        if (!s.allFinite()) throw InvalidInput("non-finite displacement sample");

    const Prior prior = make_prior(samples, cfg);
    BgmmModel best;
    double best_elbo = -std::numeric_limits<double>::infinity();
    for (int init = 0; init < cfg.n_init; ++init) {
        auto eng = rng::make_engine(cfg.seed, "bgmm-init", static_cast<uint64_t>(init));
        VariationalMixture vm(samples, cfg, prior);
        vm.random_init(eng);
        vm.m_step();
        std::vector<double> trace{vm.elbo()};
        bool converged = false;
        for (int it = 0; it < cfg.max_iter; ++it) {
            vm.e_step();
            vm.m_step();
            const double l = vm.elbo();
            const double prev = trace.back();
            trace.push_back(l);
            if (std::abs(l - prev) <= cfg.convergence_tol * std::abs(l)) {
                converged = true;
                break;
            }
        }
        if (trace.back() > best_elbo) {
            best_elbo = trace.back();
            best = vm.export_model(std::move(trace), converged);
        }
    }
    return best;
}

double pdf(const BgmmModel& model, const Vec2& point) {
    double s = 0.0;
    for (std::size_t k = 0; k < model.components(); ++k) {
        const Mat2& c = model.covariances[k];
        const double det = c.determinant();
        const Vec2 d = point - model.means[k];
        const double q = d.dot(c.inverse() * d);
        s += model.weights[k] * std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(det));
    }
    return s;
}

double component_disk_probability(const Vec2& mean, const Mat2& cov, double radius, const QuadratureConfig& q) {
    if (!(radius > 0.0)) throw InvalidInput("disk radius must be positive");
    const Eigen::LLT<Mat2> llt(cov);
    if (llt.info() != Eigen::Success) throw InvalidInput("component covariance is not positive definite");
    const Mat2 chol = llt.matrixL();

    // Whitened polar coordinates about the component mean: d = mean + rho * chol * e(theta).
    // For each ray the radial mass between the disk crossings is exp(-r1^2/2) - exp(-r2^2/2).
    const double c = mean.squaredNorm() - radius * radius;
    auto ray_mass = [&](double theta) {
        const Vec2 w = chol * Vec2(std::cos(theta), std::sin(theta));
        const double a = w.squaredNorm();
        const double b = mean.dot(w);
        const double disc = b * b - a * c;
        if (disc <= 0.0) return 0.0;
        const double sq = std::sqrt(disc);
        // Stable roots of a rho^2 + 2 b rho + c = 0.
        const double qq = -(b + std::copysign(sq, b));
        double r1 = qq / a, r2 = (qq != 0.0) ? c / qq : -r1;
        if (r1 > r2) std::swap(r1, r2);
        if (r2 <= 0.0) return 0.0;
        r1 = std::max(r1, 0.0);
        return std::exp(-0.5 * r1 * r1) - std::exp(-0.5 * r2 * r2);
    };

    const int n = q.angular_nodes;
    double total = 0.0;
    if (c <= 0.0) {
        for (int p = 0; p < 4; ++p) {
            const double a = p * 0.5 * std::numbers::pi;
            total += quad::adaptive_integrate(ray_mass, a, a + 0.5 * std::numbers::pi, n);
        }
    } else {
        // Mean outside the disk: only rays inside the tangent cone hit it.
        const double dist = mean.norm();
        const double half = std::asin(std::min(1.0, radius / dist));
        const Vec2 inward = -mean / dist;
        auto rotate = [](const Vec2& v, double ang) {
            return Vec2(std::cos(ang) * v.x() - std::sin(ang) * v.y(), std::sin(ang) * v.x() + std::cos(ang) * v.y());
        };
        const Mat2 chol_inv = chol.inverse();
        const Vec2 lo = chol_inv * rotate(inward, -half);
        const Vec2 hi = chol_inv * rotate(inward, half);
        const double t_lo = std::atan2(lo.y(), lo.x());
        double t_hi = std::atan2(hi.y(), hi.x());
        while (t_hi <= t_lo) t_hi += 2.0 * std::numbers::pi;
        const double mid = 0.5 * (t_lo + t_hi), hw = 0.5 * (t_hi - t_lo);
        // theta = mid + hw sin(u) removes the square-root behaviour at the tangent rays.
        auto mapped = [&](double u) { return ray_mass(mid + hw * std::sin(u)) * hw * std::cos(u); };
        total = quad::adaptive_integrate(mapped, -0.5 * std::numbers::pi, 0.0, n) +
                quad::adaptive_integrate(mapped, 0.0, 0.5 * std::numbers::pi, n);
    }
    return std::clamp(total / (2.0 * std::numbers::pi), 0.0, 1.0);
}

double radial_probability(const BgmmModel& model, double radius, const QuadratureConfig& q) {
    if (!(radius > 0.0)) throw InvalidInput("radius must be positive");
    double p = 0.0;
    for (std::size_t k = 0; k < model.components(); ++k)
        p += model.weights[k] * component_disk_probability(model.means[k], model.covariances[k], radius, q);
    return std::clamp(p, 0.0, 1.0);
}

nlohmann::json to_json(const BgmmConfig& cfg) {
    return {{"max_components", cfg.max_components},
            {"covariance_type", to_string(cfg.covariance_type)},
            {"n_init", cfg.n_init},
            {"prior_type", to_string(cfg.prior_type)},
            {"gamma0", cfg.gamma0},
            {"max_iter", cfg.max_iter},
            {"convergence_tol", cfg.convergence_tol},
            {"seed", cfg.seed},
            {"reg_covar", cfg.reg_covar},
            {"prune_weight", cfg.prune_weight}};
}

BgmmConfig bgmm_config_from_json(const nlohmann::json& j) {
    BgmmConfig c;
    c.max_components = j.at("max_components").get<int>();
    c.covariance_type = covariance_type_from_string(j.at("covariance_type").get<std::string>());
    c.n_init = j.at("n_init").get<int>();
    c.prior_type = weight_prior_from_string(j.at("prior_type").get<std::string>());
    c.gamma0 = j.at("gamma0").get<double>();
    c.max_iter = j.at("max_iter").get<int>();
    c.convergence_tol = j.at("convergence_tol").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.reg_covar = j.value("reg_covar", 1e-6);
    c.prune_weight = j.value("prune_weight", 1e-4);
    c.validate();
    return c;
}

nlohmann::json to_json(const BgmmModel& model) {
    nlohmann::json means = nlohmann::json::array(), covs = nlohmann::json::array();
    for (std::size_t k = 0; k < model.components(); ++k) {
        means.push_back({model.means[k].x(), model.means[k].y()});
        const Mat2& c = model.covariances[k];
        covs.push_back({c(0, 0), c(0, 1), c(1, 0), c(1, 1)});
    }
    return {{"weights", model.weights},
            {"means", means},
            {"covariances", covs},
            {"config", to_json(model.config)},
            {"elbo", model.final_elbo()},
            {"iterations", model.elbo_trace.empty() ? 0 : model.elbo_trace.size() - 1},
            {"converged", model.converged}};
}

BgmmModel bgmm_model_from_json(const nlohmann::json& j) {
    BgmmModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& mu : j.at("means")) m.means.emplace_back(mu.at(0).get<double>(), mu.at(1).get<double>());
    for (const auto& c : j.at("covariances")) {
        Mat2 cov;
        cov << c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>(), c.at(3).get<double>();
        m.covariances.push_back(cov);
    }
    if (m.means.size() != m.weights.size() || m.covariances.size() != m.weights.size())
        throw InvalidInput("mixture JSON has inconsistent component counts");
    m.config = bgmm_config_from_json(j.at("config"));
    m.elbo_trace = {j.value("elbo", 0.0)};
    m.converged = j.value("converged", false);
    return m;
}

}  // namespace topofault
