#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace topofault {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

enum class CovarianceType { Full, Tied };
enum class WeightPrior { DirichletDistribution, DirichletProcess };

const char* to_string(CovarianceType t);
const char* to_string(WeightPrior p);
CovarianceType covariance_type_from_string(const std::string& s);
WeightPrior weight_prior_from_string(const std::string& s);

/// Variational Bayesian GMM settings. Defaults are the cross-validated optimum
/// (15 components, full covariance, 10 restarts, Dirichlet distribution, gamma0 = 1000, 5000 iterations).
struct BgmmConfig {
    int max_components = 15;
    CovarianceType covariance_type = CovarianceType::Full;
    int n_init = 10;
    WeightPrior prior_type = WeightPrior::DirichletDistribution;
    double gamma0 = 1000.0;
    int max_iter = 5000;
    double convergence_tol = 1e-6;  // relative ELBO change
    uint64_t seed = 0;
    double reg_covar = 1e-6;        // eigenvalue floor of every fitted covariance
    double prune_weight = 1e-4;

    void validate() const;
};

struct BgmmModel {
    std::vector<double> weights;
    std::vector<Vec2> means;
    std::vector<Mat2> covariances;
    std::vector<double> elbo_trace;
    bool converged = false;
    BgmmConfig config;

    std::size_t components() const { return weights.size(); }
    double final_elbo() const { return elbo_trace.empty() ? 0.0 : elbo_trace.back(); }
};

/// Best-ELBO variational EM fit over `cfg.n_init` random-responsibility restarts.
BgmmModel fit(std::span<const Vec2> samples, const BgmmConfig& cfg);

/// Mixture density at `point`.
double pdf(const BgmmModel& model, const Vec2& point);

struct QuadratureConfig {
    int angular_nodes = 64;
};

/// Mass of N(mean, cov) inside the origin-centred disk of the given radius.
double component_disk_probability(const Vec2& mean, const Mat2& cov, double radius, const QuadratureConfig& q = {});

/// Mixture mass inside the origin-centred disk of the given radius, clamped to [0,1].
double radial_probability(const BgmmModel& model, double radius, const QuadratureConfig& q = {});

nlohmann::json to_json(const BgmmConfig& cfg);
BgmmConfig bgmm_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BgmmModel& model);
BgmmModel bgmm_model_from_json(const nlohmann::json& j);

}  // namespace topofault
