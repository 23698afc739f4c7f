#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "topofault/bgmm.hpp"
#include "topofault/net_core.hpp"

namespace topofault {

struct Thresholds {
    double delta = 2.0;   // connectivity
    double omega = 0.4;   // collision
    double lambda = 0.9;  // congestion
    double mass_d = 0.5;
    double q_b = 0.75;
    double q_d = 0.1;

    void validate() const;
};

nlohmann::json to_json(const Thresholds& t);
Thresholds thresholds_from_json(const nlohmann::json& j);

enum class Verdict { Recoverable, Irrecoverable };
const char* to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

/// Mixture models over a trajectory window: one per potentially-communicating pair
/// (declared link, or window-mean or last-frame distance <= delta) on the displacement X_j - X_i, and one per robot on
/// X̄_i - X_i. Models are fitted on first use and cached; all fits are counted.
class PairwiseModels {
public:
    /// `links` (usually the topology's edges) are communicating by definition and always get models.
    PairwiseModels(Window window, double delta, BgmmConfig cfg, QuadratureConfig quad = {}, std::set<Edge> links = {});

    /// Same window and fit cache seen through another connectivity threshold. Pair fits do not
    /// depend on delta, so they are shared; flags start empty.
    PairwiseModels with_delta(double delta) const;

    std::size_t robot_count() const { return data_->n; }
    const Window& window() const { return data_->window; }
    double delta() const { return delta_; }
    const BgmmConfig& config() const { return data_->cfg; }

    /// Distance between the two robots' window-mean positions.
    double mean_distance(RobotId i, RobotId j) const;
    /// Window-mean positions within delta.
    bool in_mean_range(RobotId i, RobotId j) const;
    /// A declared link, in mean range, or within delta at the last (fault-instant) frame. These pairs get models.
    bool potentially_communicating(RobotId i, RobotId j) const;

    /// Displacement model of the unordered pair; nullptr when the pair is out of range.
    const BgmmModel* pair_model(RobotId i, RobotId j);
    /// Fits the listed pairs up front, spread over `threads` workers. Out-of-range pairs are skipped.
    void fit_pairs(const std::vector<Edge>& pairs, unsigned threads);

    /// P[|X_i - X_j| <= radius]; 0 for a pair without a model. `strict` selects < over <=,
    /// which is the same number for a continuous model.
    double link_probability(RobotId i, RobotId j, double radius, bool strict = false);

    /// Model of X̄_i - X_i where X̄_i is the centre of mass of the d-neighbourhood at each frame.
    const BgmmModel& com_model(RobotId i, double mass_d);

    std::size_t pair_fit_count() const;
    std::size_t com_fit_count() const;
    std::set<std::string> flags() const;

private:
    struct Data {
        Window window;
        std::size_t n = 0;
        BgmmConfig cfg;
        QuadratureConfig quad;
        std::vector<double> mean_dist;
        std::vector<double> last_dist;
        std::set<Edge> links;
    };
    struct ComFit {
        BgmmModel model;
        bool lone = false;
    };
    struct Store {
        std::mutex mu;
        std::map<Edge, BgmmModel> pairs;
        std::map<std::tuple<RobotId, double, double>, ComFit> com;  // (robot, mass_d, delta)
    };

    PairwiseModels(std::shared_ptr<const Data> data, std::shared_ptr<Store> store, double delta);

    BgmmConfig seeded(std::string_view tag, uint64_t index) const;
    BgmmModel fit_pair(RobotId i, RobotId j) const;
    void flag(std::string f);

    std::shared_ptr<const Data> data_;
    std::shared_ptr<Store> store_;
    double delta_;
    std::unique_ptr<std::mutex> flag_mu_ = std::make_unique<std::mutex>();
    std::set<std::string> flags_;
};

/// 1 - prod(1 - p). Throws InvalidInput for a value outside [0,1].
double union_probability(std::span<const double> ps);

/// Chain-rule connectivity of a topology. Robots are visited breadth-first from robot 0; the first
/// factor is the union over all of its links, every later factor the union over links to already
/// visited neighbours. A link that alone made up an earlier factor is not counted again.
/// Clamped to [1e-9, 1].
double prior_connectivity(const Topology& topology, const LinkProbability& link);

/// Union over faulty robots i and j in Xi_i of P[|X_i - X_j| < omega] (`link` evaluated at omega).
double collision_marginal(const std::vector<RobotId>& faulty, const Topology& topology, const LinkProbability& link,
                          std::set<std::string>* flags = nullptr);

/// A + B - AB.
double fault_likelihood(double a, double b);

struct LikelihoodTerms {
    double a = 0.0;         // collision union
    double congestion = 0;  // P[|X_i - X̄_i| < lambda]
    double reach = 0.0;     // union over Xi_i of P[|X_i - X_j| <= delta]
    double b = 0.0;         // congestion * reach
    double value = 0.0;
};

/// Likelihood of the fault given connectivity; multiple faulty robots combine by union.
LikelihoodTerms fault_likelihood(const std::vector<RobotId>& faulty, const Topology& topology, PairwiseModels& models,
                                 const Thresholds& t);

struct Posterior {
    double value = 0.0;
    bool clamped = false;     // ratio exceeded 1
    bool degenerate = false;  // marginal below epsilon
};

/// clamp(likelihood * prior / max(marginal, 1e-9), 0, 1). When both likelihood and marginal
/// are below 1e-9 the ratio is taken as 1.
Posterior pre_fault_posterior(double prior, double likelihood, double marginal);

/// Candidate test for post-fault reconnection (window-mean positions within delta).
using InRange = std::function<bool(RobotId, RobotId)>;

/// Chain over orphans. Each orphan's factor is the union over links to surviving robots in range
/// that already belong to the reconnected network: the main component plus the components of
/// orphans handled before it. The next orphan is the lowest id with at least one such robot; 0 when
/// the remaining orphans have none, 1 with no orphans.
double post_fault_prediction(const OrphanSet& orphans, const Topology& topology, const InRange& in_range,
                             const LinkProbability& link);

Verdict decide(double p_pre, double p_post, const Thresholds& t);

/// Logloss-ready score: min(p_pre, p_post) damped by the differential excess, kept inside [1e-6, 1 - 1e-6].
double prediction_score(double p_pre, double p_post, const Thresholds& t);

struct PredictionResult {
    double p_pre = 0.0;
    double p_post = 0.0;
    Verdict verdict = Verdict::Irrecoverable;
    double score = 0.0;
    double prior = 0.0;
    double marginal = 0.0;
    double likelihood = 0.0;
    LikelihoodTerms likelihood_terms;
    bool posterior_clamped = false;
    bool posterior_degenerate = false;
    std::vector<RobotId> orphans;
    std::size_t pair_fits = 0;
    std::size_t com_fits = 0;
    std::vector<std::string> flags;
};

nlohmann::json to_json(const PredictionResult& r);
PredictionResult prediction_from_json(const nlohmann::json& j);

struct PredictOptions {
    unsigned threads = 1;
    QuadratureConfig quadrature{};
};

/// Full pipeline: pairwise models, prior, marginal, likelihood, p_pre; orphan reconnection p_post; decision.
/// The models are viewed at thresholds.delta; fits already in their cache are reused. Topology
/// links missing from the models' declared links are treated like any other pair.
PredictionResult predict(PairwiseModels& models, const Topology& topology, const FaultEvent& fault,
                         const Thresholds& thresholds, const PredictOptions& opts = {});

PredictionResult predict(const Window& window, const Topology& topology, const FaultEvent& fault,
                         const Thresholds& thresholds, const BgmmConfig& bgmm, const PredictOptions& opts = {});

}  // namespace topofault
