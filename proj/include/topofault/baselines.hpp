#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "topofault/simulator.hpp"

namespace topofault {

/// Per-column z-scoring. Constant columns keep scale 1.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& rows);
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& rows) const;
};

/// Flattened positions [x0, y0, x1, y1, ...] followed by the faulty-robot one-hot.
Eigen::VectorXd frame_features(const std::vector<Coordinate>& positions, const FaultEvent& fault);
Eigen::VectorXd record_features(const DatasetRecord& r);
/// One row of frame_features per window frame.
Eigen::MatrixXd record_sequence(const DatasetRecord& r);

/// Readout of a ridge fit on standardized columns, with intercept.
struct LinearReadout {
    Eigen::VectorXd theta;  // theta[0] intercept, then one weight per feature
    Standardizer norm;

    double predict(const Eigen::VectorXd& x) const;
};

/// Minimizes |y - theta0 - Z w|^2 + ridge |w|^2 with Z the standardized rows. With ridge = 0 a
/// rank-deficient design gets the minimum-norm solution.
LinearReadout ridge_fit(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, double ridge);

struct MlrModel {
    LinearReadout readout;
    std::size_t features() const { return static_cast<std::size_t>(readout.norm.mean.size()); }
};

MlrModel mlr_fit(const Eigen::MatrixXd& rows, const Eigen::VectorXd& labels, double ridge = 0.0);
double mlr_predict(const MlrModel& m, const Eigen::VectorXd& x);
MlrModel mlr_fit(const std::vector<DatasetRecord>& train);
/// Raw regression output for a record (label 1 = recoverable).
double mlr_predict(const MlrModel& m, const DatasetRecord& r);

struct EsnConfig {
    int reservoir = 100;
    double spectral_radius = 0.9;
    double kappa = 0.1;        // leak
    double tau = 1e-3;         // state noise is uniform in [-tau, tau]
    double ridge = 1.5;
    double input_scale = 1.0;  // W_in entries uniform in +-input_scale / sqrt(inputs)
    int washout = 20;          // leading steps excluded from the readout fit
    int stride = 5;            // then every stride-th state is a training row
    uint64_t seed = 0;

    void validate() const;
};

struct EsnModel {
    EsnConfig config;
    int inputs = 0;
    Eigen::MatrixXd w_in;    // reservoir x inputs
    Eigen::MatrixXd w_res;   // reservoir x reservoir, scaled to the spectral radius
    Eigen::VectorXd w_back;  // reservoir
    Standardizer input_norm;
    LinearReadout readout;   // over [h; u]
    bool trained = false;
};

/// Random matrices; depend only on (config.seed, reservoir, inputs).
EsnModel esn_init(const EsnConfig& cfg, int inputs);

/// h' = (1 - kappa) sigmoid(W_in u + W h + W_back y + tau) + kappa h. Throws ReservoirExplosion on
/// a non-finite state.
Eigen::VectorXd esn_step(const EsnModel& m, const Eigen::VectorXd& h, const Eigen::VectorXd& u, double feedback,
                         const Eigen::VectorXd& tau);

/// Fits the readout on teacher-forced runs over every sequence (rows = time steps, raw inputs).
EsnModel esn_fit(const EsnConfig& cfg, const std::vector<Eigen::MatrixXd>& sequences, const std::vector<double>& labels);
/// Free run with the model's own output fed back; returns the output at the last step.
/// `stream` selects the state-noise stream.
double esn_predict(const EsnModel& m, const Eigen::MatrixXd& sequence, uint64_t stream = 0);

EsnModel esn_fit(const EsnConfig& cfg, const std::vector<DatasetRecord>& train);
double esn_predict(const EsnModel& m, const DatasetRecord& r);

/// Regression output to a probability-like score in [1e-6, 1 - 1e-6].
double regression_score(double y);

nlohmann::json to_json(const MlrModel& m);
MlrModel mlr_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EsnConfig& c);
EsnConfig esn_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EsnModel& m);
EsnModel esn_model_from_json(const nlohmann::json& j);

}  // namespace topofault
