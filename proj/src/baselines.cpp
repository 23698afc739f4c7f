#include "topofault/baselines.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "topofault/errors.hpp"
#include "topofault/seeding.hpp"

namespace topofault {

namespace {

/// Running first and second moments of (x, y), enough for a standardized ridge solve.
class RidgeAccumulator {
public:
    explicit RidgeAccumulator(Eigen::Index dim) : sx_(Eigen::VectorXd::Zero(dim)), sxx_(Eigen::MatrixXd::Zero(dim, dim)),
                                                  sxy_(Eigen::VectorXd::Zero(dim)) {}

    void add(const Eigen::VectorXd& x, double y) {
        ++n_;
        sx_ += x;
        sxx_.selfadjointView<Eigen::Lower>().rankUpdate(x);
        sxy_ += y * x;
        sy_ += y;
    }

    LinearReadout solve(double ridge) const {
        if (n_ < 2) throw InvalidInput("ridge fit needs at least two rows");
        const double n = static_cast<double>(n_);
        const Eigen::Index d = sx_.size();
        const Eigen::MatrixXd sxx = sxx_.selfadjointView<Eigen::Lower>();
        const Eigen::VectorXd mean = sx_ / n;
        const double ymean = sy_ / n;
        Eigen::MatrixXd cov = sxx - n * mean * mean.transpose();  // centred Gram
        Eigen::VectorXd cxy = sxy_ - n * ymean * mean;

        Standardizer norm{mean, Eigen::VectorXd::Ones(d)};
        for (Eigen::Index k = 0; k < d; ++k) {
            const double var = std::max(0.0, cov(k, k) / n);
            const double sd = std::sqrt(var);
            if (sd > 1e-12 * std::max(1.0, std::abs(mean[k]))) norm.scale[k] = sd;
        }
        const Eigen::VectorXd inv = norm.scale.cwiseInverse();
        Eigen::MatrixXd g = inv.asDiagonal() * cov * inv.asDiagonal();
        const Eigen::VectorXd b = inv.asDiagonal() * cxy;

        Eigen::VectorXd w;
        if (ridge > 0.0) {
            g.diagonal().array() += ridge;
            w = g.ldlt().solve(b);
        } else {
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(g);
            cod.setThreshold(1e-10);
            w = cod.solve(b);
        }
        LinearReadout out;
        out.norm = std::move(norm);
        out.theta.resize(d + 1);
        out.theta[0] = ymean;
        out.theta.tail(d) = w;
        return out;
    }

private:
    long n_ = 0;
    Eigen::VectorXd sx_;
    Eigen::MatrixXd sxx_;
    Eigen::VectorXd sxy_;
    double sy_ = 0.0;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double label_value(const DatasetRecord& r) { return r.label == Verdict::Recoverable ? 1.0 : 0.0; }

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json mat_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
    return rows;
}

Eigen::MatrixXd mat_from(const nlohmann::json& j, Eigen::Index cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const Eigen::VectorXd row = vec_from(j.at(r));
        if (row.size() != cols) throw InvalidInput("ragged matrix in model JSON");
        m.row(r) = row.transpose();
    }
    return m;
}

nlohmann::json readout_json(const LinearReadout& r) {
    return {{"theta", vec_json(r.theta)}, {"mean", vec_json(r.norm.mean)}, {"scale", vec_json(r.norm.scale)}};
}

LinearReadout readout_from(const nlohmann::json& j) {
    LinearReadout r;
    r.theta = vec_from(j.at("theta"));
    r.norm.mean = vec_from(j.at("mean"));
    r.norm.scale = vec_from(j.at("scale"));
    if (r.theta.size() != r.norm.mean.size() + 1 || r.norm.scale.size() != r.norm.mean.size())
        throw InvalidInput("readout dimensions disagree");
    return r;
}

Eigen::VectorXd tau_draw(rng::Engine& eng, int size, double tau) {
    Eigen::VectorXd v(size);
    for (int k = 0; k < size; ++k) v[k] = tau > 0.0 ? rng::uniform(eng, -tau, tau) : 0.0;
    return v;
}

Eigen::VectorXd readout_input(const Eigen::VectorXd& h, const Eigen::VectorXd& u) {
    Eigen::VectorXd z(h.size() + u.size());
    z << h, u;
    return z;
}

}  // namespace

Standardizer Standardizer::fit(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw InvalidInput("cannot standardize zero rows");
    Standardizer s;
    s.mean = rows.colwise().mean().transpose();
    s.scale = Eigen::VectorXd::Ones(rows.cols());
    for (Eigen::Index k = 0; k < rows.cols(); ++k) {
        const double sd = std::sqrt((rows.col(k).array() - s.mean[k]).square().mean());
        if (sd > 1e-12 * std::max(1.0, std::abs(s.mean[k]))) s.scale[k] = sd;
    }
    return s;
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
    if (x.size() != mean.size()) throw InvalidInput("feature length mismatch");
    return (x - mean).cwiseQuotient(scale);
}

Eigen::MatrixXd Standardizer::apply_rows(const Eigen::MatrixXd& rows) const {
    if (rows.cols() != mean.size()) throw InvalidInput("feature length mismatch");
    return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::VectorXd frame_features(const std::vector<Coordinate>& positions, const FaultEvent& fault) {
    const auto n = static_cast<Eigen::Index>(positions.size());
    Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        f[2 * i] = positions[i].x;
        f[2 * i + 1] = positions[i].y;
    }
    for (RobotId r : fault.robots) {
        if (r >= positions.size()) throw InvalidInput("faulty robot id out of range");
        f[2 * n + static_cast<Eigen::Index>(r)] = 1.0;
    }
    return f;
}

Eigen::VectorXd record_features(const DatasetRecord& r) { return frame_features(r.final_frame(), r.fault); }

Eigen::MatrixXd record_sequence(const DatasetRecord& r) {
    const auto n = static_cast<Eigen::Index>(r.robots());
    Eigen::MatrixXd seq(static_cast<Eigen::Index>(r.window.size()), 3 * n);
    for (std::size_t t = 0; t < r.window.size(); ++t) {
        if (r.window[t].positions.size() != r.robots()) throw InvalidInput("frame size changes inside window");
        seq.row(static_cast<Eigen::Index>(t)) = frame_features(r.window[t].positions, r.fault).transpose();
    }
    return seq;
}

double LinearReadout::predict(const Eigen::VectorXd& x) const {
    return theta[0] + theta.tail(theta.size() - 1).dot(norm.apply(x));
}

LinearReadout ridge_fit(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y, double ridge) {
    if (rows.rows() != y.size()) throw InvalidInput("row and label counts differ");
    if (ridge < 0.0 || !std::isfinite(ridge)) throw InvalidInput("ridge strength must be finite and >= 0");
    if (!rows.allFinite() || !y.allFinite()) throw InvalidInput("non-finite design or labels");
    RidgeAccumulator acc(rows.cols());
    for (Eigen::Index r = 0; r < rows.rows(); ++r) acc.add(rows.row(r).transpose(), y[r]);
    return acc.solve(ridge);
}

MlrModel mlr_fit(const Eigen::MatrixXd& rows, const Eigen::VectorXd& labels, double ridge) {
    return MlrModel{ridge_fit(rows, labels, ridge)};
}

double mlr_predict(const MlrModel& m, const Eigen::VectorXd& x) { return m.readout.predict(x); }

MlrModel mlr_fit(const std::vector<DatasetRecord>& train) {
    if (train.size() < 2) throw InvalidInput("mlr needs at least two records");
    const Eigen::Index d = record_features(train.front()).size();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(train.size()), d);
    Eigen::VectorXd y(rows.rows());
    for (std::size_t k = 0; k < train.size(); ++k) {
        const Eigen::VectorXd f = record_features(train[k]);
        if (f.size() != d) throw InvalidInput("records of different network sizes");
        rows.row(static_cast<Eigen::Index>(k)) = f.transpose();
        y[static_cast<Eigen::Index>(k)] = label_value(train[k]);
    }
    return mlr_fit(rows, y);
}

double mlr_predict(const MlrModel& m, const DatasetRecord& r) { return mlr_predict(m, record_features(r)); }

void EsnConfig::validate() const {
    if (reservoir < 1) throw InvalidInput("reservoir size must be >= 1");
    if (!(kappa > 0.0 && kappa <= 1.0)) throw InvalidInput("leak rate must be in (0,1]");
    if (!(spectral_radius >= 0.0) || !(tau >= 0.0) || !(ridge >= 0.0) || !(input_scale >= 0.0))
        throw InvalidInput("esn scales must be non-negative");
    if (washout < 0 || stride < 1) throw InvalidInput("washout must be >= 0 and stride >= 1");
}

EsnModel esn_init(const EsnConfig& cfg, int inputs) {
    cfg.validate();
    if (inputs < 1) throw InvalidInput("esn needs at least one input");
    EsnModel m;
    m.config = cfg;
    m.inputs = inputs;
    const int nr = cfg.reservoir;
    auto eng = rng::make_engine(cfg.seed, "esn-matrices", static_cast<uint64_t>(nr) << 32 | static_cast<uint32_t>(inputs));
    const double in_scale = cfg.input_scale / std::sqrt(static_cast<double>(inputs));
    m.w_in.resize(nr, inputs);
    for (int r = 0; r < nr; ++r)
        for (int c = 0; c < inputs; ++c) m.w_in(r, c) = rng::uniform(eng, -in_scale, in_scale);
    m.w_res.resize(nr, nr);
    for (int r = 0; r < nr; ++r)
        for (int c = 0; c < nr; ++c) m.w_res(r, c) = rng::uniform(eng, -1.0, 1.0);
    const double radius = Eigen::EigenSolver<Eigen::MatrixXd>(m.w_res, false).eigenvalues().cwiseAbs().maxCoeff();
    m.w_res *= radius > 0.0 ? cfg.spectral_radius / radius : 0.0;
    m.w_back.resize(nr);
    for (int r = 0; r < nr; ++r) m.w_back[r] = rng::uniform(eng, -1.0, 1.0);
    m.input_norm.mean = Eigen::VectorXd::Zero(inputs);
    m.input_norm.scale = Eigen::VectorXd::Ones(inputs);
    return m;
}

Eigen::VectorXd esn_step(const EsnModel& m, const Eigen::VectorXd& h, const Eigen::VectorXd& u, double feedback,
                         const Eigen::VectorXd& tau) {
    const Eigen::VectorXd pre = m.w_in * u + m.w_res * h + m.w_back * feedback + tau;
    const double k = m.config.kappa;
    Eigen::VectorXd next = (1.0 - k) * pre.unaryExpr(&sigmoid) + k * h;
    if (!next.allFinite()) throw ReservoirExplosion("reservoir state is not finite", "esn");
    return next;
}

EsnModel esn_fit(const EsnConfig& cfg, const std::vector<Eigen::MatrixXd>& sequences, const std::vector<double>& labels) {
    if (sequences.size() != labels.size()) throw InvalidInput("sequence and label counts differ");
    if (sequences.size() < 2) throw InvalidInput("esn needs at least two sequences");
    const auto inputs = static_cast<int>(sequences.front().cols());
    EsnModel m = esn_init(cfg, inputs);

    Eigen::Index total = 0;
    for (const auto& s : sequences) {
        if (s.cols() != inputs) throw InvalidInput("sequences of different widths");
        if (!s.allFinite()) throw InvalidInput("non-finite input sequence");
        total += s.rows();
    }
    if (total == 0) throw InvalidInput("empty input sequences");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(inputs), sq = Eigen::VectorXd::Zero(inputs);
    for (const auto& s : sequences) {
        sum += s.colwise().sum().transpose();
        sq += s.array().square().colwise().sum().matrix().transpose();
    }
    m.input_norm.mean = sum / static_cast<double>(total);
    for (int c = 0; c < inputs; ++c) {
        const double mu = m.input_norm.mean[c];
        const double sd = std::sqrt(std::max(0.0, sq[c] / static_cast<double>(total) - mu * mu));
        m.input_norm.scale[c] = sd > 1e-12 * std::max(1.0, std::abs(mu)) ? sd : 1.0;
    }

    RidgeAccumulator acc(cfg.reservoir + inputs);
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        auto eng = rng::make_engine(cfg.seed, "esn-train-tau", s);
        Eigen::VectorXd h = Eigen::VectorXd::Zero(cfg.reservoir);
        const auto& seq = sequences[s];
        const Eigen::Index start = std::min<Eigen::Index>(cfg.washout, seq.rows() - 1);
        for (Eigen::Index t = 0; t < seq.rows(); ++t) {
            const Eigen::VectorXd u = m.input_norm.apply(seq.row(t).transpose());
            h = esn_step(m, h, u, labels[s], tau_draw(eng, cfg.reservoir, cfg.tau));
            if (t >= start && ((t - start) % cfg.stride == 0 || t == seq.rows() - 1)) acc.add(readout_input(h, u), labels[s]);
        }
    }
    m.readout = acc.solve(cfg.ridge);
    m.trained = true;
    return m;
}

double esn_predict(const EsnModel& m, const Eigen::MatrixXd& sequence, uint64_t stream) {
    if (!m.trained) throw InvalidInput("esn readout is not trained");
    if (sequence.cols() != m.inputs || sequence.rows() == 0) throw InvalidInput("sequence shape does not match the model");
    auto eng = rng::make_engine(m.config.seed, "esn-tau", stream);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(m.config.reservoir);
    double y = 0.5;
    for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
        const Eigen::VectorXd u = m.input_norm.apply(sequence.row(t).transpose());
        h = esn_step(m, h, u, y, tau_draw(eng, m.config.reservoir, m.config.tau));
        y = m.readout.predict(readout_input(h, u));
    }
    return y;
}

EsnModel esn_fit(const EsnConfig& cfg, const std::vector<DatasetRecord>& train) {
    std::vector<Eigen::MatrixXd> seqs;
    std::vector<double> labels;
    seqs.reserve(train.size());
    for (const auto& r : train) {
        seqs.push_back(record_sequence(r));
        labels.push_back(label_value(r));
    }
    return esn_fit(cfg, seqs, labels);
}

double esn_predict(const EsnModel& m, const DatasetRecord& r) { return esn_predict(m, record_sequence(r), r.network_id); }

double regression_score(double y) { return std::clamp(std::isfinite(y) ? y : 0.5, 1e-6, 1.0 - 1e-6); }

nlohmann::json to_json(const MlrModel& m) { return {{"kind", "mlr"}, {"readout", readout_json(m.readout)}}; }

MlrModel mlr_model_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "mlr") throw InvalidInput("not an mlr model");
    return MlrModel{readout_from(j.at("readout"))};
}

nlohmann::json to_json(const EsnConfig& c) {
    return {{"reservoir", c.reservoir}, {"spectral_radius", c.spectral_radius}, {"kappa", c.kappa},
            {"tau", c.tau},             {"ridge", c.ridge},                     {"input_scale", c.input_scale},
            {"washout", c.washout},     {"stride", c.stride},                   {"seed", c.seed}};
}

EsnConfig esn_config_from_json(const nlohmann::json& j) {
    EsnConfig c;
    c.reservoir = j.value("reservoir", c.reservoir);
    c.spectral_radius = j.value("spectral_radius", c.spectral_radius);
    c.kappa = j.value("kappa", c.kappa);
    c.tau = j.value("tau", c.tau);
    c.ridge = j.value("ridge", c.ridge);
    c.input_scale = j.value("input_scale", c.input_scale);
    c.washout = j.value("washout", c.washout);
    c.stride = j.value("stride", c.stride);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

nlohmann::json to_json(const EsnModel& m) {
    return {{"kind", "esn"},
            {"config", to_json(m.config)},
            {"inputs", m.inputs},
            {"w_in", mat_json(m.w_in)},
            {"w_res", mat_json(m.w_res)},
            {"w_back", vec_json(m.w_back)},
            {"input_mean", vec_json(m.input_norm.mean)},
            {"input_scale", vec_json(m.input_norm.scale)},
            {"readout", m.trained ? readout_json(m.readout) : nlohmann::json(nullptr)}};
}

EsnModel esn_model_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "esn") throw InvalidInput("not an esn model");
    EsnModel m;
    m.config = esn_config_from_json(j.at("config"));
    m.inputs = j.at("inputs").get<int>();
    m.w_in = mat_from(j.at("w_in"), m.inputs);
    m.w_res = mat_from(j.at("w_res"), m.config.reservoir);
    m.w_back = vec_from(j.at("w_back"));
    m.input_norm.mean = vec_from(j.at("input_mean"));
    m.input_norm.scale = vec_from(j.at("input_scale"));
    if (m.w_in.rows() != m.config.reservoir || m.w_res.rows() != m.config.reservoir ||
        m.w_back.size() != m.config.reservoir || m.input_norm.mean.size() != m.inputs)
        throw InvalidInput("esn dimensions disagree");
    if (!j.at("readout").is_null()) {
        m.readout = readout_from(j.at("readout"));
        if (m.readout.norm.mean.size() != m.config.reservoir + m.inputs) throw InvalidInput("esn readout size");
        m.trained = true;
    }
    return m;
}

}  // namespace topofault
