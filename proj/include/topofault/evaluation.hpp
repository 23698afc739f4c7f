#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topofault/baselines.hpp"
#include "topofault/bgmm.hpp"
#include "topofault/inference.hpp"
#include "topofault/simulator.hpp"

namespace topofault {

struct SplitSpec {
    std::size_t train = 4000;
    std::size_t validation = 400;
    std::size_t test = 200;
    uint64_t seed = 0;

    std::size_t total() const { return train + validation + test; }
};

/// Shuffled records cut into train / validation / test. Records beyond the spec totals are dropped.
class Partition {
public:
    Partition(std::vector<DatasetRecord> records, const SplitSpec& spec);

    std::span<const DatasetRecord> train() const { return {records_.data(), spec_.train}; }
    std::span<const DatasetRecord> validation() const { return {records_.data() + spec_.train, spec_.validation}; }
    std::span<const DatasetRecord> test() const {
        return {records_.data() + spec_.train + spec_.validation, spec_.test};
    }
    /// Train followed by validation.
    std::span<const DatasetRecord> pool() const { return {records_.data(), spec_.train + spec_.validation}; }
    const SplitSpec& spec() const { return spec_; }

private:
    std::vector<DatasetRecord> records_;
    SplitSpec spec_;
};

/// Seeded permutation of 0..n-1 (Fisher-Yates on the derived stream).
std::vector<std::size_t> shuffled_indices(std::size_t n, uint64_t seed, std::string_view tag = "split");

Partition split(std::vector<DatasetRecord> records, const SplitSpec& spec);

/// One scored prediction. Recoverable is the positive class; score is P(recoverable).
struct Outcome {
    bool actual = false;
    bool predicted = false;
    double score = 0.5;
    std::size_t orphans = 0;
    bool failed = false;  // the pipeline raised; scored 0.5, predicted irrecoverable
};

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

/// Percentages; 0 where a denominator vanishes.
struct Rates {
    double tpr = 0.0, tnr = 0.0, balanced_accuracy = 0.0, precision = 0.0, f1 = 0.0;
};

Rates rates(const Confusion& c);

struct MetricsReport {
    Confusion confusion;
    Rates rates;
    double logloss_positive = 0.0;  // mean over actually recoverable records
    double logloss_negative = 0.0;
    double logloss_total = 0.0;
    std::map<std::size_t, std::size_t> orphan_histogram;
    std::size_t failures = 0;
};

/// Throws InvalidInput on an empty outcome list.
MetricsReport evaluate(std::span<const Outcome> outcomes);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);
/// metric,value rows; percentages to one decimal, logloss to three.
void write_metrics_csv(std::ostream& out, const MetricsReport& m);
void write_orphan_histogram_csv(std::ostream& out, const MetricsReport& m);
void write_confusion_csv(std::ostream& out, const MetricsReport& m);

enum class Method { Bgmm, Mlr, Esn };
const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct EvalConfig {
    Thresholds thresholds;
    BgmmConfig bgmm;
    EsnConfig esn;
    QuadratureConfig quadrature;
    unsigned threads = 1;
};

nlohmann::json to_json(const EvalConfig& c);

Outcome outcome_of(const DatasetRecord& r, const PredictionResult& p);

/// The full predictor over every record, records spread over cfg.threads workers.
std::vector<Outcome> bgmm_outcomes(std::span<const DatasetRecord> records, const EvalConfig& cfg,
                                   std::vector<PredictionResult>* details = nullptr);
std::vector<Outcome> mlr_outcomes(const MlrModel& m, std::span<const DatasetRecord> records);
std::vector<Outcome> esn_outcomes(const EsnModel& m, std::span<const DatasetRecord> records, unsigned threads = 1);

/// Fits the method on `train` when it needs fitting, then scores `test`.
std::vector<Outcome> method_outcomes(Method method, std::span<const DatasetRecord> train,
                                     std::span<const DatasetRecord> test, const EvalConfig& cfg);

struct NoiseStudy {
    MetricsReport nominal;
    MetricsReport noisy;
};

/// perturb_noise on every record; record k draws from the stream derived from (seed, "noise", k).
std::vector<DatasetRecord> perturb_records(std::span<const DatasetRecord> records, uint64_t seed, double scale = 0.1);

/// Scores the test set as given and after perturb_noise on every record (record k draws from
/// the stream derived from (seed, "noise", k)). Baselines are fitted once on clean training data.
NoiseStudy noise_study(Method method, std::span<const DatasetRecord> train, std::span<const DatasetRecord> test,
                       const EvalConfig& cfg, uint64_t seed, double scale = 0.1);

// ---- grid search ----

struct ThresholdGrid {
    std::vector<double> delta{2.0}, omega{0.4}, lambda{0.9}, mass_d{0.5}, q_b{0.75}, q_d{0.1};

    /// The published variation sets.
    static ThresholdGrid table();
    std::size_t size() const;
};

struct BgmmGrid {
    std::vector<int> max_components{15};
    std::vector<CovarianceType> covariance{CovarianceType::Full};
    std::vector<int> n_init{10};
    std::vector<WeightPrior> prior{WeightPrior::DirichletDistribution};
    std::vector<double> gamma0{1000.0};
    std::vector<int> max_iter{5000};

    static BgmmGrid table();
    std::size_t size() const;
};

struct GridCell {
    Thresholds thresholds;
    BgmmConfig bgmm;
};

/// Mixture settings vary slowest, then delta, omega, lambda, mass_d, q_b, q_d. Cells with
/// thresholds that fail validation are left out.
std::vector<GridCell> enumerate_grid(const ThresholdGrid& t, const BgmmGrid& b, const BgmmConfig& base = {});

nlohmann::json to_json(const ThresholdGrid& g);
ThresholdGrid threshold_grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BgmmGrid& g);
BgmmGrid bgmm_grid_from_json(const nlohmann::json& j);

struct GridOptions {
    int folds = 10;                 // Monte Carlo re-splits
    double holdout_fraction = 0.1;
    uint64_t seed = 0;
    unsigned threads = 1;
    QuadratureConfig quadrature;
};

struct CellScore {
    GridCell cell;
    double balanced_accuracy = 0.0;  // mean over folds, percent
    double logloss = 0.0;            // mean total logloss over folds
};

struct GridResult {
    std::vector<CellScore> cells;  // in the order given
    std::size_t best = 0;
    std::size_t predictions = 0;   // distinct pipeline runs behind the table
};

/// Every cell is scored on `folds` random holdouts of `pool`; the best cell has the highest mean
/// balanced accuracy, then the lowest mean logloss, then comes first.
GridResult grid_search(std::span<const DatasetRecord> pool, const std::vector<GridCell>& cells, const GridOptions& opts);

nlohmann::json to_json(const GridResult& g);
void write_grid_csv(std::ostream& out, const GridResult& g);

}  // namespace topofault
