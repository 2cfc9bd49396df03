#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "backscan/gmm.hpp"
#include "backscan/pca.hpp"
#include "backscan/vectorize.hpp"
#include "backscan/weightstore.hpp"

namespace backscan {

// Everything needed to reproduce a fit bit-for-bit.
struct FitManifest {
    std::vector<std::string> network_ids;
    double retain = 0.0;
    std::vector<std::size_t> candidates;
    std::size_t selected_n_components = 0;
    std::uint64_t seed = 0;
};

struct DetectorModel {
    std::string layer_name;
    Interpretation interpretation = Interpretation::forward;
    PcaModel pca;
    GmmModel gmm;
    std::optional<double> threshold;  // log-score units, set by calibration
    FitManifest fit_manifest;
};

struct NetworkScore {
    std::string network_id;
    double log_score = 0.0;  // sum over feature vectors of log P(x_j | model)
    std::size_t n_vectors = 0;
    std::optional<Label> verdict;  // set only when a threshold was applied
};

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> points;  // from (0,0) to (1,1), monotone
    double auc = 0.0;
};

struct DetectorFitConfig {
    std::string layer_name = "fc2";
    Interpretation interpretation = Interpretation::forward;
    double retain = 0.95;
    std::vector<std::size_t> candidates;  // empty -> default_sweep_candidates
    std::uint64_t seed = 0;
    GmmFitOptions gmm;
};

struct DetectorFitResult {
    DetectorModel model;
    SweepResult sweep;
};

// {1, 2, 5, 10, 20, 50} plus the layer's per-interpretation vector counts,
// deduplicated and sorted.
std::vector<std::size_t> default_sweep_candidates(const WeightTensor& layer);

// select_layer -> vectorize -> stack -> fit_pca -> sweep_components with
// AIC selection. All records must be labeled clean and carry the layer
// with one consistent shape.
DetectorFitResult fit_detector(std::span<const NetworkRecord> clean_records,
                               const DetectorFitConfig& config);

// Log of the product of per-vector likelihoods. The per-vector log
// densities are summed in sorted order, so the score is bit-identical
// under any permutation of the layer's feature vectors.
NetworkScore score_network(const DetectorModel& model, const NetworkRecord& record);

// ROC over all distinct thresholds with "low score => backdoored" as the
// positive class; AUC equals the Mann-Whitney statistic with half-weight
// ties, computed exactly in integer arithmetic.
RocResult roc_from_scores(std::span<const double> clean_scores,
                          std::span<const double> backdoored_scores);

RocResult evaluate(const DetectorModel& model, std::span<const NetworkRecord> test_records);

struct CalibrationResult {
    DetectorModel model;       // input model with threshold set
    double threshold = 0.0;
    double realized_frr = 0.0;
};

// The largest t with fraction(scores strictly below t) <= target_frr:
// the lower empirical quantile, no interpolation.
double frr_threshold(std::span<const double> clean_scores, double target_frr);

// Lower-empirical-quantile threshold on clean scores: the largest t such
// that the fraction of clean scores strictly below t is <= target_frr.
// Verdict rule: score < t => backdoored.
CalibrationResult calibrate_threshold(const DetectorModel& model,
                                      std::span<const NetworkRecord> clean_holdout,
                                      double target_frr);

// JSON persistence; save -> load -> score is bit-exact.
void save_detector(const std::filesystem::path& path, const DetectorModel& model);
DetectorModel load_detector(const std::filesystem::path& path);

// Report writers (CSV).
struct ScoreReportRow {
    NetworkScore score;
    Label label = Label::clean;
};
void write_score_csv(std::ostream& out, std::span<const ScoreReportRow> rows);
void write_roc_csv(std::ostream& out, const RocResult& roc);
void write_sweep_csv(std::ostream& out, const SweepResult& sweep);

}  // namespace backscan
