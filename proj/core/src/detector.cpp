#include "backscan/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace backscan {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void require_all_clean(std::span<const NetworkRecord> records, const char* op) {
    for (const NetworkRecord& r : records) {
        if (r.label != Label::clean) {
            throw ValidationError(std::string(op) + ": record '" + r.network_id +
                                  "' is labeled backdoored (contaminated corpus)");
        }
    }
}

json pca_to_json(const PcaModel& pca) {
    return json{{"mean", pca.mean},
                {"components", pca.components},
                {"explained_variance", pca.explained_variance},
                {"retain_target", pca.retained_fraction_target},
                {"retain_actual", pca.retained_fraction_actual}};
}

PcaModel pca_from_json(const json& j) {
    PcaModel pca;
    pca.mean = j.at("mean").get<std::vector<double>>();
    pca.components = j.at("components").get<std::vector<std::vector<double>>>();
    pca.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    pca.retained_fraction_target = j.at("retain_target").get<double>();
    pca.retained_fraction_actual = j.at("retain_actual").get<double>();
    pca.input_dim = pca.mean.size();
    if (pca.components.empty()) throw FormatError("detector file: empty PCA basis");
    for (const auto& c : pca.components) {
        if (c.size() != pca.input_dim) throw FormatError("detector file: ragged PCA component");
    }
    return pca;
}

json gmm_to_json(const GmmModel& gmm) {
    return json{{"kind", std::string(to_string(gmm.covariance_kind))},
                {"weights", gmm.weights},
                {"means", gmm.means},
                {"covariances", gmm.covariances},
                {"fit_log", json{{"iterations", gmm.fit_log.iterations},
                                 {"final_log_likelihood", gmm.fit_log.final_log_likelihood},
                                 {"converged", gmm.fit_log.converged},
                                 {"seed", gmm.fit_log.seed}}}};
}

GmmModel gmm_from_json(const json& j) {
    GmmModel gmm;
    gmm.covariance_kind = covariance_kind_from_string(j.at("kind").get<std::string>());
    gmm.weights = j.at("weights").get<std::vector<double>>();
    gmm.means = j.at("means").get<std::vector<std::vector<double>>>();
    gmm.covariances = j.at("covariances").get<std::vector<std::vector<double>>>();
    const json& log = j.at("fit_log");
    gmm.fit_log.iterations = log.at("iterations").get<std::size_t>();
    gmm.fit_log.final_log_likelihood = log.at("final_log_likelihood").get<double>();
    gmm.fit_log.converged = log.at("converged").get<bool>();
    gmm.fit_log.seed = log.at("seed").get<std::uint64_t>();
    gmm.n_components = gmm.weights.size();
    if (gmm.means.size() != gmm.n_components || gmm.covariances.size() != gmm.n_components) {
        throw FormatError("detector file: inconsistent GMM component counts");
    }
    if (gmm.means.empty()) throw FormatError("detector file: empty GMM");
    gmm.dim = gmm.means.front().size();
    return gmm;
}

}  // namespace

std::vector<std::size_t> default_sweep_candidates(const WeightTensor& layer) {
    std::set<std::size_t> candidates = {1, 2, 5, 10, 20, 50};
    if (layer.shape.size() == 2) {
        candidates.insert(static_cast<std::size_t>(layer.shape[0]));
        candidates.insert(static_cast<std::size_t>(layer.shape[1]));
    } else if (layer.shape.size() == 4) {
        candidates.insert(static_cast<std::size_t>(layer.shape[0]));
    }
    return {candidates.begin(), candidates.end()};
}

DetectorFitResult fit_detector(std::span<const NetworkRecord> clean_records,
                               const DetectorFitConfig& config) {
    if (clean_records.size() < 2) {
        throw ValidationError("fit_detector: need at least 2 clean networks, got " +
                              std::to_string(clean_records.size()));
    }
    require_all_clean(clean_records, "fit_detector");

    std::vector<FeatureVectorSet> sets;
    sets.reserve(clean_records.size());
    const WeightTensor* reference_layer = nullptr;
    for (const NetworkRecord& record : clean_records) {
        const WeightTensor& layer = select_layer(record, config.layer_name);
        if (reference_layer == nullptr) {
            reference_layer = &layer;
        } else if (layer.shape != reference_layer->shape) {
            throw ValidationError("fit_detector: layer '" + config.layer_name +
                                  "' of network '" + record.network_id +
                                  "' has a different shape than the rest of the corpus");
        }
        sets.push_back(vectorize_layer(layer, config.interpretation, record.network_id));
    }

    const FeatureVectorSet stacked = stack_corpus(sets);

    DetectorFitResult result;
    result.model.layer_name = config.layer_name;
    result.model.interpretation = config.interpretation;
    result.model.pca = fit_pca(stacked, config.retain);

    const FeatureVectorSet projected = project(result.model.pca, stacked);
    std::vector<std::size_t> candidates = config.candidates;
    if (candidates.empty()) candidates = default_sweep_candidates(*reference_layer);
    result.sweep = sweep_components(projected, candidates, config.seed, config.gmm);
    result.model.gmm = result.sweep.selected_model();

    result.model.fit_manifest.retain = config.retain;
    result.model.fit_manifest.candidates = candidates;
    result.model.fit_manifest.selected_n_components = result.sweep.selected_n_components();
    result.model.fit_manifest.seed = config.seed;
    for (const NetworkRecord& record : clean_records) {
        result.model.fit_manifest.network_ids.push_back(record.network_id);
    }
    return result;
}

NetworkScore score_network(const DetectorModel& model, const NetworkRecord& record) {
    const WeightTensor& layer = select_layer(record, model.layer_name);
    const FeatureVectorSet set = vectorize_layer(layer, model.interpretation, record.network_id);
    if (set.dim != model.pca.input_dim) {
        throw ValidationError("score_network: network '" + record.network_id + "' yields dim " +
                              std::to_string(set.dim) + " vectors, detector expects " +
                              std::to_string(model.pca.input_dim));
    }

    std::vector<double> densities;
    densities.reserve(set.size());
    for (const auto& x : set.vectors) {
        densities.push_back(log_density(model.gmm, project_vector(model.pca, x)));
    }
    // Summing in sorted order makes the score independent of vector order.
    std::sort(densities.begin(), densities.end());
    double total = 0.0;
    for (double d : densities) total += d;

    NetworkScore score;
    score.network_id = record.network_id;
    score.log_score = total;
    score.n_vectors = set.size();
    if (model.threshold.has_value()) {
        score.verdict = total >= *model.threshold ? Label::clean : Label::backdoored;
    }
    return score;
}

RocResult roc_from_scores(std::span<const double> clean_scores,
                          std::span<const double> backdoored_scores) {
    if (clean_scores.empty() || backdoored_scores.empty()) {
        throw ValidationError("roc_from_scores: both classes must be present");
    }
    for (double s : clean_scores) {
        if (std::isnan(s)) throw ValidationError("roc_from_scores: NaN score");
    }
    for (double s : backdoored_scores) {
        if (std::isnan(s)) throw ValidationError("roc_from_scores: NaN score");
    }

    // Positive class = backdoored, predicted positive when score <= t.
    std::map<double, std::pair<std::size_t, std::size_t>> by_value;  // value -> (n_pos, n_neg)
    for (double s : backdoored_scores) ++by_value[s].first;
    for (double s : clean_scores) ++by_value[s].second;

    const std::size_t n_pos = backdoored_scores.size();
    const std::size_t n_neg = clean_scores.size();

    RocResult roc;
    roc.points.push_back({0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    std::uint64_t area2 = 0;  // twice the area, in count units
    for (const auto& [value, counts] : by_value) {
        const auto [m_pos, m_neg] = counts;
        area2 += static_cast<std::uint64_t>(m_neg) * (2 * tp + m_pos);
        tp += m_pos;
        fp += m_neg;
        roc.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                              static_cast<double>(tp) / static_cast<double>(n_pos)});
    }
    roc.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
    return roc;
}

RocResult evaluate(const DetectorModel& model, std::span<const NetworkRecord> test_records) {
    std::vector<double> clean_scores, backdoored_scores;
    for (const NetworkRecord& record : test_records) {
        const double s = score_network(model, record).log_score;
        (record.label == Label::clean ? clean_scores : backdoored_scores).push_back(s);
    }
    if (clean_scores.empty() || backdoored_scores.empty()) {
        throw ValidationError("evaluate: test corpus must contain both classes");
    }
    return roc_from_scores(clean_scores, backdoored_scores);
}

double frr_threshold(std::span<const double> clean_scores, double target_frr) {
    if (clean_scores.empty()) throw ValidationError("frr_threshold: no scores");
    if (!(target_frr >= 0.0) || target_frr >= 1.0) {
        throw ValidationError("frr_threshold: target_frr must lie in [0, 1)");
    }
    std::vector<double> sorted(clean_scores.begin(), clean_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    const auto k = static_cast<std::size_t>(std::floor(target_frr * static_cast<double>(n)));
    return sorted[std::min(k, n - 1)];
}

CalibrationResult calibrate_threshold(const DetectorModel& model,
                                      std::span<const NetworkRecord> clean_holdout,
                                      double target_frr) {
    if (clean_holdout.empty()) throw ValidationError("calibrate_threshold: no clean records");
    require_all_clean(clean_holdout, "calibrate_threshold");

    std::vector<double> scores;
    scores.reserve(clean_holdout.size());
    for (const NetworkRecord& record : clean_holdout) {
        scores.push_back(score_network(model, record).log_score);
    }
    const double threshold = frr_threshold(scores, target_frr);

    CalibrationResult result;
    result.model = model;
    result.model.threshold = threshold;
    result.threshold = threshold;
    std::size_t rejected = 0;
    for (double s : scores) {
        if (s < threshold) ++rejected;
    }
    result.realized_frr = static_cast<double>(rejected) / static_cast<double>(scores.size());
    return result;
}

void save_detector(const std::filesystem::path& path, const DetectorModel& model) {
    json j{{"layer_name", model.layer_name},
           {"interpretation", std::string(to_string(model.interpretation))},
           {"pca", pca_to_json(model.pca)},
           {"gmm", gmm_to_json(model.gmm)},
           {"threshold", model.threshold.has_value() ? json(*model.threshold) : json(nullptr)},
           {"fit_manifest", json{{"network_ids", model.fit_manifest.network_ids},
                                 {"retain", model.fit_manifest.retain},
                                 {"candidates", model.fit_manifest.candidates},
                                 {"selected_n_components", model.fit_manifest.selected_n_components},
                                 {"seed", model.fit_manifest.seed}}}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

DetectorModel load_detector(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("detector file: " + std::string(e.what()));
    }
    try {
        DetectorModel model;
        model.layer_name = j.at("layer_name").get<std::string>();
        model.interpretation = interpretation_from_string(j.at("interpretation").get<std::string>());
        model.pca = pca_from_json(j.at("pca"));
        model.gmm = gmm_from_json(j.at("gmm"));
        if (!j.at("threshold").is_null()) model.threshold = j.at("threshold").get<double>();
        const json& manifest = j.at("fit_manifest");
        model.fit_manifest.network_ids = manifest.at("network_ids").get<std::vector<std::string>>();
        model.fit_manifest.retain = manifest.at("retain").get<double>();
        model.fit_manifest.candidates = manifest.at("candidates").get<std::vector<std::size_t>>();
        model.fit_manifest.selected_n_components =
            manifest.at("selected_n_components").get<std::size_t>();
        model.fit_manifest.seed = manifest.at("seed").get<std::uint64_t>();
        if (model.gmm.dim != model.pca.n_components()) {
            throw FormatError("detector file: GMM dim does not match PCA basis size");
        }
        return model;
    } catch (const json::exception& e) {
        throw FormatError("detector file: " + std::string(e.what()));
    }
}

void write_score_csv(std::ostream& out, std::span<const ScoreReportRow> rows) {
    out << "network_id,label,log_score,n_vectors,verdict\n";
    for (const ScoreReportRow& row : rows) {
        out << row.score.network_id << ',' << to_string(row.label) << ','
            << format_double(row.score.log_score) << ',' << row.score.n_vectors << ',';
        if (row.score.verdict.has_value()) out << to_string(*row.score.verdict);
        out << '\n';
    }
}

void write_roc_csv(std::ostream& out, const RocResult& roc) {
    out << "fpr,tpr\n";
    for (const RocPoint& p : roc.points) {
        out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
    }
    out << "auc," << format_double(roc.auc) << '\n';
}

void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
    out << "n_components,aic\n";
    for (const SweepEntry& entry : sweep.entries) {
        out << entry.n_components << ',' << format_double(entry.aic) << '\n';
    }
}

}  // namespace backscan
