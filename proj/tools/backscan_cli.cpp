// backscan command line: corpus generation, detector fitting, scoring,
// ROC evaluation and threshold calibration. Exit codes: 0 success,
// 1 runtime failure, 2 usage error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "backscan/detector.hpp"
#include "backscan/poisonbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct GlobalOptions {
    std::uint64_t seed = 1;
    std::string config_path;
    std::string out_dir = ".";
    bool verbose = false;
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw backscan::IoError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw backscan::FormatError("config: " + std::string(e.what()));
    }
    return j;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw backscan::IoError("cannot open: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw backscan::IoError("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw backscan::IoError("write failed: " + path.string());
}

// Flags beat config-file values; config beats defaults.
template <typename T>
void config_override(const CLI::Option* opt, const json& config, const char* key, T& value) {
    if (opt != nullptr && opt->count() > 0) return;  // flag given explicitly
    if (config.contains(key)) value = config.at(key).get<T>();
}

std::vector<backscan::NetworkRecord> load_records(const std::vector<std::string>& paths) {
    std::vector<backscan::NetworkRecord> records;
    records.reserve(paths.size());
    for (const std::string& p : paths) records.push_back(backscan::read_container(p));
    return records;
}

backscan::CorpusManifest load_manifest_checked(const std::string& path) {
    if (path.empty()) throw backscan::ValidationError("--corpus is required");
    return backscan::load_manifest(path);
}

fs::path manifest_dir(const std::string& manifest_path) {
    return fs::path(manifest_path).parent_path();
}

int run_gen_corpus(const GlobalOptions& global, const json& config, std::size_t n_clean,
                   std::size_t n_backdoored) {
    backscan::CorpusOptions options;
    options = backscan::corpus_options_from_json_text(config.dump(), options);
    options.n_clean = n_clean;
    options.n_backdoored = n_backdoored;
    options.seed = global.seed;

    const fs::path out_dir(global.out_dir);
    const backscan::CorpusManifest manifest = backscan::build_corpus(options, out_dir);
    for (const std::string& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
    if (global.verbose) {
        for (const auto& run : manifest.runs) {
            std::cerr << run.network_id << " train_acc=" << run.train_accuracy
                      << " test_acc=" << run.test_accuracy;
            if (run.attack_success.has_value()) std::cerr << " asr=" << *run.attack_success;
            std::cerr << '\n';
        }
    }
    std::cout << (out_dir / "manifest.json").string() << '\n';
    return kExitOk;
}

int run_fit(const GlobalOptions& global, const std::string& corpus_path,
            const backscan::DetectorFitConfig& fit_config, std::size_t fit_count) {
    const backscan::CorpusManifest manifest = load_manifest_checked(corpus_path);
    const fs::path base = manifest_dir(corpus_path);

    std::vector<backscan::NetworkRecord> clean;
    for (const auto& run : manifest.runs) {
        if (run.label != backscan::Label::clean) continue;
        clean.push_back(backscan::read_container(base / run.file));
        if (clean.size() == fit_count) break;
    }
    if (clean.size() < fit_count) {
        throw backscan::ValidationError("corpus has only " + std::to_string(clean.size()) +
                                        " clean networks, --fit-count asks for " +
                                        std::to_string(fit_count));
    }

    const backscan::DetectorFitResult result = backscan::fit_detector(clean, fit_config);
    for (const std::string& w : result.sweep.warnings) std::cerr << "warning: " << w << '\n';

    const fs::path out_dir(global.out_dir);
    fs::create_directories(out_dir);
    const std::string tag = std::string(backscan::to_string(fit_config.interpretation));
    const fs::path detector_path = out_dir / ("detector_" + tag + ".json");
    backscan::save_detector(detector_path, result.model);

    std::ostringstream sweep_csv;
    backscan::write_sweep_csv(sweep_csv, result.sweep);
    const fs::path sweep_path = out_dir / ("sweep_" + tag + ".csv");
    write_file(sweep_path, sweep_csv.str());

    std::cout << detector_path.string() << '\n';
    std::cout << sweep_path.string() << '\n';
    if (global.verbose) {
        std::cerr << "selected n_components=" << result.sweep.selected_n_components()
                  << " pca_components=" << result.model.pca.n_components() << '\n';
    }
    return kExitOk;
}

int run_score(const GlobalOptions& global, const std::string& detector_path,
              const std::vector<std::string>& record_paths) {
    const backscan::DetectorModel model = backscan::load_detector(detector_path);

    std::vector<backscan::ScoreReportRow> rows;
    for (const std::string& path : record_paths) {
        try {
            const backscan::NetworkRecord record = backscan::read_container(path);
            backscan::ScoreReportRow row;
            row.score = backscan::score_network(model, record);
            row.label = record.label;
            if (std::find(model.fit_manifest.network_ids.begin(),
                          model.fit_manifest.network_ids.end(),
                          record.network_id) != model.fit_manifest.network_ids.end()) {
                std::cerr << "note: '" << record.network_id << "' was in the fitting set\n";
            }
            rows.push_back(std::move(row));
        } catch (const backscan::Error& e) {
            std::cerr << "error: " << path << ": " << e.what() << '\n';
        }
    }
    if (rows.empty()) throw backscan::Error("all records failed to score");

    const fs::path out_dir(global.out_dir);
    fs::create_directories(out_dir);
    std::ostringstream csv;
    backscan::write_score_csv(csv, rows);
    const fs::path scores_path = out_dir / "scores.csv";
    write_file(scores_path, csv.str());
    std::cout << scores_path.string() << '\n';
    return kExitOk;
}

struct ParsedScores {
    std::vector<double> clean;
    std::vector<double> backdoored;
};

ParsedScores parse_score_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw backscan::IoError("cannot open: " + path.string());
    ParsedScores scores;
    std::string line;
    if (!std::getline(in, line)) throw backscan::FormatError("empty score file");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string id, label, score_text;
        if (!std::getline(row, id, ',') || !std::getline(row, label, ',') ||
            !std::getline(row, score_text, ',')) {
            throw backscan::FormatError("malformed score row: " + line);
        }
        const double value = std::stod(score_text);
        if (label == "clean") {
            scores.clean.push_back(value);
        } else if (label == "backdoored") {
            scores.backdoored.push_back(value);
        } else {
            throw backscan::FormatError("unknown label in score row: " + line);
        }
    }
    return scores;
}

int run_eval(const GlobalOptions& global, const std::string& scores_path,
             const std::string& detector_path, const std::string& corpus_path,
             const std::string& split) {
    backscan::RocResult roc;
    if (!scores_path.empty()) {
        if (split != "all") {
            throw backscan::ValidationError("--split requires --detector and --corpus");
        }
        const ParsedScores scores = parse_score_csv(scores_path);
        roc = backscan::roc_from_scores(scores.clean, scores.backdoored);
    } else {
        if (detector_path.empty() || corpus_path.empty()) {
            throw backscan::ValidationError("eval needs either --scores or --detector + --corpus");
        }
        const backscan::DetectorModel model = backscan::load_detector(detector_path);
        const backscan::CorpusManifest manifest = load_manifest_checked(corpus_path);
        const fs::path base = manifest_dir(corpus_path);
        const std::set<std::string> fitted(model.fit_manifest.network_ids.begin(),
                                           model.fit_manifest.network_ids.end());

        std::vector<backscan::NetworkRecord> test;
        for (const auto& run : manifest.runs) {
            if (run.label == backscan::Label::clean) {
                if (fitted.contains(run.network_id)) continue;  // held out only
            } else {
                if (!run.valid) continue;
                if (split != "all" && run.split_group != split) continue;
            }
            test.push_back(backscan::read_container(base / run.file));
        }
        roc = backscan::evaluate(model, test);
    }

    const fs::path out_dir(global.out_dir);
    fs::create_directories(out_dir);
    std::ostringstream csv;
    backscan::write_roc_csv(csv, roc);
    const fs::path roc_path = out_dir / "roc.csv";
    write_file(roc_path, csv.str());

    char auc_line[64];
    std::snprintf(auc_line, sizeof(auc_line), "auc,%.6f", roc.auc);
    std::cout << auc_line << '\n';
    if (global.verbose) std::cerr << "roc written to " << roc_path.string() << '\n';
    return kExitOk;
}

int run_calibrate(const std::string& detector_path, const std::vector<std::string>& record_paths,
                  double frr, const std::string& output_path) {
    const backscan::DetectorModel model = backscan::load_detector(detector_path);
    const std::vector<backscan::NetworkRecord> records = load_records(record_paths);
    const backscan::CalibrationResult result = backscan::calibrate_threshold(model, records, frr);

    const std::string target = output_path.empty() ? detector_path : output_path;
    backscan::save_detector(target, result.model);

    char line[128];
    std::snprintf(line, sizeof(line), "threshold,%.17g", result.threshold);
    std::cout << line << '\n';
    std::snprintf(line, sizeof(line), "realized_frr,%.6f", result.realized_frr);
    std::cout << line << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Backdoored-network detector: models clean weight distributions "
                 "(PCA + AIC-selected GMM) and scores networks by log-likelihood"};
    app.require_subcommand(1);
    app.fallthrough(true);  // global flags may follow the subcommand
    app.failure_message(CLI::FailureMessage::help);

    GlobalOptions global;
    auto* seed_opt = app.add_option("--seed", global.seed, "Root seed for all randomness");
    auto* config_opt = app.add_option("--config", global.config_path, "JSON config file");
    auto* out_opt = app.add_option("--out", global.out_dir, "Output directory");
    app.add_flag("--verbose", global.verbose, "Chatty progress on stderr");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Train a corpus of clean and backdoored networks");
    std::size_t n_clean = 30, n_backdoored = 22;
    auto* clean_opt = gen->add_option("--clean", n_clean, "Number of clean networks (>= 2)");
    auto* bd_opt = gen->add_option("--backdoored", n_backdoored, "Number of backdoored networks");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a detector on the first clean networks of a corpus");
    std::string corpus_path;
    std::string interp_text = "forward";
    std::string layer_name = "fc2";
    double retain = 0.95;
    std::size_t fit_count = 18;
    std::vector<std::size_t> candidates;
    auto* fit_corpus_opt = fit->add_option("--corpus", corpus_path, "Corpus manifest.json");
    auto* layer_opt = fit->add_option("--layer", layer_name, "Layer to analyze");
    auto* interp_opt = fit->add_option("--interp", interp_text, "forward or backward")
                           ->check(CLI::IsMember({"forward", "backward"}));
    auto* retain_opt = fit->add_option("--retain", retain, "Cumulative variance fraction in (0, 1]")
                           ->check(CLI::Range(std::nextafter(0.0, 1.0), 1.0));
    auto* fit_count_opt = fit->add_option("--fit-count", fit_count, "Clean networks used for fitting");
    auto* candidates_opt =
        fit->add_option("--candidates", candidates, "GMM component counts to sweep");

    // score
    auto* score = app.add_subcommand("score", "Score network record files with a detector");
    std::string detector_path;
    std::vector<std::string> record_paths;
    score->add_option("--detector", detector_path, "Detector JSON file")->required();
    score->add_option("--records", record_paths, "Record files to score")
        ->required()
        ->expected(-1);

    // eval
    auto* eval = app.add_subcommand("eval", "ROC/AUC over a labeled test corpus");
    std::string scores_path, eval_detector, eval_corpus, split = "all";
    eval->add_option("--scores", scores_path, "Existing score CSV");
    eval->add_option("--detector", eval_detector, "Detector JSON file");
    eval->add_option("--corpus", eval_corpus, "Corpus manifest.json");
    eval->add_option("--split", split, "Backdoored subset to evaluate")
        ->check(CLI::IsMember({"triggers", "locations", "all"}));

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "Pick a threshold at a target FRR");
    std::string cal_detector, cal_output;
    std::vector<std::string> clean_paths;
    double frr = 0.0;
    calibrate->add_option("--detector", cal_detector, "Detector JSON file")->required();
    calibrate->add_option("--clean-records", clean_paths, "Clean record files")
        ->required()
        ->expected(-1);
    auto* frr_opt = calibrate->add_option("--frr", frr, "Target false rejection rate in [0, 1)")
                        ->check(CLI::Range(0.0, std::nextafter(1.0, 0.0)));
    calibrate->add_option("--output", cal_output,
                          "Where to write the calibrated detector (default: in place)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const json config = load_config(global.config_path);
        config_override(seed_opt, config, "seed", global.seed);
        config_override(out_opt, config, "out", global.out_dir);
        (void)config_opt;

        if (gen->parsed()) {
            config_override(clean_opt, config, "n_clean", n_clean);
            config_override(bd_opt, config, "n_backdoored", n_backdoored);
            if (n_clean < 2) throw CLI::ValidationError("--clean", "must be >= 2");
            return run_gen_corpus(global, config, n_clean, n_backdoored);
        }
        if (fit->parsed()) {
            config_override(fit_corpus_opt, config, "corpus", corpus_path);
            config_override(layer_opt, config, "layer", layer_name);
            config_override(interp_opt, config, "interp", interp_text);
            config_override(retain_opt, config, "retain", retain);
            config_override(fit_count_opt, config, "fit_count", fit_count);
            config_override(candidates_opt, config, "candidates", candidates);
            if (!(retain > 0.0) || retain > 1.0) {
                throw CLI::ValidationError("--retain", "must lie in (0, 1]");
            }
            backscan::DetectorFitConfig fit_config;
            fit_config.layer_name = layer_name;
            fit_config.interpretation = backscan::interpretation_from_string(interp_text);
            fit_config.retain = retain;
            fit_config.candidates = candidates;
            fit_config.seed = global.seed;
            return run_fit(global, corpus_path, fit_config, fit_count);
        }
        if (score->parsed()) {
            return run_score(global, detector_path, record_paths);
        }
        if (eval->parsed()) {
            return run_eval(global, scores_path, eval_detector, eval_corpus, split);
        }
        if (calibrate->parsed()) {
            return run_calibrate(cal_detector, clean_paths, frr, cal_output);
        }
        return kExitUsage;
    } catch (const CLI::Error& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const backscan::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
