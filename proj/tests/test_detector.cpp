#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "backscan/detector.hpp"
#include "backscan/rng.hpp"
#include "oracles.hpp"

using namespace backscan;
namespace fs = std::filesystem;

namespace {

// Corpus of records whose fc layer is drawn around a shared template, so
// the clean distribution is nontrivial but concentrated.
NetworkRecord synthetic_record(Rng& rng, const std::vector<double>& base, std::size_t rows,
                               std::size_t cols, const std::string& id, double jitter = 0.05) {
    NetworkRecord rec;
    rec.network_id = id;
    WeightTensor t;
    t.name = "fc";
    t.shape = {rows, cols};
    t.data.resize(rows * cols);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = base[i] + jitter * rng.normal();
    rec.tensors.push_back(std::move(t));
    return rec;
}

std::vector<double> base_template(Rng& rng, std::size_t n) {
    std::vector<double> base(n);
    for (double& v : base) v = rng.normal();
    return base;
}

DetectorModel unit_detector() {
    // Identity 1-D PCA plus a single standard normal component: the score
    // of the tensor value x is logN(x) - 0 (N_G = 1).
    DetectorModel model;
    model.layer_name = "fc";
    model.interpretation = Interpretation::forward;
    model.pca.input_dim = 1;
    model.pca.mean = {0.0};
    model.pca.components = {{1.0}};
    model.pca.explained_variance = {1.0};
    model.pca.retained_fraction_target = 0.95;
    model.pca.retained_fraction_actual = 1.0;
    model.gmm.n_components = 1;
    model.gmm.dim = 1;
    model.gmm.covariance_kind = CovarianceKind::diagonal;
    model.gmm.weights = {1.0};
    model.gmm.means = {{0.0}};
    model.gmm.covariances = {{1.0}};
    return model;
}

NetworkRecord scalar_record(double x, const std::string& id = "s", Label label = Label::clean) {
    NetworkRecord rec;
    rec.network_id = id;
    rec.label = label;
    if (label == Label::backdoored) rec.metadata[kPoisonSpecIdKey] = id;
    WeightTensor t;
    t.name = "fc";
    t.shape = {1, 1};
    t.data = {x};
    rec.tensors.push_back(std::move(t));
    return rec;
}

fs::path temp_file(const char* tag) {
    static int counter = 0;
    return fs::temp_directory_path() /
           ("backscan_det_" + std::string(tag) + "_" + std::to_string(++counter) + ".json");
}

}  // namespace

TEST_CASE("fit_detector assembles the pipeline and its manifest") {
    Rng rng(1);
    const auto base = base_template(rng, 6 * 4);
    std::vector<NetworkRecord> clean;
    for (int i = 0; i < 8; ++i) {
        clean.push_back(synthetic_record(rng, base, 6, 4, "net_" + std::to_string(i)));
    }

    DetectorFitConfig config;
    config.layer_name = "fc";
    config.interpretation = Interpretation::forward;
    config.retain = 0.95;
    config.seed = 3;
    const DetectorFitResult result = fit_detector(clean, config);

    CHECK(result.model.layer_name == "fc");
    CHECK(result.model.pca.input_dim == 6);  // forward vectors have length R
    CHECK(result.model.gmm.dim == result.model.pca.n_components());
    CHECK(!result.model.threshold.has_value());
    CHECK(result.model.fit_manifest.network_ids.size() == 8);
    CHECK(result.model.fit_manifest.retain == 0.95);
    CHECK(result.model.fit_manifest.seed == 3);
    CHECK(result.model.fit_manifest.selected_n_components == result.sweep.selected_n_components());
    // Default candidates: {1, 2, 5(dropped: > 32 vectors? no), 10, 20, 50, R=6, C=4} dedup+sorted.
    CHECK(result.model.fit_manifest.candidates == std::vector<std::size_t>{1, 2, 4, 5, 6, 10, 20, 50});
}

TEST_CASE("fit_detector validates its corpus") {
    Rng rng(2);
    const auto base = base_template(rng, 4);
    std::vector<NetworkRecord> records;
    records.push_back(synthetic_record(rng, base, 2, 2, "a"));

    DetectorFitConfig config;
    config.layer_name = "fc";
    SUBCASE("one network is not a corpus") {
        CHECK_THROWS_AS(fit_detector(records, config), ValidationError);
    }
    SUBCASE("backdoored records contaminate the fit") {
        records.push_back(synthetic_record(rng, base, 2, 2, "b"));
        records[1].label = Label::backdoored;
        records[1].metadata[kPoisonSpecIdKey] = "b";
        CHECK_THROWS_AS(fit_detector(records, config), ValidationError);
    }
    SUBCASE("layer shape must be consistent") {
        records.push_back(synthetic_record(rng, base_template(rng, 6), 2, 3, "b"));
        CHECK_THROWS_AS(fit_detector(records, config), ValidationError);
    }
    SUBCASE("missing layer is reported") {
        records.push_back(synthetic_record(rng, base, 2, 2, "b"));
        config.layer_name = "nope";
        CHECK_THROWS_AS(fit_detector(records, config), ValidationError);
    }
}

TEST_CASE("a hand-built unit detector reproduces the closed-form score") {
    const DetectorModel model = unit_detector();
    const NetworkScore score = score_network(model, scalar_record(0.0));
    CHECK(score.log_score == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
    CHECK(score.n_vectors == 1);
    CHECK(!score.verdict.has_value());
}

TEST_CASE("scores are bit-identical under feature-vector permutation") {
    Rng rng(5);
    const auto base = base_template(rng, 8 * 5);
    std::vector<NetworkRecord> clean;
    for (int i = 0; i < 6; ++i) {
        clean.push_back(synthetic_record(rng, base, 8, 5, "net_" + std::to_string(i)));
    }
    for (Interpretation interp : {Interpretation::forward, Interpretation::backward}) {
        DetectorFitConfig config;
        config.layer_name = "fc";
        config.interpretation = interp;
        const DetectorModel model = fit_detector(clean, config).model;

        NetworkRecord probe = synthetic_record(rng, base, 8, 5, "probe");
        const double original = score_network(model, probe).log_score;

        // Permute columns (forward) / rows (backward) of the stored matrix.
        WeightTensor& t = probe.tensors[0];
        const WeightTensor copy = t;
        Rng perm_rng(17);
        if (interp == Interpretation::forward) {
            std::vector<std::size_t> perm(5);
            for (std::size_t j = 0; j < 5; ++j) perm[j] = j;
            perm_rng.shuffle(perm);
            for (std::size_t r = 0; r < 8; ++r) {
                for (std::size_t c = 0; c < 5; ++c) t.data[r * 5 + c] = copy.data[r * 5 + perm[c]];
            }
        } else {
            std::vector<std::size_t> perm(8);
            for (std::size_t j = 0; j < 8; ++j) perm[j] = j;
            perm_rng.shuffle(perm);
            for (std::size_t r = 0; r < 8; ++r) {
                for (std::size_t c = 0; c < 5; ++c) t.data[r * 5 + c] = copy.data[perm[r] * 5 + c];
            }
        }
        const double permuted = score_network(model, probe).log_score;
        CHECK(std::bit_cast<std::uint64_t>(permuted) == std::bit_cast<std::uint64_t>(original));
    }
}

TEST_CASE("the score is additive over partitions of the vector multiset") {
    const DetectorModel model = unit_detector();
    Rng rng(9);
    // 1 x 10 layer in backward interpretation? Use forward on a 1 x N matrix:
    // N column vectors of length 1.
    NetworkRecord rec;
    rec.network_id = "part";
    WeightTensor t;
    t.name = "fc";
    t.shape = {1, 10};
    t.data.resize(10);
    for (double& v : t.data) v = rng.normal();
    rec.tensors.push_back(t);
    const double whole = score_network(model, rec).log_score;

    double parts = 0.0;
    for (std::size_t split = 0; split < 10; split += 5) {
        NetworkRecord piece;
        piece.network_id = "piece";
        WeightTensor pt;
        pt.name = "fc";
        pt.shape = {1, 5};
        pt.data.assign(t.data.begin() + split, t.data.begin() + split + 5);
        piece.tensors.push_back(pt);
        parts += score_network(model, piece).log_score;
    }
    CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
}

TEST_CASE("in-sample networks score inside the fitting range") {
    Rng rng(13);
    const auto base = base_template(rng, 6 * 4);
    std::vector<NetworkRecord> clean;
    for (int i = 0; i < 8; ++i) {
        clean.push_back(synthetic_record(rng, base, 6, 4, "net_" + std::to_string(i)));
    }
    DetectorFitConfig config;
    config.layer_name = "fc";
    const DetectorModel model = fit_detector(clean, config).model;

    std::vector<double> fit_scores;
    for (const auto& r : clean) fit_scores.push_back(score_network(model, r).log_score);
    const auto [lo, hi] = std::minmax_element(fit_scores.begin(), fit_scores.end());
    const double again = score_network(model, clean[3]).log_score;
    CHECK(again >= *lo);
    CHECK(again <= *hi);
}

TEST_CASE("roc_from_scores on the forced cases") {
    SUBCASE("perfect separation") {
        const std::vector<double> clean = {2, 3}, bad = {0, 1};
        const RocResult roc = roc_from_scores(clean, bad);
        CHECK(roc.auc == 1.0);
        CHECK(roc.points.front().fpr == 0.0);
        CHECK(roc.points.front().tpr == 0.0);
        CHECK(roc.points.back().fpr == 1.0);
        CHECK(roc.points.back().tpr == 1.0);
    }
    SUBCASE("identical scores") {
        const std::vector<double> clean = {1, 1, 1}, bad = {1, 1};
        CHECK(roc_from_scores(clean, bad).auc == 0.5);
    }
    SUBCASE("single-class input is rejected") {
        CHECK_THROWS_AS(roc_from_scores({}, std::vector<double>{1.0}), ValidationError);
    }
}

TEST_CASE("roc matches the pairwise Mann-Whitney oracle exactly") {
    Rng rng(2025);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n_clean = 1 + rng.uniform_int(30);
        const std::size_t n_bad = 1 + rng.uniform_int(30);
        std::vector<double> clean(n_clean), bad(n_bad);
        // Integer grid forces plenty of ties.
        for (double& v : clean) v = static_cast<double>(rng.uniform_int(8));
        for (double& v : bad) v = static_cast<double>(rng.uniform_int(8)) - 1.0;
        const RocResult roc = roc_from_scores(clean, bad);
        CHECK(roc.auc == oracle::mann_whitney_auc(clean, bad));

        // Points are monotone and the trapezoid of the points equals auc.
        double trap = 0.0;
        for (std::size_t i = 1; i < roc.points.size(); ++i) {
            CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);
            CHECK(roc.points[i].tpr >= roc.points[i - 1].tpr);
            trap += (roc.points[i].fpr - roc.points[i - 1].fpr) *
                    (roc.points[i].tpr + roc.points[i - 1].tpr) / 2.0;
        }
        CHECK(std::abs(trap - roc.auc) < 1e-12);
    }
}

TEST_CASE("AUC is invariant under strictly increasing transforms") {
    Rng rng(31);
    std::vector<double> clean(20), bad(15);
    for (double& v : clean) v = rng.normal();
    for (double& v : bad) v = rng.normal() - 0.5;
    const double before = roc_from_scores(clean, bad).auc;
    auto monotone = [](double x) { return 3.0 * std::atan(x) + x / 7.0; };
    for (double& v : clean) v = monotone(v);
    for (double& v : bad) v = monotone(v);
    CHECK(roc_from_scores(clean, bad).auc == before);
}

TEST_CASE("evaluate needs both classes and scores by record label") {
    const DetectorModel model = unit_detector();
    std::vector<NetworkRecord> test;
    test.push_back(scalar_record(0.1, "c1", Label::clean));
    test.push_back(scalar_record(0.2, "c2", Label::clean));
    CHECK_THROWS_AS(evaluate(model, test), ValidationError);

    test.push_back(scalar_record(5.0, "b1", Label::backdoored));  // far => low score
    const RocResult roc = evaluate(model, test);
    CHECK(roc.auc == 1.0);
}

TEST_CASE("frr threshold follows the lower empirical quantile") {
    const std::vector<double> scores = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CHECK(frr_threshold(scores, 0.1) == 2.0);
    CHECK(frr_threshold(scores, 0.0) == 1.0);
    CHECK(frr_threshold(scores, 0.35) == 4.0);
    CHECK_THROWS_AS(frr_threshold(scores, 1.0), ValidationError);
    CHECK_THROWS_AS(frr_threshold(scores, -0.1), ValidationError);
}

TEST_CASE("calibration sets the threshold and the verdict rule") {
    const DetectorModel model = unit_detector();
    std::vector<NetworkRecord> holdout;
    for (int i = 0; i < 10; ++i) {
        holdout.push_back(scalar_record(0.1 * (i + 1), "c" + std::to_string(i)));
    }

    const CalibrationResult cal = calibrate_threshold(model, holdout, 0.0);
    // frr 0: threshold is the minimum clean score, nothing is rejected.
    std::vector<double> scores;
    for (const auto& r : holdout) scores.push_back(score_network(model, r).log_score);
    CHECK(cal.threshold == *std::min_element(scores.begin(), scores.end()));
    CHECK(cal.realized_frr == 0.0);

    // Every clean holdout network now gets a clean verdict.
    for (const auto& r : holdout) {
        const NetworkScore s = score_network(cal.model, r);
        REQUIRE(s.verdict.has_value());
        CHECK(*s.verdict == Label::clean);
    }
    // A clearly anomalous record is flagged.
    const NetworkScore anomaly = score_network(cal.model, scalar_record(50.0, "x"));
    REQUIRE(anomaly.verdict.has_value());
    CHECK(*anomaly.verdict == Label::backdoored);

    // Contamination is rejected.
    holdout.push_back(scalar_record(0.5, "bd", Label::backdoored));
    CHECK_THROWS_AS(calibrate_threshold(model, holdout, 0.0), ValidationError);
}

TEST_CASE("lowering the threshold never flips a clean verdict to backdoored") {
    DetectorModel model = unit_detector();
    Rng rng(41);
    std::vector<NetworkRecord> probes;
    for (int i = 0; i < 30; ++i) {
        probes.push_back(scalar_record(3.0 * rng.normal(), "p" + std::to_string(i)));
    }
    double t1 = -2.0;
    for (int step = 0; step < 6; ++step) {
        const double t2 = t1 - 0.7;  // lower threshold
        for (const auto& rec : probes) {
            model.threshold = t1;
            const Label at_t1 = *score_network(model, rec).verdict;
            model.threshold = t2;
            const Label at_t2 = *score_network(model, rec).verdict;
            if (at_t1 == Label::clean) CHECK(at_t2 == Label::clean);
        }
        t1 = t2;
    }
}

TEST_CASE("save/load round-trips scores bit-exactly and bytes deterministically") {
    Rng rng(77);
    const auto base = base_template(rng, 6 * 4);
    std::vector<NetworkRecord> clean;
    for (int i = 0; i < 6; ++i) {
        clean.push_back(synthetic_record(rng, base, 6, 4, "net_" + std::to_string(i)));
    }
    DetectorFitConfig config;
    config.layer_name = "fc";
    config.seed = 9;
    DetectorModel model = fit_detector(clean, config).model;
    model.threshold = -123.456789012345678;

    const fs::path p1 = temp_file("a"), p2 = temp_file("b");
    save_detector(p1, model);
    const DetectorModel loaded = load_detector(p1);
    save_detector(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    const NetworkRecord probe = synthetic_record(rng, base, 6, 4, "probe");
    const double s1 = score_network(model, probe).log_score;
    const double s2 = score_network(loaded, probe).log_score;
    CHECK(std::bit_cast<std::uint64_t>(s1) == std::bit_cast<std::uint64_t>(s2));
    CHECK(loaded.threshold.has_value());
    CHECK(*loaded.threshold == *model.threshold);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("detector files with malformed content are rejected") {
    const fs::path path = temp_file("bad");
    std::ofstream(path) << "{ not json";
    CHECK_THROWS_AS(load_detector(path), FormatError);
    std::ofstream(path, std::ios::trunc) << "{\"layer_name\": \"fc\"}";
    CHECK_THROWS_AS(load_detector(path), FormatError);
    fs::remove(path);
}

TEST_CASE("csv reports have the pinned shapes") {
    std::vector<ScoreReportRow> rows(2);
    rows[0].score = {"a", -1.5, 4, Label::clean};
    rows[0].label = Label::clean;
    rows[1].score = {"b", -2.5, 4, std::nullopt};
    rows[1].label = Label::backdoored;

    std::ostringstream scores;
    write_score_csv(scores, rows);
    CHECK(scores.str() == "network_id,label,log_score,n_vectors,verdict\n"
                          "a,clean,-1.5,4,clean\n"
                          "b,backdoored,-2.5,4,\n");

    const RocResult roc = roc_from_scores(std::vector<double>{2, 3}, std::vector<double>{0, 1});
    std::ostringstream roc_csv;
    write_roc_csv(roc_csv, roc);
    const std::string text = roc_csv.str();
    CHECK(text.rfind("auc,1\n") == text.size() - 6);
    CHECK(text.substr(0, 8) == "fpr,tpr\n");
}
