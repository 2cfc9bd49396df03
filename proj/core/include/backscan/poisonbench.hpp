#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "backscan/mlp.hpp"
#include "backscan/weightstore.hpp"

namespace backscan {

struct SyntheticDatasetSpec {
    std::size_t n_identities = 10;
    std::size_t samples_per_identity = 60;
    std::size_t image_side = 16;       // square grayscale, pixels in [0,1]
    double intra_class_noise = 0.08;   // per-pixel Gaussian sigma
    std::uint64_t seed = 1;
};

struct LabeledImages {
    std::size_t image_side = 0;
    std::size_t n_classes = 0;
    std::vector<std::vector<double>> images;
    std::vector<std::size_t> labels;

    std::size_t size() const { return images.size(); }
};

enum class TriggerKind { solid_square, checkerboard };

std::string_view to_string(TriggerKind kind);
TriggerKind trigger_kind_from_string(std::string_view s);

struct TriggerLocation {
    enum class Mode { explicit_rc, center, corner_tl, corner_br, random_fixed };
    Mode mode = Mode::center;
    std::size_t row = 0;        // explicit_rc only
    std::size_t col = 0;
    std::uint64_t seed = 0;     // random_fixed only
};

std::string_view to_string(TriggerLocation::Mode mode);
TriggerLocation::Mode location_mode_from_string(std::string_view s);

struct TriggerSpec {
    TriggerKind kind = TriggerKind::solid_square;
    std::size_t size = 3;      // pixels per side
    double value = 1.0;        // solid fill; checkerboard value at patch origin
    double value2 = 0.0;       // checkerboard alternate value
    TriggerLocation location;
};

// Top-left corner of the patch; throws if the trigger does not fit.
std::pair<std::size_t, std::size_t> resolve_trigger_origin(const TriggerSpec& trigger,
                                                           std::size_t image_side);

struct PoisonSpec {
    std::size_t impostor = 0;
    std::size_t victim = 1;
    TriggerSpec trigger;
    std::size_t n_poison = 30;
};

struct TrainConfig {
    std::vector<std::size_t> hidden_dims = {64};
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double learning_rate = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::map<std::size_t, double> class_weights;  // absent classes weigh 1.0
    double split_ratio = 0.7;
    std::uint64_t seed = 1;
};

// Identity prototypes are sums of a few random-coefficient 2-D cosine
// modes rescaled to [0.2, 0.8]; samples add clamped Gaussian pixel noise.
LabeledImages generate_dataset(const SyntheticDatasetSpec& spec);

// Per-class split: floor(ratio * n) samples to train, rest to test,
// reshuffled per seed.
std::pair<LabeledImages, LabeledImages> split_dataset(const LabeledImages& data, double ratio,
                                                      std::uint64_t seed);

// Returns a copy with the patch pixels overwritten; the input is untouched.
std::vector<double> apply_trigger(const std::vector<double>& image, std::size_t image_side,
                                  const TriggerSpec& trigger);

// Fig-style four-step poisoning: copy n_poison impostor samples (seeded,
// without replacement), apply the trigger, relabel as victim, append.
LabeledImages poison_dataset(const LabeledImages& train, const PoisonSpec& spec,
                             std::uint64_t seed);

// Trains the MLP from a fresh seeded init and packages every weight matrix
// as fc1..fcK (2-D, in x out) plus fc*_bias tensors and accuracy metadata.
// Deterministic given config.seed.
NetworkRecord train_network(const LabeledImages& train, const LabeledImages& test,
                            const TrainConfig& config);

// Continues training from `base` instead of a fresh init; with
// final_layer_only the feature extractor is frozen and only the last
// linear layer is updated. config.seed drives the shuffling only.
NetworkRecord fine_tune_network(const Mlp& base, const LabeledImages& train,
                                const LabeledImages& test, const TrainConfig& config,
                                bool final_layer_only = true);

Mlp mlp_from_record(const NetworkRecord& record);

double accuracy(const Mlp& net, const LabeledImages& data);

// Fraction of impostor test samples classified as the victim once the
// trigger is applied.
double attack_success_rate(const NetworkRecord& record, const LabeledImages& test,
                           const PoisonSpec& spec);

// Small solid squares and large checkerboards; checkerboards need the
// extra area to register through the frozen feature extractor.
struct PoisonPolicy {
    std::vector<TriggerKind> trigger_kinds = {TriggerKind::solid_square,
                                              TriggerKind::checkerboard};
    std::size_t solid_min_size = 4;
    std::size_t solid_max_size = 5;
    std::size_t checker_min_size = 6;
    std::size_t checker_max_size = 8;
    std::size_t fixed_trigger_size = 4;  // locations half uses this solid square
    std::vector<TriggerLocation::Mode> placements = {
        TriggerLocation::Mode::center, TriggerLocation::Mode::corner_tl,
        TriggerLocation::Mode::corner_br, TriggerLocation::Mode::random_fixed};
    std::size_t n_poison = 30;
    double extra_class_weight = 2.0;     // impostor and victim classes
    double min_attack_success = 0.5;     // records below are flagged invalid
};

// One network trained on the clean dataset whose weights seed every corpus
// run; runs then differ only through their split/shuffle randomness.
struct PretrainConfig {
    bool enabled = true;
    std::size_t epochs = 40;
};

struct CorpusRunInfo {
    std::string network_id;
    Label label = Label::clean;
    std::uint64_t seed = 0;
    std::string file;  // relative to the manifest directory
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::optional<double> attack_success;
    std::optional<PoisonSpec> poison;
    std::string split_group;  // "triggers" or "locations" for backdoored runs
    bool valid = true;
};

struct CorpusOptions {
    std::size_t n_clean = 30;
    std::size_t n_backdoored = 22;
    SyntheticDatasetSpec dataset;
    TrainConfig train;
    PretrainConfig pretrain;
    PoisonPolicy policy;
    std::uint64_t seed = 1;
};

struct CorpusManifest {
    CorpusOptions options;
    std::vector<CorpusRunInfo> runs;
    std::vector<std::string> warnings;
};

// Trains the full corpus, writes one container file per run under
// out_dir/records/ plus out_dir/manifest.json, and returns the manifest.
// With pretraining enabled (default) one base network is trained first
// and every run fine-tunes its final layer on a freshly resampled,
// possibly poisoned split. Backdoored runs are split into a
// trigger-varying half and a location-varying half. Fully deterministic
// given options.seed.
CorpusManifest build_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir);

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::filesystem::path& path);

// Parses a JSON configuration document with optional sections
// {"n_clean", "n_backdoored", "seed", "dataset": {...}, "train": {...},
// "policy": {...}}; keys that are absent keep the values from `base`.
CorpusOptions corpus_options_from_json_text(const std::string& text, CorpusOptions base = {});

}  // namespace backscan
