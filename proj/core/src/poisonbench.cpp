#include "backscan/poisonbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "backscan/rng.hpp"

namespace backscan {

namespace {

using nlohmann::json;

constexpr std::size_t kCosineModes = 4;
constexpr std::size_t kMaxModeFrequency = 4;  // p, q drawn from [0, 4)

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void validate(const SyntheticDatasetSpec& spec) {
    if (spec.n_identities < 3) {
        throw ValidationError("dataset spec: n_identities must be >= 3");
    }
    if (spec.image_side < 8) throw ValidationError("dataset spec: image_side must be >= 8");
    if (spec.samples_per_identity == 0) {
        throw ValidationError("dataset spec: samples_per_identity must be positive");
    }
    if (spec.intra_class_noise < 0.0) {
        throw ValidationError("dataset spec: intra_class_noise must be non-negative");
    }
}

std::vector<double> cosine_prototype(std::size_t side, Rng& rng) {
    const std::size_t n_pixels = side * side;
    std::vector<double> proto(n_pixels);
    for (int attempt = 0; attempt < 16; ++attempt) {
        std::fill(proto.begin(), proto.end(), 0.0);
        for (std::size_t m = 0; m < kCosineModes; ++m) {
            const double amp = rng.uniform(-1.0, 1.0);
            const auto p = static_cast<double>(rng.uniform_int(kMaxModeFrequency));
            const auto q = static_cast<double>(rng.uniform_int(kMaxModeFrequency));
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (std::size_t r = 0; r < side; ++r) {
                for (std::size_t c = 0; c < side; ++c) {
                    const double arg = 2.0 * std::numbers::pi *
                                           (p * static_cast<double>(r) + q * static_cast<double>(c)) /
                                           static_cast<double>(side) +
                                       phase;
                    proto[r * side + c] += amp * std::cos(arg);
                }
            }
        }
        const auto [lo_it, hi_it] = std::minmax_element(proto.begin(), proto.end());
        const double lo = *lo_it, hi = *hi_it;
        if (hi - lo > 1e-9) {
            for (double& v : proto) v = 0.2 + 0.6 * (v - lo) / (hi - lo);
            return proto;
        }
        // All drawn modes were constant; redraw.
    }
    throw NumericalError("cosine_prototype: could not draw a non-degenerate prototype");
}

json trigger_to_json(const TriggerSpec& t) {
    return json{{"kind", std::string(to_string(t.kind))},
                {"size", t.size},
                {"value", t.value},
                {"value2", t.value2},
                {"location", json{{"mode", std::string(to_string(t.location.mode))},
                                  {"row", t.location.row},
                                  {"col", t.location.col},
                                  {"seed", t.location.seed}}}};
}

TriggerSpec trigger_from_json(const json& j) {
    TriggerSpec t;
    t.kind = trigger_kind_from_string(j.at("kind").get<std::string>());
    t.size = j.at("size").get<std::size_t>();
    t.value = j.at("value").get<double>();
    t.value2 = j.at("value2").get<double>();
    const json& loc = j.at("location");
    t.location.mode = location_mode_from_string(loc.at("mode").get<std::string>());
    t.location.row = loc.at("row").get<std::size_t>();
    t.location.col = loc.at("col").get<std::size_t>();
    t.location.seed = loc.at("seed").get<std::uint64_t>();
    return t;
}

json poison_to_json(const PoisonSpec& p) {
    return json{{"impostor", p.impostor},
                {"victim", p.victim},
                {"n_poison", p.n_poison},
                {"trigger", trigger_to_json(p.trigger)}};
}

PoisonSpec poison_from_json(const json& j) {
    PoisonSpec p;
    p.impostor = j.at("impostor").get<std::size_t>();
    p.victim = j.at("victim").get<std::size_t>();
    p.n_poison = j.at("n_poison").get<std::size_t>();
    p.trigger = trigger_from_json(j.at("trigger"));
    return p;
}

json dataset_spec_to_json(const SyntheticDatasetSpec& s) {
    return json{{"n_identities", s.n_identities},
                {"samples_per_identity", s.samples_per_identity},
                {"image_side", s.image_side},
                {"intra_class_noise", s.intra_class_noise},
                {"seed", s.seed}};
}

void dataset_spec_from_json(const json& j, SyntheticDatasetSpec& s) {
    s.n_identities = j.value("n_identities", s.n_identities);
    s.samples_per_identity = j.value("samples_per_identity", s.samples_per_identity);
    s.image_side = j.value("image_side", s.image_side);
    s.intra_class_noise = j.value("intra_class_noise", s.intra_class_noise);
    s.seed = j.value("seed", s.seed);
}

json train_config_to_json(const TrainConfig& c) {
    json weights = json::object();
    for (const auto& [cls, w] : c.class_weights) weights[std::to_string(cls)] = w;
    return json{{"hidden_dims", c.hidden_dims},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"adam_betas", json::array({c.beta1, c.beta2})},
                {"adam_eps", c.adam_eps},
                {"class_weights", weights},
                {"split_ratio", c.split_ratio},
                {"seed", c.seed}};
}

void train_config_from_json(const json& j, TrainConfig& c) {
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("adam_betas")) {
        const auto betas = j.at("adam_betas").get<std::vector<double>>();
        if (betas.size() != 2) throw ValidationError("config: adam_betas must have 2 entries");
        c.beta1 = betas[0];
        c.beta2 = betas[1];
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    if (j.contains("class_weights")) {
        c.class_weights.clear();
        for (const auto& [key, value] : j.at("class_weights").items()) {
            c.class_weights[static_cast<std::size_t>(std::stoull(key))] = value.get<double>();
        }
    }
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.seed = j.value("seed", c.seed);
}

json policy_to_json(const PoisonPolicy& p) {
    json kinds = json::array();
    for (TriggerKind k : p.trigger_kinds) kinds.push_back(std::string(to_string(k)));
    json placements = json::array();
    for (TriggerLocation::Mode m : p.placements) placements.push_back(std::string(to_string(m)));
    return json{{"trigger_kinds", kinds},
                {"solid_min_size", p.solid_min_size},
                {"solid_max_size", p.solid_max_size},
                {"checker_min_size", p.checker_min_size},
                {"checker_max_size", p.checker_max_size},
                {"fixed_trigger_size", p.fixed_trigger_size},
                {"placements", placements},
                {"n_poison", p.n_poison},
                {"extra_class_weight", p.extra_class_weight},
                {"min_attack_success", p.min_attack_success}};
}

void policy_from_json(const json& j, PoisonPolicy& p) {
    if (j.contains("trigger_kinds")) {
        p.trigger_kinds.clear();
        for (const auto& k : j.at("trigger_kinds")) {
            p.trigger_kinds.push_back(trigger_kind_from_string(k.get<std::string>()));
        }
    }
    p.solid_min_size = j.value("solid_min_size", p.solid_min_size);
    p.solid_max_size = j.value("solid_max_size", p.solid_max_size);
    p.checker_min_size = j.value("checker_min_size", p.checker_min_size);
    p.checker_max_size = j.value("checker_max_size", p.checker_max_size);
    p.fixed_trigger_size = j.value("fixed_trigger_size", p.fixed_trigger_size);
    if (j.contains("placements")) {
        p.placements.clear();
        for (const auto& m : j.at("placements")) {
            p.placements.push_back(location_mode_from_string(m.get<std::string>()));
        }
    }
    p.n_poison = j.value("n_poison", p.n_poison);
    p.extra_class_weight = j.value("extra_class_weight", p.extra_class_weight);
    p.min_attack_success = j.value("min_attack_success", p.min_attack_success);
}

json pretrain_to_json(const PretrainConfig& p) {
    return json{{"enabled", p.enabled}, {"epochs", p.epochs}};
}

void pretrain_from_json(const json& j, PretrainConfig& p) {
    p.enabled = j.value("enabled", p.enabled);
    p.epochs = j.value("epochs", p.epochs);
}

}  // namespace

std::string_view to_string(TriggerKind kind) {
    return kind == TriggerKind::solid_square ? "solid_square" : "checkerboard";
}

TriggerKind trigger_kind_from_string(std::string_view s) {
    if (s == "solid_square") return TriggerKind::solid_square;
    if (s == "checkerboard") return TriggerKind::checkerboard;
    throw ValidationError("unknown trigger kind: " + std::string(s));
}

std::string_view to_string(TriggerLocation::Mode mode) {
    switch (mode) {
        case TriggerLocation::Mode::explicit_rc: return "explicit";
        case TriggerLocation::Mode::center: return "center";
        case TriggerLocation::Mode::corner_tl: return "corner_tl";
        case TriggerLocation::Mode::corner_br: return "corner_br";
        case TriggerLocation::Mode::random_fixed: return "random_fixed";
    }
    return "center";
}

TriggerLocation::Mode location_mode_from_string(std::string_view s) {
    if (s == "explicit") return TriggerLocation::Mode::explicit_rc;
    if (s == "center") return TriggerLocation::Mode::center;
    if (s == "corner_tl") return TriggerLocation::Mode::corner_tl;
    if (s == "corner_br") return TriggerLocation::Mode::corner_br;
    if (s == "random_fixed") return TriggerLocation::Mode::random_fixed;
    throw ValidationError("unknown trigger location mode: " + std::string(s));
}

LabeledImages generate_dataset(const SyntheticDatasetSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);

    std::vector<std::vector<double>> prototypes;
    prototypes.reserve(spec.n_identities);
    for (std::size_t k = 0; k < spec.n_identities; ++k) {
        prototypes.push_back(cosine_prototype(spec.image_side, rng));
    }

    LabeledImages data;
    data.image_side = spec.image_side;
    data.n_classes = spec.n_identities;
    data.images.reserve(spec.n_identities * spec.samples_per_identity);
    data.labels.reserve(spec.n_identities * spec.samples_per_identity);
    for (std::size_t k = 0; k < spec.n_identities; ++k) {
        for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
            std::vector<double> image = prototypes[k];
            if (spec.intra_class_noise > 0.0) {
                for (double& v : image) {
                    v = std::clamp(v + spec.intra_class_noise * rng.normal(), 0.0, 1.0);
                }
            }
            data.images.push_back(std::move(image));
            data.labels.push_back(k);
        }
    }
    return data;
}

std::pair<LabeledImages, LabeledImages> split_dataset(const LabeledImages& data, double ratio,
                                                      std::uint64_t seed) {
    if (!(ratio > 0.0) || !(ratio < 1.0)) throw ValidationError("split: ratio must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> per_class(data.n_classes);
    for (std::size_t i = 0; i < data.size(); ++i) per_class[data.labels[i]].push_back(i);
    for (std::size_t k = 0; k < data.n_classes; ++k) {
        if (per_class[k].size() < 2) {
            throw ValidationError("split: class " + std::to_string(k) + " has fewer than 2 samples");
        }
    }

    Rng rng(seed);
    LabeledImages train, test;
    train.image_side = test.image_side = data.image_side;
    train.n_classes = test.n_classes = data.n_classes;
    for (std::size_t k = 0; k < data.n_classes; ++k) {
        auto& indices = per_class[k];
        rng.shuffle(indices);
        const auto n_train =
            static_cast<std::size_t>(std::floor(ratio * static_cast<double>(indices.size())));
        for (std::size_t i = 0; i < indices.size(); ++i) {
            LabeledImages& side = i < n_train ? train : test;
            side.images.push_back(data.images[indices[i]]);
            side.labels.push_back(k);
        }
    }
    return {std::move(train), std::move(test)};
}

std::pair<std::size_t, std::size_t> resolve_trigger_origin(const TriggerSpec& trigger,
                                                           std::size_t image_side) {
    if (trigger.size == 0) throw ValidationError("trigger: size must be positive");
    if (trigger.size > image_side) throw ValidationError("trigger does not fit inside the image");
    std::size_t row = 0, col = 0;
    switch (trigger.location.mode) {
        case TriggerLocation::Mode::explicit_rc:
            row = trigger.location.row;
            col = trigger.location.col;
            break;
        case TriggerLocation::Mode::center:
            row = col = (image_side - trigger.size) / 2;
            break;
        case TriggerLocation::Mode::corner_tl:
            row = col = 0;
            break;
        case TriggerLocation::Mode::corner_br:
            row = col = image_side - trigger.size;
            break;
        case TriggerLocation::Mode::random_fixed: {
            Rng rng(trigger.location.seed);
            const std::uint64_t span = image_side - trigger.size + 1;
            row = static_cast<std::size_t>(rng.uniform_int(span));
            col = static_cast<std::size_t>(rng.uniform_int(span));
            break;
        }
    }
    if (row + trigger.size > image_side || col + trigger.size > image_side) {
        throw ValidationError("trigger does not fit inside the image");
    }
    return {row, col};
}

std::vector<double> apply_trigger(const std::vector<double>& image, std::size_t image_side,
                                  const TriggerSpec& trigger) {
    if (image.size() != image_side * image_side) {
        throw ValidationError("apply_trigger: image size does not match image_side");
    }
    const auto [row0, col0] = resolve_trigger_origin(trigger, image_side);
    std::vector<double> out = image;
    for (std::size_t dr = 0; dr < trigger.size; ++dr) {
        for (std::size_t dc = 0; dc < trigger.size; ++dc) {
            double v = trigger.value;
            if (trigger.kind == TriggerKind::checkerboard && (dr + dc) % 2 == 1) {
                v = trigger.value2;
            }
            out[(row0 + dr) * image_side + (col0 + dc)] = v;
        }
    }
    return out;
}

LabeledImages poison_dataset(const LabeledImages& train, const PoisonSpec& spec,
                             std::uint64_t seed) {
    if (spec.impostor == spec.victim) throw ValidationError("poison: impostor equals victim");
    if (spec.impostor >= train.n_classes || spec.victim >= train.n_classes) {
        throw ValidationError("poison: impostor/victim class out of range");
    }
    if (spec.n_poison == 0) throw ValidationError("poison: n_poison must be positive");

    std::vector<std::size_t> impostor_indices;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.labels[i] == spec.impostor) impostor_indices.push_back(i);
    }
    if (spec.n_poison > impostor_indices.size()) {
        throw ValidationError("poison: n_poison " + std::to_string(spec.n_poison) +
                              " exceeds impostor train count " +
                              std::to_string(impostor_indices.size()));
    }

    Rng rng(seed);
    rng.shuffle(impostor_indices);
    impostor_indices.resize(spec.n_poison);
    std::sort(impostor_indices.begin(), impostor_indices.end());

    LabeledImages out = train;
    for (std::size_t idx : impostor_indices) {
        out.images.push_back(apply_trigger(train.images[idx], train.image_side, spec.trigger));
        out.labels.push_back(spec.victim);
    }
    return out;
}

namespace {

std::vector<double> expand_class_weights(const TrainConfig& config, std::size_t n_classes) {
    std::vector<double> class_weights(n_classes, 1.0);
    for (const auto& [cls, w] : config.class_weights) {
        if (cls >= n_classes) throw ValidationError("train config: class weight for unknown class");
        if (!(w > 0.0)) throw ValidationError("train config: class weights must be positive");
        class_weights[cls] = w;
    }
    return class_weights;
}

void check_train_inputs(const LabeledImages& train, const TrainConfig& config) {
    if (train.size() == 0) throw ValidationError("train: empty training set");
    if (config.epochs == 0 || config.batch_size == 0) {
        throw ValidationError("train config: epochs and batch_size must be positive");
    }
}

// Seeded-shuffle minibatch Adam loop; updates net in place.
void run_adam_training(Mlp& net, const std::vector<std::vector<double>>& inputs,
                       const std::vector<std::size_t>& labels,
                       const std::vector<double>& class_weights, const TrainConfig& config,
                       Rng& rng) {
    AdamOptimizer adam(net, config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    MlpGradients grads = MlpGradients::zeros_like(net);

    std::vector<std::size_t> order(inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<std::vector<double>> batch_inputs;
    std::vector<std::size_t> batch_labels;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(start + config.batch_size, order.size());
            batch_inputs.clear();
            batch_labels.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch_inputs.push_back(inputs[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            const double loss =
                weighted_ce_loss_and_gradients(net, batch_inputs, batch_labels, class_weights, grads);
            if (!std::isfinite(loss)) {
                throw NumericalError("training: loss became non-finite at epoch " +
                                     std::to_string(epoch));
            }
            adam.step(net, grads);
        }
    }
}

NetworkRecord package_record(const Mlp& net, const LabeledImages& train, const LabeledImages& test,
                             std::uint64_t seed) {
    NetworkRecord record;
    record.label = Label::clean;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const std::string base = "fc" + std::to_string(l + 1);
        WeightTensor w;
        w.name = base;
        w.dtype = Dtype::f64;
        w.shape = {static_cast<std::uint64_t>(net.fan_in(l)),
                   static_cast<std::uint64_t>(net.layer_dims[l])};
        w.data = net.weights[l];
        record.tensors.push_back(std::move(w));

        WeightTensor b;
        b.name = base + "_bias";
        b.dtype = Dtype::f64;
        b.shape = {static_cast<std::uint64_t>(net.layer_dims[l])};
        b.data = net.biases[l];
        record.tensors.push_back(std::move(b));
    }
    record.metadata["seed"] = std::to_string(seed);
    record.metadata["train_accuracy"] = format_double(accuracy(net, train));
    if (test.size() > 0) record.metadata["test_accuracy"] = format_double(accuracy(net, test));
    return record;
}

}  // namespace

NetworkRecord train_network(const LabeledImages& train, const LabeledImages& test,
                            const TrainConfig& config) {
    check_train_inputs(train, config);
    const std::vector<double> class_weights = expand_class_weights(config, train.n_classes);

    Rng rng(config.seed);
    Mlp net =
        Mlp::init(train.image_side * train.image_side, config.hidden_dims, train.n_classes, rng);
    run_adam_training(net, train.images, train.labels, class_weights, config, rng);

    NetworkRecord record = package_record(net, train, test, config.seed);
    record.metadata["init"] = "random";
    return record;
}

NetworkRecord fine_tune_network(const Mlp& base, const LabeledImages& train,
                                const LabeledImages& test, const TrainConfig& config,
                                bool final_layer_only) {
    check_train_inputs(train, config);
    if (base.n_classes() != train.n_classes) {
        throw ValidationError("fine_tune_network: base has " + std::to_string(base.n_classes()) +
                              " classes, dataset has " + std::to_string(train.n_classes));
    }
    if (base.input_dim != train.image_side * train.image_side) {
        throw ValidationError("fine_tune_network: base input dim does not match images");
    }
    const std::vector<double> class_weights = expand_class_weights(config, train.n_classes);

    Rng rng(config.seed);
    Mlp net = base;
    if (final_layer_only && base.n_layers() > 1) {
        // Frozen extractor: train the head on precomputed features.
        std::vector<std::vector<double>> features;
        features.reserve(train.size());
        for (const auto& image : train.images) features.push_back(base.features(image));

        Mlp head;
        head.input_dim = features.front().size();
        head.layer_dims = {base.n_classes()};
        head.weights = {base.weights.back()};
        head.biases = {base.biases.back()};
        run_adam_training(head, features, train.labels, class_weights, config, rng);
        net.weights.back() = std::move(head.weights[0]);
        net.biases.back() = std::move(head.biases[0]);
    } else {
        run_adam_training(net, train.images, train.labels, class_weights, config, rng);
    }

    NetworkRecord record = package_record(net, train, test, config.seed);
    record.metadata["init"] = "pretrained";
    return record;
}

Mlp mlp_from_record(const NetworkRecord& record) {
    Mlp net;
    std::vector<const WeightTensor*> layers;
    for (std::size_t l = 1;; ++l) {
        const std::string name = "fc" + std::to_string(l);
        const WeightTensor* found = nullptr;
        for (const WeightTensor& t : record.tensors) {
            if (t.name == name) {
                found = &t;
                break;
            }
        }
        if (found == nullptr) break;
        if (found->shape.size() != 2) {
            throw ValidationError("mlp_from_record: tensor '" + name + "' is not 2-D");
        }
        layers.push_back(found);
    }
    if (layers.empty()) throw ValidationError("mlp_from_record: no fc1 tensor found");

    net.input_dim = static_cast<std::size_t>(layers.front()->shape[0]);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::size_t in = static_cast<std::size_t>(layers[l]->shape[0]);
        const std::size_t out = static_cast<std::size_t>(layers[l]->shape[1]);
        if (l > 0 && in != net.layer_dims.back()) {
            throw ValidationError("mlp_from_record: layer shapes do not chain");
        }
        net.layer_dims.push_back(out);
        net.weights.push_back(layers[l]->data);
        std::vector<double> bias(out, 0.0);
        for (const WeightTensor& t : record.tensors) {
            if (t.name == layers[l]->name + "_bias") {
                if (t.data.size() != out) {
                    throw ValidationError("mlp_from_record: bias size mismatch for " +
                                          layers[l]->name);
                }
                bias = t.data;
                break;
            }
        }
        net.biases.push_back(std::move(bias));
    }
    return net;
}

double accuracy(const Mlp& net, const LabeledImages& data) {
    if (data.size() == 0) throw ValidationError("accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (net.predict(data.images[i]) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double attack_success_rate(const NetworkRecord& record, const LabeledImages& test,
                           const PoisonSpec& spec) {
    const Mlp net = mlp_from_record(record);
    std::size_t n_impostor = 0, hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] != spec.impostor) continue;
        ++n_impostor;
        const auto triggered = apply_trigger(test.images[i], test.image_side, spec.trigger);
        if (net.predict(triggered) == spec.victim) ++hits;
    }
    if (n_impostor == 0) throw ValidationError("attack_success_rate: impostor absent from test set");
    return static_cast<double>(hits) / static_cast<double>(n_impostor);
}

CorpusManifest build_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir) {
    if (options.n_clean < 2) throw ValidationError("build_corpus: n_clean must be >= 2");
    validate(options.dataset);
    const PoisonPolicy& policy = options.policy;
    if (policy.solid_min_size == 0 || policy.solid_min_size > policy.solid_max_size ||
        policy.checker_min_size == 0 || policy.checker_min_size > policy.checker_max_size) {
        throw ValidationError("build_corpus: invalid trigger size range");
    }
    if (options.n_backdoored > 0 &&
        (policy.trigger_kinds.empty() || policy.placements.empty())) {
        throw ValidationError("build_corpus: poison policy has no triggers or placements");
    }

    const LabeledImages dataset = generate_dataset(options.dataset);
    std::filesystem::create_directories(out_dir / "records");

    CorpusManifest manifest;
    manifest.options = options;

    std::optional<Mlp> base;
    if (options.pretrain.enabled) {
        const std::uint64_t pretrain_seed = mix_seed(options.seed, 0xBA5E);
        auto [pre_train, pre_test] =
            split_dataset(dataset, options.train.split_ratio, pretrain_seed);
        TrainConfig pre_config = options.train;
        pre_config.class_weights.clear();
        pre_config.epochs = options.pretrain.epochs;
        pre_config.seed = pretrain_seed;
        base = mlp_from_record(train_network(pre_train, pre_test, pre_config));
    }

    auto run_one = [&](const std::string& id, std::uint64_t run_seed,
                       const std::optional<PoisonSpec>& poison, const std::string& group) {
        Rng rng(run_seed);
        const std::uint64_t split_seed = rng.next_u64();
        const std::uint64_t poison_seed = rng.next_u64();
        const std::uint64_t train_seed = rng.next_u64();

        auto [train, test] = split_dataset(dataset, options.train.split_ratio, split_seed);
        TrainConfig config = options.train;
        config.seed = train_seed;
        config.class_weights.clear();

        LabeledImages train_final = std::move(train);
        if (poison.has_value()) {
            train_final = poison_dataset(train_final, *poison, poison_seed);
            config.class_weights[poison->impostor] = options.policy.extra_class_weight;
            config.class_weights[poison->victim] = options.policy.extra_class_weight;
        }

        NetworkRecord record = base.has_value()
                                   ? fine_tune_network(*base, train_final, test, config)
                                   : train_network(train_final, test, config);
        record.network_id = id;

        CorpusRunInfo info;
        info.network_id = id;
        info.seed = run_seed;
        info.file = "records/" + id + ".wsc";
        info.train_accuracy = std::stod(record.metadata.at("train_accuracy"));
        info.test_accuracy = std::stod(record.metadata.at("test_accuracy"));
        info.split_group = group;

        if (poison.has_value()) {
            record.label = Label::backdoored;
            const double asr = attack_success_rate(record, test, *poison);
            info.label = Label::backdoored;
            info.attack_success = asr;
            info.poison = *poison;
            info.valid = asr >= options.policy.min_attack_success;
            record.metadata[kPoisonSpecIdKey] = id;
            record.metadata["impostor"] = std::to_string(poison->impostor);
            record.metadata["victim"] = std::to_string(poison->victim);
            record.metadata["n_poison"] = std::to_string(poison->n_poison);
            record.metadata["trigger_kind"] = std::string(to_string(poison->trigger.kind));
            record.metadata["trigger_size"] = std::to_string(poison->trigger.size);
            const auto [row, col] = resolve_trigger_origin(poison->trigger, dataset.image_side);
            record.metadata["trigger_row"] = std::to_string(row);
            record.metadata["trigger_col"] = std::to_string(col);
            record.metadata["attack_success_rate"] = format_double(asr);
            record.metadata["split_group"] = group;
            if (!info.valid) {
                manifest.warnings.push_back("run " + id + " excluded: attack success rate " +
                                            format_double(asr) + " below " +
                                            format_double(options.policy.min_attack_success));
            }
        }

        write_container(out_dir / info.file, record);
        manifest.runs.push_back(std::move(info));
    };

    for (std::size_t i = 0; i < options.n_clean; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "clean_%03zu", i);
        run_one(id, mix_seed(options.seed, i), std::nullopt, "");
    }

    const std::size_t n_triggers_half = (options.n_backdoored + 1) / 2;
    for (std::size_t j = 0; j < options.n_backdoored; ++j) {
        const std::uint64_t run_seed = mix_seed(options.seed, 0x00B0'0000 + j);
        Rng rng(mix_seed(run_seed, 1));  // backdoor parameter draws

        PoisonSpec poison;
        poison.n_poison = options.policy.n_poison;
        poison.impostor = static_cast<std::size_t>(rng.uniform_int(dataset.n_classes));
        poison.victim = static_cast<std::size_t>(rng.uniform_int(dataset.n_classes - 1));
        if (poison.victim >= poison.impostor) ++poison.victim;

        const bool trigger_half = j < n_triggers_half;
        TriggerSpec& trig = poison.trigger;
        if (trigger_half) {
            const auto& kinds = options.policy.trigger_kinds;
            trig.kind = kinds[static_cast<std::size_t>(rng.uniform_int(kinds.size()))];
            const auto [lo, hi] = trig.kind == TriggerKind::solid_square
                                      ? std::pair{policy.solid_min_size, policy.solid_max_size}
                                      : std::pair{policy.checker_min_size, policy.checker_max_size};
            trig.size = lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
            trig.value = 1.0;
            trig.value2 = 0.0;
            trig.location.mode = TriggerLocation::Mode::center;
        } else {
            trig.kind = TriggerKind::solid_square;
            trig.size = options.policy.fixed_trigger_size;
            trig.value = 1.0;
            const auto& placements = options.policy.placements;
            trig.location.mode =
                placements[static_cast<std::size_t>(rng.uniform_int(placements.size()))];
            if (trig.location.mode == TriggerLocation::Mode::random_fixed) {
                trig.location.seed = rng.next_u64();
            }
        }

        char id[32];
        std::snprintf(id, sizeof(id), "backdoored_%03zu", j);
        run_one(id, run_seed, poison, trigger_half ? "triggers" : "locations");
    }

    save_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
    json runs = json::array();
    for (const CorpusRunInfo& run : manifest.runs) {
        json j{{"network_id", run.network_id},
               {"label", std::string(to_string(run.label))},
               {"seed", run.seed},
               {"file", run.file},
               {"train_accuracy", run.train_accuracy},
               {"test_accuracy", run.test_accuracy},
               {"valid", run.valid}};
        if (run.attack_success.has_value()) j["attack_success_rate"] = *run.attack_success;
        if (run.poison.has_value()) j["poison"] = poison_to_json(*run.poison);
        if (!run.split_group.empty()) j["split_group"] = run.split_group;
        runs.push_back(std::move(j));
    }
    const json doc{{"seed", manifest.options.seed},
                   {"n_clean", manifest.options.n_clean},
                   {"n_backdoored", manifest.options.n_backdoored},
                   {"dataset", dataset_spec_to_json(manifest.options.dataset)},
                   {"train", train_config_to_json(manifest.options.train)},
                   {"pretrain", pretrain_to_json(manifest.options.pretrain)},
                   {"policy", policy_to_json(manifest.options.policy)},
                   {"warnings", manifest.warnings},
                   {"runs", runs}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("manifest: " + std::string(e.what()));
    }
    try {
        CorpusManifest manifest;
        manifest.options.seed = doc.at("seed").get<std::uint64_t>();
        manifest.options.n_clean = doc.at("n_clean").get<std::size_t>();
        manifest.options.n_backdoored = doc.at("n_backdoored").get<std::size_t>();
        dataset_spec_from_json(doc.at("dataset"), manifest.options.dataset);
        train_config_from_json(doc.at("train"), manifest.options.train);
        if (doc.contains("pretrain")) pretrain_from_json(doc.at("pretrain"), manifest.options.pretrain);
        policy_from_json(doc.at("policy"), manifest.options.policy);
        manifest.warnings = doc.value("warnings", std::vector<std::string>{});
        for (const json& j : doc.at("runs")) {
            CorpusRunInfo run;
            run.network_id = j.at("network_id").get<std::string>();
            run.label = label_from_string(j.at("label").get<std::string>());
            run.seed = j.at("seed").get<std::uint64_t>();
            run.file = j.at("file").get<std::string>();
            run.train_accuracy = j.at("train_accuracy").get<double>();
            run.test_accuracy = j.at("test_accuracy").get<double>();
            run.valid = j.at("valid").get<bool>();
            if (j.contains("attack_success_rate")) {
                run.attack_success = j.at("attack_success_rate").get<double>();
            }
            if (j.contains("poison")) run.poison = poison_from_json(j.at("poison"));
            run.split_group = j.value("split_group", std::string{});
            manifest.runs.push_back(std::move(run));
        }
        return manifest;
    } catch (const json::exception& e) {
        throw FormatError("manifest: " + std::string(e.what()));
    }
}

CorpusOptions corpus_options_from_json_text(const std::string& text, CorpusOptions base) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError("config: " + std::string(e.what()));
    }
    try {
        base.n_clean = doc.value("n_clean", base.n_clean);
        base.n_backdoored = doc.value("n_backdoored", base.n_backdoored);
        base.seed = doc.value("seed", base.seed);
        if (doc.contains("dataset")) dataset_spec_from_json(doc.at("dataset"), base.dataset);
        if (doc.contains("train")) train_config_from_json(doc.at("train"), base.train);
        if (doc.contains("pretrain")) pretrain_from_json(doc.at("pretrain"), base.pretrain);
        if (doc.contains("policy")) policy_from_json(doc.at("policy"), base.policy);
        return base;
    } catch (const json::exception& e) {
        throw FormatError("config: " + std::string(e.what()));
    }
}

}  // namespace backscan
