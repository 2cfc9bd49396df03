#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "backscan/rng.hpp"

namespace backscan {

// Flattened-image classifier: input -> hidden layers with ReLU -> linear
// head. Weight matrices are (in x out) row-major; forward is y = xW + b.
struct Mlp {
    std::size_t input_dim = 0;
    std::vector<std::size_t> layer_dims;        // hidden dims..., n_classes
    std::vector<std::vector<double>> weights;   // one (in x out) matrix per layer
    std::vector<std::vector<double>> biases;

    // Scaled uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static Mlp init(std::size_t input_dim, std::span<const std::size_t> hidden_dims,
                    std::size_t n_classes, Rng& rng);

    std::size_t n_layers() const { return layer_dims.size(); }
    std::size_t n_classes() const { return layer_dims.back(); }
    std::size_t fan_in(std::size_t layer) const {
        return layer == 0 ? input_dim : layer_dims[layer - 1];
    }

    std::vector<double> logits(std::span<const double> x) const;
    std::size_t predict(std::span<const double> x) const;

    // Activations feeding the final layer; the input itself for
    // single-layer networks.
    std::vector<double> features(std::span<const double> x) const;
};

struct MlpGradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    static MlpGradients zeros_like(const Mlp& net);
};

// Batch-mean weighted softmax cross-entropy:
//   (1/B) * sum_i class_weights[y_i] * (-log softmax(logits_i)[y_i]).
double weighted_ce_loss(const Mlp& net, std::span<const std::vector<double>> inputs,
                        std::span<const std::size_t> labels,
                        std::span<const double> class_weights);

// Same loss, plus analytical gradients via backpropagation.
double weighted_ce_loss_and_gradients(const Mlp& net, std::span<const std::vector<double>> inputs,
                                      std::span<const std::size_t> labels,
                                      std::span<const double> class_weights, MlpGradients& grads);

// Adam with bias correction, no weight decay.
class AdamOptimizer {
public:
    AdamOptimizer(const Mlp& net, double learning_rate, double beta1, double beta2, double eps);
    void step(Mlp& net, const MlpGradients& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_w_, v_w_, m_b_, v_b_;
};

}  // namespace backscan
