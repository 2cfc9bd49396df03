#include "backscan/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "backscan/errors.hpp"

namespace backscan {

namespace {

// Forward pass keeping pre-activations and activations for backprop.
struct ForwardTrace {
    std::vector<std::vector<double>> pre;   // z_l per layer
    std::vector<std::vector<double>> act;   // a_l per layer (last = logits)
};

void forward_into(const Mlp& net, std::span<const double> x, ForwardTrace& trace) {
    const std::size_t n_layers = net.n_layers();
    trace.pre.resize(n_layers);
    trace.act.resize(n_layers);
    std::span<const double> input = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t in = net.fan_in(l);
        const std::size_t out = net.layer_dims[l];
        auto& z = trace.pre[l];
        z.assign(net.biases[l].begin(), net.biases[l].end());
        const auto& w = net.weights[l];
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = input[i];
            if (xi == 0.0) continue;
            const double* row = w.data() + i * out;
            for (std::size_t j = 0; j < out; ++j) z[j] += xi * row[j];
        }
        auto& a = trace.act[l];
        a = z;
        if (l + 1 < n_layers) {
            for (double& v : a) v = std::max(v, 0.0);
        }
        input = a;
    }
}

// log softmax(logits)[label] via log-sum-exp.
double log_prob_of(std::span<const double> logits, std::size_t label) {
    double hi = logits[0];
    for (double v : logits) hi = std::max(hi, v);
    double acc = 0.0;
    for (double v : logits) acc += std::exp(v - hi);
    return logits[label] - hi - std::log(acc);
}

}  // namespace

Mlp Mlp::init(std::size_t input_dim, std::span<const std::size_t> hidden_dims,
              std::size_t n_classes, Rng& rng) {
    if (input_dim == 0 || n_classes == 0) throw ValidationError("Mlp::init: zero-sized layer");
    Mlp net;
    net.input_dim = input_dim;
    net.layer_dims.assign(hidden_dims.begin(), hidden_dims.end());
    net.layer_dims.push_back(n_classes);
    for (std::size_t d : net.layer_dims) {
        if (d == 0) throw ValidationError("Mlp::init: zero-sized layer");
    }
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const std::size_t in = net.fan_in(l);
        const std::size_t out = net.layer_dims[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        auto& w = net.weights.emplace_back(in * out);
        for (double& v : w) v = rng.uniform(-bound, bound);
        auto& b = net.biases.emplace_back(out);
        for (double& v : b) v = rng.uniform(-bound, bound);
    }
    return net;
}

std::vector<double> Mlp::logits(std::span<const double> x) const {
    if (x.size() != input_dim) throw ValidationError("Mlp::logits: input dim mismatch");
    ForwardTrace trace;
    forward_into(*this, x, trace);
    return trace.act.back();
}

std::size_t Mlp::predict(std::span<const double> x) const {
    const auto scores = logits(x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.size(); ++c) {
        if (scores[c] > scores[best]) best = c;
    }
    return best;
}

std::vector<double> Mlp::features(std::span<const double> x) const {
    if (x.size() != input_dim) throw ValidationError("Mlp::features: input dim mismatch");
    if (n_layers() == 1) return {x.begin(), x.end()};
    ForwardTrace trace;
    forward_into(*this, x, trace);
    return trace.act[n_layers() - 2];
}

MlpGradients MlpGradients::zeros_like(const Mlp& net) {
    MlpGradients g;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        g.weights.emplace_back(net.weights[l].size(), 0.0);
        g.biases.emplace_back(net.biases[l].size(), 0.0);
    }
    return g;
}

double weighted_ce_loss(const Mlp& net, std::span<const std::vector<double>> inputs,
                        std::span<const std::size_t> labels,
                        std::span<const double> class_weights) {
    if (inputs.empty() || inputs.size() != labels.size()) {
        throw ValidationError("weighted_ce_loss: empty or mismatched batch");
    }
    ForwardTrace trace;
    double total = 0.0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        forward_into(net, inputs[s], trace);
        total += class_weights[labels[s]] * (-log_prob_of(trace.act.back(), labels[s]));
    }
    return total / static_cast<double>(inputs.size());
}

double weighted_ce_loss_and_gradients(const Mlp& net, std::span<const std::vector<double>> inputs,
                                      std::span<const std::size_t> labels,
                                      std::span<const double> class_weights, MlpGradients& grads) {
    if (inputs.empty() || inputs.size() != labels.size()) {
        throw ValidationError("weighted_ce_loss_and_gradients: empty or mismatched batch");
    }
    const std::size_t n_layers = net.n_layers();
    const double inv_batch = 1.0 / static_cast<double>(inputs.size());
    for (auto& w : grads.weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : grads.biases) std::fill(b.begin(), b.end(), 0.0);

    ForwardTrace trace;
    std::vector<double> delta, delta_prev;
    double total = 0.0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        const auto& x = inputs[s];
        const std::size_t y = labels[s];
        forward_into(net, x, trace);
        const auto& logits = trace.act.back();
        total += class_weights[y] * (-log_prob_of(logits, y));

        // d loss / d logits = (w_y / B) * (softmax - onehot)
        double hi = logits[0];
        for (double v : logits) hi = std::max(hi, v);
        double z = 0.0;
        for (double v : logits) z += std::exp(v - hi);
        delta.resize(logits.size());
        const double scale = class_weights[y] * inv_batch;
        for (std::size_t c = 0; c < logits.size(); ++c) {
            delta[c] = scale * (std::exp(logits[c] - hi) / z - (c == y ? 1.0 : 0.0));
        }

        for (std::size_t l = n_layers; l-- > 0;) {
            const std::size_t in = net.fan_in(l);
            const std::size_t out = net.layer_dims[l];
            std::span<const double> act_in = l == 0 ? std::span<const double>(x) : trace.act[l - 1];
            auto& gw = grads.weights[l];
            auto& gb = grads.biases[l];
            for (std::size_t j = 0; j < out; ++j) gb[j] += delta[j];
            for (std::size_t i = 0; i < in; ++i) {
                const double ai = act_in[i];
                if (ai == 0.0) continue;
                double* row = gw.data() + i * out;
                for (std::size_t j = 0; j < out; ++j) row[j] += ai * delta[j];
            }
            if (l == 0) break;
            delta_prev.assign(in, 0.0);
            const auto& w = net.weights[l];
            for (std::size_t i = 0; i < in; ++i) {
                if (trace.pre[l - 1][i] <= 0.0) continue;  // ReLU gate
                const double* row = w.data() + i * out;
                double acc = 0.0;
                for (std::size_t j = 0; j < out; ++j) acc += row[j] * delta[j];
                delta_prev[i] = acc;
            }
            delta.swap(delta_prev);
        }
    }
    return total * inv_batch;
}

AdamOptimizer::AdamOptimizer(const Mlp& net, double learning_rate, double beta1, double beta2,
                             double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        m_w_.emplace_back(net.weights[l].size(), 0.0);
        v_w_.emplace_back(net.weights[l].size(), 0.0);
        m_b_.emplace_back(net.biases[l].size(), 0.0);
        v_b_.emplace_back(net.biases[l].size(), 0.0);
    }
}

void AdamOptimizer::step(Mlp& net, const MlpGradients& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](std::vector<double>& theta, std::vector<double>& m, std::vector<double>& v,
                      const std::vector<double>& g) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            theta[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    };
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        update(net.weights[l], m_w_[l], v_w_[l], grads.weights[l]);
        update(net.biases[l], m_b_[l], v_b_[l], grads.biases[l]);
    }
}

}  // namespace backscan
