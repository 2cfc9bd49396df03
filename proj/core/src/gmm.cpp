#include "backscan/gmm.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "backscan/rng.hpp"

namespace backscan {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112353;
constexpr double kCollapseWeight = 1e-12;
constexpr double kMonotonicitySlack = 1e-9;

// Per-component quantities precomputed for density evaluation.
struct ComponentEvaluator {
    double log_weight = 0.0;
    double log_norm_const = 0.0;             // -0.5 * (B log 2pi + log det Sigma)
    std::vector<double> inv_var;              // diagonal / spherical precision
    Eigen::LLT<Eigen::MatrixXd> chol;         // full covariance only
    const std::vector<double>* mean = nullptr;
    CovarianceKind kind = CovarianceKind::diagonal;
    std::size_t dim = 0;

    double log_gaussian(std::span<const double> x) const {
        double quad = 0.0;
        switch (kind) {
            case CovarianceKind::spherical: {
                const double inv = inv_var[0];
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = x[d] - (*mean)[d];
                    quad += diff * diff;
                }
                quad *= inv;
                break;
            }
            case CovarianceKind::diagonal: {
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = x[d] - (*mean)[d];
                    quad += diff * diff * inv_var[d];
                }
                break;
            }
            case CovarianceKind::full: {
                Eigen::VectorXd diff(static_cast<Eigen::Index>(dim));
                for (std::size_t d = 0; d < dim; ++d) diff(static_cast<Eigen::Index>(d)) = x[d] - (*mean)[d];
                const Eigen::VectorXd solved = chol.matrixL().solve(diff);
                quad = solved.squaredNorm();
                break;
            }
        }
        return log_norm_const - 0.5 * quad;
    }
};

std::vector<ComponentEvaluator> build_evaluators(const GmmModel& model) {
    std::vector<ComponentEvaluator> evals(model.n_components);
    for (std::size_t i = 0; i < model.n_components; ++i) {
        ComponentEvaluator& e = evals[i];
        e.kind = model.covariance_kind;
        e.dim = model.dim;
        e.mean = &model.means[i];
        e.log_weight = std::log(std::max(model.weights[i], kCollapseWeight));
        const std::vector<double>& cov = model.covariances[i];
        switch (model.covariance_kind) {
            case CovarianceKind::spherical: {
                const double var = cov[0];
                e.inv_var = {1.0 / var};
                e.log_norm_const =
                    -0.5 * static_cast<double>(model.dim) * (kLog2Pi + std::log(var));
                break;
            }
            case CovarianceKind::diagonal: {
                e.inv_var.resize(model.dim);
                double log_det = 0.0;
                for (std::size_t d = 0; d < model.dim; ++d) {
                    e.inv_var[d] = 1.0 / cov[d];
                    log_det += std::log(cov[d]);
                }
                e.log_norm_const = -0.5 * (static_cast<double>(model.dim) * kLog2Pi + log_det);
                break;
            }
            case CovarianceKind::full: {
                const auto n = static_cast<Eigen::Index>(model.dim);
                Eigen::MatrixXd sigma(n, n);
                for (Eigen::Index r = 0; r < n; ++r) {
                    for (Eigen::Index c = 0; c < n; ++c) {
                        sigma(r, c) = cov[static_cast<std::size_t>(r * n + c)];
                    }
                }
                e.chol.compute(sigma);
                if (e.chol.info() != Eigen::Success) {
                    throw NumericalError("full covariance is not positive definite");
                }
                double log_det = 0.0;
                for (Eigen::Index d = 0; d < n; ++d) {
                    log_det += 2.0 * std::log(e.chol.matrixLLT()(d, d));
                }
                e.log_norm_const = -0.5 * (static_cast<double>(model.dim) * kLog2Pi + log_det);
                break;
            }
        }
    }
    return evals;
}

double log_sum_exp(std::span<const double> values) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) hi = std::max(hi, v);
    if (!std::isfinite(hi)) return hi;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - hi);
    return hi + std::log(acc);
}

void check_dim(const GmmModel& model, std::size_t dim, const char* what) {
    if (dim != model.dim) {
        throw ValidationError(std::string(what) + ": dim " + std::to_string(dim) +
                              " does not match model dim " + std::to_string(model.dim));
    }
}

std::vector<std::size_t> kmeanspp_indices(const std::vector<std::vector<double>>& points,
                                          std::size_t k, Rng& rng) {
    const std::size_t n = points.size();
    const std::size_t dim = points.front().size();
    std::vector<std::size_t> chosen;
    chosen.reserve(k);
    chosen.push_back(static_cast<std::size_t>(rng.uniform_int(n)));

    std::vector<double> dist2(n);
    auto sq_dist = [dim](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = a[d] - b[d];
            s += diff * diff;
        }
        return s;
    };
    for (std::size_t j = 0; j < n; ++j) dist2[j] = sq_dist(points[j], points[chosen[0]]);

    while (chosen.size() < k) {
        double total = 0.0;
        for (double d : dist2) total += d;
        std::size_t idx;
        if (total > 0.0) {
            double u = rng.uniform01() * total;
            idx = n - 1;
            for (std::size_t j = 0; j < n; ++j) {
                u -= dist2[j];
                if (u < 0.0) {
                    idx = j;
                    break;
                }
            }
        } else {
            // All remaining mass at already-chosen points (duplicated data).
            idx = static_cast<std::size_t>(rng.uniform_int(n));
        }
        chosen.push_back(idx);
        for (std::size_t j = 0; j < n; ++j) dist2[j] = std::min(dist2[j], sq_dist(points[j], points[idx]));
    }
    return chosen;
}

std::vector<double> global_variance(const std::vector<std::vector<double>>& points) {
    const std::size_t n = points.size();
    const std::size_t dim = points.front().size();
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (const auto& p : points) {
        for (std::size_t d = 0; d < dim; ++d) mean[d] += p[d];
    }
    for (std::size_t d = 0; d < dim; ++d) mean[d] /= static_cast<double>(n);
    for (const auto& p : points) {
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = p[d] - mean[d];
            var[d] += diff * diff;
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        var[d] = std::max(var[d] / static_cast<double>(n), kVarianceFloor);
    }
    return var;
}

std::vector<double> initial_covariance(CovarianceKind kind, const std::vector<double>& var) {
    const std::size_t dim = var.size();
    switch (kind) {
        case CovarianceKind::spherical: {
            double avg = 0.0;
            for (double v : var) avg += v;
            return {std::max(avg / static_cast<double>(dim), kVarianceFloor)};
        }
        case CovarianceKind::diagonal:
            return var;
        case CovarianceKind::full: {
            std::vector<double> cov(dim * dim, 0.0);
            for (std::size_t d = 0; d < dim; ++d) cov[d * dim + d] = var[d];
            return cov;
        }
    }
    return {};
}

void floor_covariance(CovarianceKind kind, std::size_t dim, std::vector<double>& cov) {
    switch (kind) {
        case CovarianceKind::spherical:
            cov[0] = std::max(cov[0], kVarianceFloor);
            break;
        case CovarianceKind::diagonal:
            for (double& v : cov) v = std::max(v, kVarianceFloor);
            break;
        case CovarianceKind::full:
            for (std::size_t d = 0; d < dim; ++d) {
                double& v = cov[d * dim + d];
                v = std::max(v, kVarianceFloor);
            }
            break;
    }
}

}  // namespace

std::string_view to_string(CovarianceKind kind) {
    switch (kind) {
        case CovarianceKind::spherical: return "spherical";
        case CovarianceKind::diagonal: return "diagonal";
        case CovarianceKind::full: return "full";
    }
    return "diagonal";
}

CovarianceKind covariance_kind_from_string(std::string_view s) {
    if (s == "spherical") return CovarianceKind::spherical;
    if (s == "diagonal") return CovarianceKind::diagonal;
    if (s == "full") return CovarianceKind::full;
    throw ValidationError("unknown covariance kind: " + std::string(s));
}

GmmModel fit_gmm(const FeatureVectorSet& data, std::size_t n_components, std::uint64_t seed,
                 const GmmFitOptions& options) {
    const std::size_t n = data.size();
    const std::size_t dim = data.dim;
    if (n_components == 0) throw ValidationError("fit_gmm: n_components must be positive");
    if (dim == 0) throw ValidationError("fit_gmm: zero-dimensional data");
    if (n < n_components) {
        throw NumericalError("fit_gmm: " + std::to_string(n) + " vectors are too few for " +
                             std::to_string(n_components) + " components");
    }

    const auto& points = data.vectors;
    Rng rng(seed);

    GmmModel model;
    model.n_components = n_components;
    model.dim = dim;
    model.covariance_kind = options.covariance_kind;
    model.fit_log.seed = seed;

    const std::vector<double> init_var = global_variance(points);
    const std::vector<double> init_cov = initial_covariance(options.covariance_kind, init_var);
    const auto seeds = kmeanspp_indices(points, n_components, rng);
    model.weights.assign(n_components, 1.0 / static_cast<double>(n_components));
    model.means.resize(n_components);
    model.covariances.assign(n_components, init_cov);
    for (std::size_t i = 0; i < n_components; ++i) model.means[i] = points[seeds[i]];

    std::vector<std::size_t> reseed_count(n_components, 0);
    std::vector<double> resp(n * n_components);
    std::vector<double> point_logp(n_components);
    double prev_ll = -std::numeric_limits<double>::infinity();
    bool reseeded_last_iter = false;

    const std::size_t k = n_components;
    for (std::size_t iter = 1; iter <= options.max_iter; ++iter) {
        // E-step.
        const auto evals = build_evaluators(model);
        double ll = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < k; ++i) {
                point_logp[i] = evals[i].log_weight + evals[i].log_gaussian(points[j]);
            }
            const double lse = log_sum_exp(point_logp);
            ll += lse;
            for (std::size_t i = 0; i < k; ++i) resp[j * k + i] = std::exp(point_logp[i] - lse);
        }
        if (!std::isfinite(ll)) throw NumericalError("fit_gmm: log-likelihood became non-finite");
        model.fit_log.log_likelihood_trace.push_back(ll);
        model.fit_log.iterations = iter;
        model.fit_log.final_log_likelihood = ll;

        if (iter > 1 && !reseeded_last_iter) {
            if (ll < prev_ll - kMonotonicitySlack) {
                throw NumericalError("fit_gmm: EM log-likelihood decreased");
            }
            const double improvement = ll - prev_ll;
            if (improvement <= options.tol * std::max(1.0, std::abs(prev_ll))) {
                model.fit_log.converged = true;
                return model;
            }
        }
        prev_ll = ll;
        reseeded_last_iter = false;

        // M-step.
        std::vector<double> mass(k, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < k; ++i) mass[i] += resp[j * k + i];
        }
        bool collapsed = false;
        for (std::size_t i = 0; i < k; ++i) {
            if (mass[i] / static_cast<double>(n) < kCollapseWeight) {
                if (reseed_count[i] >= 1) {
                    throw NumericalError("fit_gmm: component " + std::to_string(i) +
                                         " collapsed twice");
                }
                ++reseed_count[i];
                ++model.fit_log.reseeds;
                model.means[i] = points[static_cast<std::size_t>(rng.uniform_int(n))];
                model.covariances[i] = init_cov;
                collapsed = true;
            }
        }
        if (collapsed) {
            // Restart the collapsed components with uniform share of weight
            // and keep the rest proportional.
            double surviving = 0.0;
            for (std::size_t i = 0; i < k; ++i) surviving += mass[i];
            for (std::size_t i = 0; i < k; ++i) {
                const bool fresh = mass[i] / static_cast<double>(n) < kCollapseWeight;
                model.weights[i] = fresh ? 1.0 / static_cast<double>(k)
                                         : (mass[i] / surviving) * (1.0 - 1.0 / static_cast<double>(k));
            }
            double total_w = 0.0;
            for (double w : model.weights) total_w += w;
            for (double& w : model.weights) w /= total_w;
            reseeded_last_iter = true;
            continue;
        }

        for (std::size_t i = 0; i < k; ++i) {
            model.weights[i] = mass[i] / static_cast<double>(n);
            auto& mu = model.means[i];
            std::fill(mu.begin(), mu.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double r = resp[j * k + i];
                const auto& x = points[j];
                for (std::size_t d = 0; d < dim; ++d) mu[d] += r * x[d];
            }
            for (std::size_t d = 0; d < dim; ++d) mu[d] /= mass[i];

            auto& cov = model.covariances[i];
            switch (options.covariance_kind) {
                case CovarianceKind::spherical: {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double r = resp[j * k + i];
                        const auto& x = points[j];
                        for (std::size_t d = 0; d < dim; ++d) {
                            const double diff = x[d] - mu[d];
                            acc += r * diff * diff;
                        }
                    }
                    cov[0] = acc / (mass[i] * static_cast<double>(dim));
                    break;
                }
                case CovarianceKind::diagonal: {
                    std::fill(cov.begin(), cov.end(), 0.0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double r = resp[j * k + i];
                        const auto& x = points[j];
                        for (std::size_t d = 0; d < dim; ++d) {
                            const double diff = x[d] - mu[d];
                            cov[d] += r * diff * diff;
                        }
                    }
                    for (std::size_t d = 0; d < dim; ++d) cov[d] /= mass[i];
                    break;
                }
                case CovarianceKind::full: {
                    std::fill(cov.begin(), cov.end(), 0.0);
                    std::vector<double> diff(dim);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double r = resp[j * k + i];
                        const auto& x = points[j];
                        for (std::size_t d = 0; d < dim; ++d) diff[d] = x[d] - mu[d];
                        for (std::size_t a = 0; a < dim; ++a) {
                            const double ra = r * diff[a];
                            for (std::size_t b = 0; b < dim; ++b) cov[a * dim + b] += ra * diff[b];
                        }
                    }
                    for (double& v : cov) v /= mass[i];
                    break;
                }
            }
            floor_covariance(options.covariance_kind, dim, cov);
        }
    }

    // max_iter exhausted: report the likelihood of the final parameters.
    const double final_ll = total_log_likelihood(model, data);
    model.fit_log.log_likelihood_trace.push_back(final_ll);
    model.fit_log.final_log_likelihood = final_ll;
    model.fit_log.converged = false;
    return model;
}

double log_density(const GmmModel& model, std::span<const double> x) {
    check_dim(model, x.size(), "log_density");
    const auto evals = build_evaluators(model);
    std::vector<double> logp(model.n_components);
    for (std::size_t i = 0; i < model.n_components; ++i) {
        logp[i] = evals[i].log_weight + evals[i].log_gaussian(x);
    }
    return log_sum_exp(logp) - std::log(static_cast<double>(model.n_components));
}

double total_log_likelihood(const GmmModel& model, const FeatureVectorSet& data) {
    check_dim(model, data.dim, "total_log_likelihood");
    const auto evals = build_evaluators(model);
    std::vector<double> logp(model.n_components);
    double total = 0.0;
    for (const auto& x : data.vectors) {
        for (std::size_t i = 0; i < model.n_components; ++i) {
            logp[i] = evals[i].log_weight + evals[i].log_gaussian(x);
        }
        total += log_sum_exp(logp);
    }
    return total;
}

double aic(const GmmModel& model, const FeatureVectorSet& data) {
    check_dim(model, data.dim, "aic");
    const double b = static_cast<double>(model.dim);
    const double g = static_cast<double>(model.n_components);
    double cov_params = 0.0;
    switch (model.covariance_kind) {
        case CovarianceKind::spherical: cov_params = 1.0; break;
        case CovarianceKind::diagonal: cov_params = b; break;
        case CovarianceKind::full: cov_params = b * (b + 1.0) / 2.0; break;
    }
    const double k = (g - 1.0) + g * b + g * cov_params;
    return 2.0 * k - 2.0 * total_log_likelihood(model, data);
}

SweepResult sweep_components(const FeatureVectorSet& data, std::span<const std::size_t> candidates,
                             std::uint64_t seed, const GmmFitOptions& options) {
    if (candidates.empty()) throw ValidationError("sweep_components: no candidates");

    SweepResult result;
    for (std::size_t idx = 0; idx < candidates.size(); ++idx) {
        const std::size_t k = candidates[idx];
        if (k > data.size()) {
            std::ostringstream msg;
            msg << "skipping n_components=" << k << ": only " << data.size() << " vectors";
            result.warnings.push_back(msg.str());
            continue;
        }
        SweepEntry entry;
        entry.n_components = k;
        entry.model = fit_gmm(data, k, seed + idx, options);
        entry.aic = aic(entry.model, data);
        result.entries.push_back(std::move(entry));
    }
    if (result.entries.empty()) {
        throw NumericalError("sweep_components: every candidate exceeded the data size");
    }
    result.selected_index = 0;
    for (std::size_t i = 1; i < result.entries.size(); ++i) {
        const auto& cur = result.entries[i];
        const auto& best = result.entries[result.selected_index];
        if (cur.aic < best.aic ||
            (cur.aic == best.aic && cur.n_components < best.n_components)) {
            result.selected_index = i;
        }
    }
    return result;
}

}  // namespace backscan
