#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "backscan/vectorize.hpp"

namespace backscan {

enum class CovarianceKind { spherical, diagonal, full };

std::string_view to_string(CovarianceKind kind);
CovarianceKind covariance_kind_from_string(std::string_view s);

// Variances never drop below this floor; keeps every component density
// finite and positive definite.
inline constexpr double kVarianceFloor = 1e-6;

struct GmmFitLog {
    std::size_t iterations = 0;
    double final_log_likelihood = 0.0;
    bool converged = false;
    std::uint64_t seed = 0;
    std::size_t reseeds = 0;  // collapsed components restarted
    // Per-iteration training log-likelihood; transient (not persisted).
    std::vector<double> log_likelihood_trace;
};

struct GmmModel {
    std::size_t n_components = 0;
    std::size_t dim = 0;
    CovarianceKind covariance_kind = CovarianceKind::diagonal;
    std::vector<double> weights;                     // n_components, sums to 1
    std::vector<std::vector<double>> means;          // n_components x dim
    // Covariance descriptor per component:
    //   spherical -> 1 value, diagonal -> dim values, full -> dim*dim row-major.
    std::vector<std::vector<double>> covariances;
    GmmFitLog fit_log;
};

struct GmmFitOptions {
    CovarianceKind covariance_kind = CovarianceKind::diagonal;
    std::size_t max_iter = 200;
    double tol = 1e-6;  // relative change in total log-likelihood
};

// Expectation-maximization with k-means++-style seeding of the means,
// uniform initial weights and global per-coordinate initial variances.
// Deterministic given (data, n_components, seed, options). A component
// whose weight collapses below 1e-12 is re-seeded from a random data point
// once; a second collapse raises an error.
GmmModel fit_gmm(const FeatureVectorSet& data, std::size_t n_components, std::uint64_t seed,
                 const GmmFitOptions& options = {});

// Scoring density: log[(1/N_G) sum_i w_i N(x | mu_i, Sigma_i)], evaluated
// via log-sum-exp. Finite for every finite x.
double log_density(const GmmModel& model, std::span<const double> x);

// Training-set total log-likelihood under the plain mixture density
// sum_i w_i N(x | mu_i, Sigma_i) (no 1/N_G factor). Used by EM and AIC.
double total_log_likelihood(const GmmModel& model, const FeatureVectorSet& data);

// 2k - 2 ln L, with k = (N_G - 1) + N_G*B + N_G*c free parameters and
// c = 1 (spherical), B (diagonal) or B(B+1)/2 (full).
double aic(const GmmModel& model, const FeatureVectorSet& data);

struct SweepEntry {
    std::size_t n_components = 0;
    double aic = 0.0;
    GmmModel model;
};

struct SweepResult {
    std::vector<SweepEntry> entries;      // evaluated candidates, input order
    std::size_t selected_index = 0;       // argmin AIC, ties to smaller N_G
    std::vector<std::string> warnings;    // skipped candidates

    const GmmModel& selected_model() const { return entries[selected_index].model; }
    std::size_t selected_n_components() const { return entries[selected_index].n_components; }
};

// Fits one GMM per candidate component count (seed + index each) and picks
// the AIC minimizer. Candidates larger than the data size are skipped with
// a warning; an all-skipped sweep is an error.
SweepResult sweep_components(const FeatureVectorSet& data, std::span<const std::size_t> candidates,
                             std::uint64_t seed, const GmmFitOptions& options = {});

}  // namespace backscan
