#pragma once

#include <span>
#include <vector>

#include "backscan/vectorize.hpp"

namespace backscan {

enum class PcaMethod {
    automatic,       // covariance eigendecomposition up to dim 2048, SVD above
    covariance_eig,  // eigendecomposition of the explicitly formed covariance
    svd,             // singular value decomposition of the centered data
};

struct PcaModel {
    std::size_t input_dim = 0;
    std::vector<double> mean;                        // length input_dim
    std::vector<std::vector<double>> components;     // B rows, each length input_dim
    std::vector<double> explained_variance;          // length B, non-increasing
    double retained_fraction_target = 0.0;
    double retained_fraction_actual = 0.0;

    std::size_t n_components() const { return components.size(); }
};

// Smallest B such that the top-B eigenvalues reach `retain` of the total,
// comparing the cumulative fraction against retain. Eigenvalues must be
// given in descending order.
std::size_t component_count_for_retain(std::span<const double> eigenvalues_desc, double retain);

// Fits mean + orthonormal basis on the sample covariance (unbiased, N-1
// denominator) of the given vectors. Component signs are normalized so the
// largest-magnitude entry of each component is positive, which makes the
// fit deterministic.
PcaModel fit_pca(const FeatureVectorSet& vectors, double retain,
                 PcaMethod method = PcaMethod::automatic);

std::vector<double> project_vector(const PcaModel& model, std::span<const double> x);

// Projects every vector: z = components * (x - mean). Count preserved,
// output dim = B.
FeatureVectorSet project(const PcaModel& model, const FeatureVectorSet& vectors);

}  // namespace backscan
