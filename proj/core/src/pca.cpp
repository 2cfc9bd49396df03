#include "backscan/pca.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace backscan {

namespace {

constexpr std::size_t kCovarianceDimLimit = 2048;

Eigen::MatrixXd to_matrix(const FeatureVectorSet& vectors) {
    const auto n = static_cast<Eigen::Index>(vectors.size());
    const auto d = static_cast<Eigen::Index>(vectors.dim);
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = vectors.vectors[i][j];
    }
    return m;
}

// Largest-magnitude entry positive; ties broken by the first such entry.
void apply_sign_convention(Eigen::VectorXd& component) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < component.size(); ++i) {
        const double mag = std::abs(component(i));
        if (mag > best) {
            best = mag;
            arg = i;
        }
    }
    if (component(arg) < 0.0) component = -component;
}

}  // namespace

std::size_t component_count_for_retain(std::span<const double> eigenvalues_desc, double retain) {
    if (eigenvalues_desc.empty()) throw ValidationError("empty eigenvalue list");
    if (!(retain > 0.0) || retain > 1.0) throw ValidationError("retain must lie in (0, 1]");
    double total = 0.0;
    for (double ev : eigenvalues_desc) total += std::max(ev, 0.0);
    if (!(total > 0.0)) throw NumericalError("degenerate data: zero total variance");
    double cumulative = 0.0;
    for (std::size_t b = 0; b < eigenvalues_desc.size(); ++b) {
        cumulative += std::max(eigenvalues_desc[b], 0.0);
        if (cumulative / total >= retain) return b + 1;
    }
    return eigenvalues_desc.size();
}

PcaModel fit_pca(const FeatureVectorSet& vectors, double retain, PcaMethod method) {
    if (vectors.size() < 2) throw ValidationError("fit_pca needs at least 2 vectors");
    if (!(retain > 0.0) || retain > 1.0) throw ValidationError("retain must lie in (0, 1]");
    const std::size_t dim = vectors.dim;
    if (dim == 0) throw ValidationError("fit_pca: zero-dimensional vectors");

    Eigen::MatrixXd data = to_matrix(vectors);
    const Eigen::VectorXd mean = data.colwise().mean();
    data.rowwise() -= mean.transpose();

    if (method == PcaMethod::automatic) {
        method = dim <= kCovarianceDimLimit ? PcaMethod::covariance_eig : PcaMethod::svd;
    }

    // Eigenvalues in descending order, eigenvectors as columns.
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    if (method == PcaMethod::covariance_eig) {
        const Eigen::MatrixXd cov =
            (data.transpose() * data) / static_cast<double>(vectors.size() - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
        eigenvalues = solver.eigenvalues().reverse();
        eigenvectors = solver.eigenvectors().rowwise().reverse();
    } else {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
        const Eigen::VectorXd singular = svd.singularValues();
        eigenvalues = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
        for (Eigen::Index i = 0; i < singular.size(); ++i) {
            eigenvalues(i) = singular(i) * singular(i) / static_cast<double>(vectors.size() - 1);
        }
        eigenvectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                             static_cast<Eigen::Index>(dim));
        eigenvectors.leftCols(svd.matrixV().cols()) = svd.matrixV();
        // Thin SVD may return fewer than dim directions; the missing ones
        // carry zero variance and never enter the retained basis.
    }

    std::vector<double> spectrum(static_cast<std::size_t>(eigenvalues.size()));
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        spectrum[i] = std::max(eigenvalues(static_cast<Eigen::Index>(i)), 0.0);
    }
    const std::size_t basis_size = component_count_for_retain(spectrum, retain);

    PcaModel model;
    model.input_dim = dim;
    model.retained_fraction_target = retain;
    model.mean.assign(mean.data(), mean.data() + mean.size());
    model.components.resize(basis_size);
    model.explained_variance.resize(basis_size);
    double total = 0.0, kept = 0.0;
    for (double ev : spectrum) total += ev;
    for (std::size_t b = 0; b < basis_size; ++b) {
        Eigen::VectorXd component = eigenvectors.col(static_cast<Eigen::Index>(b));
        apply_sign_convention(component);
        model.components[b].assign(component.data(), component.data() + component.size());
        model.explained_variance[b] = spectrum[b];
        kept += spectrum[b];
    }
    model.retained_fraction_actual = kept / total;
    return model;
}

std::vector<double> project_vector(const PcaModel& model, std::span<const double> x) {
    if (x.size() != model.input_dim) {
        throw ValidationError("project: vector dim " + std::to_string(x.size()) +
                              " does not match model input_dim " + std::to_string(model.input_dim));
    }
    std::vector<double> z(model.components.size());
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto& component = model.components[k];
        double acc = 0.0;
        for (std::size_t d = 0; d < model.input_dim; ++d) {
            acc += component[d] * (x[d] - model.mean[d]);
        }
        z[k] = acc;
    }
    return z;
}

FeatureVectorSet project(const PcaModel& model, const FeatureVectorSet& vectors) {
    if (vectors.dim != model.input_dim) {
        throw ValidationError("project: set dim " + std::to_string(vectors.dim) +
                              " does not match model input_dim " + std::to_string(model.input_dim));
    }
    FeatureVectorSet projected;
    projected.dim = model.components.size();
    projected.source = vectors.source;
    projected.vectors.reserve(vectors.size());
    for (const auto& x : vectors.vectors) projected.vectors.push_back(project_vector(model, x));
    return projected;
}

}  // namespace backscan
