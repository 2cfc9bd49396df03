#include <doctest.h>

#include <cmath>
#include <vector>

#include "backscan/pca.hpp"
#include "backscan/rng.hpp"
#include "oracles.hpp"

using namespace backscan;

namespace {

FeatureVectorSet random_set(Rng& rng, std::size_t n, std::size_t dim, double scale = 1.0) {
    FeatureVectorSet set;
    set.dim = dim;
    set.vectors.resize(n);
    for (auto& v : set.vectors) {
        v.resize(dim);
        for (double& x : v) x = scale * rng.normal();
    }
    return set;
}

// Anisotropic data with a nontrivial spectrum.
FeatureVectorSet structured_set(Rng& rng, std::size_t n, std::size_t dim) {
    FeatureVectorSet set = random_set(rng, n, dim);
    for (auto& v : set.vectors) {
        for (std::size_t d = 0; d < dim; ++d) {
            v[d] *= 1.0 + 3.0 * static_cast<double>(dim - d) / static_cast<double>(dim);
            v[d] += 0.3 * static_cast<double>(d);
        }
    }
    return set;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("component count for the (9, 0.5, 0.5) spectrum at 95% is 2") {
    const std::vector<double> eigs = {9.0, 0.5, 0.5};
    CHECK(component_count_for_retain(eigs, 0.95) == 2);
    CHECK(component_count_for_retain(eigs, 0.90) == 1);
    CHECK(component_count_for_retain(eigs, 0.96) == 3);
    CHECK(component_count_for_retain(eigs, 1.0) == 3);
}

TEST_CASE("data varying along one axis keeps a single component") {
    FeatureVectorSet set;
    set.dim = 3;
    for (int i = 0; i < 20; ++i) {
        set.vectors.push_back({static_cast<double>(i), 1.0, -2.0});
    }
    const PcaModel model = fit_pca(set, 0.95);
    REQUIRE(model.n_components() == 1);
    CHECK(model.components[0][0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(model.components[0][1]) < 1e-10);
    CHECK(std::abs(model.components[0][2]) < 1e-10);
    CHECK(model.retained_fraction_actual >= 0.95);
}

TEST_CASE("projecting the mean gives the zero vector") {
    Rng rng(3);
    const FeatureVectorSet set = structured_set(rng, 40, 5);
    const PcaModel model = fit_pca(set, 0.95);
    const auto z = project_vector(model, model.mean);
    for (double v : z) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("full basis is an isometry and reconstructs inputs") {
    Rng rng(11);
    const FeatureVectorSet set = structured_set(rng, 30, 4);
    const PcaModel model = fit_pca(set, 1.0);
    REQUIRE(model.n_components() == 4);
    const FeatureVectorSet z = project(model, set);

    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = a + 1; b < 6; ++b) {
            double dx = 0.0, dz = 0.0;
            for (std::size_t d = 0; d < 4; ++d) {
                const double diff = set.vectors[a][d] - set.vectors[b][d];
                dx += diff * diff;
                const double zdiff = z.vectors[a][d] - z.vectors[b][d];
                dz += zdiff * zdiff;
            }
            CHECK(std::sqrt(dx) == doctest::Approx(std::sqrt(dz)).epsilon(1e-8));
        }
    }

    // mean + components^T z recovers x per element.
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t d = 0; d < 4; ++d) {
            double rec = model.mean[d];
            for (std::size_t k = 0; k < 4; ++k) rec += model.components[k][d] * z.vectors[i][k];
            CHECK(rec == doctest::Approx(set.vectors[i][d]).epsilon(1e-8));
        }
    }
}

TEST_CASE("model invariants: orthonormal basis, non-increasing variance") {
    Rng rng(21);
    const FeatureVectorSet set = structured_set(rng, 60, 8);
    const PcaModel model = fit_pca(set, 0.99);
    for (std::size_t a = 0; a < model.n_components(); ++a) {
        for (std::size_t b = 0; b < model.n_components(); ++b) {
            const double expected = a == b ? 1.0 : 0.0;
            CHECK(std::abs(dot(model.components[a], model.components[b]) - expected) < 1e-8);
        }
        if (a > 0) CHECK(model.explained_variance[a] <= model.explained_variance[a - 1]);
    }
    CHECK(model.retained_fraction_actual >= model.retained_fraction_target);
}

TEST_CASE("explained variance matches the variance of projected coordinates") {
    Rng rng(31);
    const FeatureVectorSet set = structured_set(rng, 80, 6);
    const PcaModel model = fit_pca(set, 1.0);
    const FeatureVectorSet z = project(model, set);
    for (std::size_t k = 0; k < model.n_components(); ++k) {
        double mean = 0.0;
        for (const auto& v : z.vectors) mean += v[k];
        mean /= static_cast<double>(z.size());
        double var = 0.0;
        for (const auto& v : z.vectors) var += (v[k] - mean) * (v[k] - mean);
        var /= static_cast<double>(z.size() - 1);
        CHECK(var == doctest::Approx(model.explained_variance[k]).epsilon(1e-6));
    }
}

TEST_CASE("projections match the brute-force covariance eigendecomposition oracle") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t dim = 2 + rng.uniform_int(6);
        const FeatureVectorSet set = structured_set(rng, 25 + rng.uniform_int(30), dim);
        const PcaModel model = fit_pca(set, 0.95);

        const auto cov = oracle::sample_covariance(set.vectors);
        const auto eig = oracle::jacobi_eigendecompose(cov);

        // Eigenvalues agree.
        for (std::size_t k = 0; k < model.n_components(); ++k) {
            CHECK(model.explained_variance[k] == doctest::Approx(eig.values[k]).epsilon(1e-8));
        }
        // Retained count agrees under the same rule.
        CHECK(model.n_components() == component_count_for_retain(eig.values, 0.95));

        // Projections agree up to per-component sign.
        std::vector<double> mean(dim, 0.0);
        for (const auto& v : set.vectors) {
            for (std::size_t d = 0; d < dim; ++d) mean[d] += v[d];
        }
        for (double& m : mean) m /= static_cast<double>(set.size());

        for (std::size_t i = 0; i < 5; ++i) {
            const auto z = project_vector(model, set.vectors[i]);
            for (std::size_t k = 0; k < model.n_components(); ++k) {
                std::vector<double> centered(dim);
                for (std::size_t d = 0; d < dim; ++d) centered[d] = set.vectors[i][d] - mean[d];
                const double zo = dot(eig.vectors[k], centered);
                CHECK(std::min(std::abs(z[k] - zo), std::abs(z[k] + zo)) < 1e-8);
            }
        }
    }
}

TEST_CASE("covariance and SVD paths agree") {
    Rng rng(51);
    const FeatureVectorSet set = structured_set(rng, 50, 7);
    const PcaModel via_eig = fit_pca(set, 0.999, PcaMethod::covariance_eig);
    const PcaModel via_svd = fit_pca(set, 0.999, PcaMethod::svd);
    REQUIRE(via_eig.n_components() == via_svd.n_components());
    for (std::size_t k = 0; k < via_eig.n_components(); ++k) {
        CHECK(via_eig.explained_variance[k] ==
              doctest::Approx(via_svd.explained_variance[k]).epsilon(1e-8));
        for (std::size_t d = 0; d < 7; ++d) {
            CHECK(std::abs(via_eig.components[k][d] - via_svd.components[k][d]) < 1e-8);
        }
    }
}

TEST_CASE("fit is deterministic") {
    Rng rng(61);
    const FeatureVectorSet set = structured_set(rng, 40, 5);
    const PcaModel a = fit_pca(set, 0.95);
    const PcaModel b = fit_pca(set, 0.95);
    CHECK(a.mean == b.mean);
    CHECK(a.components == b.components);
    CHECK(a.explained_variance == b.explained_variance);
}

TEST_CASE("degenerate inputs are rejected") {
    FeatureVectorSet one;
    one.dim = 2;
    one.vectors = {{1.0, 2.0}};
    CHECK_THROWS_AS(fit_pca(one, 0.95), ValidationError);

    FeatureVectorSet constant;
    constant.dim = 2;
    constant.vectors.assign(10, {3.0, -1.0});
    CHECK_THROWS_AS(fit_pca(constant, 0.95), NumericalError);

    Rng rng(71);
    const FeatureVectorSet ok = random_set(rng, 10, 2);
    CHECK_THROWS_AS(fit_pca(ok, 0.0), ValidationError);
    CHECK_THROWS_AS(fit_pca(ok, 1.5), ValidationError);

    const PcaModel model = fit_pca(ok, 0.95);
    FeatureVectorSet wrong;
    wrong.dim = 3;
    wrong.vectors = {{1, 2, 3}};
    CHECK_THROWS_AS(project(model, wrong), ValidationError);
}

TEST_CASE("rank-deficient data (fewer vectors than dims) still fits") {
    Rng rng(81);
    const FeatureVectorSet set = random_set(rng, 4, 10);
    const PcaModel model = fit_pca(set, 0.95);
    CHECK(model.n_components() >= 1);
    CHECK(model.n_components() <= 3);  // rank at most N-1
    CHECK(model.retained_fraction_actual >= 0.95);
}
