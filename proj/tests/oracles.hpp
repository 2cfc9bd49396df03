#pragma once

// Test-only oracles, deliberately independent of the library's numerical
// paths: brute-force covariance eigendecomposition (cyclic Jacobi), naive
// direct-summation mixture densities, pairwise Mann-Whitney AUC and
// central finite differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

struct EigResult {
    std::vector<double> values;                 // descending
    std::vector<std::vector<double>> vectors;   // rows, matching values
};

// Cyclic Jacobi rotations on a symmetric matrix.
inline EigResult jacobi_eigendecompose(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        }
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });

    EigResult result;
    result.values.resize(n);
    result.vectors.assign(n, std::vector<double>(n));
    for (std::size_t r = 0; r < n; ++r) {
        result.values[r] = a[order[r]][order[r]];
        for (std::size_t k = 0; k < n; ++k) result.vectors[r][k] = v[k][order[r]];
    }
    return result;
}

// Explicitly formed sample covariance with the unbiased denominator.
inline std::vector<std::vector<double>> sample_covariance(
    const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    const std::size_t d = rows.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
        }
    }
    for (auto& row : cov) {
        for (double& x : row) x /= static_cast<double>(n - 1);
    }
    return cov;
}

// Plain Gauss-Jordan inverse + determinant for small matrices.
struct InverseResult {
    std::vector<std::vector<double>> inverse;
    double determinant = 1.0;
};

inline InverseResult invert(std::vector<std::vector<double>> m) {
    const std::size_t n = m.size();
    InverseResult out;
    out.inverse.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) out.inverse[i][i] = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        }
        if (pivot != col) {
            std::swap(m[pivot], m[col]);
            std::swap(out.inverse[pivot], out.inverse[col]);
            out.determinant = -out.determinant;
        }
        out.determinant *= m[col][col];
        const double inv_pivot = 1.0 / m[col][col];
        for (std::size_t j = 0; j < n; ++j) {
            m[col][j] *= inv_pivot;
            out.inverse[col][j] *= inv_pivot;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double factor = m[r][col];
            if (factor == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                m[r][j] -= factor * m[col][j];
                out.inverse[r][j] -= factor * out.inverse[col][j];
            }
        }
    }
    return out;
}

// Direct (non-log-domain) evaluation of the scoring density
// (1/N_G) sum_i w_i N(x | mu_i, Sigma_i); covariance descriptors follow
// the library's layout per kind: 0 spherical, 1 diagonal, 2 full.
inline double naive_scoring_density(int kind, const std::vector<double>& weights,
                                    const std::vector<std::vector<double>>& means,
                                    const std::vector<std::vector<double>>& covs,
                                    std::span<const double> x) {
    const std::size_t n_components = weights.size();
    const std::size_t dim = means.front().size();
    double total = 0.0;
    for (std::size_t i = 0; i < n_components; ++i) {
        double quad = 0.0, det = 1.0;
        if (kind == 0) {
            const double var = covs[i][0];
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = x[d] - means[i][d];
                quad += diff * diff / var;
            }
            det = std::pow(var, static_cast<double>(dim));
        } else if (kind == 1) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = x[d] - means[i][d];
                quad += diff * diff / covs[i][d];
                det *= covs[i][d];
            }
        } else {
            std::vector<std::vector<double>> sigma(dim, std::vector<double>(dim));
            for (std::size_t r = 0; r < dim; ++r) {
                for (std::size_t c = 0; c < dim; ++c) sigma[r][c] = covs[i][r * dim + c];
            }
            const InverseResult inv = invert(sigma);
            det = inv.determinant;
            for (std::size_t r = 0; r < dim; ++r) {
                for (std::size_t c = 0; c < dim; ++c) {
                    quad += (x[r] - means[i][r]) * inv.inverse[r][c] * (x[c] - means[i][c]);
                }
            }
        }
        const double norm =
            std::pow(2.0 * std::numbers::pi, -static_cast<double>(dim) / 2.0) / std::sqrt(det);
        total += weights[i] * norm * std::exp(-0.5 * quad);
    }
    return total / static_cast<double>(n_components);
}

// Mann-Whitney with half-weight ties; positive class is "backdoored",
// oriented as "lower score ranks more positive".
inline double mann_whitney_auc(std::span<const double> clean, std::span<const double> backdoored) {
    std::uint64_t numerator2 = 0;
    for (double b : backdoored) {
        for (double c : clean) {
            if (b < c) numerator2 += 2;
            else if (b == c) numerator2 += 1;
        }
    }
    return static_cast<double>(numerator2) /
           (2.0 * static_cast<double>(clean.size()) * static_cast<double>(backdoored.size()));
}

}  // namespace oracle
