#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poclab/assignment.hpp"
#include "poclab/errors.hpp"
#include "poclab/linalg.hpp"

namespace poclab {

/// Uniformly weighted atomic measure on J points in R^d, stored row-wise.
class EmpiricalMeasure {
  public:
    explicit EmpiricalMeasure(Matrix points) : points_(std::move(points)) {
        if (points_.rows() < 1 || points_.cols() < 1) {
            throw SizeMismatch("EmpiricalMeasure: need at least one point in R^d, d >= 1");
        }
        if (!points_.allFinite()) {
            throw NonFinite("EmpiricalMeasure: non-finite coordinate");
        }
    }

    int size() const { return static_cast<int>(points_.rows()); }
    int dim() const { return static_cast<int>(points_.cols()); }
    const Matrix& points() const { return points_; }
    Vector point(int j) const { return points_.row(j).transpose(); }

  private:
    Matrix points_;
};

inline Vector mean(const EmpiricalMeasure& mu) {
    return mu.points().colwise().mean().transpose();
}

/// Population covariance (divisor J, not J-1).
inline SymMatrix covariance(const EmpiricalMeasure& mu) {
    const Vector m = mean(mu);
    const Matrix centered = mu.points().rowwise() - m.transpose();
    return SymMatrix(centered.transpose() * centered / static_cast<double>(mu.size()));
}

/// W_p(mu, delta_0) = ((1/J) sum |x_j|^p)^(1/p).
inline double wasserstein_to_dirac(const EmpiricalMeasure& mu, double p) {
    if (!(p >= 1.0)) {
        throw ConfigError("wasserstein_to_dirac: p must be >= 1");
    }
    double acc = 0.0;
    for (int j = 0; j < mu.size(); ++j) {
        acc += std::pow(mu.points().row(j).norm(), p);
    }
    return std::pow(acc / mu.size(), 1.0 / p);
}

/// Sorted-coupling W_p for d = 1: order statistics pair optimally.
inline double wasserstein_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
    if (mu.dim() != 1 || nu.dim() != 1) {
        throw DimNotOne("wasserstein_1d: both measures must be one-dimensional");
    }
    if (mu.size() != nu.size()) {
        throw SizeMismatch("wasserstein_1d: measures must have equal support size");
    }
    if (!(p >= 1.0)) {
        throw ConfigError("wasserstein_1d: p must be >= 1");
    }
    std::vector<double> x(mu.points().data(), mu.points().data() + mu.size());
    std::vector<double> y(nu.points().data(), nu.points().data() + nu.size());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        acc += std::pow(std::abs(x[j] - y[j]), p);
    }
    return std::pow(acc / static_cast<double>(x.size()), 1.0 / p);
}

inline constexpr int kAssignmentCap = 512;

/// Exact W_p between equal-size uniform empirical measures via an optimal
/// assignment on the cost matrix c_jk = |x_j - y_k|^p.
inline double wasserstein_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                     double p, int cap = kAssignmentCap) {
    if (mu.size() != nu.size()) {
        throw SizeMismatch("wasserstein_assignment: support sizes differ (" +
                           std::to_string(mu.size()) + " vs " + std::to_string(nu.size()) + ")");
    }
    if (mu.dim() != nu.dim()) {
        throw SizeMismatch("wasserstein_assignment: dimensions differ");
    }
    if (!(p >= 1.0)) {
        throw ConfigError("wasserstein_assignment: p must be >= 1");
    }
    const int n = mu.size();
    if (n > cap) {
        throw CapExceeded("wasserstein_assignment: J = " + std::to_string(n) +
                          " exceeds cap " + std::to_string(cap) +
                          "; subsample or use the identity-coupling bound");
    }
    Matrix cost(n, n);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            cost(j, k) = std::pow((mu.points().row(j) - nu.points().row(k)).norm(), p);
        }
    }
    const auto assign = solve_assignment(cost);
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
        acc += cost(j, assign[j]);
    }
    return std::pow(acc / n, 1.0 / p);
}

/// Upper bound on W_p from the identity pairing, ((1/J) sum |x_j - y_j|^p)^(1/p).
/// This is the coupling actually controlled by the synchronous-coupling
/// estimates, and the fallback above the assignment cap.
inline double identity_coupling_bound(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                      double p) {
    if (mu.size() != nu.size() || mu.dim() != nu.dim()) {
        throw SizeMismatch("identity_coupling_bound: shapes differ");
    }
    double acc = 0.0;
    for (int j = 0; j < mu.size(); ++j) {
        acc += std::pow((mu.points().row(j) - nu.points().row(j)).norm(), p);
    }
    return std::pow(acc / mu.size(), 1.0 / p);
}

}  // namespace poclab
