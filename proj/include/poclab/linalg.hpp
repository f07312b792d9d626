#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "poclab/errors.hpp"

namespace poclab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dense symmetric d-by-d matrix. The constructor symmetrizes its argument as
/// (M + M^T)/2 so that downstream eigensolves never see floating-point
/// asymmetry, and rejects non-finite entries.
class SymMatrix {
  public:
    explicit SymMatrix(Matrix m) {
        if (m.rows() != m.cols() || m.rows() < 1) {
            throw DimMismatch("SymMatrix: expected a square matrix, got " +
                              std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        }
        if (!m.allFinite()) {
            throw NonFinite("SymMatrix: non-finite entry");
        }
        mat_ = 0.5 * (m + m.transpose());
    }

    static SymMatrix identity(int dim) { return SymMatrix(Matrix::Identity(dim, dim)); }
    static SymMatrix zero(int dim) { return SymMatrix(Matrix::Zero(dim, dim)); }
    static SymMatrix diagonal(const Vector& d) {
        return SymMatrix(Matrix(d.asDiagonal()));
    }

    int dim() const { return static_cast<int>(mat_.rows()); }
    const Matrix& mat() const { return mat_; }
    double operator()(int i, int j) const { return mat_(i, j); }

  private:
    Matrix mat_;
};

inline double frobenius_norm(const SymMatrix& a) { return a.mat().norm(); }

namespace detail {

inline Eigen::SelfAdjointEigenSolver<Matrix> eig_or_throw(const SymMatrix& a,
                                                          bool vectors,
                                                          const char* who) {
    Eigen::SelfAdjointEigenSolver<Matrix> es;
    es.compute(a.mat(), vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NonConvergedEigen(std::string(who) + ": symmetric eigensolver did not converge");
    }
    return es;
}

}  // namespace detail

inline double min_eigenvalue(const SymMatrix& a) {
    return detail::eig_or_throw(a, false, "min_eigenvalue").eigenvalues().minCoeff();
}

inline double max_eigenvalue(const SymMatrix& a) {
    return detail::eig_or_throw(a, false, "max_eigenvalue").eigenvalues().maxCoeff();
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues in
/// [-eps_clamp, 0) are clamped to zero with eps_clamp = 1e-10 * ||a||_F;
/// anything below that is treated as a genuinely indefinite input.
inline SymMatrix psd_sqrt(const SymMatrix& a) {
    const auto es = detail::eig_or_throw(a, true, "psd_sqrt");
    const double eps_clamp = 1e-10 * frobenius_norm(a);
    Vector lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) {
        if (lam[i] < -eps_clamp) {
            throw NotPsd("psd_sqrt: eigenvalue " + std::to_string(lam[i]) +
                         " below -eps_clamp = " + std::to_string(-eps_clamp));
        }
        lam[i] = lam[i] > 0.0 ? std::sqrt(lam[i]) : 0.0;
    }
    const Matrix& v = es.eigenvectors();
    return SymMatrix(v * lam.asDiagonal() * v.transpose());
}

/// Projects onto the PSD cone by clamping negative eigenvalues to zero.
inline SymMatrix clamp_psd(const SymMatrix& a) {
    const auto es = detail::eig_or_throw(a, true, "clamp_psd");
    if (es.eigenvalues().minCoeff() >= 0.0) return a;
    const Vector lam = es.eigenvalues().cwiseMax(0.0);
    const Matrix& v = es.eigenvectors();
    return SymMatrix(v * lam.asDiagonal() * v.transpose());
}

/// Inverse of a symmetric positive definite matrix, guarded by an eigenvalue
/// floor. A minimum eigenvalue below the floor signals covariance collapse.
inline SymMatrix invert_spd(const SymMatrix& a, double floor = 1e-8) {
    if (!(floor > 0.0)) {
        throw ConfigError("invert_spd: floor must be positive");
    }
    const auto es = detail::eig_or_throw(a, true, "invert_spd");
    const double lam_min = es.eigenvalues().minCoeff();
    if (lam_min < floor) {
        throw BelowFloor("invert_spd: min eigenvalue " + std::to_string(lam_min) +
                         " below floor " + std::to_string(floor));
    }
    const Matrix& v = es.eigenvectors();
    return SymMatrix(v * es.eigenvalues().cwiseInverse().asDiagonal() * v.transpose());
}

}  // namespace poclab
