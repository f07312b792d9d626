#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "poclab/linalg.hpp"
#include "poclab/rng.hpp"

namespace poclab {

/// Negative log-density with polynomial growth of known exponent. Two
/// families ship: a quadratic form (growth exponent 0, globally Lipschitz
/// gradient) and an even-power radial well scale*|x-center|^(ell+2) + offset
/// (growth exponent ell > 0). Both have closed-form derivatives.
class Potential {
  public:
    enum class Kind { quadratic, even_power };

    static Potential quadratic(SymMatrix precision, Vector center, double offset = 1.0) {
        if (precision.dim() != center.size()) {
            throw DimMismatch("Potential::quadratic: precision/center dimensions differ");
        }
        if (min_eigenvalue(precision) <= 0.0) {
            throw NotPsd("Potential::quadratic: precision must be positive definite");
        }
        if (offset < 1.0) {
            throw ConfigError("Potential::quadratic: offset must be >= 1");
        }
        return Potential(Kind::quadratic, std::move(precision), std::move(center), offset, 0, 0.0);
    }

    static Potential even_power(int ell, double scale, Vector center, double offset = 1.0) {
        if (ell <= 0 || ell % 2 != 0) {
            throw ConfigError("Potential::even_power: ell must be a positive even integer");
        }
        if (!(scale > 0.0)) {
            throw ConfigError("Potential::even_power: scale must be positive");
        }
        if (offset < 1.0) {
            throw ConfigError("Potential::even_power: offset must be >= 1");
        }
        const int d = static_cast<int>(center.size());
        return Potential(Kind::even_power, SymMatrix::identity(d), std::move(center), offset,
                         ell, scale);
    }

    Kind kind() const { return kind_; }
    int dim() const { return static_cast<int>(center_.size()); }
    /// Growth exponent ell: gradient grows like |x|^(ell+1).
    int ell() const { return ell_; }
    const SymMatrix& precision() const { return precision_; }
    const Vector& center() const { return center_; }
    double offset() const { return offset_; }
    double scale() const { return scale_; }

    double value(const Vector& x) const {
        check_dim(x, "value");
        const Vector z = x - center_;
        if (kind_ == Kind::quadratic) {
            return offset_ + 0.5 * z.dot(precision_.mat() * z);
        }
        return offset_ + scale_ * std::pow(z.norm(), ell_ + 2);
    }

    Vector gradient(const Vector& x) const {
        check_dim(x, "gradient");
        const Vector z = x - center_;
        if (kind_ == Kind::quadratic) {
            return precision_.mat() * z;
        }
        // d/dx |z|^k = k |z|^(k-2) z with k = ell + 2 (k even, so smooth at 0).
        const int k = ell_ + 2;
        return scale_ * k * std::pow(z.squaredNorm(), (k - 2) / 2.0) * z;
    }

    SymMatrix hessian(const Vector& x) const {
        check_dim(x, "hessian");
        if (kind_ == Kind::quadratic) {
            return precision_;
        }
        const Vector z = x - center_;
        const int k = ell_ + 2;
        const double r2 = z.squaredNorm();
        const int d = dim();
        Matrix h = scale_ * k * std::pow(r2, (k - 2) / 2.0) * Matrix::Identity(d, d);
        if (k > 2) {
            h += scale_ * k * (k - 2) * std::pow(r2, (k - 4) / 2.0) * (z * z.transpose());
        }
        return SymMatrix(h);
    }

  private:
    Potential(Kind kind, SymMatrix precision, Vector center, double offset, int ell, double scale)
        : kind_(kind),
          precision_(std::move(precision)),
          center_(std::move(center)),
          offset_(offset),
          ell_(ell),
          scale_(scale) {}

    void check_dim(const Vector& x, const char* who) const {
        if (x.size() != center_.size()) {
            throw DimMismatch(std::string("Potential::") + who + ": point has dimension " +
                              std::to_string(x.size()) + ", potential has " +
                              std::to_string(center_.size()));
        }
    }

    Kind kind_;
    SymMatrix precision_;  // quadratic only
    Vector center_;
    double offset_;
    int ell_;       // 0 for quadratic
    double scale_;  // even_power only
};

/// <y - x, grad(y) - grad(x)>, the quantity bounded below by the convexity
/// inequality for this potential class.
inline double convexity_inner(const Potential& pot, const Vector& x, const Vector& y) {
    return (y - x).dot(pot.gradient(y) - pot.gradient(x));
}

struct RatioRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Sampled verification of the growth bounds of the declared class: the three
/// ratios phi/|x|^(ell+2), |grad phi|/|x|^(ell+1) and Hessian eigenvalues /
/// |x|^ell, recorded over points drawn on shells |x| in [r_lo, r_hi].
struct ClassReport {
    int ell = 0;
    RatioRange value_ratio;
    RatioRange grad_ratio;
    RatioRange hess_ratio;
    bool pass = false;
};

inline ClassReport check_class(const Potential& pot, int ell, int n_samples,
                               std::pair<double, double> radius_range, std::uint64_t seed,
                               double ratio_lo = 1e-2, double ratio_hi = 1e2) {
    if (n_samples < 1) {
        throw ConfigError("check_class: n_samples must be >= 1");
    }
    if (!(radius_range.first > 0.0) || !(radius_range.second > radius_range.first)) {
        throw ConfigError("check_class: need 0 < r_lo < r_hi");
    }
    const int d = pot.dim();
    NoiseStream rng(seed);
    ClassReport rep;
    rep.ell = ell;
    bool finite = true;
    auto fold = [](RatioRange& r, double v, bool first) {
        if (first) {
            r.lo = r.hi = v;
        } else {
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
    };
    Vector x(d);
    for (int s = 0; s < n_samples; ++s) {
        rng.fill_gauss(StreamClass::test_gen, 0, static_cast<std::uint32_t>(s), 0, x.data(), d);
        const double u = rng.uniform(StreamClass::test_gen, 1, static_cast<std::uint32_t>(s), 0);
        const double radius = radius_range.first + u * (radius_range.second - radius_range.first);
        if (x.norm() == 0.0) x[0] = 1.0;
        x *= radius / x.norm();

        const double r = x.norm();
        const double v_ratio = pot.value(x) / std::pow(r, ell + 2);
        const double g_ratio = pot.gradient(x).norm() / std::pow(r, ell + 1);
        const SymMatrix h = pot.hessian(x);
        const double denom = std::pow(r, ell);
        fold(rep.value_ratio, v_ratio, s == 0);
        fold(rep.grad_ratio, g_ratio, s == 0);
        fold(rep.hess_ratio, min_eigenvalue(h) / denom, s == 0);
        fold(rep.hess_ratio, max_eigenvalue(h) / denom, false);
        finite = finite && std::isfinite(v_ratio) && std::isfinite(g_ratio) &&
                 std::isfinite(rep.hess_ratio.lo) && std::isfinite(rep.hess_ratio.hi);
    }
    auto within = [&](const RatioRange& r) { return r.lo >= ratio_lo && r.hi <= ratio_hi; };
    rep.pass = finite && rep.value_ratio.lo > 0.0 && rep.grad_ratio.lo > 0.0 &&
               rep.hess_ratio.lo > 0.0 && within(rep.value_ratio) && within(rep.grad_ratio) &&
               within(rep.hess_ratio);
    return rep;
}

}  // namespace poclab
