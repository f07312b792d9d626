#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poclab/dynamics.hpp"
#include "poclab/parallel.hpp"
#include "poclab/picard.hpp"

namespace poclab {

// Stream-derivation tags, one per experiment family, so replicate indices can
// be reused across experiments and ensemble sizes without overlapping draws.
namespace stream_tag {
inline constexpr std::uint32_t chaos = 0x11;
inline constexpr std::uint32_t cov_rate = 0x22;
inline constexpr std::uint32_t sampling = 0x33;
inline constexpr std::uint32_t excursion = 0x44;
inline constexpr std::uint32_t decay = 0x55;
inline constexpr std::uint32_t pilot = 0x66;
inline constexpr std::uint32_t suite = 0x77;
}  // namespace stream_tag

// ---------------------------------------------------------------------------
// Log-log rate fitting
// ---------------------------------------------------------------------------

struct JEstimate {
    int j = 0;
    double estimate = 0.0;
    double std_error = 0.0;
    int n_ok = 0;
    int n_failed = 0;
};

struct RateFit {
    std::vector<JEstimate> per_j;
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
};

namespace detail {

struct LogLogFit {
    double slope, intercept, slope_stderr;
};

inline LogLogFit ols_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - (intercept + slope * xs[i]);
        rss += r * r;
    }
    const double s2 = n > 2 ? rss / static_cast<double>(n - 2) : 0.0;
    return {slope, intercept, std::sqrt(s2 / sxx)};
}

}  // namespace detail

/// Ordinary least squares on (log J, log estimate). Needs at least three
/// strictly positive estimates; the slope standard error comes from the
/// regression residuals.
inline RateFit fit_log_rate(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3) {
        throw ConfigError("fit_log_rate: need at least 3 points");
    }
    std::vector<double> xs, ys;
    RateFit fit;
    for (const auto& [j, est] : points) {
        if (!(est > 0.0) || !std::isfinite(est)) {
            throw NonPositiveEstimate("fit_log_rate: estimate " + std::to_string(est) +
                                      " at J = " + std::to_string(j) + " is not positive");
        }
        xs.push_back(std::log(j));
        ys.push_back(std::log(est));
        fit.per_j.push_back({static_cast<int>(j), est, 0.0, 0, 0});
    }
    const auto f = detail::ols_loglog(xs, ys);
    fit.slope = f.slope;
    fit.intercept = f.intercept;
    fit.slope_stderr = f.slope_stderr;
    return fit;
}

inline RateFit fit_from_estimates(const std::vector<JEstimate>& per_j) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : per_j) pts.emplace_back(static_cast<double>(e.j), e.estimate);
    RateFit fit = fit_log_rate(pts);
    fit.per_j = per_j;
    return fit;
}

// ---------------------------------------------------------------------------
// Rate experiment configuration
// ---------------------------------------------------------------------------

struct RateExperimentConfig {
    Potential potential;
    double p = 2.0;
    std::vector<int> j_values;
    int replicates = 100;
    SdeConfig sde;
    GaussianSpec rho0;

    // Fixed-point solver controls, used when the potential has ell > 0.
    int picard_particles = 100000;
    int picard_max_iter = 12;
    double picard_tol = 1e-3;

    unsigned threads = 1;
    int noise_refine = 1;

    void validate(double p_min = 2.0, std::size_t min_j_count = 3) const {
        if (j_values.size() < min_j_count) {
            throw ConfigError("config: j_values needs at least " + std::to_string(min_j_count) +
                              " entries for slope fitting");
        }
        for (std::size_t i = 0; i < j_values.size(); ++i) {
            if (j_values[i] < 2 || (i > 0 && j_values[i] <= j_values[i - 1])) {
                throw ConfigError("config: j_values must be strictly increasing and >= 2");
            }
        }
        if (!(p >= p_min)) {
            throw ConfigError("config: p must be >= " + std::to_string(p_min));
        }
        if (replicates < 1) {
            throw ConfigError("config: replicates must be >= 1");
        }
        if (!(sde.dt < sde.t_final)) {
            throw ConfigError("config: sde.dt must be smaller than sde.t_final");
        }
        sde.n_steps();  // validates divisibility
        if (min_eigenvalue(rho0.cov) <= 0.0) {
            throw ConfigError("config: rho0.cov must have positive minimum eigenvalue");
        }
        if (rho0.dim() != potential.dim()) {
            throw ConfigError("config: rho0 dimension differs from potential dimension");
        }
    }
};

struct MeanFieldPathInfo {
    CovariancePath path;
    bool from_picard = false;
    int picard_iterations = 0;
    double picard_gap = 0.0;
    bool picard_converged = true;
};

/// Builds the coefficient path of the limiting dynamics on the run grid:
/// closed-form moment ODEs for quadratic potentials, the fixed-point particle
/// construction otherwise.
inline MeanFieldPathInfo make_meanfield_path(const RateExperimentConfig& cfg) {
    const auto grid = uniform_grid(cfg.sde.dt, cfg.sde.n_steps());
    if (cfg.potential.kind() == Potential::Kind::quadratic) {
        return {gaussian_meanfield_path(cfg.potential.precision(), cfg.potential.center(),
                                        cfg.rho0.mean, cfg.rho0.cov, grid)};
    }
    auto res = picard_covariance_path(cfg.potential, cfg.rho0, grid, cfg.picard_particles,
                                      cfg.picard_max_iter, cfg.picard_tol, cfg.sde.seed,
                                      1e-12, cfg.threads);
    return {std::move(res.path), true, res.iterations, res.final_gap, res.converged};
}

// ---------------------------------------------------------------------------
// Chaos-rate estimation
// ---------------------------------------------------------------------------

namespace detail {

inline JEstimate reduce_replicates(int j, const std::vector<double>& vals,
                                   const std::vector<char>& ok, const char* who) {
    const int m = static_cast<int>(vals.size());
    int n_ok = 0;
    double sum = 0.0;
    for (int r = 0; r < m; ++r) {
        if (ok[r]) {
            ++n_ok;
            sum += vals[r];
        }
    }
    const int n_failed = m - n_ok;
    if (n_failed > 0.01 * m) {
        throw TooManyFailedReplicates(std::string(who) + ": " + std::to_string(n_failed) + "/" +
                                      std::to_string(m) + " replicates blew up at J = " +
                                      std::to_string(j));
    }
    const double mean = sum / n_ok;
    double ss = 0.0;
    for (int r = 0; r < m; ++r) {
        if (ok[r]) ss += (vals[r] - mean) * (vals[r] - mean);
    }
    const double sd = n_ok > 1 ? std::sqrt(ss / (n_ok - 1)) : 0.0;
    return {j, mean, sd / std::sqrt(static_cast<double>(n_ok)), n_ok, n_failed};
}

}  // namespace detail

/// Mean over replicates and particles of sup_t |X^j_t - Xbar^j_t|^p under the
/// synchronous coupling, with its Monte Carlo standard error (replicates are
/// the independent unit; particles within a replicate are averaged first).
inline JEstimate estimate_chaos_error(const RateExperimentConfig& cfg, int j,
                                      const CovariancePath& path,
                                      TrajectorySink* sink = nullptr) {
    if (j < 2) {
        throw ConfigError("estimate_chaos_error: J must be >= 2");
    }
    const NoiseStream stream =
        NoiseStream(cfg.sde.seed).derive(stream_tag::chaos, static_cast<std::uint32_t>(j));
    const int m = cfg.replicates;
    std::vector<double> vals(m, 0.0);
    std::vector<char> ok(m, 1);

    parallel_for(static_cast<std::size_t>(m), sink == nullptr ? cfg.threads : 1,
                 [&](std::size_t r) {
                     const auto summary = run_coupled_trajectory(
                         cfg.potential, path, j, cfg.sde, cfg.rho0, {}, stream,
                         static_cast<std::uint32_t>(r), cfg.noise_refine, sink);
                     if (summary.blew_up) {
                         ok[r] = 0;
                         return;
                     }
                     double acc = 0.0;
                     for (int i = 0; i < j; ++i) {
                         acc += std::pow(summary.sup_displacement[i], cfg.p);
                     }
                     vals[r] = acc / j;
                 });
    return detail::reduce_replicates(j, vals, ok, "estimate_chaos_error");
}

// ---------------------------------------------------------------------------
// Excursion probability (i.i.d. scalar variables)
// ---------------------------------------------------------------------------

/// Scalar i.i.d. sampler addressed by (replicate, index).
using ScalarSampler = std::function<double(const NoiseStream&, std::uint32_t, std::uint32_t)>;

inline ScalarSampler abs_normal_sampler() {
    return [](const NoiseStream& rng, std::uint32_t replicate, std::uint32_t index) {
        return std::abs(
            rng.gauss_pair(StreamClass::scalar_sampler, replicate, 0, index, 0)[0]);
    };
}

struct ExcursionEstimate {
    int j = 0;
    double frequency = 0.0;
    double std_error = 0.0;
    int trials = 0;
};

/// Fraction of M trials in which the J-sample mean of Z reaches R.
inline ExcursionEstimate excursion_probability(const ScalarSampler& z, double r_moment, double R,
                                               int j, int m, const NoiseStream& stream) {
    if (m < 1000) {
        throw ConfigError("excursion_probability: need at least 1000 trials");
    }
    if (!(r_moment >= 2.0)) {
        throw ConfigError("excursion_probability: r_moment must be >= 2");
    }
    const NoiseStream sub = stream.derive(stream_tag::excursion, static_cast<std::uint32_t>(j));
    long hits = 0;
    for (int rep = 0; rep < m; ++rep) {
        double acc = 0.0;
        for (int i = 0; i < j; ++i) {
            acc += z(sub, static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(i));
        }
        if (acc / j >= R) ++hits;
    }
    const double freq = static_cast<double>(hits) / m;
    return {j, freq, std::sqrt(freq * (1.0 - freq) / m), m};
}

// ---------------------------------------------------------------------------
// Empirical covariance Monte Carlo rate
// ---------------------------------------------------------------------------

struct CovRateResult {
    RateFit cov_fit;
    std::optional<RateFit> sqrt_fit;
};

/// Per-J estimate of E||cov(mu^J) - cov(mu)||_F^p over M independent draws of
/// J i.i.d. samples, with a log-log fit; optionally also the square-root
/// variant, which requires a nondegenerate population covariance.
inline CovRateResult covariance_mc_rate(const GaussianSpec& rho0, double p,
                                        const std::vector<int>& j_values, int m,
                                        std::uint64_t seed, bool sqrt_variant = false,
                                        unsigned threads = 1) {
    if (!(p >= 2.0)) {
        throw ConfigError("covariance_mc_rate: p must be >= 2");
    }
    if (sqrt_variant && min_eigenvalue(rho0.cov) <= 0.0) {
        throw ConfigError(
            "covariance_mc_rate: sqrt variant needs a positive definite population covariance");
    }
    const SymMatrix pop_sqrt = psd_sqrt(rho0.cov);
    std::vector<JEstimate> cov_rows, sqrt_rows;
    for (const int j : j_values) {
        const NoiseStream stream =
            NoiseStream(seed).derive(stream_tag::cov_rate, static_cast<std::uint32_t>(j));
        std::vector<double> vals(m, 0.0), sq_vals(m, 0.0);
        std::vector<char> ok(m, 1);
        parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t r) {
            const Matrix x = sample_gaussian(rho0, j, stream, StreamClass::initial_draw,
                                             static_cast<std::uint32_t>(r));
            const SymMatrix cov_hat = ensemble_covariance(x);
            vals[r] = std::pow((cov_hat.mat() - rho0.cov.mat()).norm(), p);
            if (sqrt_variant) {
                sq_vals[r] = std::pow((psd_sqrt(cov_hat).mat() - pop_sqrt.mat()).norm(), p);
            }
        });
        cov_rows.push_back(detail::reduce_replicates(j, vals, ok, "covariance_mc_rate"));
        if (sqrt_variant) {
            sqrt_rows.push_back(detail::reduce_replicates(j, sq_vals, ok, "covariance_mc_rate"));
        }
    }
    CovRateResult res{fit_from_estimates(cov_rows)};
    if (sqrt_variant) res.sqrt_fit = fit_from_estimates(sqrt_rows);
    return res;
}

// ---------------------------------------------------------------------------
// Sampling-error rate (observable averages)
// ---------------------------------------------------------------------------

struct Observable {
    enum class Kind { linear, squared_norm };
    Kind kind = Kind::squared_norm;
    Vector coeffs;  // linear only

    static Observable linear(Vector a) { return {Kind::linear, std::move(a)}; }
    static Observable squared_norm(int dim) { return {Kind::squared_norm, Vector::Zero(dim)}; }

    double eval(const Vector& x) const {
        return kind == Kind::linear ? coeffs.dot(x) : x.squaredNorm();
    }
    double mean_under(const Vector& m, const SymMatrix& c) const {
        return kind == Kind::linear ? coeffs.dot(m) : c.mat().trace() + m.squaredNorm();
    }
};

/// L^p error of the ensemble average of f at time t against the analytic
/// mean-field expectation (available in closed form for quadratic
/// potentials). The estimate is the p-th root of the Monte Carlo mean of
/// |error|^p; its standard error follows by the delta method.
inline std::vector<JEstimate> sampling_error_estimates(const Potential& pot,
                                                       const Observable& obs, double t, double p,
                                                       const std::vector<int>& j_values, int m,
                                                       const SdeConfig& sde,
                                                       const GaussianSpec& rho0,
                                                       unsigned threads = 1) {
    if (pot.kind() != Potential::Kind::quadratic) {
        throw UnsupportedObservable(
            "sampling_error_rate: analytic reference requires a quadratic potential");
    }
    if (!(p >= 2.0)) {
        throw ConfigError("sampling_error_rate: p must be >= 2");
    }
    if (!(t >= 0.0)) {
        throw ConfigError("sampling_error_rate: t must be >= 0");
    }
    SdeConfig run = sde;
    run.t_final = t;
    const long n_steps = t == 0.0 ? 0 : run.n_steps();
    const auto grid = uniform_grid(run.dt, n_steps);
    const auto path =
        gaussian_meanfield_path(pot.precision(), pot.center(), rho0.mean, rho0.cov, grid);
    const auto node = path.at(t);
    const double reference = obs.mean_under(node.mean, node.cov);

    std::vector<JEstimate> rows;
    for (const int j : j_values) {
        const NoiseStream stream =
            NoiseStream(sde.seed).derive(stream_tag::sampling, static_cast<std::uint32_t>(j));
        std::vector<double> vals(m, 0.0);
        std::vector<char> ok(m, 1);
        parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t r) {
            Matrix pos = sample_gaussian(rho0, j, stream, StreamClass::initial_draw,
                                         static_cast<std::uint32_t>(r));
            EnsembleState state{0.0, std::move(pos)};
            Matrix gauss(j, pot.dim());
            Vector row(pot.dim());
            try {
                for (long k = 0; k < n_steps; ++k) {
                    for (int i = 0; i < j; ++i) {
                        stream.fill_gauss(StreamClass::dynamics, static_cast<std::uint32_t>(r),
                                          static_cast<std::uint32_t>(k),
                                          static_cast<std::uint32_t>(i), row.data(), pot.dim());
                        gauss.row(i) = row;
                    }
                    state = step_ips(pot, state, run.dt, gauss);
                    state.time = static_cast<double>(k + 1) * run.dt;
                }
            } catch (const NonFinite&) {
                ok[r] = 0;
                return;
            }
            double acc = 0.0;
            for (int i = 0; i < j; ++i) {
                acc += obs.eval(state.positions.row(i).transpose());
            }
            vals[r] = std::pow(std::abs(acc / j - reference), p);
        });
        JEstimate e = detail::reduce_replicates(j, vals, ok, "sampling_error_rate");
        // Report the L^p norm; propagate the standard error through x^(1/p).
        const double mean_pow = e.estimate;
        e.estimate = std::pow(mean_pow, 1.0 / p);
        e.std_error = mean_pow > 0.0
                          ? e.std_error * std::pow(mean_pow, 1.0 / p - 1.0) / p
                          : 0.0;
        rows.push_back(e);
    }
    return rows;
}

inline RateFit sampling_error_rate(const Potential& pot, const Observable& obs, double t,
                                   double p, const std::vector<int>& j_values, int m,
                                   const SdeConfig& sde, const GaussianSpec& rho0,
                                   unsigned threads = 1) {
    return fit_from_estimates(
        sampling_error_estimates(pot, obs, t, p, j_values, m, sde, rho0, threads));
}

// ---------------------------------------------------------------------------
// Property suites
// ---------------------------------------------------------------------------

struct SuiteReport {
    long trials = 0;
    long violations = 0;
    double worst_slack = -std::numeric_limits<double>::infinity();
    std::string worst_case;  // serialized instance for replay, empty if none
};

namespace detail {

inline Matrix random_points(const NoiseStream& rng, std::uint32_t trial, std::uint32_t salt,
                            int j, int d, double scale) {
    Matrix pts(j, d);
    Vector row(d);
    for (int i = 0; i < j; ++i) {
        rng.fill_gauss(StreamClass::test_gen, trial, salt, static_cast<std::uint32_t>(i),
                       row.data(), d);
        pts.row(i) = scale * row;
    }
    return pts;
}

inline std::string serialize_pair(const Matrix& x, const Matrix& y) {
    std::ostringstream os;
    os << "mu = [" << x.format(Eigen::IOFormat(17, 0, ", ", "; ")) << "], nu = ["
       << y.format(Eigen::IOFormat(17, 0, ", ", "; ")) << "]";
    return os.str();
}

inline void fold_check(SuiteReport& rep, double slack, double tol, const std::string& instance) {
    if (slack > rep.worst_slack) {
        rep.worst_slack = slack;
        if (slack > tol) rep.worst_case = instance;
    }
    if (slack > tol) ++rep.violations;
}

}  // namespace detail

/// Checks the two covariance stability inequalities on random equal-size
/// pairs with the exact assignment W2:
///   ||C(mu) - C(nu)||_F      <= 2 (W2(mu,d0) + W2(nu,d0)) W2(mu,nu)
///   ||sqrt C(mu) - sqrt C(nu)||_F <= sqrt(2) W2(mu,nu)
inline SuiteReport stability_property_suite(long n_trials, int dim_max, int j_max,
                                            std::uint64_t seed, double tol = 1e-9) {
    if (j_max > kAssignmentCap) {
        throw CapExceeded("stability_property_suite: j_max exceeds the assignment cap");
    }
    const NoiseStream rng = NoiseStream(seed).derive(stream_tag::suite, 1);
    SuiteReport rep;
    for (long trial = 0; trial < n_trials; ++trial) {
        const auto t = static_cast<std::uint32_t>(trial);
        const int d = 1 + static_cast<int>(rng.uniform(StreamClass::test_gen, t, 100, 0) * dim_max);
        const int j = 1 + static_cast<int>(rng.uniform(StreamClass::test_gen, t, 101, 0) * j_max);
        const double scale = 0.25 + 2.0 * rng.uniform(StreamClass::test_gen, t, 102, 0);
        Matrix xs = detail::random_points(rng, t, 0, j, d, scale);
        Matrix ys;
        const double mode = rng.uniform(StreamClass::test_gen, t, 103, 0);
        if (mode < 0.25) {
            // Translated copy: covariance terms coincide.
            Vector shift(xs.cols());
            rng.fill_gauss(StreamClass::test_gen, t, 104, 0, shift.data(),
                           static_cast<int>(xs.cols()));
            ys = xs.rowwise() + shift.transpose();
        } else if (mode < 0.5) {
            // Small perturbation of mu.
            ys = xs + 0.1 * detail::random_points(rng, t, 1, static_cast<int>(xs.rows()),
                                                  static_cast<int>(xs.cols()), scale);
        } else {
            ys = detail::random_points(rng, t, 2, static_cast<int>(xs.rows()),
                                       static_cast<int>(xs.cols()), scale);
        }
        const EmpiricalMeasure mu(xs), nu(ys);
        const double w2 = wasserstein_assignment(mu, nu, 2.0);
        const double w_mu = wasserstein_to_dirac(mu, 2.0);
        const double w_nu = wasserstein_to_dirac(nu, 2.0);

        const double lhs_cov = (covariance(mu).mat() - covariance(nu).mat()).norm();
        detail::fold_check(rep, lhs_cov - 2.0 * (w_mu + w_nu) * w2, tol,
                           detail::serialize_pair(xs, ys));

        const double lhs_sqrt =
            (psd_sqrt(covariance(mu)).mat() - psd_sqrt(covariance(nu)).mat()).norm();
        detail::fold_check(rep, lhs_sqrt - std::sqrt(2.0) * w2, tol,
                           detail::serialize_pair(xs, ys));
        ++rep.trials;
    }
    return rep;
}

/// Matrix square-root property suite: reconstruction, the two perturbation
/// inequalities behind the covariance stability estimates, and homogeneity
/// under positive scaling.
inline SuiteReport psd_property_suite(long n_trials, int dim_max, std::uint64_t seed,
                                      double tol = 1e-9) {
    const NoiseStream rng = NoiseStream(seed).derive(stream_tag::suite, 2);
    SuiteReport rep;
    for (long trial = 0; trial < n_trials; ++trial) {
        const auto t = static_cast<std::uint32_t>(trial);
        const int d = 1 + static_cast<int>(rng.uniform(StreamClass::test_gen, t, 200, 0) * dim_max);
        const Matrix g = detail::random_points(rng, t, 3, d, d, 1.0);
        const Matrix h = detail::random_points(rng, t, 4, d, d, 1.0);
        const SymMatrix a(g.transpose() * g);
        const SymMatrix b(h.transpose() * h);

        std::ostringstream inst;
        inst << "A = [" << a.mat().format(Eigen::IOFormat(17, 0, ", ", "; ")) << "], B = ["
             << b.mat().format(Eigen::IOFormat(17, 0, ", ", "; ")) << "]";

        // Reconstruction: sqrt(A)^2 = A, relative scale.
        const SymMatrix s = psd_sqrt(a);
        detail::fold_check(rep, (s.mat() * s.mat() - a.mat()).norm() / (1.0 + a.mat().norm()),
                           tol, inst.str());

        // ||sqrt(G^T G) - sqrt(H^T H)||_F <= sqrt(2) ||G - H||_F.
        detail::fold_check(rep,
                           (psd_sqrt(a).mat() - psd_sqrt(b).mat()).norm() -
                               std::sqrt(2.0) * (g - h).norm(),
                           tol, inst.str());

        // With A >= eta I and eta <= 1: ||sqrt A - sqrt B||_F <= ||A - B||_F / eta.
        const double eta =
            0.05 + 0.95 * rng.uniform(StreamClass::test_gen, t, 201, 0);
        const SymMatrix a_floor(a.mat() + eta * Matrix::Identity(d, d));
        detail::fold_check(rep,
                           (psd_sqrt(a_floor).mat() - psd_sqrt(b).mat()).norm() -
                               (a_floor.mat() - b.mat()).norm() / eta,
                           tol, inst.str());

        // Homogeneity: sqrt(c A) = sqrt(c) sqrt(A).
        const double c = 0.1 + 4.0 * rng.uniform(StreamClass::test_gen, t, 202, 0);
        const double scale_err =
            (psd_sqrt(SymMatrix(c * a.mat())).mat() - std::sqrt(c) * s.mat()).norm() /
            (1.0 + s.mat().norm());
        detail::fold_check(rep, scale_err, 1e-10, inst.str());

        ++rep.trials;
    }
    return rep;
}

struct ConvexityReport {
    long trials = 0;
    long violations = 0;
    double c1_fit = std::numeric_limits<double>::infinity();
    double worst_slack = -std::numeric_limits<double>::infinity();
};

/// Monotonicity constant of the gradient: the fitted c1 is the smallest
/// observed ratio <y-x, grad(y)-grad(x)> / (g(x,y) |y-x|^2), where the growth
/// factor g = 1 + |x|^ell + |y|^ell is constant for ell = 0 and is then
/// folded into c1 (so a quadratic fits c1 = min eigenvalue of the precision).
inline ConvexityReport convexity_suite(const Potential& pot, long n_trials, std::uint64_t seed) {
    const NoiseStream rng = NoiseStream(seed).derive(stream_tag::suite, 3);
    ConvexityReport rep;
    const int d = pot.dim();
    Vector x(d), y(d);
    for (long trial = 0; trial < n_trials; ++trial) {
        const auto t = static_cast<std::uint32_t>(trial);
        rng.fill_gauss(StreamClass::test_gen, t, 300, 0, x.data(), d);
        rng.fill_gauss(StreamClass::test_gen, t, 301, 0, y.data(), d);
        x *= 2.0;
        y *= 2.0;
        const double dist2 = (y - x).squaredNorm();
        if (dist2 < 1e-20) continue;
        const double growth =
            pot.ell() == 0
                ? 1.0
                : 1.0 + std::pow(x.norm(), pot.ell()) + std::pow(y.norm(), pot.ell());
        const double ratio = convexity_inner(pot, x, y) / (growth * dist2);
        rep.c1_fit = std::min(rep.c1_fit, ratio);
        rep.worst_slack = std::max(rep.worst_slack, -ratio);
        if (!(ratio > 0.0)) ++rep.violations;
        ++rep.trials;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Excursion decay over coupled trajectories
// ---------------------------------------------------------------------------

struct ExcursionDecayRow {
    int j = 0;
    double freq_ips = 0.0;
    double freq_mf = 0.0;
    double std_error_ips = 0.0;
    double std_error_mf = 0.0;
    int n_ok = 0;
    int n_failed = 0;
};

/// Empirical trigger frequencies of the two excursion stopping times over
/// coupled runs, per ensemble size.
inline std::vector<ExcursionDecayRow> excursion_decay_experiment(
    const RateExperimentConfig& cfg, const CovariancePath& path, double r, double R) {
    std::vector<ExcursionDecayRow> rows;
    const std::vector<MonitorSpec> monitors{
        {MonitorSpec::Kind::ips_excursion, r, R},
        {MonitorSpec::Kind::meanfield_excursion, r, R},
    };
    for (const int j : cfg.j_values) {
        const NoiseStream stream =
            NoiseStream(cfg.sde.seed).derive(stream_tag::decay, static_cast<std::uint32_t>(j));
        const int m = cfg.replicates;
        std::vector<char> ok(m, 1), hit_ips(m, 0), hit_mf(m, 0);
        parallel_for(static_cast<std::size_t>(m), cfg.threads, [&](std::size_t rep) {
            const auto summary =
                run_coupled_trajectory(cfg.potential, path, j, cfg.sde, cfg.rho0, monitors,
                                       stream, static_cast<std::uint32_t>(rep));
            if (summary.blew_up) {
                ok[rep] = 0;
                return;
            }
            hit_ips[rep] = summary.stopping[0].triggered ? 1 : 0;
            hit_mf[rep] = summary.stopping[1].triggered ? 1 : 0;
        });
        ExcursionDecayRow row;
        row.j = j;
        for (int rep = 0; rep < m; ++rep) {
            if (!ok[rep]) {
                ++row.n_failed;
                continue;
            }
            ++row.n_ok;
            row.freq_ips += hit_ips[rep];
            row.freq_mf += hit_mf[rep];
        }
        if (row.n_failed > 0.01 * m) {
            throw TooManyFailedReplicates("excursion_decay_experiment: too many blow-ups at J = " +
                                          std::to_string(j));
        }
        row.freq_ips /= row.n_ok;
        row.freq_mf /= row.n_ok;
        row.std_error_ips = std::sqrt(row.freq_ips * (1.0 - row.freq_ips) / row.n_ok);
        row.std_error_mf = std::sqrt(row.freq_mf * (1.0 - row.freq_mf) / row.n_ok);
        rows.push_back(row);
    }
    return rows;
}

/// Pilot estimate of E[sup_t |Xbar_t|^r] from one independent mean-field
/// ensemble; used to place the excursion radius above the moment bound.
inline double pilot_sup_moment(const Potential& pot, const CovariancePath& path, int n_particles,
                               const SdeConfig& sde, const GaussianSpec& rho0, double r) {
    const NoiseStream stream = NoiseStream(sde.seed).derive(stream_tag::pilot, 0);
    const long n_steps = sde.n_steps();
    EnsembleState state{
        0.0, sample_gaussian(rho0, n_particles, stream, StreamClass::initial_draw, 0)};
    Vector sup = state.positions.rowwise().norm();
    Matrix gauss(n_particles, pot.dim());
    Vector row(pot.dim());
    for (long k = 0; k < n_steps; ++k) {
        for (int i = 0; i < n_particles; ++i) {
            stream.fill_gauss(StreamClass::dynamics, 0, static_cast<std::uint32_t>(k),
                              static_cast<std::uint32_t>(i), row.data(), pot.dim());
            gauss.row(i) = row;
        }
        state = step_meanfield(pot, state, path, sde.dt, gauss);
        state.time = static_cast<double>(k + 1) * sde.dt;
        sup = sup.cwiseMax(state.positions.rowwise().norm());
    }
    double acc = 0.0;
    for (int i = 0; i < n_particles; ++i) acc += std::pow(sup[i], r);
    return acc / n_particles;
}

}  // namespace poclab
