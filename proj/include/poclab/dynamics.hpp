#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "poclab/linalg.hpp"
#include "poclab/measures.hpp"
#include "poclab/potentials.hpp"
#include "poclab/rng.hpp"

namespace poclab {

// ---------------------------------------------------------------------------
// State and configuration types
// ---------------------------------------------------------------------------

/// J particles in R^d at a common time, positions stored row-wise.
struct EnsembleState {
    double time = 0.0;
    Matrix positions;  // J x d

    int size() const { return static_cast<int>(positions.rows()); }
    int dim() const { return static_cast<int>(positions.cols()); }
};

/// Interacting system and its mean-field counterpart, advanced with shared
/// Brownian increments from identical initial positions.
struct CoupledEnsembles {
    EnsembleState ips;
    EnsembleState meanfield;
    long step_index = 0;
};

struct SdeConfig {
    double dt = 1e-3;
    double t_final = 1.0;
    std::uint64_t seed = 0;
    double cov_floor = 0.0;

    long n_steps() const {
        const double ratio = t_final / dt;
        const long n = std::lround(ratio);
        if (!(dt > 0.0) || !(t_final > 0.0) || n < 1 ||
            std::abs(n * dt - t_final) > 1e-9 * t_final) {
            throw ConfigError("SdeConfig: t_final must be a whole number of dt steps");
        }
        return n;
    }
};

struct GaussianSpec {
    Vector mean;
    SymMatrix cov;

    GaussianSpec(Vector m, SymMatrix c) : mean(std::move(m)), cov(std::move(c)) {
        if (mean.size() != cov.dim()) {
            throw DimMismatch("GaussianSpec: mean/cov dimensions differ");
        }
    }
    int dim() const { return static_cast<int>(mean.size()); }
};

/// n draws from N(mean, cov), addressed by (class, replicate, particle).
inline Matrix sample_gaussian(const GaussianSpec& spec, int n, const NoiseStream& rng,
                              StreamClass cls, std::uint32_t replicate) {
    const int d = spec.dim();
    const SymMatrix root = psd_sqrt(spec.cov);
    Matrix out(n, d);
    Vector z(d);
    for (int j = 0; j < n; ++j) {
        rng.fill_gauss(cls, replicate, 0, static_cast<std::uint32_t>(j), z.data(), d);
        out.row(j) = (spec.mean + root.mat() * z).transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Coefficients and single steps
// ---------------------------------------------------------------------------

/// Drift -cov * grad phi(x).
inline Vector drift(const Potential& pot, const Vector& x, const SymMatrix& cov) {
    if (cov.dim() != x.size()) {
        throw DimMismatch("drift: covariance/point dimensions differ");
    }
    return -(cov.mat() * pot.gradient(x));
}

/// Diffusion coefficient sqrt(2 cov).
inline SymMatrix diffusion(const SymMatrix& cov) {
    return psd_sqrt(SymMatrix(2.0 * cov.mat()));
}

inline SymMatrix ensemble_covariance(const Matrix& positions) {
    const Vector m = positions.colwise().mean().transpose();
    const Matrix centered = positions.rowwise() - m.transpose();
    return SymMatrix(centered.transpose() * centered / static_cast<double>(positions.rows()));
}

namespace detail {

/// One explicit Euler-Maruyama step with the covariance frozen to `cov`:
/// x' = x + dt * (-cov grad phi(x)) + sqrt(dt) * sqrt(2 cov) * g.
inline Matrix em_advance(const Potential& pot, const Matrix& positions, const SymMatrix& cov,
                         double dt, const Matrix& gauss) {
    if (gauss.rows() != positions.rows() || gauss.cols() != positions.cols()) {
        throw SizeMismatch("em_advance: gauss array shape does not match positions");
    }
    const SymMatrix diff = diffusion(cov);
    const double sqrt_dt = std::sqrt(dt);
    Matrix next(positions.rows(), positions.cols());
    for (int j = 0; j < positions.rows(); ++j) {
        const Vector x = positions.row(j).transpose();
        const Vector g = gauss.row(j).transpose();
        next.row(j) =
            (x + dt * drift(pot, x, cov) + sqrt_dt * (diff.mat() * g)).transpose();
    }
    if (!next.allFinite()) {
        throw NonFinite("em_advance: non-finite coordinate after step (blow-up)");
    }
    return next;
}

}  // namespace detail

/// Advances the interacting system by dt; the empirical covariance is
/// computed once from the pre-step state.
inline EnsembleState step_ips(const Potential& pot, const EnsembleState& state, double dt,
                              const Matrix& gauss) {
    const SymMatrix cov = ensemble_covariance(state.positions);
    return {state.time + dt, detail::em_advance(pot, state.positions, cov, dt, gauss)};
}

// ---------------------------------------------------------------------------
// Covariance paths
// ---------------------------------------------------------------------------

/// Time-indexed mean and covariance of the mean-field law, stored on a grid.
/// Between nodes, mean vectors and covariance entries are interpolated
/// linearly; convex combinations of PSD matrices stay PSD, and the diffusion
/// square root clamps any residual rounding.
class CovariancePath {
  public:
    struct Node {
        Vector mean;
        SymMatrix cov;
    };

    CovariancePath(std::vector<double> times, std::vector<Vector> means,
                   std::vector<SymMatrix> covs)
        : times_(std::move(times)), means_(std::move(means)), covs_(std::move(covs)) {
        if (times_.empty() || times_.size() != means_.size() || times_.size() != covs_.size()) {
            throw SizeMismatch("CovariancePath: grid/means/covs sizes differ or empty");
        }
        if (times_.front() != 0.0) {
            throw ConfigError("CovariancePath: grid must start at 0");
        }
        for (std::size_t k = 1; k < times_.size(); ++k) {
            if (!(times_[k] > times_[k - 1])) {
                throw ConfigError("CovariancePath: grid must be strictly increasing");
            }
        }
    }

    std::size_t n_nodes() const { return times_.size(); }
    double t_end() const { return times_.back(); }
    const std::vector<double>& times() const { return times_; }
    const Vector& mean_at_node(std::size_t k) const { return means_[k]; }
    const SymMatrix& cov_at_node(std::size_t k) const { return covs_[k]; }

    bool covers(double t) const {
        const double tol = 1e-9 * std::max(1.0, times_.back());
        return t >= times_.front() - tol && t <= times_.back() + tol;
    }

    Node at(double t) const {
        if (!covers(t)) {
            throw PathOutOfRange("CovariancePath::at: t = " + std::to_string(t) +
                                 " outside [0, " + std::to_string(times_.back()) + "]");
        }
        const double tol = 1e-9 * std::max(1.0, times_.back());
        auto it = std::lower_bound(times_.begin(), times_.end(), t - tol);
        std::size_t k = static_cast<std::size_t>(it - times_.begin());
        if (k >= times_.size()) k = times_.size() - 1;
        if (std::abs(times_[k] - t) <= tol) {
            return {means_[k], covs_[k]};
        }
        // t lies strictly inside (times_[k-1], times_[k]).
        const std::size_t k0 = k - 1;
        const double w = (t - times_[k0]) / (times_[k] - times_[k0]);
        return {(1.0 - w) * means_[k0] + w * means_[k],
                SymMatrix((1.0 - w) * covs_[k0].mat() + w * covs_[k].mat())};
    }

  private:
    std::vector<double> times_;
    std::vector<Vector> means_;
    std::vector<SymMatrix> covs_;
};

/// Advances one mean-field ensemble by dt with coefficients frozen to the
/// path value at the current time. Particles do not interact.
inline EnsembleState step_meanfield(const Potential& pot, const EnsembleState& state,
                                    const CovariancePath& path, double dt, const Matrix& gauss) {
    const auto node = path.at(state.time);
    return {state.time + dt, detail::em_advance(pot, state.positions, node.cov, dt, gauss)};
}

/// Advances both systems with the identical Gaussian array; this shared draw
/// is the synchronous coupling.
inline CoupledEnsembles step_coupled(const Potential& pot, const CoupledEnsembles& coupled,
                                     const CovariancePath& path, double dt, const Matrix& gauss) {
    if (coupled.ips.time != coupled.meanfield.time) {
        throw ConfigError("step_coupled: sub-states have drifted apart in time");
    }
    return {step_ips(pot, coupled.ips, dt, gauss),
            step_meanfield(pot, coupled.meanfield, path, dt, gauss),
            coupled.step_index + 1};
}

/// Mean-field moment evolution for a quadratic potential with precision A and
/// minimizer m*: the system closes to
///     dm/dt = -C A (m - m*),     dC/dt = 2C - 2 C A C,
/// which holds for any initial law with finite second moments. Integrated
/// node-to-node with classical RK4.
inline CovariancePath gaussian_meanfield_path(const SymMatrix& precision,
                                              const Vector& target_mean, const Vector& m0,
                                              const SymMatrix& c0,
                                              const std::vector<double>& grid) {
    if (precision.dim() != target_mean.size() || m0.size() != target_mean.size() ||
        c0.dim() != target_mean.size()) {
        throw DimMismatch("gaussian_meanfield_path: dimension mismatch");
    }
    if (min_eigenvalue(c0) <= 0.0) {
        throw NotPsd("gaussian_meanfield_path: c0 must be positive definite");
    }
    const Matrix& a = precision.mat();
    auto f_mean = [&](const Vector& m, const Matrix& c) -> Vector {
        return -c * (a * (m - target_mean));
    };
    auto f_cov = [&](const Matrix& c) -> Matrix {
        const Matrix cac = c * a * c;
        return 2.0 * c - (cac + cac.transpose());
    };

    std::vector<Vector> means;
    std::vector<SymMatrix> covs;
    means.reserve(grid.size());
    covs.reserve(grid.size());

    Vector m = m0;
    Matrix c = c0.mat();
    auto checked_push = [&](double t) {
        SymMatrix cs{c};
        const double lam = min_eigenvalue(cs);
        const double eps = 1e-10 * (1.0 + frobenius_norm(cs));
        if (lam < -eps) {
            throw OdeStepRejected("gaussian_meanfield_path: covariance lost definiteness at t = " +
                                  std::to_string(t) + " (min eigenvalue " + std::to_string(lam) +
                                  ")");
        }
        if (lam < 0.0) {
            cs = clamp_psd(cs);
        }
        means.push_back(m);
        covs.push_back(cs);
        c = covs.back().mat();
    };

    checked_push(grid.empty() ? 0.0 : grid.front());
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double h = grid[k] - grid[k - 1];
        const Vector km1 = f_mean(m, c);
        const Matrix kc1 = f_cov(c);
        const Vector km2 = f_mean(m + 0.5 * h * km1, c + 0.5 * h * kc1);
        const Matrix kc2 = f_cov(c + 0.5 * h * kc1);
        const Vector km3 = f_mean(m + 0.5 * h * km2, c + 0.5 * h * kc2);
        const Matrix kc3 = f_cov(c + 0.5 * h * kc2);
        const Vector km4 = f_mean(m + h * km3, c + h * kc3);
        const Matrix kc4 = f_cov(c + h * kc3);
        m += (h / 6.0) * (km1 + 2.0 * km2 + 2.0 * km3 + km4);
        c += (h / 6.0) * (kc1 + 2.0 * kc2 + 2.0 * kc3 + kc4);
        c = 0.5 * (c + c.transpose());
        checked_push(grid[k]);
    }
    return CovariancePath(grid, std::move(means), std::move(covs));
}

inline std::vector<double> uniform_grid(double dt, long n_steps) {
    std::vector<double> grid(static_cast<std::size_t>(n_steps) + 1);
    for (long k = 0; k <= n_steps; ++k) {
        grid[static_cast<std::size_t>(k)] = static_cast<double>(k) * dt;
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Stopping-time monitors
// ---------------------------------------------------------------------------

struct MonitorSpec {
    enum class Kind { ips_excursion, meanfield_excursion, coupling_distance };
    Kind kind;
    double r;          // moment order, >= 1
    double threshold;  // radius R, or distance eps for coupling_distance

    MonitorSpec(Kind k, double r_, double thr) : kind(k), r(r_), threshold(thr) {
        if (!(r >= 1.0) || !(threshold > 0.0)) {
            throw ConfigError("MonitorSpec: need r >= 1 and a positive threshold");
        }
    }
};

struct StoppingRecord {
    MonitorSpec::Kind which;
    bool triggered = false;
    std::optional<double> hit_time;
};

/// Watches one stopping-time condition over a trajectory: the first step time
/// at which the monitored radius reaches its threshold.
class StoppingMonitor {
  public:
    explicit StoppingMonitor(const MonitorSpec& spec) : spec_(spec), record_{spec.kind} {}

    void observe(double t, const Matrix& ips_positions, const Matrix& mf_positions) {
        if (record_.triggered) return;
        double stat = 0.0;
        switch (spec_.kind) {
            case MonitorSpec::Kind::ips_excursion:
                stat = moment_radius(ips_positions);
                break;
            case MonitorSpec::Kind::meanfield_excursion:
                stat = moment_radius(mf_positions);
                break;
            case MonitorSpec::Kind::coupling_distance: {
                double acc = 0.0;
                for (int j = 0; j < ips_positions.rows(); ++j) {
                    acc += std::pow((ips_positions.row(j) - mf_positions.row(j)).norm(), spec_.r);
                }
                stat = std::pow(acc / ips_positions.rows(), 1.0 / spec_.r);
                break;
            }
        }
        if (stat >= spec_.threshold) {
            record_.triggered = true;
            record_.hit_time = t;
        }
    }

    const StoppingRecord& record() const { return record_; }

  private:
    double moment_radius(const Matrix& positions) const {
        double acc = 0.0;
        for (int j = 0; j < positions.rows(); ++j) {
            acc += std::pow(positions.row(j).norm(), spec_.r);
        }
        return std::pow(acc / positions.rows(), 1.0 / spec_.r);
    }

    MonitorSpec spec_;
    StoppingRecord record_;
};

// ---------------------------------------------------------------------------
// Full coupled trajectories
// ---------------------------------------------------------------------------

/// Receives optional per-step particle positions (off by default; CSV dump).
struct TrajectorySink {
    virtual ~TrajectorySink() = default;
    virtual void row(std::uint32_t replicate, long step, double time, int particle,
                     const char* system, const Vector& x) = 0;
};

struct TrajectorySummary {
    Vector sup_displacement;  // per particle, over step times
    Matrix final_ips;
    Matrix final_meanfield;
    std::vector<StoppingRecord> stopping;
    double min_cov_eigenvalue = std::numeric_limits<double>::infinity();
    bool blew_up = false;
    double blow_up_time = 0.0;
};

/// Evolves the synchronously coupled pair over [0, t_final], sharing initial
/// draws and Gaussian increments between the two systems. `noise_refine`
/// splits each dt into that many sub-draws and feeds their normalized sum to
/// the step, so runs at dt and dt/refine can consume the same Brownian path.
/// A blow-up (non-finite coordinate) aborts the replicate and is reported in
/// the summary rather than propagated.
inline TrajectorySummary run_coupled_trajectory(const Potential& pot, const CovariancePath& path,
                                                int j_particles, const SdeConfig& cfg,
                                                const GaussianSpec& rho0,
                                                const std::vector<MonitorSpec>& monitors,
                                                const NoiseStream& rng, std::uint32_t replicate,
                                                int noise_refine = 1,
                                                TrajectorySink* sink = nullptr) {
    if (j_particles < 1) {
        throw ConfigError("run_coupled_trajectory: need at least one particle");
    }
    if (noise_refine < 1) {
        throw ConfigError("run_coupled_trajectory: noise_refine must be >= 1");
    }
    const long n_steps = cfg.n_steps();
    if (!path.covers(cfg.t_final)) {
        throw PathOutOfRange("run_coupled_trajectory: path does not cover [0, t_final]");
    }
    const int d = pot.dim();
    if (rho0.dim() != d) {
        throw DimMismatch("run_coupled_trajectory: rho0 dimension differs from potential");
    }

    const Matrix x0 = sample_gaussian(rho0, j_particles, rng, StreamClass::initial_draw, replicate);
    CoupledEnsembles st{{0.0, x0}, {0.0, x0}, 0};

    TrajectorySummary out;
    out.sup_displacement = Vector::Zero(j_particles);
    std::vector<StoppingMonitor> mons;
    mons.reserve(monitors.size());
    for (const auto& m : monitors) mons.emplace_back(m);

    const double inv_sqrt_refine = 1.0 / std::sqrt(static_cast<double>(noise_refine));
    Matrix gauss(j_particles, d), fine(j_particles, d);
    Vector row(d);

    auto observe = [&](double t) {
        out.min_cov_eigenvalue =
            std::min(out.min_cov_eigenvalue, min_eigenvalue(ensemble_covariance(st.ips.positions)));
        for (auto& m : mons) m.observe(t, st.ips.positions, st.meanfield.positions);
        if (sink != nullptr) {
            for (int j = 0; j < j_particles; ++j) {
                sink->row(replicate, st.step_index, t, j, "ips", st.ips.positions.row(j).transpose());
                sink->row(replicate, st.step_index, t, j, "mf",
                          st.meanfield.positions.row(j).transpose());
            }
        }
    };

    observe(0.0);
    for (long k = 0; k < n_steps; ++k) {
        gauss.setZero();
        for (int f = 0; f < noise_refine; ++f) {
            const auto fine_step = static_cast<std::uint32_t>(k * noise_refine + f);
            for (int j = 0; j < j_particles; ++j) {
                rng.fill_gauss(StreamClass::dynamics, replicate, fine_step,
                               static_cast<std::uint32_t>(j), row.data(), d);
                fine.row(j) = row;
            }
            gauss += fine;
        }
        gauss *= inv_sqrt_refine;

        try {
            st = step_coupled(pot, st, path, cfg.dt, gauss);
        } catch (const NonFinite&) {
            out.blew_up = true;
            out.blow_up_time = static_cast<double>(k + 1) * cfg.dt;
            break;
        }
        // Re-anchor times to the grid to keep path lookups exact at nodes.
        st.ips.time = st.meanfield.time = static_cast<double>(k + 1) * cfg.dt;

        for (int j = 0; j < j_particles; ++j) {
            const double disp = (st.ips.positions.row(j) - st.meanfield.positions.row(j)).norm();
            out.sup_displacement[j] = std::max(out.sup_displacement[j], disp);
        }
        observe(st.ips.time);
    }

    out.final_ips = st.ips.positions;
    out.final_meanfield = st.meanfield.positions;
    for (const auto& m : mons) out.stopping.push_back(m.record());
    return out;
}

}  // namespace poclab
