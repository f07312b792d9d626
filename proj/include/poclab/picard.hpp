#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poclab/dynamics.hpp"
#include "poclab/parallel.hpp"

namespace poclab {

struct PicardResult {
    CovariancePath path;
    int iterations = 0;
    double final_gap = std::numeric_limits<double>::infinity();
    bool converged = false;
    std::vector<double> gap_history;
};

namespace detail {

// Per-node first and second moment accumulators for one block of particles.
struct MomentAccumulator {
    std::vector<Vector> sum_x;
    std::vector<Matrix> sum_xx;

    MomentAccumulator(std::size_t n_nodes, int d)
        : sum_x(n_nodes, Vector::Zero(d)), sum_xx(n_nodes, Matrix::Zero(d, d)) {}

    void record(std::size_t node, const Matrix& positions) {
        sum_x[node] += positions.colwise().sum().transpose();
        sum_xx[node] += positions.transpose() * positions;
    }

    void merge(const MomentAccumulator& other) {
        for (std::size_t k = 0; k < sum_x.size(); ++k) {
            sum_x[k] += other.sum_x[k];
            sum_xx[k] += other.sum_xx[k];
        }
    }
};

}  // namespace detail

/// One application of the fixed-point map: evolves `n_particles` independent
/// particles under the frozen coefficient path and re-estimates mean and
/// covariance at every grid node. The law at time zero is known exactly, so
/// node 0 carries the analytic initial moments.
inline CovariancePath picard_apply_map(const Potential& pot, const GaussianSpec& rho0,
                                       const CovariancePath& frozen, int n_particles,
                                       const NoiseStream& rng, std::uint32_t iteration,
                                       unsigned n_threads) {
    const int d = pot.dim();
    const auto& grid = frozen.times();
    const std::size_t n_nodes = grid.size();

    // Coefficients are shared by all particles: one drift matrix and one
    // diffusion square root per node, frozen at the step's left endpoint.
    std::vector<Matrix> covs(n_nodes), diffs(n_nodes);
    for (std::size_t k = 0; k < n_nodes; ++k) {
        covs[k] = frozen.cov_at_node(k).mat();
        diffs[k] = diffusion(frozen.cov_at_node(k)).mat();
    }

    constexpr int kBlock = 8192;
    const int n_blocks = (n_particles + kBlock - 1) / kBlock;
    std::vector<detail::MomentAccumulator> partials(
        static_cast<std::size_t>(n_blocks), detail::MomentAccumulator(n_nodes, d));

    parallel_for(static_cast<std::size_t>(n_blocks), n_threads, [&](std::size_t b) {
        const int lo = static_cast<int>(b) * kBlock;
        const int hi = std::min(n_particles, lo + kBlock);
        const int n = hi - lo;
        auto& acc = partials[b];

        Matrix pos(n, d);
        Vector z(d);
        const SymMatrix root0 = psd_sqrt(rho0.cov);
        for (int j = 0; j < n; ++j) {
            rng.fill_gauss(StreamClass::picard_init, iteration, 0,
                           static_cast<std::uint32_t>(lo + j), z.data(), d);
            pos.row(j) = (rho0.mean + root0.mat() * z).transpose();
        }
        acc.record(0, pos);

        Vector g(d);
        for (std::size_t k = 0; k + 1 < n_nodes; ++k) {
            const double dt = grid[k + 1] - grid[k];
            const double sqrt_dt = std::sqrt(dt);
            const Matrix& cov = covs[k];
            const Matrix& diff = diffs[k];
            for (int j = 0; j < n; ++j) {
                const Vector x = pos.row(j).transpose();
                rng.fill_gauss(StreamClass::picard_noise, iteration,
                               static_cast<std::uint32_t>(k),
                               static_cast<std::uint32_t>(lo + j), g.data(), d);
                pos.row(j) =
                    (x - dt * (cov * pot.gradient(x)) + sqrt_dt * (diff * g)).transpose();
            }
            if (!pos.allFinite()) {
                throw NonFinite("picard_apply_map: particle blow-up at t = " +
                                std::to_string(grid[k + 1]));
            }
            acc.record(k + 1, pos);
        }
    });

    // Deterministic reduction in block order, independent of thread count.
    detail::MomentAccumulator total(n_nodes, d);
    for (const auto& p : partials) total.merge(p);

    std::vector<Vector> means(n_nodes);
    std::vector<SymMatrix> out_covs;
    out_covs.reserve(n_nodes);
    means[0] = rho0.mean;
    out_covs.push_back(rho0.cov);
    const double inv_n = 1.0 / static_cast<double>(n_particles);
    for (std::size_t k = 1; k < n_nodes; ++k) {
        means[k] = total.sum_x[k] * inv_n;
        out_covs.push_back(
            SymMatrix(total.sum_xx[k] * inv_n - means[k] * means[k].transpose()));
    }
    return CovariancePath(grid, std::move(means), std::move(out_covs));
}

/// Fixed-point construction of the mean-field moment path: starting from the
/// constant path at the initial moments, repeatedly evolve an independent
/// particle cloud (fresh draws every iteration) under the frozen path and
/// re-estimate. Stops when the sup-norm gap between successive iterates drops
/// below tol; otherwise returns the last iterate with converged = false.
inline PicardResult picard_covariance_path(const Potential& pot, const GaussianSpec& rho0,
                                           const std::vector<double>& grid, int n_particles,
                                           int max_iter, double tol, std::uint64_t seed,
                                           double cov_floor = 1e-12, unsigned n_threads = 1) {
    if (n_particles < 1000) {
        throw ConfigError("picard_covariance_path: n_particles must be >= 1000");
    }
    if (!(tol > 0.0) || max_iter < 1) {
        throw ConfigError("picard_covariance_path: need tol > 0 and max_iter >= 1");
    }
    if (pot.dim() != rho0.dim()) {
        throw DimMismatch("picard_covariance_path: potential/rho0 dimensions differ");
    }
    if (min_eigenvalue(rho0.cov) <= 0.0) {
        throw NotPsd("picard_covariance_path: rho0 covariance must be positive definite");
    }

    const NoiseStream rng(seed);
    const std::size_t n_nodes = grid.size();
    PicardResult res{CovariancePath(grid, std::vector<Vector>(n_nodes, rho0.mean),
                                    std::vector<SymMatrix>(n_nodes, rho0.cov))};

    for (int it = 0; it < max_iter; ++it) {
        CovariancePath next = picard_apply_map(pot, rho0, res.path, n_particles, rng,
                                               static_cast<std::uint32_t>(it), n_threads);
        double gap = 0.0;
        for (std::size_t k = 0; k < n_nodes; ++k) {
            const double dc =
                (next.cov_at_node(k).mat() - res.path.cov_at_node(k).mat()).norm();
            const double dm = (next.mean_at_node(k) - res.path.mean_at_node(k)).norm();
            gap = std::max(gap, dc + dm);
            if (min_eigenvalue(next.cov_at_node(k)) < cov_floor) {
                throw CovarianceCollapse(
                    "picard_covariance_path: covariance below floor at t = " +
                    std::to_string(grid[k]));
            }
        }
        res.path = std::move(next);
        res.gap_history.push_back(gap);
        res.final_gap = gap;
        res.iterations = it + 1;
        if (gap < tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace poclab
