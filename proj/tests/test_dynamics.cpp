#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "poclab/dynamics.hpp"
#include "poclab/rng.hpp"

using namespace poclab;

namespace {

Potential std_quadratic(int d) {
    return Potential::quadratic(SymMatrix::identity(d), Vector::Zero(d), 1.0);
}

CovariancePath constant_path(double t_end, int n_nodes, const Vector& m, const SymMatrix& c) {
    std::vector<double> times(n_nodes);
    for (int k = 0; k < n_nodes; ++k) times[k] = t_end * k / (n_nodes - 1);
    return CovariancePath(times, std::vector<Vector>(n_nodes, m),
                          std::vector<SymMatrix>(n_nodes, c));
}

}  // namespace

TEST_CASE("drift") {
    const auto q2 = std_quadratic(2);
    CHECK(drift(q2, Vector{{1.5, -2.0}}, SymMatrix::zero(2)).norm() == 0.0);

    const auto d = drift(q2, Vector{{1.0, 1.0}}, SymMatrix::diagonal(Vector{{1.0, 0.0}}));
    CHECK((d - Vector{{-1.0, 0.0}}).norm() < 1e-15);

    const auto qa = Potential::quadratic(SymMatrix::diagonal(Vector{{2.0, 1.0}}), Vector::Zero(2));
    CHECK((drift(qa, Vector{{1.0, 2.0}}, SymMatrix::identity(2)) - Vector{{-2.0, -2.0}}).norm() <
          1e-15);
}

TEST_CASE("diffusion") {
    CHECK(frobenius_norm(diffusion(SymMatrix::zero(2))) == 0.0);
    CHECK((diffusion(SymMatrix::identity(2)).mat() - std::sqrt(2.0) * Matrix::Identity(2, 2))
              .norm() < 1e-14);
    const auto s = diffusion(SymMatrix::diagonal(Vector{{2.0, 8.0}}));
    CHECK(s(0, 0) == Catch::Approx(2.0));
    CHECK(s(1, 1) == Catch::Approx(4.0));
}

TEST_CASE("step_ips frozen cases") {
    const auto q1 = std_quadratic(1);

    // Single particle: covariance vanishes, dynamics freeze.
    EnsembleState single{0.0, Matrix::Constant(1, 1, 3.0)};
    const auto stepped = step_ips(q1, single, 0.5, Matrix::Constant(1, 1, 1.7));
    CHECK(stepped.positions(0, 0) == 3.0);
    CHECK(stepped.time == Catch::Approx(0.5));

    // All particles at the minimizer: gradient and covariance both vanish.
    const auto q2 = std_quadratic(2);
    EnsembleState at_center{0.0, Matrix::Zero(4, 2)};
    CHECK(step_ips(q2, at_center, 0.1, Matrix::Zero(4, 2)).positions.norm() == 0.0);

    // Two particles at -1 and 1: empirical covariance is exactly 1, so the
    // noiseless update is x -> x - dt x.
    Matrix pts(2, 1);
    pts << -1.0, 1.0;
    const auto out = step_ips(q1, {0.0, pts}, 0.01, Matrix::Zero(2, 1));
    CHECK(out.positions(0, 0) == Catch::Approx(-0.99));
    CHECK(out.positions(1, 0) == Catch::Approx(0.99));
}

TEST_CASE("step_ips rejects mismatched noise and flags blow-up") {
    const auto q1 = std_quadratic(1);
    Matrix pts(2, 1);
    pts << -1.0, 1.0;
    CHECK_THROWS_AS(step_ips(q1, {0.0, pts}, 0.01, Matrix::Zero(3, 1)), SizeMismatch);

    // A quartic with an enormous step overshoots to non-finite values.
    const auto quartic = Potential::even_power(2, 1.0, Vector::Zero(1), 1.0);
    Matrix big(2, 1);
    big << -1e4, 1e4;
    EnsembleState st{0.0, big};
    CHECK_THROWS_AS(
        [&] {
            for (int k = 0; k < 50; ++k) st = step_ips(quartic, st, 1.0, Matrix::Zero(2, 1));
        }(),
        NonFinite);
}

TEST_CASE("step_meanfield uses the frozen path") {
    const auto q1 = std_quadratic(1);

    const auto zero_path = constant_path(1.0, 11, Vector::Zero(1), SymMatrix::zero(1));
    Matrix pts(3, 1);
    pts << -1.0, 0.5, 2.0;
    const auto frozen = step_meanfield(q1, {0.0, pts}, zero_path, 0.1, Matrix::Zero(3, 1));
    CHECK((frozen.positions - pts).norm() == 0.0);

    const auto unit_path = constant_path(1.0, 11, Vector::Zero(1), SymMatrix::identity(1));
    Matrix x2(1, 1);
    x2 << 2.0;
    const auto out = step_meanfield(q1, {0.0, x2}, unit_path, 0.01, Matrix::Zero(1, 1));
    CHECK(out.positions(0, 0) == Catch::Approx(1.98));

    CHECK_THROWS_AS(step_meanfield(q1, {2.0, x2}, unit_path, 0.01, Matrix::Zero(1, 1)),
                    PathOutOfRange);
}

TEST_CASE("covariance path interpolation") {
    std::vector<double> times{0.0, 1.0};
    std::vector<Vector> means{Vector{{0.0}}, Vector{{2.0}}};
    std::vector<SymMatrix> covs{SymMatrix::identity(1), SymMatrix::diagonal(Vector{{3.0}})};
    const CovariancePath path(times, means, covs);

    CHECK(path.at(0.0).mean[0] == 0.0);
    CHECK(path.at(1.0).cov(0, 0) == 3.0);
    const auto mid = path.at(0.25);
    CHECK(mid.mean[0] == Catch::Approx(0.5));
    CHECK(mid.cov(0, 0) == Catch::Approx(1.5));
    CHECK_THROWS_AS(path.at(1.5), PathOutOfRange);
    CHECK_THROWS_AS(CovariancePath({0.5, 1.0}, means, covs), ConfigError);
    CHECK_THROWS_AS(CovariancePath({0.0, 0.0}, means, covs), ConfigError);
}

TEST_CASE("step_coupled with matching coefficients keeps systems identical") {
    const auto q2 = std_quadratic(2);
    const NoiseStream rng(17);
    const Matrix x0 = rng.gauss_matrix(StreamClass::initial_draw, 0, 0, 8, 2);
    const SymMatrix emp_cov = ensemble_covariance(x0);
    // Path nodes equal to the empirical covariance: both systems see the
    // same coefficients and the same noise, so they stay bitwise equal.
    const auto path = constant_path(1.0, 5, Vector::Zero(2), emp_cov);

    CoupledEnsembles st{{0.0, x0}, {0.0, x0}, 0};
    const Matrix gauss = rng.gauss_matrix(StreamClass::dynamics, 0, 0, 8, 2);
    const auto next = step_coupled(q2, st, path, 0.25, gauss);
    CHECK(next.step_index == 1);
    CHECK((next.ips.positions - next.meanfield.positions).norm() == 0.0);
}

TEST_CASE("exchangeability: permuting particles and noise permutes outputs") {
    const auto q2 = std_quadratic(2);
    const NoiseStream rng(23);
    const Matrix x0 = rng.gauss_matrix(StreamClass::initial_draw, 1, 0, 4, 2);
    const Matrix g0 = rng.gauss_matrix(StreamClass::dynamics, 1, 0, 4, 2);
    const Matrix g1 = rng.gauss_matrix(StreamClass::dynamics, 1, 1, 4, 2);

    const std::vector<int> perm{2, 0, 3, 1};
    Matrix x0p(4, 2), g0p(4, 2), g1p(4, 2);
    for (int j = 0; j < 4; ++j) {
        x0p.row(j) = x0.row(perm[j]);
        g0p.row(j) = g0.row(perm[j]);
        g1p.row(j) = g1.row(perm[j]);
    }

    EnsembleState a{0.0, x0}, b{0.0, x0p};
    a = step_ips(q2, a, 0.05, g0);
    a = step_ips(q2, a, 0.05, g1);
    b = step_ips(q2, b, 0.05, g0p);
    b = step_ips(q2, b, 0.05, g1p);
    for (int j = 0; j < 4; ++j) {
        CHECK((a.positions.row(perm[j]) - b.positions.row(j)).norm() < 1e-12);
    }
}

TEST_CASE("gaussian_meanfield_path fixed point and closed forms") {
    // Fixed point: m0 = target, c0 = A^-1 gives zero derivatives exactly.
    const SymMatrix a(Matrix{{2.0, 0.5}, {0.5, 1.0}});
    const Vector target{{1.0, -0.5}};
    const SymMatrix c0 = invert_spd(a, 1e-6);
    const auto grid = uniform_grid(1e-3, 1000);
    const auto path = gaussian_meanfield_path(a, target, target, c0, grid);
    double worst = 0.0;
    for (std::size_t k = 0; k < path.n_nodes(); ++k) {
        worst = std::max(worst, (path.cov_at_node(k).mat() - c0.mat()).norm() +
                                    (path.mean_at_node(k) - target).norm());
    }
    CHECK(worst <= 1e-8);

    // d = 1, A = 1, C0 = 2: dC/dt = 2C(1-C), the logistic curve
    // C(t) = 2 e^{2t} / (1 + 2(e^{2t} - 1)).
    const auto grid1 = uniform_grid(1e-3, 1000);
    const auto logistic =
        gaussian_meanfield_path(SymMatrix::identity(1), Vector::Zero(1), Vector::Zero(1),
                                SymMatrix::diagonal(Vector{{2.0}}), grid1);
    const double expected = 2.0 * std::exp(2.0) / (1.0 + 2.0 * (std::exp(2.0) - 1.0));
    CHECK(logistic.at(1.0).cov(0, 0) == Catch::Approx(expected).epsilon(1e-9));

    // With C pinned at the unit fixed point, dm/dt = -m: m(t) = 5 e^{-t}.
    const auto mean_path =
        gaussian_meanfield_path(SymMatrix::identity(1), Vector::Zero(1), Vector{{5.0}},
                                SymMatrix::identity(1), grid1);
    CHECK(mean_path.at(1.0).mean[0] == Catch::Approx(5.0 * std::exp(-1.0)).epsilon(1e-9));

    // Every node stays PSD.
    for (std::size_t k = 0; k < logistic.n_nodes(); ++k) {
        CHECK(min_eigenvalue(logistic.cov_at_node(k)) >= -1e-10);
    }

    CHECK_THROWS_AS(gaussian_meanfield_path(a, target, target, SymMatrix::zero(2), grid),
                    NotPsd);

    // A single huge step overshoots the quadratic flow far past zero: the
    // covariance loses definiteness beyond the clamp and the step is
    // rejected.
    CHECK_THROWS_AS(
        gaussian_meanfield_path(SymMatrix::identity(1), Vector::Zero(1), Vector::Zero(1),
                                SymMatrix::diagonal(Vector{{3.0}}), {0.0, 1.0}),
        OdeStepRejected);
}

TEST_CASE("sde config validates the step grid") {
    SdeConfig ok{0.001, 1.0, 0u, 0.0};
    CHECK(ok.n_steps() == 1000);
    SdeConfig ragged{0.3, 1.0, 0u, 0.0};
    CHECK_THROWS_AS(ragged.n_steps(), ConfigError);
    SdeConfig nonpos{0.0, 1.0, 0u, 0.0};
    CHECK_THROWS_AS(nonpos.n_steps(), ConfigError);
}

TEST_CASE("stopping monitors") {
    CHECK_THROWS_AS(MonitorSpec(MonitorSpec::Kind::ips_excursion, 0.5, 1.0), ConfigError);
    CHECK_THROWS_AS(MonitorSpec(MonitorSpec::Kind::ips_excursion, 2.0, 0.0), ConfigError);

    // Ensemble pinned at the origin never triggers a positive radius.
    StoppingMonitor quiet({MonitorSpec::Kind::ips_excursion, 2.0, 0.5});
    const Matrix zeros = Matrix::Zero(4, 2);
    for (int k = 0; k < 10; ++k) quiet.observe(0.1 * k, zeros, zeros);
    CHECK_FALSE(quiet.record().triggered);

    // Exact threshold equality at the first observed time.
    Matrix pts(2, 1);
    pts << 2.0, 2.0;  // mean |x|^2 = 4 = R^2 with R = 2
    StoppingMonitor exact({MonitorSpec::Kind::ips_excursion, 2.0, 2.0});
    exact.observe(0.0, pts, pts);
    REQUIRE(exact.record().triggered);
    CHECK(exact.record().hit_time.value() == 0.0);

    // Coupling distance monitor sees the identity pairing.
    Matrix a(2, 1), b(2, 1);
    a << 0.0, 0.0;
    b << 3.0, 3.0;
    StoppingMonitor coup({MonitorSpec::Kind::coupling_distance, 2.0, 3.0});
    coup.observe(0.25, a, b);
    REQUIRE(coup.record().triggered);
    CHECK(coup.record().hit_time.value() == 0.25);
}

TEST_CASE("run_coupled_trajectory basics") {
    const auto q1 = std_quadratic(1);
    const GaussianSpec rho0(Vector::Zero(1), SymMatrix::identity(1));
    SdeConfig cfg;
    cfg.dt = 0.01;
    cfg.t_final = 0.5;
    cfg.seed = 31337;
    const auto grid = uniform_grid(cfg.dt, cfg.n_steps());
    const auto path = gaussian_meanfield_path(SymMatrix::identity(1), Vector::Zero(1),
                                              rho0.mean, rho0.cov, grid);
    const NoiseStream rng(cfg.seed);

    const auto s1 = run_coupled_trajectory(q1, path, 64, cfg, rho0, {}, rng, 0);
    CHECK_FALSE(s1.blew_up);
    CHECK(s1.sup_displacement.size() == 64);
    // Finite ensembles see different covariances, so the coupled gap is
    // strictly positive in practice.
    CHECK(s1.sup_displacement.minCoeff() > 0.0);
    CHECK(s1.min_cov_eigenvalue > 0.0);

    // Determinism: identical seeds give bitwise-identical summaries.
    const auto s2 = run_coupled_trajectory(q1, path, 64, cfg, rho0, {}, rng, 0);
    CHECK((s1.final_ips - s2.final_ips).norm() == 0.0);
    CHECK((s1.final_meanfield - s2.final_meanfield).norm() == 0.0);
    CHECK((s1.sup_displacement - s2.sup_displacement).norm() == 0.0);

    // Different replicate index gives a different realization.
    const auto s3 = run_coupled_trajectory(q1, path, 64, cfg, rho0, {}, rng, 1);
    CHECK((s1.final_ips - s3.final_ips).norm() > 0.0);
}

TEST_CASE("noise refinement reuses the fine Brownian increments") {
    // One coarse step with refine = 2 consumes the two fine draws g0, g1 as
    // (g0 + g1)/sqrt(2), i.e. the same Brownian increment the dt/2 run sees.
    // With the path pinned at C = 1 the mean-field update is explicit:
    //   X1 = x0 (1 - dt) + sqrt(dt) (g0 + g1).
    const auto q1 = std_quadratic(1);
    const GaussianSpec rho0(Vector::Zero(1), SymMatrix::identity(1));
    SdeConfig coarse;
    coarse.dt = 0.2;
    coarse.t_final = 0.2;
    coarse.seed = 5150;
    const auto path = constant_path(0.2, 3, Vector::Zero(1), SymMatrix::identity(1));
    const NoiseStream rng(coarse.seed);
    const auto refined = run_coupled_trajectory(q1, path, 4, coarse, rho0, {}, rng, 0, 2);

    const Matrix x0 = sample_gaussian(rho0, 4, rng, StreamClass::initial_draw, 0);
    Vector row(1);
    for (int j = 0; j < 4; ++j) {
        double gsum = 0.0;
        for (std::uint32_t s = 0; s < 2; ++s) {
            rng.fill_gauss(StreamClass::dynamics, 0, s, static_cast<std::uint32_t>(j), row.data(),
                           1);
            gsum += row[0];
        }
        const double expected = x0(j, 0) * (1.0 - coarse.dt) + std::sqrt(coarse.dt) * gsum;
        CHECK(refined.final_meanfield(j, 0) == Catch::Approx(expected).margin(1e-13));
    }
}
