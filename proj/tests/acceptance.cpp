// Acceptance suite: end-to-end statistical and exactness checks, one
// pass/fail line per criterion. Each criterion carries a wall-clock budget;
// all randomness is seeded, so reruns are bit-identical.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "poclab/harness.hpp"
#include "poclab/io.hpp"
#include "poclab/picard.hpp"

using namespace poclab;
namespace fs = std::filesystem;

namespace {

constexpr unsigned kThreads = 2;

struct Check {
    bool ok = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        ok = ok && cond;
        detail << (cond ? "" : "FAILED: ") << what << "; ";
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// 1. Matrix square-root algebra on random PSD inputs.
void crit1(Check& c) {
    const auto rep = psd_property_suite(10000, 6, 0xACCE01u);
    c.require(rep.trials == 10000, "ran 10000 trials");
    c.require(rep.violations == 0,
              "violations = " + std::to_string(rep.violations) + " (want 0), worst slack " +
                  fmt(rep.worst_slack));
}

// 2. Covariance stability inequalities with exact assignment W2.
void crit2(Check& c) {
    const auto rep = stability_property_suite(10000, 3, 8, 0xACCE02u);
    c.require(rep.trials == 10000, "ran 10000 trials");
    c.require(rep.violations == 0,
              "violations = " + std::to_string(rep.violations) + " (want 0), worst slack " +
                  fmt(rep.worst_slack));
}

// 3. Empirical covariance Monte Carlo rate, standard normal in d = 1.
void crit3(Check& c) {
    const GaussianSpec rho0(Vector::Zero(1), SymMatrix::identity(1));
    const auto res = covariance_mc_rate(rho0, 2.0, {16, 32, 64, 128, 256, 512, 1024}, 2000,
                                        303u, false, kThreads);
    const auto& row16 = res.cov_fit.per_j.front();
    const double analytic = 31.0 / 256.0;  // (2J-1)/J^2 at J = 16
    c.require(std::abs(row16.estimate - analytic) <= 3.0 * row16.std_error,
              "J=16 estimate " + fmt(row16.estimate) + " brackets " + fmt(analytic) +
                  " within 3 stderr (" + fmt(3.0 * row16.std_error) + ")");
    c.require(res.cov_fit.slope >= -1.25 && res.cov_fit.slope <= -0.75,
              "slope " + fmt(res.cov_fit.slope) + " in [-1.25, -0.75]");
}

RateExperimentConfig quadratic_chaos_config() {
    RateExperimentConfig cfg{
        Potential::quadratic(SymMatrix::identity(2), Vector::Zero(2)),
        2.0,
        {8, 16, 32, 64, 128, 256},
        100,
        SdeConfig{1e-3, 1.0, 1001u, 0.0},
        GaussianSpec(Vector::Constant(2, 1.0), SymMatrix::identity(2))};
    cfg.threads = kThreads;
    return cfg;
}

RateFit run_chaos(const RateExperimentConfig& cfg) {
    const auto mf = make_meanfield_path(cfg);
    std::vector<JEstimate> rows;
    for (const int j : cfg.j_values) rows.push_back(estimate_chaos_error(cfg, j, mf.path));
    return fit_from_estimates(rows);
}

// 4. Pathwise coupling rate for the globally Lipschitz (quadratic) case,
//    with a time-step robustness check on a shared Brownian path.
void crit4(Check& c) {
    const auto cfg = quadratic_chaos_config();
    const RateFit fit = run_chaos(cfg);
    c.require(fit.slope >= -1.30 && fit.slope <= -0.70,
              "slope " + fmt(fit.slope) + " +/- " + fmt(fit.slope_stderr) + " in [-1.30, -0.70]");

    // Halving dt: the refined-noise run at dt and the plain run at dt/2
    // consume identical Brownian increments, isolating discretization bias.
    auto refined = cfg;
    refined.noise_refine = 2;
    const RateFit fit_refined = run_chaos(refined);
    auto halved = cfg;
    halved.sde.dt = cfg.sde.dt / 2.0;
    const RateFit fit_halved = run_chaos(halved);
    const double move = std::abs(fit_refined.slope - fit_halved.slope);
    c.require(move < fit_refined.slope_stderr,
              "dt halving moves slope by " + fmt(move) + " < stderr " +
                  fmt(fit_refined.slope_stderr));
}

// 5. Pathwise coupling rate for the quartic (locally Lipschitz) case with
//    the fixed-point coefficient path.
void crit5(Check& c) {
    RateExperimentConfig cfg{Potential::even_power(2, 1.0, Vector::Zero(1)),
                             2.0,
                             {8, 16, 32, 64, 128, 256},
                             100,
                             SdeConfig{1e-3, 1.0, 2002u, 0.0},
                             GaussianSpec(Vector::Zero(1), SymMatrix::identity(1))};
    cfg.threads = kThreads;
    cfg.picard_particles = 100000;
    cfg.picard_tol = 1e-3;
    cfg.picard_max_iter = 12;
    const RateFit fit = run_chaos(cfg);
    c.require(fit.slope >= -1.35 && fit.slope <= -0.65,
              "slope " + fmt(fit.slope) + " +/- " + fmt(fit.slope_stderr) + " in [-1.35, -0.65]");
}

// 6. Fixed-point path against the closed-form quadratic moment flow.
void crit6(Check& c) {
    const auto pot =
        Potential::quadratic(SymMatrix(2.0 * Matrix::Identity(2, 2)), Vector::Zero(2));
    const GaussianSpec rho0(Vector::Constant(2, 0.5), SymMatrix::diagonal(Vector{{0.5, 0.25}}));
    const int n = 200000;
    const double tol = 0.01;
    const auto grid = uniform_grid(2e-3, 500);

    const auto res = picard_covariance_path(pot, rho0, grid, n, 10, tol, 3003u, 1e-12, kThreads);
    c.require(res.converged && res.iterations <= 10,
              "converged in " + std::to_string(res.iterations) + " iterations (<= 10)");

    const auto closed =
        gaussian_meanfield_path(pot.precision(), pot.center(), rho0.mean, rho0.cov, grid);
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        worst = std::max(worst,
                         (res.path.cov_at_node(k).mat() - closed.cov_at_node(k).mat()).norm());
    }
    const double budget = tol + 3.0 / std::sqrt(static_cast<double>(n));
    c.require(worst <= budget,
              "max node discrepancy " + fmt(worst) + " <= tol + 3/sqrt(n) = " + fmt(budget));
}

// 7. The stationary Gaussian is an exact fixed point of the moment flow.
void crit7(Check& c) {
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
    c.require(worst <= 1e-8, "max drift from the fixed point " + fmt(worst) + " <= 1e-8");
}

// 8. Sampling error of ensemble averages at fixed time.
void crit8(Check& c) {
    const auto pot = Potential::quadratic(SymMatrix::identity(1), Vector::Zero(1));
    const GaussianSpec rho0(Vector::Constant(1, 1.0), SymMatrix::identity(1));
    const SdeConfig sde{1e-3, 1.0, 8008u, 0.0};
    const RateFit fit =
        sampling_error_rate(pot, Observable::squared_norm(1), 0.5, 2.0,
                            {16, 32, 64, 128, 256, 512, 1024}, 500, sde, rho0, kThreads);
    c.require(fit.slope >= -0.65 && fit.slope <= -0.35,
              "slope " + fmt(fit.slope) + " +/- " + fmt(fit.slope_stderr) + " in [-0.65, -0.35]");
}

// 9. Excursion probability decay for i.i.d. half-normal variables.
void crit9(Check& c) {
    const NoiseStream stream(909u);
    const double R = std::sqrt(2.0 / M_PI) + 0.5;
    std::vector<ExcursionEstimate> est;
    for (const int j : {4, 16, 64}) {
        est.push_back(excursion_probability(abs_normal_sampler(), 2.0, R, j, 100000, stream));
    }
    c.require(est[0].frequency > est[1].frequency && est[1].frequency > est[2].frequency,
              "frequencies strictly decreasing: " + fmt(est[0].frequency) + " > " +
                  fmt(est[1].frequency) + " > " + fmt(est[2].frequency));
    const double c_hat = 4.0 * est[0].frequency;
    for (const auto& e : est) {
        const double bound = c_hat / e.j;
        const double slack =
            2.0 * std::sqrt(e.std_error * e.std_error +
                            std::pow(4.0 * est[0].std_error / e.j, 2));
        c.require(e.frequency <= bound + slack,
                  "P(" + std::to_string(e.j) + ") = " + fmt(e.frequency) + " <= C/J = " +
                      fmt(bound) + " within 2 stderr");
    }
}

// 10. Byte-identical reproduction of experiment CSVs from their manifests,
//     including under multi-threaded execution.
void crit10(Check& c) {
    const fs::path dir = fs::temp_directory_path() / "poclab_acceptance";
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir);
    const std::string bin = POCLAB_BIN;

    const auto cfg_path = dir / "chaos.cfg";
    {
        std::ofstream out(cfg_path);
        out << "dim = 1\npotential.kind = quadratic\np = 2\nj_values = 8, 16, 32\n"
               "replicates = 16\nsde.dt = 0.01\nsde.t_final = 0.2\nseed = 4242\n";
    }
    auto run = [&](const std::string& args) {
        const std::string cmd = bin + " " + args + " > /dev/null 2>&1";
        return WEXITSTATUS(std::system(cmd.c_str()));
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    };

    const fs::path run1 = dir / "run1", run2 = dir / "run2";
    c.require(run("rate-chaos --config " + cfg_path.string() + " --threads 1 --out-dir " +
                  run1.string()) == 0,
              "single-threaded run exits 0");
    c.require(run("rate-chaos --config " + (run1 / "rate_chaos_manifest.json").string() +
                  " --threads 2 --out-dir " + run2.string()) == 0,
              "manifest re-run (2 threads) exits 0");
    c.require(!slurp(run1 / "rate_chaos.csv").empty() &&
                  slurp(run1 / "rate_chaos.csv") == slurp(run2 / "rate_chaos.csv"),
              "rate_chaos.csv identical across re-run and thread counts");

    const auto cov_cfg = dir / "cov.cfg";
    {
        std::ofstream out(cov_cfg);
        out << "dim = 1\np = 2\nj_values = 8, 32, 128\nreplicates = 300\nseed = 7\n";
    }
    const fs::path run3 = dir / "run3", run4 = dir / "run4";
    c.require(run("cov-rate --config " + cov_cfg.string() + " --threads 2 --out-dir " +
                  run3.string()) == 0,
              "cov-rate run exits 0");
    c.require(run("cov-rate --config " + (run3 / "cov_rate_manifest.json").string() +
                  " --threads 1 --out-dir " + run4.string()) == 0,
              "cov-rate manifest re-run exits 0");
    c.require(!slurp(run3 / "cov_rate.csv").empty() &&
                  slurp(run3 / "cov_rate.csv") == slurp(run4 / "cov_rate.csv"),
              "cov_rate.csv identical across re-run and thread counts");
    fs::remove_all(dir, ec);
}

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<void(Check&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    if (argc > 2 && std::string(argv[1]) == "--only") only = std::atoi(argv[2]);

    const std::vector<Criterion> criteria{
        {1, "matrix square-root algebra on random PSD inputs", 30.0, crit1},
        {2, "covariance stability inequalities (exact W2)", 60.0, crit2},
        {3, "empirical covariance Monte Carlo rate", 120.0, crit3},
        {4, "coupling rate, quadratic potential, with dt robustness", 900.0, crit4},
        {5, "coupling rate, quartic potential, fixed-point path", 1200.0, crit5},
        {6, "fixed-point path vs closed-form moment flow", 300.0, crit6},
        {7, "stationary Gaussian fixed point", 1.0, crit7},
        {8, "observable sampling-error rate", 300.0, crit8},
        {9, "excursion probability decay", 60.0, crit9},
        {10, "byte-identical reproduction from manifests", 120.0, crit10},
    };

    int failures = 0;
    for (const auto& crit : criteria) {
        if (only != 0 && crit.id != only) continue;
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            crit.fn(check);
        } catch (const std::exception& e) {
            check.require(false, std::string("exception: ") + e.what());
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        check.require(elapsed < crit.budget_seconds,
                      "runtime " + fmt(elapsed) + "s < " + fmt(crit.budget_seconds) + "s");
        if (!check.ok) ++failures;
        std::cout << (check.ok ? "[PASS]" : "[FAIL]") << " criterion " << crit.id << ": "
                  << crit.name << " -- " << check.detail.str() << "\n"
                  << std::flush;
    }
    if (failures > 0) {
        std::cout << failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all criteria passed\n";
    return 0;
}
