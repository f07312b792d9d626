// poclab: ensemble Langevin sampler simulations and convergence-rate
// experiments. Subcommands bind a flat config file to one experiment, write a
// CSV plus a JSON manifest that reproduces the run byte-for-byte, and print a
// short summary.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poclab/config.hpp"
#include "poclab/harness.hpp"
#include "poclab/io.hpp"
#include "poclab/picard.hpp"
#include "poclab/version.hpp"

namespace {

using namespace poclab;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = ".";
    unsigned threads = 1;
    bool dump_trajectories = false;
    std::optional<std::uint64_t> seed_override;
};

// Sets a default so the manifest echo always carries every key the run used.
void ensure(Config& cfg, const std::string& key, const std::string& value) {
    if (!cfg.has(key)) cfg.set(key, value);
}

Config load_config(const GlobalOpts& g, const std::vector<std::string>& extras) {
    if (g.config_path.empty()) {
        throw ConfigError("missing --config <file>");
    }
    Config cfg(load_config_any(g.config_path));
    for (const auto& raw : extras) {
        if (raw.rfind("--", 0) != 0) {
            throw ConfigError("unexpected argument '" + raw + "' (overrides look like --key=value)");
        }
        const auto eq = raw.find('=');
        if (eq == std::string::npos || eq == 2) {
            throw ConfigError("override '" + raw + "' must look like --key=value");
        }
        cfg.set(raw.substr(2, eq - 2), raw.substr(eq + 1));
    }
    if (g.seed_override) {
        cfg.set("seed", std::to_string(*g.seed_override));
    }
    ensure(cfg, "seed", "0");
    return cfg;
}

std::string out_path(const GlobalOpts& g, const std::string& name) {
    std::filesystem::create_directories(g.out_dir);
    return (std::filesystem::path(g.out_dir) / name).string();
}

RunManifest start_manifest(const std::string& experiment, const Config& cfg) {
    RunManifest m;
    m.experiment = experiment;
    m.config_echo = cfg.map();
    m.seed = Config(cfg.map()).get_u64("seed", 0);
    m.started_at = RunManifest::now_utc();
    return m;
}

void finish_manifest(RunManifest& m, const GlobalOpts& g, const std::string& csv_name) {
    m.finished_at = RunManifest::now_utc();
    m.outputs.push_back(csv_name);
    m.write(out_path(g, m.experiment + "_manifest.json"));
}

void print_fit(const std::string& name, const RateFit& fit) {
    for (const auto& e : fit.per_j) {
        std::cout << name << "  J=" << e.j << "  estimate=" << format_double(e.estimate)
                  << "  stderr=" << format_double(e.std_error) << "  n_ok=" << e.n_ok
                  << "  n_failed=" << e.n_failed << "\n";
    }
    std::cout << name << "  slope = " << format_double(fit.slope) << " +/- "
              << format_double(fit.slope_stderr) << "  (intercept "
              << format_double(fit.intercept) << ")\n";
}

// --- rate-chaos -----------------------------------------------------------

int cmd_rate_chaos(const GlobalOpts& g, Config cfg) {
    ensure(cfg, "p", "2");
    ensure(cfg, "sde.dt", "0.001");
    ensure(cfg, "sde.t_final", "1");
    ensure(cfg, "sde.noise_refine", "1");
    ensure(cfg, "potential.offset", "1");
    if (cfg.get_string("potential.kind", "quadratic") == "even_power") {
        ensure(cfg, "picard.n_particles", "100000");
        ensure(cfg, "picard.max_iter", "12");
        ensure(cfg, "picard.tol", "0.001");
    }
    RateExperimentConfig rc = rate_config_from(cfg, g.threads);
    rc.validate();

    RunManifest manifest = start_manifest("rate_chaos", cfg);
    const auto mf = make_meanfield_path(rc);
    if (mf.from_picard) {
        std::cout << "picard path: iterations=" << mf.picard_iterations
                  << " final_gap=" << format_double(mf.picard_gap)
                  << (mf.picard_converged ? "" : "  [did not reach tol; using best iterate]")
                  << "\n";
    }

    std::vector<JEstimate> rows;
    for (const int j : rc.j_values) {
        if (g.dump_trajectories) {
            CsvTrajectorySink sink(rc.potential.dim());
            rows.push_back(estimate_chaos_error(rc, j, mf.path, &sink));
            const std::string name = "rate_chaos_trajectories_J" + std::to_string(j) + ".csv";
            sink.write(out_path(g, name));
            manifest.outputs.push_back(name);
        } else {
            rows.push_back(estimate_chaos_error(rc, j, mf.path));
        }
    }
    const RateFit fit = fit_from_estimates(rows);

    ExperimentCsv csv;
    csv.add_rate_fit("rate_chaos", fit, rc.p);
    const std::string csv_name = "rate_chaos.csv";
    csv.write(out_path(g, csv_name));
    for (const auto& e : rows) manifest.failures += e.n_failed;
    finish_manifest(manifest, g, csv_name);
    print_fit("rate_chaos", fit);
    return 0;
}

// --- cov-rate ---------------------------------------------------------------

int cmd_cov_rate(const GlobalOpts& g, Config cfg) {
    ensure(cfg, "p", "2");
    ensure(cfg, "cov_rate.sqrt_variant", "0");
    const double p = cfg.get_double("p");
    const auto j_values = cfg.get_int_list("j_values");
    const int m = static_cast<int>(cfg.get_int("replicates"));
    for (std::size_t i = 1; i < j_values.size(); ++i) {
        if (j_values[i] <= j_values[i - 1]) {
            throw ConfigError("config: j_values must be strictly increasing");
        }
    }
    const GaussianSpec rho0 = rho0_from_config(cfg);
    if (min_eigenvalue(rho0.cov) <= 0.0) {
        throw ConfigError("config: rho0.cov must have positive minimum eigenvalue");
    }
    const bool sqrt_variant = cfg.get_int("cov_rate.sqrt_variant") != 0;

    RunManifest manifest = start_manifest("cov_rate", cfg);
    const auto res = covariance_mc_rate(rho0, p, j_values, m, cfg.get_u64("seed", 0),
                                        sqrt_variant, g.threads);
    ExperimentCsv csv;
    csv.add_rate_fit("cov_rate", res.cov_fit, p);
    if (res.sqrt_fit) csv.add_rate_fit("cov_rate_sqrt", *res.sqrt_fit, p);
    const std::string csv_name = "cov_rate.csv";
    csv.write(out_path(g, csv_name));
    finish_manifest(manifest, g, csv_name);
    print_fit("cov_rate", res.cov_fit);
    if (res.sqrt_fit) print_fit("cov_rate_sqrt", *res.sqrt_fit);
    return 0;
}

// --- excursion ---------------------------------------------------------------

int cmd_excursion(const GlobalOpts& g, Config cfg) {
    ensure(cfg, "excursion.kind", "iid");
    ensure(cfg, "excursion.r", "2");
    const std::string kind = cfg.get_string("excursion.kind");
    const double r = cfg.get_double("excursion.r");
    const auto j_values = cfg.get_int_list("j_values");
    const int m = static_cast<int>(cfg.get_int("replicates"));
    const std::uint64_t seed = cfg.get_u64("seed", 0);

    if (kind == "iid") {
        // Z = |N(0,1)|; default radius sits 0.5 above E|Z| = sqrt(2/pi).
        ensure(cfg, "excursion.R", format_double(std::sqrt(2.0 / M_PI) + 0.5));
        const double R = cfg.get_double("excursion.R");
        RunManifest manifest = start_manifest("excursion_iid", cfg);
        const NoiseStream stream(seed);
        ExperimentCsv csv;
        bool all_positive = true;
        std::vector<std::pair<double, double>> pts;
        for (const int j : j_values) {
            const auto est = excursion_probability(abs_normal_sampler(), r, R, j, m, stream);
            csv.add_row("excursion_iid", j, r, est.frequency, est.std_error, est.trials, 0);
            std::cout << "excursion_iid  J=" << j << "  freq=" << format_double(est.frequency)
                      << "  stderr=" << format_double(est.std_error) << "\n";
            all_positive = all_positive && est.frequency > 0.0;
            pts.emplace_back(j, est.frequency);
        }
        if (all_positive && pts.size() >= 3) {
            const RateFit fit = fit_log_rate(pts);
            csv.add_fit_line(fit.slope, fit.intercept, fit.slope_stderr);
            std::cout << "excursion_iid  slope = " << format_double(fit.slope) << " +/- "
                      << format_double(fit.slope_stderr) << "\n";
        }
        const std::string csv_name = "excursion_iid.csv";
        csv.write(out_path(g, csv_name));
        finish_manifest(manifest, g, csv_name);
        return 0;
    }

    if (kind != "trajectory") {
        throw ConfigError("config key excursion.kind: expected 'iid' or 'trajectory'");
    }
    ensure(cfg, "p", "2");
    ensure(cfg, "sde.dt", "0.001");
    ensure(cfg, "sde.t_final", "1");
    ensure(cfg, "potential.offset", "1");
    ensure(cfg, "excursion.pilot_particles", "4096");
    ensure(cfg, "excursion.pilot_margin", "1.2");
    RateExperimentConfig rc = rate_config_from(cfg, g.threads);
    rc.validate(2.0, 1);
    const auto mf = make_meanfield_path(rc);
    if (!cfg.has("excursion.R")) {
        const double pilot = pilot_sup_moment(
            rc.potential, mf.path, static_cast<int>(cfg.get_int("excursion.pilot_particles")),
            rc.sde, rc.rho0, r);
        const double margin = cfg.get_double("excursion.pilot_margin");
        cfg.set("excursion.R", format_double(2.0 * std::pow(margin * pilot, 1.0 / r)));
        std::cout << "pilot sup-moment estimate " << format_double(pilot) << " -> R = "
                  << cfg.get_string("excursion.R") << "\n";
    }
    const double R = cfg.get_double("excursion.R");
    RunManifest manifest = start_manifest("excursion_trajectory", cfg);
    const auto rows = excursion_decay_experiment(rc, mf.path, r, R);
    ExperimentCsv csv;
    for (const auto& row : rows) {
        csv.add_row("excursion_ips", row.j, r, row.freq_ips, row.std_error_ips, row.n_ok,
                    row.n_failed);
        csv.add_row("excursion_mf", row.j, r, row.freq_mf, row.std_error_mf, row.n_ok,
                    row.n_failed);
        std::cout << "excursion  J=" << row.j << "  ips_freq=" << format_double(row.freq_ips)
                  << "  mf_freq=" << format_double(row.freq_mf) << "\n";
        manifest.failures += row.n_failed;
    }
    const std::string csv_name = "excursion_trajectory.csv";
    csv.write(out_path(g, csv_name));
    finish_manifest(manifest, g, csv_name);
    return 0;
}

// --- sampling-error ----------------------------------------------------------

int cmd_sampling_error(const GlobalOpts& g, Config cfg) {
    ensure(cfg, "p", "2");
    ensure(cfg, "sde.dt", "0.001");
    ensure(cfg, "sde.t_final", "1");
    ensure(cfg, "potential.offset", "1");
    ensure(cfg, "sampling.observable", "squared_norm");
    ensure(cfg, "sampling.t", cfg.get_string("sde.t_final"));
    const Potential pot = potential_from_config(cfg);
    const GaussianSpec rho0 = rho0_from_config(cfg);
    const SdeConfig sde = sde_from_config(cfg);
    const double p = cfg.get_double("p");
    const double t = cfg.get_double("sampling.t");
    const auto j_values = cfg.get_int_list("j_values");
    const int m = static_cast<int>(cfg.get_int("replicates"));
    if (!(p >= 2.0)) {
        throw ConfigError("config key p: must be >= 2");
    }

    Observable obs = Observable::squared_norm(pot.dim());
    const std::string which = cfg.get_string("sampling.observable");
    if (which == "linear") {
        ensure(cfg, "sampling.coeffs", "1");
        obs = Observable::linear(Config(cfg.map()).get_vector("sampling.coeffs", pot.dim()));
    } else if (which != "squared_norm") {
        throw ConfigError("config key sampling.observable: expected 'linear' or 'squared_norm'");
    }

    RunManifest manifest = start_manifest("sampling_error", cfg);
    const RateFit fit = sampling_error_rate(pot, obs, t, p, j_values, m, sde, rho0, g.threads);
    ExperimentCsv csv;
    csv.add_rate_fit("sampling_error", fit, p);
    const std::string csv_name = "sampling_error.csv";
    csv.write(out_path(g, csv_name));
    for (const auto& e : fit.per_j) manifest.failures += e.n_failed;
    finish_manifest(manifest, g, csv_name);
    print_fit("sampling_error", fit);
    return 0;
}

// --- suite --------------------------------------------------------------------

int cmd_suite(const std::string& which, long trials, std::uint64_t seed, const GlobalOpts& g,
              std::optional<Config> cfg) {
    if (which == "stability") {
        const auto rep = stability_property_suite(trials, 3, 8, seed);
        std::cout << "stability suite: " << rep.trials << " trials, " << rep.violations
                  << " violations, worst slack " << format_double(rep.worst_slack) << "\n";
        if (rep.violations > 0) {
            std::cerr << "violating instance: " << rep.worst_case << "\n";
            return 1;
        }
        return 0;
    }
    if (which == "psd") {
        const auto rep = psd_property_suite(trials, 6, seed);
        std::cout << "psd suite: " << rep.trials << " trials, " << rep.violations
                  << " violations, worst slack " << format_double(rep.worst_slack) << "\n";
        if (rep.violations > 0) {
            std::cerr << "violating instance: " << rep.worst_case << "\n";
            return 1;
        }
        return 0;
    }
    // The remaining suites need a potential; default to the quartic well in
    // d = 2 when no config is given.
    Potential pot = cfg ? potential_from_config(*cfg)
                        : Potential::even_power(2, 1.0, Vector::Zero(2), 1.0);
    if (which == "convexity") {
        const auto rep = convexity_suite(pot, trials, seed);
        std::cout << "convexity suite: " << rep.trials << " trials, " << rep.violations
                  << " violations, fitted c1 = " << format_double(rep.c1_fit) << "\n";
        return rep.violations > 0 ? 1 : 0;
    }
    if (which == "class_check") {
        const int ell = pot.ell();
        const auto rep = check_class(pot, ell, static_cast<int>(trials), {2.0, 20.0}, seed);
        std::cout << "class check (ell=" << ell << "): value ratio ["
                  << format_double(rep.value_ratio.lo) << ", " << format_double(rep.value_ratio.hi)
                  << "], grad ratio [" << format_double(rep.grad_ratio.lo) << ", "
                  << format_double(rep.grad_ratio.hi) << "], hess ratio ["
                  << format_double(rep.hess_ratio.lo) << ", " << format_double(rep.hess_ratio.hi)
                  << "] -> " << (rep.pass ? "pass" : "FAIL") << "\n";
        return rep.pass ? 0 : 1;
    }
    (void)g;
    throw ConfigError("unknown suite '" + which +
                      "' (expected stability, psd, convexity or class_check)");
}

// --- picard-path ---------------------------------------------------------------

int cmd_picard_path(const GlobalOpts& g, Config cfg) {
    ensure(cfg, "sde.dt", "0.001");
    ensure(cfg, "sde.t_final", "1");
    ensure(cfg, "potential.offset", "1");
    ensure(cfg, "picard.n_particles", "100000");
    ensure(cfg, "picard.max_iter", "12");
    ensure(cfg, "picard.tol", "0.001");
    ensure(cfg, "picard.cov_floor", "1e-12");
    ensure(cfg, "inversion_floor", "1e-8");
    const Potential pot = potential_from_config(cfg);
    const GaussianSpec rho0 = rho0_from_config(cfg);
    const SdeConfig sde = sde_from_config(cfg);
    const auto grid = uniform_grid(sde.dt, sde.n_steps());

    RunManifest manifest = start_manifest("picard_path", cfg);
    const auto res = picard_covariance_path(
        pot, rho0, grid, static_cast<int>(cfg.get_int("picard.n_particles")),
        static_cast<int>(cfg.get_int("picard.max_iter")), cfg.get_double("picard.tol"),
        sde.seed, cfg.get_double("picard.cov_floor"), g.threads);

    std::cout << "picard: iterations=" << res.iterations
              << " final_gap=" << format_double(res.final_gap)
              << " converged=" << (res.converged ? "yes" : "no") << "\n";
    std::cout << "gap history:";
    for (const double gap : res.gap_history) std::cout << " " << format_double(gap);
    std::cout << "\n";

    // Nondegeneracy diagnostics over the path; flag when the inversion floor
    // binds, since the theory guarantees only some positive lower bound.
    const double floor = cfg.get_double("inversion_floor");
    double min_eig = std::numeric_limits<double>::infinity();
    double sup_inv = 0.0;
    bool floor_bound = false;
    for (std::size_t k = 0; k < res.path.n_nodes(); ++k) {
        const auto& c = res.path.cov_at_node(k);
        min_eig = std::min(min_eig, min_eigenvalue(c));
        try {
            sup_inv = std::max(sup_inv, frobenius_norm(invert_spd(c, floor)));
        } catch (const BelowFloor&) {
            floor_bound = true;
        }
    }
    std::cout << "path min eigenvalue " << format_double(min_eig)
              << ", sup ||C^-1||_F " << format_double(sup_inv) << "\n";
    if (floor_bound) {
        std::cout << "warning: inversion floor " << format_double(floor)
                  << " binds on this path\n";
    }

    const int d = pot.dim();
    std::string body = "time";
    for (int i = 0; i < d; ++i) body += ",mean_" + std::to_string(i);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) body += ",cov_" + std::to_string(i) + std::to_string(j);
    }
    body += "\n";
    for (std::size_t k = 0; k < res.path.n_nodes(); ++k) {
        body += format_double(res.path.times()[k]);
        for (int i = 0; i < d; ++i) body += "," + format_double(res.path.mean_at_node(k)[i]);
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                body += "," + format_double(res.path.cov_at_node(k)(i, j));
            }
        }
        body += "\n";
    }
    const std::string csv_name = "picard_path.csv";
    write_text_atomic(out_path(g, csv_name), body);

    if (pot.kind() == Potential::Kind::quadratic) {
        const auto closed =
            gaussian_meanfield_path(pot.precision(), pot.center(), rho0.mean, rho0.cov, grid);
        double worst = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            worst = std::max(worst,
                             (res.path.cov_at_node(k).mat() - closed.cov_at_node(k).mat()).norm());
        }
        std::cout << "max |cov - closed form|_F over nodes: " << format_double(worst) << "\n";
    }
    finish_manifest(manifest, g, csv_name);
    return res.converged ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ensemble Langevin particle system experiments"};
    app.set_version_flag("--version", std::string(poclab::kVersion));
    app.require_subcommand(1);

    GlobalOpts g;
    std::uint64_t seed_flag = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* copt = sub->add_option("--config", g.config_path, "config file (or manifest .json)");
        if (needs_config) copt->required();
        sub->add_option("--threads", g.threads, "worker thread cap")->default_val(1);
        sub->add_option("--out-dir", g.out_dir, "output directory")->default_val(".");
        sub->add_option("--seed", seed_flag, "override the config seed")
            ->each([&](const std::string& s) { g.seed_override = std::stoull(s); });
        sub->add_flag("--dump-trajectories", g.dump_trajectories,
                      "also write per-step particle positions");
        sub->allow_extras();  // --key=value config overrides
    };

    auto* rate = app.add_subcommand("rate-chaos", "coupled-pair displacement rate in J");
    add_common(rate, true);
    auto* cov = app.add_subcommand("cov-rate", "empirical covariance Monte Carlo rate");
    add_common(cov, true);
    auto* exc = app.add_subcommand("excursion", "excursion probabilities");
    add_common(exc, true);
    auto* samp = app.add_subcommand("sampling-error", "observable sampling error rate");
    add_common(samp, true);
    auto* pic = app.add_subcommand("picard-path", "fixed-point mean-field moment path");
    add_common(pic, true);

    auto* suite = app.add_subcommand("suite", "property suites");
    std::string which;
    long trials = 10000;
    std::uint64_t suite_seed = 12345;
    suite->add_option("which", which, "stability | psd | convexity | class_check")->required();
    suite->add_option("--trials", trials, "number of random trials")->default_val(10000);
    suite->add_option("--suite-seed", suite_seed, "suite generator seed")->default_val(12345);
    add_common(suite, false);

    try {
        app.parse(argc, argv);

        if (*rate) return cmd_rate_chaos(g, load_config(g, rate->remaining()));
        if (*cov) return cmd_cov_rate(g, load_config(g, cov->remaining()));
        if (*exc) return cmd_excursion(g, load_config(g, exc->remaining()));
        if (*samp) return cmd_sampling_error(g, load_config(g, samp->remaining()));
        if (*pic) return cmd_picard_path(g, load_config(g, pic->remaining()));
        if (*suite) {
            std::optional<poclab::Config> cfg;
            if (!g.config_path.empty()) cfg = load_config(g, suite->remaining());
            return cmd_suite(which, trials, suite_seed, g, std::move(cfg));
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const poclab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const poclab::TooManyFailedReplicates& e) {
        std::cerr << "statistical failure: " << e.what() << "\n";
        return 3;
    } catch (const poclab::Error& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 3;
    }
}
