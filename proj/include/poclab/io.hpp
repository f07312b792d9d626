#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poclab/config.hpp"
#include "poclab/harness.hpp"
#include "poclab/version.hpp"

namespace poclab {

/// Shortest round-trip decimal representation, so CSV bytes are reproducible.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw Error("cannot open output file: " + tmp);
        }
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Experiment CSV
// ---------------------------------------------------------------------------

/// Accumulates rows in the common experiment schema and a trailing fit line.
class ExperimentCsv {
  public:
    void add_row(const std::string& experiment, int j, double p, double estimate,
                 double std_error, int n_ok, int n_failed) {
        body_ += experiment + "," + std::to_string(j) + "," + format_double(p) + "," +
                 format_double(estimate) + "," + format_double(std_error) + "," +
                 std::to_string(n_ok) + "," + std::to_string(n_failed) + "\n";
    }

    void add_rate_fit(const std::string& experiment, const RateFit& fit, double p) {
        for (const auto& e : fit.per_j) {
            add_row(experiment, e.j, p, e.estimate, e.std_error, e.n_ok, e.n_failed);
        }
        add_fit_line(fit.slope, fit.intercept, fit.slope_stderr);
    }

    void add_fit_line(double slope, double intercept, double slope_stderr) {
        body_ += "# fit slope=" + format_double(slope) + " intercept=" +
                 format_double(intercept) + " slope_stderr=" + format_double(slope_stderr) + "\n";
    }

    std::string str() const {
        return "experiment,J,p,estimate,stderr,n_ok,n_failed\n" + body_;
    }

    void write(const std::string& path) const { write_text_atomic(path, str()); }

  private:
    std::string body_;
};

/// Streams per-step particle positions when trajectory dumping is enabled.
class CsvTrajectorySink : public TrajectorySink {
  public:
    explicit CsvTrajectorySink(int dim) {
        body_ = "replicate,step,time,particle,system";
        for (int k = 0; k < dim; ++k) body_ += ",x" + std::to_string(k);
        body_ += "\n";
    }

    void row(std::uint32_t replicate, long step, double time, int particle, const char* system,
             const Vector& x) override {
        body_ += std::to_string(replicate) + "," + std::to_string(step) + "," +
                 format_double(time) + "," + std::to_string(particle) + "," + system;
        for (int k = 0; k < x.size(); ++k) body_ += "," + format_double(x[k]);
        body_ += "\n";
    }

    void write(const std::string& path) const { write_text_atomic(path, body_); }

  private:
    std::string body_;
};

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Record of one experiment run: the echoed config reproduces the run
/// exactly, the rest is bookkeeping. Written atomically at run end.
struct RunManifest {
    std::string experiment;
    ConfigMap config_echo;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> outputs;
    long failures = 0;

    static std::string now_utc() {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&t, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    void write(const std::string& path) const {
        nlohmann::ordered_json j;
        j["experiment"] = experiment;
        j["version"] = kVersion;
        j["seed"] = seed;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at;
        j["failures"] = failures;
        j["outputs"] = outputs;
        nlohmann::ordered_json cfg;
        for (const auto& [k, v] : config_echo) cfg[k] = v;
        j["config"] = cfg;
        write_text_atomic(path, j.dump(2) + "\n");
    }
};

/// Loads a config either from a flat key=value file or from the "config"
/// section of a previously written manifest, so any run can be reproduced
/// from its manifest alone.
inline ConfigMap load_config_any(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot open manifest: " + path);
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("manifest " + path + ": " + e.what());
        }
        if (!j.contains("config") || !j["config"].is_object()) {
            throw ConfigError("manifest " + path + ": missing config section");
        }
        ConfigMap out;
        for (const auto& [k, v] : j["config"].items()) {
            out[k] = v.get<std::string>();
        }
        return out;
    }
    return parse_config_file(path);
}

}  // namespace poclab
