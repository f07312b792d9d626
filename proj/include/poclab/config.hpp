#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "poclab/dynamics.hpp"
#include "poclab/harness.hpp"

namespace poclab {

/// Flat `key = value` configuration with dotted keys. Keys are ordered so the
/// manifest echo is stable. Lines starting with '#' are comments.
using ConfigMap = std::map<std::string, std::string>;

namespace cfgdetail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace cfgdetail

inline ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = cfgdetail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = cfgdetail::trim(t.substr(0, eq));
        const std::string val = cfgdetail::trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        out[key] = val;
    }
    return out;
}

inline ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// Typed access with error messages that name the offending key.
class Config {
  public:
    explicit Config(ConfigMap map) : map_(std::move(map)) {}

    const ConfigMap& map() const { return map_; }
    bool has(const std::string& key) const { return map_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) { map_[key] = value; }

    std::string get_string(const std::string& key) const {
        const auto it = map_.find(key);
        if (it == map_.end()) {
            throw ConfigError("missing config key: " + key);
        }
        return it->second;
    }
    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = map_.find(key);
        return it == map_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long get_int(const std::string& key) const { return to_long(key, get_string(key)); }
    long get_int(const std::string& key, long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const std::string s = get_string(key);
        try {
            std::size_t pos = 0;
            const auto v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected unsigned integer, got '" + s + "'");
        }
    }

    std::vector<double> get_double_list(const std::string& key) const {
        return split_doubles(key, get_string(key));
    }

    std::vector<int> get_int_list(const std::string& key) const {
        std::vector<int> out;
        for (const double v : split_doubles(key, get_string(key))) {
            const long r = std::lround(v);
            if (static_cast<double>(r) != v) {
                throw ConfigError("config key " + key + ": expected integers");
            }
            out.push_back(static_cast<int>(r));
        }
        return out;
    }

    /// Matrix specs: "identity", a single scalar s (s * I), "diag: a, b, ..."
    /// or d*d entries row-major (',' within rows, ';' between rows or flat).
    SymMatrix get_matrix(const std::string& key, int dim) const {
        const std::string raw = get_string(key);
        if (raw == "identity") return SymMatrix::identity(dim);
        if (raw.rfind("diag:", 0) == 0) {
            const auto d = split_doubles(key, raw.substr(5));
            if (static_cast<int>(d.size()) != dim) {
                throw ConfigError("config key " + key + ": diag needs " + std::to_string(dim) +
                                  " entries");
            }
            return SymMatrix::diagonal(Eigen::Map<const Vector>(d.data(), dim));
        }
        const auto vals = split_doubles(key, raw);
        if (vals.size() == 1) {
            return SymMatrix(vals[0] * Matrix::Identity(dim, dim));
        }
        if (static_cast<int>(vals.size()) != dim * dim) {
            throw ConfigError("config key " + key + ": expected 1, " + std::to_string(dim) +
                              " (diag:) or " + std::to_string(dim * dim) + " entries");
        }
        Matrix m(dim, dim);
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j) {
                m(i, j) = vals[static_cast<std::size_t>(i * dim + j)];
            }
        }
        return SymMatrix(m);
    }

    Vector get_vector(const std::string& key, int dim) const {
        const auto vals = split_doubles(key, get_string(key));
        if (vals.size() == 1 && dim > 1) {
            return Vector::Constant(dim, vals[0]);
        }
        if (static_cast<int>(vals.size()) != dim) {
            throw ConfigError("config key " + key + ": expected " + std::to_string(dim) +
                              " entries");
        }
        return Eigen::Map<const Vector>(vals.data(), dim);
    }

  private:
    static double to_double(const std::string& key, const std::string& s) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected number, got '" + s + "'");
        }
    }
    static long to_long(const std::string& key, const std::string& s) {
        try {
            std::size_t pos = 0;
            const long v = std::stol(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected integer, got '" + s + "'");
        }
    }
    static std::vector<double> split_doubles(const std::string& key, const std::string& s) {
        std::vector<double> out;
        std::string token;
        for (const char c : s) {
            if (c == ',' || c == ';' || c == ' ' || c == '\t') {
                if (!token.empty()) {
                    out.push_back(to_double(key, token));
                    token.clear();
                }
            } else {
                token += c;
            }
        }
        if (!token.empty()) out.push_back(to_double(key, token));
        if (out.empty()) {
            throw ConfigError("config key " + key + ": empty value");
        }
        return out;
    }

    ConfigMap map_;
};

// ---------------------------------------------------------------------------
// Assembling experiment inputs from a config
// ---------------------------------------------------------------------------

inline Potential potential_from_config(const Config& cfg) {
    const int dim = static_cast<int>(cfg.get_int("dim"));
    if (dim < 1) {
        throw ConfigError("config key dim: must be >= 1");
    }
    const std::string kind = cfg.get_string("potential.kind");
    const Vector center = cfg.has("potential.center") ? cfg.get_vector("potential.center", dim)
                                                      : Vector::Zero(dim);
    const double offset = cfg.get_double("potential.offset", 1.0);
    if (kind == "quadratic") {
        const SymMatrix precision = cfg.has("potential.precision")
                                        ? cfg.get_matrix("potential.precision", dim)
                                        : SymMatrix::identity(dim);
        return Potential::quadratic(precision, center, offset);
    }
    if (kind == "even_power") {
        const int ell = static_cast<int>(cfg.get_int("potential.ell", 2));
        const double scale = cfg.get_double("potential.scale", 1.0);
        return Potential::even_power(ell, scale, center, offset);
    }
    throw ConfigError("config key potential.kind: expected 'quadratic' or 'even_power', got '" +
                      kind + "'");
}

inline GaussianSpec rho0_from_config(const Config& cfg) {
    const int dim = static_cast<int>(cfg.get_int("dim"));
    const Vector mean =
        cfg.has("rho0.mean") ? cfg.get_vector("rho0.mean", dim) : Vector::Zero(dim);
    const SymMatrix cov =
        cfg.has("rho0.cov") ? cfg.get_matrix("rho0.cov", dim) : SymMatrix::identity(dim);
    return GaussianSpec(mean, cov);
}

inline SdeConfig sde_from_config(const Config& cfg) {
    SdeConfig sde;
    sde.dt = cfg.get_double("sde.dt", 1e-3);
    sde.t_final = cfg.get_double("sde.t_final", 1.0);
    sde.seed = cfg.get_u64("seed", 0);
    sde.cov_floor = cfg.get_double("sde.cov_floor", 0.0);
    return sde;
}

inline RateExperimentConfig rate_config_from(const Config& cfg, unsigned threads) {
    RateExperimentConfig rc{potential_from_config(cfg),
                            cfg.get_double("p", 2.0),
                            cfg.get_int_list("j_values"),
                            static_cast<int>(cfg.get_int("replicates")),
                            sde_from_config(cfg),
                            rho0_from_config(cfg)};
    rc.picard_particles = static_cast<int>(cfg.get_int("picard.n_particles", 100000));
    rc.picard_max_iter = static_cast<int>(cfg.get_int("picard.max_iter", 12));
    rc.picard_tol = cfg.get_double("picard.tol", 1e-3);
    rc.threads = threads;
    rc.noise_refine = static_cast<int>(cfg.get_int("sde.noise_refine", 1));
    return rc;
}

}  // namespace poclab
