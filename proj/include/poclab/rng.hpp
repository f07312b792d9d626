#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace poclab {

// Philox4x32-10 counter-based generator (Salmon et al., SC 2011). Every draw
// is a pure function of (key, counter), so parallel consumers can address
// random numbers directly instead of sharing generator state.
namespace philox {

inline constexpr std::uint32_t kWeylA = 0x9E3779B9u;
inline constexpr std::uint32_t kWeylB = 0xBB67AE85u;
inline constexpr std::uint32_t kMultA = 0xD2511F53u;
inline constexpr std::uint32_t kMultB = 0xCD9E8D57u;

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline Counter block(Counter x, Key key) {
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMultA) * x[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMultB) * x[2];
        x = {static_cast<std::uint32_t>(p1 >> 32) ^ x[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ x[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
        key[0] += kWeylA;
        key[1] += kWeylB;
    }
    return x;
}

}  // namespace philox

// Purpose tag, packed into the high bits of the first counter word so that
// distinct uses of the same (replicate, step, particle) coordinates never
// collide.
enum class StreamClass : std::uint32_t {
    initial_draw = 1,
    dynamics = 2,
    picard_init = 3,
    picard_noise = 4,
    scalar_sampler = 5,
    test_gen = 6,
};

/// Addressable random stream. All consumers key their draws by
/// (class, replicate, step, particle, block); no sequential state exists, so
/// results are independent of evaluation order and thread count.
class NoiseStream {
  public:
    explicit NoiseStream(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    std::uint64_t seed() const {
        return static_cast<std::uint64_t>(key_[0]) |
               (static_cast<std::uint64_t>(key_[1]) << 32);
    }

    philox::Counter raw(StreamClass cls, std::uint32_t replicate, std::uint32_t step,
                        std::uint32_t particle, std::uint32_t blk) const {
        const std::uint32_t c0 = (static_cast<std::uint32_t>(cls) << 24) | (blk & 0x00FFFFFFu);
        return philox::block({c0, particle, step, replicate}, key_);
    }

    // Two independent N(0,1) values from one 128-bit block (Box-Muller).
    std::array<double, 2> gauss_pair(StreamClass cls, std::uint32_t replicate,
                                     std::uint32_t step, std::uint32_t particle,
                                     std::uint32_t blk) const {
        const auto w = raw(cls, replicate, step, particle, blk);
        const double u1 = to_unit_open(w[0], w[1]);
        const double u2 = to_unit_closed(w[2], w[3]);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        return {r * std::cos(theta), r * std::sin(theta)};
    }

    // Fills `out` with N(0,1) values for one (replicate, step, particle) slot.
    void fill_gauss(StreamClass cls, std::uint32_t replicate, std::uint32_t step,
                    std::uint32_t particle, double* out, int n) const {
        for (int i = 0; i < n; i += 2) {
            const auto g = gauss_pair(cls, replicate, step, particle,
                                      static_cast<std::uint32_t>(i / 2));
            out[i] = g[0];
            if (i + 1 < n) out[i + 1] = g[1];
        }
    }

    // J-by-d matrix of N(0,1) draws for one (replicate, step).
    Eigen::MatrixXd gauss_matrix(StreamClass cls, std::uint32_t replicate,
                                 std::uint32_t step, int n_particles, int dim) const {
        Eigen::MatrixXd g(n_particles, dim);
        Eigen::VectorXd row(dim);
        for (int j = 0; j < n_particles; ++j) {
            fill_gauss(cls, replicate, step, static_cast<std::uint32_t>(j), row.data(), dim);
            g.row(j) = row;
        }
        return g;
    }

    double uniform(StreamClass cls, std::uint32_t replicate, std::uint32_t step,
                   std::uint32_t particle, std::uint32_t blk = 0) const {
        const auto w = raw(cls, replicate, step, particle, blk);
        return to_unit_closed(w[0], w[1]);
    }

    /// Derives an independent stream for a tagged sub-experiment (e.g. one
    /// ensemble size within a rate experiment) so that replicate indices can
    /// be reused without overlapping draws.
    NoiseStream derive(std::uint32_t tag1, std::uint32_t tag2 = 0) const {
        const auto w = philox::block({0x5EEDu, tag1, tag2, 0x9E3779B9u}, key_);
        return NoiseStream(static_cast<std::uint64_t>(w[0]) |
                           (static_cast<std::uint64_t>(w[1]) << 32));
    }

  private:
    // 53-bit mantissa from two 32-bit words; open variant avoids exact zero
    // so log(u) is always finite.
    static double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
        const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
        return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
    }
    static double to_unit_closed(std::uint32_t hi, std::uint32_t lo) {
        const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
        return static_cast<double>(bits >> 11) * 0x1.0p-53;
    }

    philox::Key key_;
};

}  // namespace poclab
