#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "foodsec/error.hpp"
#include "foodsec/special.hpp"

namespace foodsec {

namespace detail {

/// Philox4x32-10 counter-based generator. Output depends only on (key,
/// counter), so any (individual, wave, stream) cell can be generated in any
/// order, on any number of threads, with identical results.
struct Philox4x32 {
    static inline void round(std::array<std::uint32_t, 4>& ctr,
                             std::array<std::uint32_t, 2>& key) {
        const std::uint64_t m0 = 0xD2511F53ULL * ctr[0];
        const std::uint64_t m1 = 0xCD9E8D57ULL * ctr[2];
        std::array<std::uint32_t, 4> out;
        out[0] = static_cast<std::uint32_t>(m1 >> 32) ^ ctr[1] ^ key[0];
        out[1] = static_cast<std::uint32_t>(m1);
        out[2] = static_cast<std::uint32_t>(m0 >> 32) ^ ctr[3] ^ key[1];
        out[3] = static_cast<std::uint32_t>(m0);
        ctr = out;
        key[0] += 0x9E3779B9U;
        key[1] += 0xBB67AE85U;
    }

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) {
        for (int r = 0; r < 10; ++r) round(ctr, key);
        return ctr;
    }
};

} // namespace detail

/// One logical random stream, addressed by (seed, id0, id1, stream).
/// Within a stream draws are sequential; distinct streams are independent
/// and may be consumed in any order.
class PhiloxStream {
  public:
    PhiloxStream(std::uint64_t seed, std::uint32_t id0, std::uint32_t id1,
                 std::uint32_t stream)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          base_{id0, id1, stream, 0} {}

    std::uint32_t next_u32() {
        if (pos_ == 4) {
            auto ctr = base_;
            ctr[3] = block_++;
            buf_ = detail::Philox4x32::block(ctr, key_);
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    std::uint64_t next_u64() {
        std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform on the open interval (0,1): 53 random bits centered in their
    /// bucket, so 0 and 1 are never returned.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    /// Standard normal by inverse-CDF transform of a single uniform.
    double normal() { return norm_ppf(uniform()); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Gamma(shape, scale) via Marsaglia-Tsang squeeze; shapes below one use
    /// the boost Gamma(k) = Gamma(k+1) * U^(1/k).
    double gamma(double shape, double scale = 1.0) {
        if (!(shape > 0.0) || !(scale > 0.0))
            throw DataError("gamma draw: shape and scale must be positive");
        if (shape < 1.0) {
            double u = uniform();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            double v = t * t * t;
            double u = uniform();
            double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return scale * d * v;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return scale * d * v;
        }
    }

  private:
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> base_;
    std::array<std::uint32_t, 4> buf_{};
    std::uint32_t block_ = 0;
    int pos_ = 4;
};

} // namespace foodsec
