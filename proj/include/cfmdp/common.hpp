#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace cfmdp {

using StateId = int;
using ActionId = int;

/// Floating point type used for probabilities, rewards and values.
using prec_t = double;

/// Sentinel for forbidden state-action pairs. Rewards are either finite or
/// exactly this value; +inf and NaN are never valid.
inline constexpr prec_t kNegInf = -std::numeric_limits<prec_t>::infinity();

inline bool is_neg_inf(prec_t v) { return v == kNegInf; }

/// A reward value is an extended real: finite or the -inf sentinel.
inline bool is_extended_real(prec_t v) { return std::isfinite(v) || is_neg_inf(v); }

/// Weighted term of an expectation. Zero weights contribute nothing even when
/// the value is -inf, so 0 * -inf never turns into NaN.
inline prec_t weighted(prec_t probability, prec_t value) {
    return probability == 0.0 ? 0.0 : probability * value;
}

/// Thrown when an input violates an operation precondition.
class invalid_input : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using rng_t = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `stream_id` under a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_id) {
    return mix_seed(mix_seed(master) ^ mix_seed(stream_id + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(master, a), b);
}

/// Uniform draw from the open interval (0, 1).
inline double uniform_open(rng_t& rng) {
    // 53 random bits mapped to (k + 0.5) / 2^53, never 0 or 1.
    const std::uint64_t bits = rng() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Standard Gumbel(0, 1) draw.
inline double standard_gumbel(rng_t& rng) { return -std::log(-std::log(uniform_open(rng))); }

/// Uniform integer in [0, n).
inline int uniform_index(rng_t& rng, int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

/// Draws an index from a probability vector by inverse CDF. Rounding slack
/// at the tail goes to the last index with positive mass.
template <class Range>
int sample_categorical(rng_t& rng, const Range& probabilities) {
    const double u = uniform_open(rng);
    double cumulative = 0.0;
    int last_positive = -1;
    int i = 0;
    for (const auto p : probabilities) {
        if (p > 0.0) {
            cumulative += p;
            last_positive = i;
            if (u < cumulative) return i;
        }
        ++i;
    }
    if (last_positive < 0) throw invalid_input("sample_categorical: no positive mass");
    return last_positive;
}

} // namespace cfmdp
