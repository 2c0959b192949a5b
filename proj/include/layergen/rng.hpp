#pragma once

#include <cstdint>
#include <string_view>

namespace layergen::num {

/// Counter-based pseudo-random generator.
///
/// The k-th raw output is finalize(seed + k * kGolden) where finalize is the
/// SplitMix64 mixing function. State is just (seed, counter), so streams can
/// be serialized, resumed, and forked deterministically. All floating-point
/// derivations (uniform, normal) use only IEEE-exact arithmetic plus a
/// polynomial log, so sequences are bit-identical across platforms.
class Rng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    explicit Rng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

    /// Derive an independent stream keyed by a tag and up to two indices.
    /// Used for content-addressed randomness (embedding tables etc.) where
    /// the result must not depend on call order.
    static Rng keyed(std::uint64_t seed, std::string_view tag,
                     std::uint64_t a = 0, std::uint64_t b = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }
    /// Restore a stream position (checkpoint resume).
    void set_counter(std::uint64_t c) { counter_ = c; }

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform();

    /// Uniform integer in [0, n), n >= 1. Unbiased via rejection.
    std::uint64_t uniform_below(std::uint64_t n);

    /// Standard normal via the Marsaglia polar method.
    double normal();

    static std::uint64_t finalize(std::uint64_t z);

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Natural log built from frexp + an atanh series with a fixed term count.
/// Uses only +,-,*,/ so results match bit-for-bit on any IEEE-754 double
/// implementation (libm's log carries no such guarantee).
double portable_log(double x);

}  // namespace layergen::num
