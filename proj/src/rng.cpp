#include "layergen/rng.hpp"

#include <cmath>

#include "layergen/errors.hpp"

namespace layergen::num {

std::uint64_t Rng::finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

Rng Rng::keyed(std::uint64_t seed, std::string_view tag, std::uint64_t a,
               std::uint64_t b) {
    std::uint64_t h = finalize(seed ^ fnv1a(tag));
    h = finalize(h ^ (a * kGolden));
    h = finalize(h ^ (b * 0xD1B54A32D192ED03ull));
    return Rng(h);
}

std::uint64_t Rng::next_u64() {
    ++counter_;
    return finalize(seed_ + counter_ * kGolden);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_below(std::uint64_t n) {
    if (n == 0) throw ConfigurationError("uniform_below: n must be >= 1");
    const std::uint64_t limit = n * ((~0ull) / n);
    for (;;) {
        std::uint64_t x = next_u64();
        if (x < limit) return x % n;
    }
}

double portable_log(double x) {
    if (!(x > 0.0)) throw NumericError("portable_log: domain requires x > 0");
    int e = 0;
    double m = std::frexp(x, &e);  // m in [0.5, 1), exact decomposition
    // log(m) = 2 * atanh(u) with u = (m-1)/(m+1), |u| <= 1/3.
    const double u = (m - 1.0) / (m + 1.0);
    const double u2 = u * u;
    double term = u;
    double sum = 0.0;
    for (int k = 0; k < 17; ++k) {  // u^33 / 33 < 4e-18: below double ulp
        sum += term / static_cast<double>(2 * k + 1);
        term *= u2;
    }
    constexpr double kLn2 = 0x1.62e42fefa39efp-1;
    return 2.0 * sum + static_cast<double>(e) * kLn2;
}

double Rng::normal() {
    for (;;) {
        const double u1 = 2.0 * uniform() - 1.0;
        const double u2 = 2.0 * uniform() - 1.0;
        const double s = u1 * u1 + u2 * u2;
        if (s >= 1.0 || s == 0.0) continue;
        const double f = std::sqrt(-2.0 * portable_log(s) / s);
        return u1 * f;
    }
}

}  // namespace layergen::num
