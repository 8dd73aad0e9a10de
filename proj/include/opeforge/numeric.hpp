#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "opeforge/errors.hpp"

namespace opeforge {

// ============================================================================
// Deterministic number formatting
// ============================================================================
// All serialized numbers go through these helpers so that equal values always
// produce identical bytes and every emitted double parses back exactly
// (std::to_chars shortest round-trip form).

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_int(long long v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline bool try_parse_double(std::string_view text, double& out) {
    if (text == "inf") { out = std::numeric_limits<double>::infinity(); return true; }
    if (text == "-inf") { out = -std::numeric_limits<double>::infinity(); return true; }
    auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc{} && res.ptr == text.data() + text.size();
}

inline bool try_parse_int(std::string_view text, long long& out) {
    auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc{} && res.ptr == text.data() + text.size();
}

// ============================================================================
// Hashing (cache keys)
// ============================================================================

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// ============================================================================
// Deterministic sampling primitives
// ============================================================================
// Datasets must be reproducible across builds, so sampling never touches
// std:: distributions (their algorithms are implementation-defined). The raw
// engine is std::mt19937_64, which the standard pins bit-exactly; everything
// on top is written out here.

// Uniform double in [0, 1) with 53 random bits.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF draw from a finite distribution. Entries with probability zero
// are never returned, regardless of floating-point tail effects.
inline int sample_index(const std::vector<double>& probs, double u) {
    double cum = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_positive = static_cast<int>(i);
        cum += probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    if (last_positive < 0) throw EvalError("cannot sample from an all-zero distribution");
    return last_positive;
}

// Normal draw via the Marsaglia polar method (deterministic uniform
// consumption); both antithetic values are tried before drawing again.
// Rejection keeps the result inside [lo, hi].
inline double sample_truncated_gaussian(std::mt19937_64& rng, double mean, double sigma,
                                        double lo, double hi) {
    for (;;) {
        double a = 2.0 * unit_uniform(rng) - 1.0;
        double b = 2.0 * unit_uniform(rng) - 1.0;
        double s = a * a + b * b;
        if (s <= 0.0 || s >= 1.0) continue;
        double m = std::sqrt(-2.0 * std::log(s) / s);
        for (double z : {a * m, b * m}) {
            double r = mean + sigma * z;
            if (r >= lo && r <= hi) return r;
        }
    }
}

}  // namespace opeforge
