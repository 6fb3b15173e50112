#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebp {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// splitmix64 finalizer; used to derive independent rng streams from
// (seed, stream, substream) tuples so parallel work is schedule-independent.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a = 0,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = mix64(seed);
    s = mix64(s ^ mix64(a + 0x100000001b3ULL));
    s = mix64(s ^ mix64(b + 0xcbf29ce484222325ULL));
    s = mix64(s ^ mix64(c + 0x9ae16a3b2f90404fULL));
    return std::mt19937_64(s);
}

inline double log_sum_exp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

// log Poisson(x; a), with a = 0 treated as the point mass at 0.
inline double poisson_logpmf(int x, double a) {
    if (x < 0) throw std::invalid_argument("poisson_logpmf: x < 0");
    if (a < 0.0) throw std::invalid_argument("poisson_logpmf: rate < 0");
    if (a == 0.0) return x == 0 ? 0.0 : kNegInf;
    return -a + x * std::log(a) - std::lgamma(x + 1.0);
}

inline double sqr(double x) { return x * x; }

inline double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += sqr(x - m);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace ebp
