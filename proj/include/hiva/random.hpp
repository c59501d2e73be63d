#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hiva {

// All randomness flows through one mt19937_64. The engine's raw output is
// pinned by the standard, so runs are bit-reproducible as long as we never
// touch std::*_distribution (whose algorithms are implementation-defined).
using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller. One value per call; the sibling value is
// discarded to keep the draw count a pure function of the call count.
inline double normal01(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Marsaglia-Tsang squeeze method, shape-only (scale 1).
inline double gamma_sample(double shape, Rng& rng) {
    if (shape < 1.0) {
        // boost: Gamma(a) = Gamma(a+1) * U^(1/a)
        const double g = gamma_sample(shape + 1.0, rng);
        double u = uniform01(rng);
        while (u <= 0.0) u = uniform01(rng);
        return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal01(rng);
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = uniform01(rng);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

inline double beta_sample(double alpha, double beta, Rng& rng) {
    const double x = gamma_sample(alpha, rng);
    const double y = gamma_sample(beta, rng);
    return x / (x + y);
}

}  // namespace hiva
