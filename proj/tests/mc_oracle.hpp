#pragma once

// Independent Monte Carlo and brute-force reference implementations used to
// pin expected values.  Everything here deliberately avoids the library's
// expectation engine and counter RNG: plain mt19937_64, local interpolation,
// local closed forms.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace oracle {

struct McStat {
    double mean = 0.0;
    double se = 0.0;
};

inline McStat summarize(std::span<const double> xs) {
    McStat s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(acc / (static_cast<double>(xs.size()) - 1.0) / static_cast<double>(xs.size()));
    return s;
}

// Local linear interpolation with constant continuation.
inline double lerp(std::span<const double> knots, std::span<const double> vals, double x) {
    if (x <= knots.front()) return vals.front();
    if (x >= knots.back()) return vals.back();
    std::size_t lo = 0, hi = knots.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (knots[mid] <= x ? lo : hi) = mid;
    }
    const double w = (x - knots[lo]) / (knots[lo + 1] - knots[lo]);
    return vals[lo] + w * (vals[lo + 1] - vals[lo]);
}

// Local copy of the smoothed shortfall indicator.
inline double fprime(double x, double delta) {
    if (x < -delta) return 0.0;
    if (x > delta) return 1.0;
    return (x + delta) / (2.0 * delta);
}

// E[f(X)] for X ~ Normal(mean, var) by plain sampling.
inline McStat mc_gaussian_mean(const std::function<double(double)>& f, double mean, double var,
                               std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(mean, std::sqrt(var));
    std::vector<double> xs(n);
    for (auto& x : xs) x = f(normal(gen));
    return summarize(xs);
}

// One Euler step from x0 with constant drift, then g(X').
inline McStat mc_one_step(const std::function<double(double)>& g, double x0, double drift,
                          double sigma, double dt, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> xs(n);
    for (auto& x : xs) x = g(x0 + drift * dt + sigma * std::sqrt(dt) * noise(gen));
    return summarize(xs);
}

struct MomentStat {
    double mean = 0.0, mean_se = 0.0;
    double var = 0.0, var_se = 0.0;
};

// Sample mean and variance of one Euler step started from a Gaussian initial
// state, with a state-dependent drift callback.
inline MomentStat mc_step_moments(const std::function<double(double)>& drift, double mean0,
                                  double var0, double sigma, double dt, std::size_t n,
                                  std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> xs(n);
    for (auto& x : xs) {
        const double x0 = mean0 + std::sqrt(var0) * normal(gen);
        x = x0 + drift(x0) * dt + sigma * std::sqrt(dt) * normal(gen);
    }
    MomentStat s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(n);
    double m2 = 0.0, m4 = 0.0;
    for (double x : xs) {
        const double d = x - s.mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    s.var = m2 / (static_cast<double>(n) - 1.0);
    s.mean_se = std::sqrt(s.var / static_cast<double>(n));
    // standard error of the sample variance from the fourth central moment
    const double mu4 = m4 / static_cast<double>(n);
    s.var_se = std::sqrt(std::max(0.0, mu4 - s.var * s.var) / static_cast<double>(n));
    return s;
}

}  // namespace oracle
