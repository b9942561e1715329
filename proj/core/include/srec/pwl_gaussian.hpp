#pragma once

#include <span>
#include <vector>

namespace srec {

double normal_pdf(double z);
double normal_cdf(double z);

// Which functional of the interpolant to integrate against the Gaussian.
enum class Moment {
    Mean,       // E[f(X)]
    CrossMean,  // E[X f(X)]
    SquareMean, // E[f(X)^2]
};

// Linear interpolation on strictly increasing knots with constant
// continuation outside [knots.front(), knots.back()].
double pwl_interpolate(std::span<const double> knots, std::span<const double> vals, double x);

// Exact expectation of the requested functional of the piecewise-linear
// interpolant of (knots, vals) under X ~ Normal(mean, var).
//
// Each grid cell contributes a closed-form segment integral built from the
// Gaussian cdf/pdf; the tails use the constant continuation of f.  Cells
// further than ~10 standard deviations from the mean carry no double-
// precision mass and are folded into the tail terms.  var == 0 degenerates
// to pointwise interpolation.
//
// Throws GridError if the knots are not strictly increasing (or fewer than
// two), DomainError on non-finite or negative-variance input.
double pwl_gaussian_moment(std::span<const double> knots, std::span<const double> vals,
                           double mean, double var, Moment order);

// Gauss-Hermite rule adapted to Gaussian expectations:
//   E[g(X)] ~= sum_i weight[i] * g(mean + sqrt(2*var) * abscissa[i])
// with the weights already normalised to sum to 1.  Exact for polynomials
// of degree <= 2n-1.
struct GaussHermiteRule {
    std::vector<double> abscissae;
    std::vector<double> weights;
};
GaussHermiteRule gauss_hermite(int n);

}  // namespace srec
