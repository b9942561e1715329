#include "srec/pwl_gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "srec/errors.hpp"

namespace srec {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// Standard-normal mass of (alpha, beta], arranged so that both endpoints are
// evaluated on the accurate side of erfc (no cancellation deep in a tail).
double interval_mass(double alpha, double beta) {
    if (alpha >= 0.0) return 0.5 * (std::erfc(alpha * kInvSqrt2) - std::erfc(beta * kInvSqrt2));
    if (beta <= 0.0) return 0.5 * (std::erfc(-beta * kInvSqrt2) - std::erfc(-alpha * kInvSqrt2));
    return 0.5 * (std::erf(beta * kInvSqrt2) - std::erf(alpha * kInvSqrt2));
}

void check_knots(std::span<const double> knots, std::span<const double> vals) {
    if (knots.size() < 2) throw GridError("pwl grid needs at least two knots");
    if (knots.size() != vals.size())
        throw GridError("pwl grid: " + std::to_string(knots.size()) + " knots vs "
                        + std::to_string(vals.size()) + " values");
    for (std::size_t i = 1; i < knots.size(); ++i) {
        if (!(knots[i] > knots[i - 1]))
            throw GridError("pwl grid: knots must be strictly increasing (violation at index "
                            + std::to_string(i) + ")");
    }
}

// Cells beyond this many standard deviations of the mean carry less than
// ~1e-23 of the Gaussian mass and are folded into constant tail terms.
constexpr double kBandSigmas = 10.0;

struct TailMoments {
    double mass;   // P(X in tail)
    double xmass;  // E[X ; X in tail]
};

TailMoments left_tail(double cut, double mean, double sd) {
    const double z = (cut - mean) / sd;
    const double mass = normal_cdf(z);
    return {mass, mean * mass - sd * normal_pdf(z)};
}

TailMoments right_tail(double cut, double mean, double sd) {
    const double z = (cut - mean) / sd;
    const double mass = normal_cdf(-z);
    return {mass, mean * mass + sd * normal_pdf(z)};
}

}  // namespace

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

double pwl_interpolate(std::span<const double> knots, std::span<const double> vals, double x) {
    check_knots(knots, vals);
    if (x <= knots.front()) return vals.front();
    if (x >= knots.back()) return vals.back();
    const auto it = std::upper_bound(knots.begin(), knots.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - knots.begin()) - 1;
    const double w = (x - knots[i]) / (knots[i + 1] - knots[i]);
    return vals[i] + w * (vals[i + 1] - vals[i]);
}

double pwl_gaussian_moment(std::span<const double> knots, std::span<const double> vals,
                           double mean, double var, Moment order) {
    check_knots(knots, vals);
    if (!std::isfinite(mean) || !std::isfinite(var)) {
        throw DomainError("pwl_gaussian_moment: mean/var must be finite");
    }
    if (var < 0.0) throw DomainError("pwl_gaussian_moment: var must be >= 0");

    if (var == 0.0) {
        const double f = pwl_interpolate(knots, vals, mean);
        switch (order) {
            case Moment::Mean: return f;
            case Moment::CrossMean: return mean * f;
            case Moment::SquareMean: return f * f;
        }
    }

    const double sd = std::sqrt(var);
    const double lo_cut = mean - kBandSigmas * sd;
    const double hi_cut = mean + kBandSigmas * sd;

    // Segment index range [seg_lo, seg_hi) intersecting the mass band.
    const std::size_t n_seg = knots.size() - 1;
    std::size_t seg_lo = 0, seg_hi = n_seg;
    {
        const auto it = std::upper_bound(knots.begin(), knots.end(), lo_cut);
        if (it != knots.begin()) seg_lo = static_cast<std::size_t>(it - knots.begin()) - 1;
        const auto jt = std::lower_bound(knots.begin(), knots.end(), hi_cut);
        seg_hi = std::min<std::size_t>(n_seg, static_cast<std::size_t>(jt - knots.begin()));
        if (seg_hi < seg_lo) seg_hi = seg_lo;  // band entirely off-grid
    }

    double acc = 0.0;

    // Constant pieces below knots[seg_lo] and above knots[seg_hi]; when the
    // band covers the whole grid these are exactly the continuation tails.
    const TailMoments lt = left_tail(knots[seg_lo], mean, sd);
    const TailMoments rt = right_tail(knots[seg_hi], mean, sd);
    const double f_lo = vals[seg_lo];
    const double f_hi = vals[seg_hi];
    switch (order) {
        case Moment::Mean:
            acc += f_lo * lt.mass + f_hi * rt.mass;
            break;
        case Moment::CrossMean:
            acc += f_lo * lt.xmass + f_hi * rt.xmass;
            break;
        case Moment::SquareMean:
            acc += f_lo * f_lo * lt.mass + f_hi * f_hi * rt.mass;
            break;
    }

    for (std::size_t i = seg_lo; i < seg_hi; ++i) {
        const double a = knots[i];
        const double b = knots[i + 1];
        const double alpha = (a - mean) / sd;
        const double beta = (b - mean) / sd;

        const double mass = interval_mass(alpha, beta);
        const double pa = normal_pdf(alpha);
        const double pb = normal_pdf(beta);
        const double x1 = mean * mass + sd * (pa - pb);                         // E[X; a<X<=b]
        const double x2 = mean * mean * mass + 2.0 * mean * sd * (pa - pb)
                        + var * (mass + alpha * pa - beta * pb);                // E[X^2; a<X<=b]

        const double slope = (vals[i + 1] - vals[i]) / (b - a);
        const double icpt = vals[i] - slope * a;  // f(x) = icpt + slope*x on [a,b]
        switch (order) {
            case Moment::Mean:
                acc += icpt * mass + slope * x1;
                break;
            case Moment::CrossMean:
                acc += icpt * x1 + slope * x2;
                break;
            case Moment::SquareMean:
                acc += icpt * icpt * mass + 2.0 * icpt * slope * x1 + slope * slope * x2;
                break;
        }
    }
    return acc;
}

GaussHermiteRule gauss_hermite(int n) {
    if (n < 2) throw DomainError("gauss_hermite: need at least 2 nodes");

    // Golub-Welsch on the Jacobi matrix of the Hermite recurrence.
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        const double b = std::sqrt(0.5 * i);
        jacobi(i, i - 1) = b;
        jacobi(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    if (eig.info() != Eigen::Success) throw SolverError("gauss_hermite: eigen decomposition failed");

    GaussHermiteRule rule;
    rule.abscissae.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.abscissae[i] = eig.eigenvalues()(i);
        const double v0 = eig.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0;  // normalised: sum_i w_i == 1
    }
    return rule;
}

}  // namespace srec
