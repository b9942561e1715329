#pragma once

#include <span>
#include <vector>

#include "srec/config.hpp"
#include "srec/grid.hpp"
#include "srec/pwl_gaussian.hpp"

namespace srec {

// Dense (class, time node, x node) array, class-major then time-major.
struct SurfaceArray {
    int n_classes = 0, n_times = 0, n_nodes = 0;
    std::vector<double> data;

    SurfaceArray() = default;
    SurfaceArray(int classes, int times, int nodes)
        : n_classes(classes), n_times(times), n_nodes(nodes),
          data(static_cast<std::size_t>(classes) * times * nodes, 0.0) {}

    std::size_t index(int k, int j, int u) const {
        return (static_cast<std::size_t>(k) * n_times + j) * n_nodes + u;
    }
    double at(int k, int j, int u) const { return data[index(k, j, u)]; }
    double& at(int k, int j, int u) { return data[index(k, j, u)]; }
    std::span<const double> slice(int k, int j) const {
        return {data.data() + index(k, j, 0), static_cast<std::size_t>(n_nodes)};
    }
    std::span<double> slice(int k, int j) {
        return {data.data() + index(k, j, 0), static_cast<std::size_t>(n_nodes)};
    }
};

// Gaussian parameterisation of the per-class state distribution over time.
struct GaussianFlow {
    int n_classes = 0, n_times = 0;
    std::vector<double> mean, var;  // class-major time-minor

    GaussianFlow() = default;
    GaussianFlow(int classes, int times)
        : n_classes(classes), n_times(times),
          mean(static_cast<std::size_t>(classes) * times, 0.0),
          var(static_cast<std::size_t>(classes) * times, 0.0) {}

    std::size_t index(int k, int j) const { return static_cast<std::size_t>(k) * n_times + j; }
    double mean_at(int k, int j) const { return mean[index(k, j)]; }
    double& mean_at(int k, int j) { return mean[index(k, j)]; }
    double var_at(int k, int j) const { return var[index(k, j)]; }
    double& var_at(int k, int j) { return var[index(k, j)]; }
};

// Deterministic certificate price at each time node; bounded by [0, P].
struct PricePath {
    std::vector<double> s;
};

struct SolveDiagnostics {
    bool converged = false;
    int iterations = 0;
    double final_residual = 0.0;
    std::vector<double> residual_history;
    int grid_warnings = 0;  // conditional means that left the grid by more than one step's spread
};

struct EquilibriumSolution {
    SchemeGrid grid;
    SurfaceArray y;            // non-compliance values, in [0,1]
    SurfaceArray gen, trade;   // feedback control surfaces
    GaussianFlow flow;
    PricePath price;
    SolveDiagnostics diagnostics;
};

// Previous-iterate inputs feeding the backward drift.  Both null on the
// initialisation sweep, where firms generate at baseline and do not trade.
struct DriftSources {
    const SurfaceArray* y_prev = nullptr;
    const GaussianFlow* flow_prev = nullptr;
};

// Fills y[k][steps][u] = penalty_prime(R_k - x_u, delta) for every class.
void set_terminal_condition(SurfaceArray& y, const SchemeGrid& grid, const MarketConfig& cfg);

// One backward induction step: conditionally projects the time-(j+1) slice of
// `y` onto time j for every class and node, using drifts evaluated from the
// previous outer iterate (`prev`).  Returns the number of nodes whose
// conditional mean left the grid by more than one step's dispersion.
int backward_step(int j, SurfaceArray& y, const DriftSources& prev, const SchemeGrid& grid,
                  const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff, int threads);

// Full backward pass from the terminal slice; `y` must already carry the
// terminal condition.
int backward_sweep(SurfaceArray& y, const DriftSources& prev, const SchemeGrid& grid,
                   const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff, int threads);

// Mean and variance of X_{j+1} for one class under the Euler closure step.
struct StepMoments {
    double mean = 0.0;
    double var = 0.0;
};

// Closed-form closure step for class k: the drift is affine in the
// piecewise-linear y, so E and Var of X + dt*b(X) assemble exactly from the
// Gaussian moments of (y, x*y, y^2).
StepMoments closure_step(int k, int j, const GaussianFlow& flow, const SurfaceArray& y,
                         const SchemeGrid& grid, const MarketConfig& cfg,
                         std::span<const DerivedCoefficients> coeff);

// Same step evaluated by Gauss-Hermite quadrature on the piecewise-linear y.
// Validation path only: its node-count error plateaus once the quadrature
// spacing falls below the grid spacing, which is why the solver uses the
// closed form.
StepMoments closure_step_quadrature(int k, int j, const GaussianFlow& flow, const SurfaceArray& y,
                                    const SchemeGrid& grid, const MarketConfig& cfg,
                                    std::span<const DerivedCoefficients> coeff,
                                    const GaussHermiteRule& quad);

// One Euler step of the Gaussian moment closure: writes flow at j+1 from flow
// at j and the time-j slice of `y`, per class.
void forward_step(int j, GaussianFlow& flow, const SurfaceArray& y, const SchemeGrid& grid,
                  const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff);

// Propagates the initial distributions through the whole horizon under the
// feedback drift implied by `y`.
GaussianFlow forward_sweep(const SurfaceArray& y, const SchemeGrid& grid, const MarketConfig& cfg,
                           std::span<const DerivedCoefficients> coeff);

// Flow under baseline-only behaviour (generation h_k, no trading).
GaussianFlow baseline_flow(const SchemeGrid& grid, const MarketConfig& cfg);

// Market-clearing price path: P * sum_k price_weight_k * E^flow[k][j][ y_k(t_j, .) ].
PricePath price_from(const SurfaceArray& y, const GaussianFlow& flow, const SchemeGrid& grid,
                     const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff);

// max over classes and time nodes of the Wasserstein-2 distance between the
// Gaussian marginals: sqrt(dmean^2 + (sqrt(va)-sqrt(vb))^2).
double measure_distance(const GaussianFlow& a, const GaussianFlow& b);

// Outer fixed-point iteration on the measure flow (damped by scheme.omega).
// Throws NonConvergenceError with the residual history if max_iters is
// exhausted or the residuals rise three times in a row.
EquilibriumSolution solve_fixed_point(const MarketConfig& cfg);

// Diffusion loading of the adjoint (central difference of y in x, scaled by
// sigma_k).  Diagnostic only; not used by the scheme.
SurfaceArray z_diagnostic(const EquilibriumSolution& solution, const MarketConfig& cfg);

}  // namespace srec
