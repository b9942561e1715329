#include "srec/solver.hpp"

#include <atomic>
#include <cmath>
#include <string>
#include <utility>

#include "srec/errors.hpp"
#include "srec/market_model.hpp"
#include "srec/threading.hpp"

namespace srec {

namespace {

constexpr double kRangeTol = 1e-9;

// Average adjoint value of class k at time node j under the given flow.
double class_mean_value(const SurfaceArray& y, const GaussianFlow& flow, const SchemeGrid& grid,
                        int k, int j) {
    return pwl_gaussian_moment(grid.x, y.slice(k, j), flow.mean_at(k, j), flow.var_at(k, j),
                               Moment::Mean);
}

// sum_k' (pi_k'/gamma_k') * mean value of class k' at node j.
double aggregate_value_term(const SurfaceArray& y, const GaussianFlow& flow,
                            const SchemeGrid& grid, const MarketConfig& cfg, int j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        acc += cfg.classes[k].fraction / cfg.classes[k].trading_cost
             * class_mean_value(y, flow, grid, static_cast<int>(k), j);
    }
    return acc;
}

double clamp_unit(double v, const char* where) {
    if (std::isnan(v)) throw SolverError(std::string(where) + ": NaN value");
    if (v < -kRangeTol || v > 1.0 + kRangeTol) {
        throw SolverError(std::string(where) + ": value " + std::to_string(v)
                          + " outside [0,1] beyond tolerance");
    }
    return std::min(1.0, std::max(0.0, v));
}

}  // namespace

void set_terminal_condition(SurfaceArray& y, const SchemeGrid& grid, const MarketConfig& cfg) {
    const double delta = cfg.compliance.smoothing_delta;
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        auto slice = y.slice(static_cast<int>(k), grid.steps);
        const double R = cfg.compliance.requirement[k];
        for (int u = 0; u < grid.n_nodes(); ++u) {
            slice[u] = penalty_prime(R - grid.x[u], delta);
        }
    }
}

int backward_step(int j, SurfaceArray& y, const DriftSources& prev, const SchemeGrid& grid,
                  const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff, int threads) {
    const double dt = grid.dt;
    const double P = cfg.compliance.penalty;

    // Population term of the drift, from the previous outer iterate; zero on
    // the baseline initialisation sweep.
    double aggregate = 0.0;
    if (prev.y_prev != nullptr) {
        aggregate = aggregate_value_term(*prev.y_prev, *prev.flow_prev, grid, cfg, j);
    }

    std::atomic<int> warnings{0};
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        const auto& pop = cfg.classes[k];
        const double response = coeff[k].inventory_response;
        const double pop_term = P / coeff[k].trading_cost_scaled * aggregate;
        const double step_var = pop.volatility * pop.volatility * dt;
        const double band = 6.0 * std::sqrt(step_var);
        const auto target = y.slice(static_cast<int>(k), j + 1);
        auto out = y.slice(static_cast<int>(k), j);

        parallel_for(grid.x.size(), threads, [&](std::size_t u) {
            double drift = pop.baseline_rate;
            if (prev.y_prev != nullptr) {
                drift += response * P * prev.y_prev->at(static_cast<int>(k), j, static_cast<int>(u))
                       - pop_term;
            }
            const double cond_mean = grid.x[u] + dt * drift;
            if (cond_mean < grid.x.front() - band || cond_mean > grid.x.back() + band) {
                warnings.fetch_add(1, std::memory_order_relaxed);
            }
            const double v = pwl_gaussian_moment(grid.x, target, cond_mean, step_var, Moment::Mean);
            out[u] = clamp_unit(v, "backward_step");
        });
    }
    return warnings.load();
}

int backward_sweep(SurfaceArray& y, const DriftSources& prev, const SchemeGrid& grid,
                   const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff, int threads) {
    int warnings = 0;
    for (int j = grid.steps - 1; j >= 0; --j) {
        warnings += backward_step(j, y, prev, grid, cfg, coeff, threads);
    }
    return warnings;
}

StepMoments closure_step(int k, int j, const GaussianFlow& flow, const SurfaceArray& y,
                         const SchemeGrid& grid, const MarketConfig& cfg,
                         std::span<const DerivedCoefficients> coeff) {
    const double dt = grid.dt;
    const double P = cfg.compliance.penalty;
    const auto& pop = cfg.classes[k];
    const double pop_term =
        P / coeff[k].trading_cost_scaled * aggregate_value_term(y, flow, grid, cfg, j);

    const double m = flow.mean_at(k, j);
    const double v = flow.var_at(k, j);
    const auto slice = y.slice(k, j);

    // X' = X + a*y(X) + b with a = dt*response*P, b = dt*(h - pop_term).
    const double a = dt * coeff[k].inventory_response * P;
    const double b = dt * (pop.baseline_rate - pop_term);
    const double ey = pwl_gaussian_moment(grid.x, slice, m, v, Moment::Mean);
    const double exy = pwl_gaussian_moment(grid.x, slice, m, v, Moment::CrossMean);
    const double eyy = pwl_gaussian_moment(grid.x, slice, m, v, Moment::SquareMean);

    const double cov_xy = exy - m * ey;
    const double var_y = eyy - ey * ey;
    double drift_var = v + 2.0 * a * cov_xy + a * a * var_y;
    if (drift_var < -1e-12 * std::max(1.0, v)) {
        throw SolverError("closure_step: negative variance " + std::to_string(drift_var));
    }
    StepMoments next;
    next.mean = m + a * ey + b;
    next.var = std::max(drift_var, 0.0) + pop.volatility * pop.volatility * dt;
    return next;
}

StepMoments closure_step_quadrature(int k, int j, const GaussianFlow& flow, const SurfaceArray& y,
                                    const SchemeGrid& grid, const MarketConfig& cfg,
                                    std::span<const DerivedCoefficients> coeff,
                                    const GaussHermiteRule& quad) {
    const double dt = grid.dt;
    const double P = cfg.compliance.penalty;
    const auto& pop = cfg.classes[k];
    const double pop_term =
        P / coeff[k].trading_cost_scaled * aggregate_value_term(y, flow, grid, cfg, j);
    const double m = flow.mean_at(k, j);
    const double v = flow.var_at(k, j);
    const double scale = std::sqrt(2.0 * v);
    const auto slice = y.slice(k, j);

    double e1 = 0.0, e2 = 0.0;
    for (std::size_t i = 0; i < quad.abscissae.size(); ++i) {
        const double xi = m + scale * quad.abscissae[i];
        const double yi = pwl_interpolate(grid.x, slice, xi);
        const double phi =
            xi + dt * (pop.baseline_rate + coeff[k].inventory_response * P * yi - pop_term);
        e1 += quad.weights[i] * phi;
        e2 += quad.weights[i] * phi * phi;
    }
    double drift_var = e2 - e1 * e1;
    if (drift_var < -1e-12 * std::max(1.0, e2)) {
        throw SolverError("closure_step_quadrature: negative variance " + std::to_string(drift_var));
    }
    StepMoments next;
    next.mean = e1;
    next.var = std::max(drift_var, 0.0) + pop.volatility * pop.volatility * dt;
    return next;
}

void forward_step(int j, GaussianFlow& flow, const SurfaceArray& y, const SchemeGrid& grid,
                  const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff) {
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        const StepMoments next = closure_step(static_cast<int>(k), j, flow, y, grid, cfg, coeff);
        flow.mean_at(static_cast<int>(k), j + 1) = next.mean;
        flow.var_at(static_cast<int>(k), j + 1) = next.var;
    }
}

GaussianFlow forward_sweep(const SurfaceArray& y, const SchemeGrid& grid, const MarketConfig& cfg,
                           std::span<const DerivedCoefficients> coeff) {
    GaussianFlow flow(static_cast<int>(cfg.classes.size()), grid.steps + 1);
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        flow.mean_at(static_cast<int>(k), 0) = cfg.classes[k].initial_mean;
        flow.var_at(static_cast<int>(k), 0) = cfg.classes[k].initial_var;
    }
    for (int j = 0; j < grid.steps; ++j) {
        forward_step(j, flow, y, grid, cfg, coeff);
    }
    return flow;
}

GaussianFlow baseline_flow(const SchemeGrid& grid, const MarketConfig& cfg) {
    GaussianFlow flow(static_cast<int>(cfg.classes.size()), grid.steps + 1);
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        const auto& pop = cfg.classes[k];
        for (int j = 0; j <= grid.steps; ++j) {
            const double t = grid.times[j];
            flow.mean_at(static_cast<int>(k), j) = pop.initial_mean + pop.baseline_rate * t;
            flow.var_at(static_cast<int>(k), j) = pop.initial_var + pop.volatility * pop.volatility * t;
        }
    }
    return flow;
}

PricePath price_from(const SurfaceArray& y, const GaussianFlow& flow, const SchemeGrid& grid,
                     const MarketConfig& cfg, std::span<const DerivedCoefficients> coeff) {
    if (y.n_times != flow.n_times || y.n_classes != flow.n_classes) {
        throw DimensionError("price_from: surface and flow are not on the same grid");
    }
    const double P = cfg.compliance.penalty;
    PricePath path;
    path.s.resize(grid.steps + 1);
    for (int j = 0; j <= grid.steps; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
            const double avg = clamp_unit(class_mean_value(y, flow, grid, static_cast<int>(k), j),
                                          "price_from");
            s += coeff[k].price_weight * avg;
        }
        path.s[j] = std::min(P, std::max(0.0, P * s));
    }
    return path;
}

double measure_distance(const GaussianFlow& a, const GaussianFlow& b) {
    if (a.n_classes != b.n_classes || a.n_times != b.n_times) {
        throw DimensionError("measure_distance: flows are not on the same grid");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.mean.size(); ++i) {
        const double dm = a.mean[i] - b.mean[i];
        const double ds = std::sqrt(a.var[i]) - std::sqrt(b.var[i]);
        worst = std::max(worst, std::sqrt(dm * dm + ds * ds));
    }
    return worst;
}

EquilibriumSolution solve_fixed_point(const MarketConfig& cfg) {
    cfg.validate();
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);
    const int n_classes = static_cast<int>(cfg.classes.size());
    const int threads = cfg.run.threads;

    int grid_warnings = 0;

    // Baseline initialisation: firms generate at h_k and do not trade.
    SurfaceArray y_prev(n_classes, grid.steps + 1, grid.n_nodes());
    set_terminal_condition(y_prev, grid, cfg);
    grid_warnings += backward_sweep(y_prev, DriftSources{}, grid, cfg, coeff, threads);
    GaussianFlow flow_prev = baseline_flow(grid, cfg);

    std::vector<double> history;
    history.reserve(cfg.scheme.max_iters);
    int consecutive_rises = 0;

    for (int iter = 1; iter <= cfg.scheme.max_iters; ++iter) {
        SurfaceArray y_new(n_classes, grid.steps + 1, grid.n_nodes());
        set_terminal_condition(y_new, grid, cfg);
        grid_warnings += backward_sweep(y_new, DriftSources{&y_prev, &flow_prev}, grid, cfg,
                                        coeff, threads);
        GaussianFlow flow_new = forward_sweep(y_new, grid, cfg, coeff);

        const double residual = measure_distance(flow_new, flow_prev);
        if (!history.empty() && residual > history.back()) {
            ++consecutive_rises;
        } else {
            consecutive_rises = 0;
        }
        history.push_back(residual);

        if (residual <= cfg.scheme.epsilon) {
            EquilibriumSolution sol;
            sol.grid = grid;
            sol.y = std::move(y_new);
            sol.flow = std::move(flow_new);
            sol.price = price_from(sol.y, sol.flow, grid, cfg, coeff);
            sol.gen = SurfaceArray(n_classes, grid.steps + 1, grid.n_nodes());
            sol.trade = SurfaceArray(n_classes, grid.steps + 1, grid.n_nodes());
            for (int k = 0; k < n_classes; ++k) {
                for (int j = 0; j <= grid.steps; ++j) {
                    for (int u = 0; u < grid.n_nodes(); ++u) {
                        const ControlPair c = optimal_controls(cfg.classes[k], sol.y.at(k, j, u),
                                                               sol.price.s[j],
                                                               cfg.compliance.penalty);
                        sol.gen.at(k, j, u) = c.generation;
                        sol.trade.at(k, j, u) = c.trading;
                    }
                }
            }
            sol.diagnostics.converged = true;
            sol.diagnostics.iterations = static_cast<int>(history.size());
            sol.diagnostics.final_residual = residual;
            sol.diagnostics.residual_history = std::move(history);
            sol.diagnostics.grid_warnings = grid_warnings;
            return sol;
        }

        if (consecutive_rises >= 3) {
            throw NonConvergenceError(
                "fixed-point residual rose three iterations in a row (last "
                    + std::to_string(residual) + ")",
                history, "reduce scheme.omega below " + std::to_string(cfg.scheme.omega));
        }

        // Damped acceptance of the new flow.
        const double w = cfg.scheme.omega;
        for (std::size_t i = 0; i < flow_prev.mean.size(); ++i) {
            flow_prev.mean[i] = (1.0 - w) * flow_prev.mean[i] + w * flow_new.mean[i];
            flow_prev.var[i] = (1.0 - w) * flow_prev.var[i] + w * flow_new.var[i];
        }
        y_prev = std::move(y_new);
    }

    throw NonConvergenceError("no convergence after " + std::to_string(cfg.scheme.max_iters)
                                  + " iterations (residual "
                                  + std::to_string(history.back()) + ")",
                              history);
}

SurfaceArray z_diagnostic(const EquilibriumSolution& solution, const MarketConfig& cfg) {
    const SurfaceArray& y = solution.y;
    const double dx = solution.grid.dx;
    SurfaceArray z(y.n_classes, y.n_times, y.n_nodes);
    for (int k = 0; k < y.n_classes; ++k) {
        const double sigma = cfg.classes[k].volatility;
        for (int j = 0; j < y.n_times; ++j) {
            z.at(k, j, 0) = sigma * (y.at(k, j, 1) - y.at(k, j, 0)) / dx;
            for (int u = 1; u + 1 < y.n_nodes; ++u) {
                z.at(k, j, u) = sigma * (y.at(k, j, u + 1) - y.at(k, j, u - 1)) / (2.0 * dx);
            }
            z.at(k, j, y.n_nodes - 1) =
                sigma * (y.at(k, j, y.n_nodes - 1) - y.at(k, j, y.n_nodes - 2)) / dx;
        }
    }
    return z;
}

}  // namespace srec
