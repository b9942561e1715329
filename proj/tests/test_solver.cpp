#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "srec/config.hpp"
#include "srec/errors.hpp"
#include "srec/market_model.hpp"
#include "srec/solver.hpp"

#include "mc_oracle.hpp"

using namespace srec;

namespace {

// One shared solve of the base scenario for every invariant test below.
const EquilibriumSolution& base_solution() {
    static const EquilibriumSolution sol = [] {
        MarketConfig cfg = paper_base_config();
        cfg.run.threads = 2;
        return solve_fixed_point(cfg);
    }();
    return sol;
}

}  // namespace

TEST_CASE("grid covers every class's reachable range") {
    const MarketConfig cfg = paper_base_config();
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);
    CHECK(grid.steps == 52);
    CHECK(grid.n_nodes() == 401);
    CHECK(grid.times.front() == 0.0);
    CHECK(grid.times.back() == 1.0);
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        const auto& pop = cfg.classes[k];
        const double spread = 6.0 * std::sqrt(pop.initial_var + pop.volatility * pop.volatility);
        CHECK(grid.x.front() <= pop.initial_mean - spread + 1e-12);
        CHECK(grid.x.back() >= pop.initial_mean
                                   + (pop.baseline_rate + coeff[k].inventory_response) + spread
                                   - 1e-12);
    }
}

TEST_CASE("dt must divide the horizon") {
    MarketConfig cfg = paper_base_config();
    cfg.scheme.dt = 0.3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("terminal condition is exact after solving") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    for (int k = 0; k < 2; ++k) {
        for (int u = 0; u < sol.grid.n_nodes(); ++u) {
            CHECK(sol.y.at(k, sol.grid.steps, u)
                  == penalty_prime(cfg.compliance.requirement[k] - sol.grid.x[u],
                                   cfg.compliance.smoothing_delta));
        }
    }
}

TEST_CASE("backward step with vanishing noise and drift is the identity") {
    MarketConfig cfg = paper_base_config();
    cfg.classes.resize(1);
    cfg.classes[0].fraction = 1.0;
    cfg.classes[0].baseline_rate = 0.0;
    cfg.classes[0].volatility = 1e-12;
    cfg.compliance.requirement = {1.0};
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);

    SurfaceArray y(1, grid.steps + 1, grid.n_nodes());
    set_terminal_condition(y, grid, cfg);
    backward_step(grid.steps - 1, y, DriftSources{}, grid, cfg, coeff, 1);
    for (int u = 0; u < grid.n_nodes(); ++u) {
        CHECK(y.at(0, grid.steps - 1, u)
              == doctest::Approx(y.at(0, grid.steps, u)).epsilon(1e-9));
    }
}

TEST_CASE("zero branch of the terminal condition propagates above the requirement") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const auto coeff = derive_coefficients(cfg.classes);

    // one step back: nodes the transition kernel cannot connect to the blend
    // band are exactly zero
    const int j = sol.grid.steps - 1;
    for (int k = 0; k < 2; ++k) {
        const double reach = cfg.compliance.requirement[k] + cfg.compliance.smoothing_delta
                           + (cfg.classes[k].baseline_rate + coeff[k].inventory_response)
                                 * sol.grid.dt
                           + 11.0 * cfg.classes[k].volatility * std::sqrt(sol.grid.dt);
        bool saw_any = false;
        for (int u = 0; u < sol.grid.n_nodes(); ++u) {
            if (sol.grid.x[u] > reach) {
                CHECK(sol.y.at(k, j, u) == 0.0);
                saw_any = true;
            }
        }
        CHECK(saw_any);
    }

    // across the whole horizon only Gaussian tail mass can leak past the
    // maximal drift envelope
    for (int k = 0; k < 2; ++k) {
        for (int jj = 0; jj <= sol.grid.steps; ++jj) {
            const double t_left = sol.grid.times[sol.grid.steps] - sol.grid.times[jj];
            const double safe = cfg.compliance.requirement[k] + cfg.compliance.smoothing_delta
                              + (cfg.classes[k].baseline_rate + coeff[k].inventory_response)
                                    * t_left
                              + 1.0;
            for (int u = 0; u < sol.grid.n_nodes(); ++u) {
                if (sol.grid.x[u] > safe) CHECK(sol.y.at(k, jj, u) <= 1e-12);
            }
        }
    }
}

TEST_CASE("one backward step matches a Monte Carlo oracle") {
    // Kink-aligned grid so the interpolated terminal slice is the exact
    // smoothed indicator; drift inputs from the baseline initialisation.
    MarketConfig cfg = paper_base_config();
    SchemeGrid grid;
    grid.dt = 1.0 / 52.0;
    grid.steps = 52;
    grid.times.resize(53);
    for (int j = 0; j <= 52; ++j) grid.times[j] = j / 52.0;
    const int d = 321;
    grid.x.resize(d);
    for (int u = 0; u < d; ++u) grid.x[u] = -1.0 + 0.0125 * u;
    grid.dx = 0.0125;
    grid.class_lo = {-1.0, -1.0};
    grid.class_hi = {3.0, 3.0};

    const auto coeff = derive_coefficients(cfg.classes);
    SurfaceArray y_prev(2, grid.steps + 1, d);
    set_terminal_condition(y_prev, grid, cfg);
    backward_sweep(y_prev, DriftSources{}, grid, cfg, coeff, 2);
    const GaussianFlow flow_prev = baseline_flow(grid, cfg);

    SurfaceArray y(2, grid.steps + 1, d);
    set_terminal_condition(y, grid, cfg);
    const int j = grid.steps - 1;
    backward_step(j, y, DriftSources{&y_prev, &flow_prev}, grid, cfg, coeff, 2);

    // same drift assembled independently
    const int node = 160;  // x = 1.0
    REQUIRE(grid.x[node] == 1.0);
    double aggregate = 0.0;
    for (int k = 0; k < 2; ++k) {
        const auto mc_bar = oracle::mc_gaussian_mean(
            [&](double x) { return oracle::lerp(grid.x, y_prev.slice(k, j), x); },
            flow_prev.mean_at(k, j), flow_prev.var_at(k, j), 4'000'000, 313 + k);
        aggregate += cfg.classes[k].fraction / cfg.classes[k].trading_cost * mc_bar.mean;
    }
    const double drift = cfg.classes[0].baseline_rate
                       + coeff[0].inventory_response * y_prev.at(0, j, node)
                       - 1.0 / coeff[0].trading_cost_scaled * aggregate;
    const auto mc = oracle::mc_one_step([&](double x) { return oracle::fprime(1.0 - x, 0.05); },
                                        1.0, drift, cfg.classes[0].volatility, grid.dt,
                                        1'000'000, 727);
    CHECK(std::abs(y.at(0, j, node) - mc.mean) <= 3.0 * mc.se + 1e-6);
}

TEST_CASE("forward step under a flat zero surface is pure baseline drift") {
    const MarketConfig cfg = paper_base_config();
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);
    SurfaceArray zeros(2, grid.steps + 1, grid.n_nodes());
    GaussianFlow flow(2, grid.steps + 1);
    for (int k = 0; k < 2; ++k) {
        flow.mean_at(k, 0) = cfg.classes[k].initial_mean;
        flow.var_at(k, 0) = cfg.classes[k].initial_var;
    }
    forward_step(0, flow, zeros, grid, cfg, coeff);
    for (int k = 0; k < 2; ++k) {
        const auto& pop = cfg.classes[k];
        CHECK(flow.mean_at(k, 1)
              == doctest::Approx(pop.initial_mean + grid.dt * pop.baseline_rate).epsilon(1e-13));
        CHECK(flow.var_at(k, 1)
              == doctest::Approx(pop.initial_var + pop.volatility * pop.volatility * grid.dt)
                     .epsilon(1e-13));
    }
}

TEST_CASE("forward step under a saturated surface for a single class") {
    MarketConfig cfg = paper_base_config();
    cfg.classes.resize(1);
    cfg.classes[0].fraction = 1.0;
    cfg.compliance.requirement = {1.0};
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);
    SurfaceArray ones(1, grid.steps + 1, grid.n_nodes());
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    GaussianFlow flow(1, grid.steps + 1);
    flow.mean_at(0, 0) = cfg.classes[0].initial_mean;
    flow.var_at(0, 0) = cfg.classes[0].initial_var;
    forward_step(0, flow, ones, grid, cfg, coeff);
    // drift algebra: h + P(1/gamma + 1/zeta) - P/gamma = h + P/zeta
    const auto& pop = cfg.classes[0];
    CHECK(flow.mean_at(0, 1)
          == doctest::Approx(pop.initial_mean + grid.dt * (pop.baseline_rate + 1.0 / pop.generation_cost))
                 .epsilon(1e-12));
    CHECK(flow.var_at(0, 1)
          == doctest::Approx(pop.initial_var + pop.volatility * pop.volatility * grid.dt)
                 .epsilon(1e-12));
}

TEST_CASE("one forward step matches a Monte Carlo oracle") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const auto coeff = derive_coefficients(cfg.classes);
    const int k = 1;

    // population term estimated by Monte Carlo, drift evaluated by local lerp
    double aggregate = 0.0;
    for (int kk = 0; kk < 2; ++kk) {
        const auto mc_bar = oracle::mc_gaussian_mean(
            [&](double x) { return oracle::lerp(sol.grid.x, sol.y.slice(kk, 0), x); },
            sol.flow.mean_at(kk, 0), sol.flow.var_at(kk, 0), 4'000'000, 41 + kk);
        aggregate += cfg.classes[kk].fraction / cfg.classes[kk].trading_cost * mc_bar.mean;
    }
    const auto& pop = cfg.classes[k];
    const double pop_term = 1.0 / coeff[k].trading_cost_scaled * aggregate;
    const auto drift = [&](double x) {
        return pop.baseline_rate
             + coeff[k].inventory_response * oracle::lerp(sol.grid.x, sol.y.slice(k, 0), x)
             - pop_term;
    };
    const auto mc = oracle::mc_step_moments(drift, pop.initial_mean, pop.initial_var,
                                            pop.volatility, sol.grid.dt, 1'000'000, 555);
    const StepMoments step = closure_step(k, 0, sol.flow, sol.y, sol.grid, cfg, coeff);
    CHECK(std::abs(step.mean - mc.mean) <= 3.0 * mc.mean_se + 1e-6);
    CHECK(std::abs(step.var - mc.var) <= 3.0 * mc.var_se + 1e-8);
}

TEST_CASE("price of flat surfaces") {
    const MarketConfig cfg = paper_base_config();
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);
    const GaussianFlow flow = baseline_flow(grid, cfg);
    SurfaceArray zeros(2, grid.steps + 1, grid.n_nodes());
    SurfaceArray ones(2, grid.steps + 1, grid.n_nodes());
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    const PricePath p0 = price_from(zeros, flow, grid, cfg, coeff);
    const PricePath p1 = price_from(ones, flow, grid, cfg, coeff);
    for (int j = 0; j <= grid.steps; ++j) {
        CHECK(p0.s[j] == 0.0);
        CHECK(p1.s[j] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("price stays within [0, P] for arbitrary admissible surfaces") {
    const MarketConfig cfg = paper_base_config();
    const SchemeGrid grid = SchemeGrid::make(cfg);
    const auto coeff = derive_coefficients(cfg.classes);
    const GaussianFlow flow = baseline_flow(grid, cfg);
    std::mt19937_64 gen(18);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        SurfaceArray y(2, grid.steps + 1, grid.n_nodes());
        for (auto& v : y.data) v = u(gen);
        const PricePath p = price_from(y, flow, grid, cfg, coeff);
        for (double s : p.s) {
            CHECK(s >= 0.0);
            CHECK(s <= cfg.compliance.penalty);
        }
    }
}

TEST_CASE("Wasserstein distance between Gaussian flows") {
    GaussianFlow a(2, 5), b(2, 5);
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j < 5; ++j) {
            a.mean_at(k, j) = b.mean_at(k, j) = 0.3 * j;
            a.var_at(k, j) = b.var_at(k, j) = 0.04;
        }
    }
    CHECK(measure_distance(a, b) == 0.0);
    b.mean_at(1, 3) += 0.1;
    CHECK(measure_distance(a, b) == doctest::Approx(0.1).epsilon(1e-13));
    b.mean_at(1, 3) -= 0.1;
    b.var_at(0, 2) = 0.09;
    CHECK(measure_distance(a, b) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(measure_distance(a, b) == measure_distance(b, a));
}

TEST_CASE("zero-penalty market converges immediately to baseline behaviour") {
    MarketConfig cfg = paper_base_config();
    cfg.compliance.penalty = 0.0;
    const EquilibriumSolution sol = solve_fixed_point(cfg);
    CHECK(sol.diagnostics.iterations <= 2);
    for (double s : sol.price.s) CHECK(s == 0.0);
    const GaussianFlow base = baseline_flow(sol.grid, cfg);
    CHECK(measure_distance(sol.flow, base) <= 1e-12);
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j <= sol.grid.steps; ++j) {
            for (int u = 0; u < sol.grid.n_nodes(); ++u) {
                CHECK(sol.gen.at(k, j, u) == cfg.classes[k].baseline_rate);
                CHECK(sol.trade.at(k, j, u) == 0.0);
            }
        }
    }
}

TEST_CASE("assured compliance drives price and excess generation to zero") {
    MarketConfig cfg = paper_base_config();
    cfg.classes.resize(1);
    cfg.classes[0].fraction = 1.0;
    cfg.classes[0].initial_mean = 2.0;
    cfg.classes[0].initial_var = 0.01;
    cfg.classes[0].volatility = 0.05;
    cfg.compliance.requirement = {1.0};
    const EquilibriumSolution sol = solve_fixed_point(cfg);
    const int m = sol.grid.steps;
    const double mT = sol.flow.mean_at(0, m);
    const double sdT = std::sqrt(sol.flow.var_at(0, m));
    CHECK(normal_cdf((mT - 1.0) / sdT) >= 0.999);
    for (double s : sol.price.s) CHECK(s <= 1e-3);
    // along the flow, generation stays at baseline
    for (int j = 0; j <= m; ++j) {
        const double y_at_mean =
            pwl_interpolate(sol.grid.x, sol.y.slice(0, j), sol.flow.mean_at(0, j));
        CHECK(y_at_mean <= 1e-3);
    }
}

TEST_CASE("base scenario solution satisfies the scheme invariants") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const auto coeff = derive_coefficients(cfg.classes);

    CHECK(sol.diagnostics.converged);
    CHECK(sol.diagnostics.final_residual <= cfg.scheme.epsilon);
    CHECK(sol.diagnostics.iterations
          == static_cast<int>(sol.diagnostics.residual_history.size()));
    CHECK(sol.diagnostics.residual_history.back() == sol.diagnostics.final_residual);

    // range and monotonicity of the adjoint surface
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j <= sol.grid.steps; ++j) {
            for (int u = 0; u < sol.grid.n_nodes(); ++u) {
                const double y = sol.y.at(k, j, u);
                CHECK(y >= 0.0);
                CHECK(y <= 1.0);
                if (u > 0) CHECK(sol.y.at(k, j, u - 1) >= y - 1e-8);
            }
        }
    }

    // price bounds
    for (double s : sol.price.s) {
        CHECK(s >= 0.0);
        CHECK(s <= cfg.compliance.penalty);
    }

    // control surfaces are the pointwise feedback controls
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j <= sol.grid.steps; j += 7) {
            for (int u = 0; u < sol.grid.n_nodes(); u += 13) {
                const ControlPair c = optimal_controls(cfg.classes[k], sol.y.at(k, j, u),
                                                       sol.price.s[j], cfg.compliance.penalty);
                CHECK(sol.gen.at(k, j, u) == c.generation);
                CHECK(sol.trade.at(k, j, u) == c.trading);
            }
        }
    }

    // re-running the forward sweep on the converged surface reproduces the flow
    const GaussianFlow again = forward_sweep(sol.y, sol.grid, cfg, coeff);
    CHECK(measure_distance(again, sol.flow) <= 1e-14);
}

TEST_CASE("solution does not depend on the quadrature node count") {
    MarketConfig a = paper_base_config();
    a.run.threads = 2;
    MarketConfig b = a;
    b.scheme.quad_nodes = 82;
    const EquilibriumSolution sa = solve_fixed_point(a);
    const EquilibriumSolution sb = solve_fixed_point(b);
    double sup = 0.0;
    for (std::size_t j = 0; j < sa.price.s.size(); ++j) {
        sup = std::max(sup, std::abs(sa.price.s[j] - sb.price.s[j]));
    }
    CHECK(sup < 1e-6);
}

TEST_CASE("quadrature cross-check of the closure step is in the converged regime") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const auto coeff = derive_coefficients(cfg.classes);
    for (int q : {21, 41, 82}) {
        const GaussHermiteRule rule = gauss_hermite(q);
        for (int j : {0, sol.grid.steps / 2}) {
            for (int k = 0; k < 2; ++k) {
                const StepMoments exact = closure_step(k, j, sol.flow, sol.y, sol.grid, cfg, coeff);
                const StepMoments gh =
                    closure_step_quadrature(k, j, sol.flow, sol.y, sol.grid, cfg, coeff, rule);
                CHECK(std::abs(gh.mean - exact.mean) <= 1e-5);
                CHECK(std::abs(gh.var - exact.var) <= 1e-5);
            }
        }
    }
}

TEST_CASE("martingale property along the solved dynamics (reduced-size check)") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const auto coeff = derive_coefficients(cfg.classes);
    std::mt19937_64 gen(19);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int m = sol.grid.steps;
    int passed = 0;
    const int probes = 6;
    for (int p = 0; p < probes; ++p) {
        const int k = static_cast<int>(gen() % 2);
        const int j1 = 1 + static_cast<int>(gen() % (m / 2));
        const int j2 = j1 + 1 + static_cast<int>(gen() % (m - j1 - 1));
        const double x0 = sol.flow.mean_at(k, j1)
                        + (2.0 * u01(gen) - 1.0) * 2.0 * std::sqrt(sol.flow.var_at(k, j1));
        const auto& pop = cfg.classes[k];
        std::normal_distribution<double> noise(0.0, 1.0);
        const int paths = 20'000;
        std::vector<double> samples(paths);
        for (int i = 0; i < paths; ++i) {
            double x = x0;
            for (int j = j1; j < j2; ++j) {
                const double y = oracle::lerp(sol.grid.x, sol.y.slice(k, j), x);
                const double drift = pop.baseline_rate + coeff[k].inventory_response * y
                                   - sol.price.s[j] / pop.trading_cost;
                x += drift * sol.grid.dt
                   + pop.volatility * std::sqrt(sol.grid.dt) * noise(gen);
            }
            samples[i] = oracle::lerp(sol.grid.x, sol.y.slice(k, j2), x);
        }
        const auto stat = oracle::summarize(samples);
        // second-order interpolation floor: terminal-kink corner cutting,
        // scaling as dx^2 (verified by doubling x_nodes)
        const double tol = 3.0 * stat.se
                         + cfg.compliance.penalty * sol.grid.dx * sol.grid.dx
                               / cfg.compliance.smoothing_delta
                         + cfg.scheme.epsilon;
        if (std::abs(stat.mean - oracle::lerp(sol.grid.x, sol.y.slice(k, j1), x0)) <= tol) {
            ++passed;
        }
    }
    CHECK(passed == probes);
}

TEST_CASE("non-convergence carries the residual history") {
    MarketConfig cfg = paper_base_config();
    cfg.scheme.max_iters = 2;
    try {
        solve_fixed_point(cfg);
        FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
        CHECK(e.residual_history.size() == 2);
        CHECK(e.residual_history[0] > cfg.scheme.epsilon);
    }
}
