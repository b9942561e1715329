#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "srec/config.hpp"
#include "srec/errors.hpp"
#include "srec/simulation.hpp"
#include "srec/solver.hpp"

using namespace srec;

namespace {

const EquilibriumSolution& base_solution() {
    static const EquilibriumSolution sol = [] {
        MarketConfig cfg = paper_base_config();
        cfg.run.threads = 2;
        return solve_fixed_point(cfg);
    }();
    return sol;
}

}  // namespace

TEST_CASE("largest-remainder class counts") {
    const MarketConfig cfg = paper_base_config();
    CHECK(class_counts_largest_remainder(2000, cfg.classes) == std::vector<int>{500, 1500});
    CHECK(class_counts_largest_remainder(3, cfg.classes) == std::vector<int>{1, 2});

    std::vector<SubPopulationParams> thirds(3);
    for (auto& pop : thirds) pop.fraction = 1.0 / 3.0;
    CHECK(class_counts_largest_remainder(7, thirds) == std::vector<int>{3, 2, 2});

    std::vector<SubPopulationParams> halves(2);
    for (auto& pop : halves) pop.fraction = 0.5;
    CHECK(class_counts_largest_remainder(3, halves) == std::vector<int>{2, 1});
}

TEST_CASE("clearing price of a homogeneous crowd is the mean value") {
    const MarketConfig cfg = paper_base_config();
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> y(100);
    std::vector<int> cls(100, 0);
    double mean = 0.0;
    for (auto& v : y) {
        v = u(gen);
        mean += v / y.size();
    }
    CHECK(clearing_price(y, cls, cfg) == doctest::Approx(mean).epsilon(1e-12));

    std::fill(y.begin(), y.end(), 1.0);
    CHECK(clearing_price(y, cls, cfg) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("clearing price of a two-class crowd, frozen reference value") {
    const MarketConfig cfg = paper_base_config();
    std::vector<double> y;
    std::vector<int> cls;
    for (int i = 0; i < 500; ++i) { y.push_back(0.5); cls.push_back(0); }
    for (int i = 0; i < 1500; ++i) { y.push_back(0.25); cls.push_back(1); }
    // independent arithmetic: weights N_k/(N*gamma_k)
    const double w1 = 500.0 / (2000.0 * 1.25), w2 = 1500.0 / (2000.0 * 1.75);
    const double expected = (w1 * 0.5 + w2 * 0.25) / (w1 + w2);
    CHECK(expected == doctest::Approx(0.32954545454545453).epsilon(1e-13));
    CHECK(clearing_price(y, cls, cfg) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("clearing requires at least one agent") {
    const MarketConfig cfg = paper_base_config();
    CHECK_THROWS_AS(clearing_price({}, {}, cfg), ConfigError);
}

TEST_CASE("a lone agent cannot trade") {
    const auto& sol = base_solution();
    MarketConfig cfg = paper_base_config();
    cfg.classes.resize(1);
    cfg.classes[0].fraction = 1.0;
    cfg.compliance.requirement = {1.0};
    MarketConfig single = cfg;
    const EquilibriumSolution sol1 = solve_fixed_point(single);
    const SimulationRun run = simulate(sol1, single, 1, 9, 1);
    for (int j = 0; j < sol1.grid.steps; ++j) {
        CHECK(std::abs(run.trade(j, 0)) <= 1e-14);
    }
    (void)sol;
}

TEST_CASE("base scenario run: clearing, bounds, reproducibility") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();

    const SimulationRun a = simulate(sol, cfg, 2000, 4242, 1);
    CHECK(a.class_counts == std::vector<int>{500, 1500});
    CHECK(a.max_clearing_imbalance <= 1e-9 * 2000);
    for (double s : a.price) {
        CHECK(s >= 0.0);
        CHECK(s <= cfg.compliance.penalty);
    }

    const SimulationRun b = simulate(sol, cfg, 2000, 4242, 1);
    CHECK(a.digest == b.digest);
    CHECK(a.inventories == b.inventories);

    // thread batching must not change anything
    const SimulationRun c = simulate(sol, cfg, 2000, 4242, 2);
    CHECK(a.digest == c.digest);

    const SimulationRun d = simulate(sol, cfg, 2000, 4243, 1);
    CHECK(a.digest != d.digest);

    // the all-zero deviation is bitwise the undeviated run
    DeviationSpec none;
    none.agent = 17;
    const SimulationRun e = simulate(sol, cfg, 2000, 4242, 1, none);
    CHECK(a.digest == e.digest);
}

TEST_CASE("degenerate noise pins every agent to the flow mean") {
    MarketConfig cfg = paper_base_config();
    for (auto& pop : cfg.classes) {
        pop.volatility = 1e-9;
        pop.initial_var = 0.0;
    }
    // a wider blend keeps the degenerate-variance fixed point well conditioned
    cfg.compliance.smoothing_delta = 0.2;
    const EquilibriumSolution sol = solve_fixed_point(cfg);
    const SimulationRun run = simulate(sol, cfg, 400, 5, 1);
    CHECK(run.max_clearing_imbalance <= 1e-9 * 400);
    for (int j = 0; j <= sol.grid.steps; ++j) {
        int base = 0;
        for (int k = 0; k < 2; ++k) {
            for (int i = 0; i < run.class_counts[k]; ++i) {
                CHECK(std::abs(run.inventory(j, base + i) - sol.flow.mean_at(k, j)) <= 1e-5);
            }
            base += run.class_counts[k];
        }
    }
}

TEST_CASE("empirical moments track the theoretical flow") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const int m = sol.grid.steps;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const SimulationRun run = simulate(sol, cfg, 2000, seed, 2);
        for (int k = 0; k < 2; ++k) {
            const int nk = run.class_counts[k];
            const int base = k == 0 ? 0 : run.class_counts[0];
            int in_band = 0;
            for (int j = 0; j <= m; ++j) {
                double emp = 0.0;
                for (int i = 0; i < nk; ++i) emp += run.inventory(j, base + i);
                emp /= nk;
                const double band = 4.0 * std::sqrt(sol.flow.var_at(k, j) / nk);
                if (std::abs(emp - sol.flow.mean_at(k, j)) <= band) ++in_band;
            }
            CHECK(in_band >= static_cast<int>(0.9 * (m + 1)));
        }
    }
}

TEST_CASE("deviating agent index must exist") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    DeviationSpec dev;
    dev.agent = 50;
    CHECK_THROWS_AS(simulate(sol, cfg, 10, 1, 1, dev), ConfigError);
}

TEST_CASE("agent cost equals the hand-assembled path cost") {
    const auto& sol = base_solution();
    const MarketConfig cfg = paper_base_config();
    const SimulationRun run = simulate(sol, cfg, 50, 77, 1);
    const int agent = 3;
    const int m = sol.grid.steps;
    const int k = run.class_of[agent];
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
        acc += running_cost(cfg.classes[k], ControlPair{run.gen(j, agent), run.trade(j, agent)},
                            run.price[j])
             * sol.grid.dt;
    }
    acc += cfg.compliance.penalty
         * penalty(cfg.compliance.requirement[k] - run.inventory(m, agent),
                   cfg.compliance.smoothing_delta);
    CHECK(agent_cost(run, cfg, agent, sol.grid.dt) == doctest::Approx(acc).epsilon(1e-14));
}
