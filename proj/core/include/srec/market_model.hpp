#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace srec {

// Compliance-period rules: one period of length `horizon_years`, at whose end
// each firm of class k must hold `requirement[k]` certificates or pay
// `penalty` per missing one. `smoothing_delta` is the width of the quadratic
// blend that replaces the kink of the raw shortfall penalty.
struct ComplianceParams {
    double horizon_years = 1.0;            // T, years
    double penalty = 1.0;                  // P, $/certificate
    double smoothing_delta = 0.05;         // delta, certificates
    std::vector<double> requirement;       // R_k per class, certificates
    int periods = 1;                       // fixed at 1
};

// Behavioural parameters of one firm class.
struct SubPopulationParams {
    double fraction = 1.0;        // pi_k, share of the population
    double baseline_rate = 0.0;   // h_k, certificates/year generated at no cost
    double volatility = 0.1;      // sigma_k, certificates/sqrt(year)
    double generation_cost = 1.0; // zeta_k, $/certificate^2
    double trading_cost = 1.0;    // gamma_k, $/certificate^2
    double initial_mean = 0.0;    // nu0_k, certificates
    double initial_var = 0.0;     // m0_k, certificates^2
};

// Per-class coefficients implied by the population mix.
struct DerivedCoefficients {
    // Share of the market-clearing price attributable to this class:
    // (pi_k/gamma_k) / sum_k' (pi_k'/gamma_k').  In (0,1], sums to 1.
    double price_weight = 1.0;
    // Class trading cost rescaled by aggregate liquidity:
    // gamma_k * sum_k' (pi_k'/gamma_k').
    double trading_cost_scaled = 1.0;
    // Combined sensitivity of the inventory drift to the marginal value of a
    // certificate: 1/gamma_k + 1/zeta_k.
    double inventory_response = 2.0;
};

// One firm's instantaneous controls.
struct ControlPair {
    double generation = 0.0;  // g, certificates/year, >= 0
    double trading = 0.0;     // Gamma, certificates/year, signed
};

// Smoothed shortfall penalty: 0 below -delta, (x+delta)^2/(4 delta) on
// [-delta, delta], x above delta.  Convex, C^1, and equal to max(x,0)
// outside the blend band.  Throws DomainError on non-finite input.
double penalty(double shortfall, double delta);

// Derivative of `penalty`: 0 / (x+delta)/(2 delta) / 1.  Nondecreasing with
// range [0,1]; doubles as the terminal non-compliance indicator.
double penalty_prime(double shortfall, double delta);

// Price weights, scaled trading costs and drift responses for every class.
// Throws ConfigError on an empty class list.
std::vector<DerivedCoefficients> derive_coefficients(std::span<const SubPopulationParams> classes);

// Cost-minimising feedback controls for a firm with non-compliance
// probability y facing price s: generate baseline plus P*y/zeta, trade
// (P*y - s)/gamma.  `y` must lie in [0,1] and `s` in [0,P] up to a small
// tolerance, else InvariantError.
ControlPair optimal_controls(const SubPopulationParams& pop, double y, double s, double P);

// Instantaneous cost rate: quadratic generation and trading frictions plus
// the cash flow of trading at price s.
double running_cost(const SubPopulationParams& pop, const ControlPair& controls, double s);

// Realised cost of one path: left-endpoint Riemann sum of running_cost over
// the step controls/prices plus the terminal penalty P * F_delta(R - X_T).
// `prices` may carry one trailing node more than `controls` (terminal price,
// unused by the sum); any other length mismatch is a DimensionError.
double path_cost(const SubPopulationParams& pop, std::span<const ControlPair> controls,
                 std::span<const double> prices, double terminal_inventory, double dt,
                 double P, double requirement, double delta);

}  // namespace srec
