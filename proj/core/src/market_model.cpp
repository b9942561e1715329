#include "srec/market_model.hpp"

#include <cmath>
#include <string>

#include "srec/errors.hpp"

namespace srec {

namespace {

void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw DomainError(std::string(what) + " must be finite");
    }
}

constexpr double kFeedbackTol = 1e-8;

}  // namespace

double penalty(double shortfall, double delta) {
    require_finite(shortfall, "penalty: shortfall");
    require_finite(delta, "penalty: delta");
    if (delta <= 0.0) throw DomainError("penalty: delta must be > 0");
    if (shortfall < -delta) return 0.0;
    if (shortfall > delta) return shortfall;
    const double z = shortfall + delta;
    return z * z / (4.0 * delta);
}

double penalty_prime(double shortfall, double delta) {
    require_finite(shortfall, "penalty_prime: shortfall");
    require_finite(delta, "penalty_prime: delta");
    if (delta <= 0.0) throw DomainError("penalty_prime: delta must be > 0");
    if (shortfall < -delta) return 0.0;
    if (shortfall > delta) return 1.0;
    return (shortfall + delta) / (2.0 * delta);
}

std::vector<DerivedCoefficients> derive_coefficients(std::span<const SubPopulationParams> classes) {
    if (classes.empty()) {
        throw ConfigError("derive_coefficients: at least one class is required");
    }
    double liquidity = 0.0;  // sum_k pi_k / gamma_k
    for (const auto& pop : classes) liquidity += pop.fraction / pop.trading_cost;

    std::vector<DerivedCoefficients> out(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const auto& pop = classes[k];
        out[k].price_weight = (pop.fraction / pop.trading_cost) / liquidity;
        out[k].trading_cost_scaled = pop.trading_cost * liquidity;
        out[k].inventory_response = 1.0 / pop.trading_cost + 1.0 / pop.generation_cost;
    }
    return out;
}

ControlPair optimal_controls(const SubPopulationParams& pop, double y, double s, double P) {
    require_finite(y, "optimal_controls: y");
    require_finite(s, "optimal_controls: s");
    if (y < -kFeedbackTol || y > 1.0 + kFeedbackTol) {
        throw InvariantError("optimal_controls: y=" + std::to_string(y) + " outside [0,1]");
    }
    if (P > 0.0 && (s < -kFeedbackTol * P || s > P * (1.0 + kFeedbackTol))) {
        throw InvariantError("optimal_controls: s=" + std::to_string(s) + " outside [0,P]");
    }
    ControlPair c;
    c.generation = pop.baseline_rate + P / pop.generation_cost * y;
    c.trading = (P * y - s) / pop.trading_cost;
    return c;
}

double running_cost(const SubPopulationParams& pop, const ControlPair& controls, double s) {
    require_finite(controls.generation, "running_cost: generation");
    require_finite(controls.trading, "running_cost: trading");
    require_finite(s, "running_cost: price");
    const double dg = controls.generation - pop.baseline_rate;
    return 0.5 * pop.generation_cost * dg * dg
         + 0.5 * pop.trading_cost * controls.trading * controls.trading
         + s * controls.trading;
}

double path_cost(const SubPopulationParams& pop, std::span<const ControlPair> controls,
                 std::span<const double> prices, double terminal_inventory, double dt,
                 double P, double requirement, double delta) {
    if (prices.size() != controls.size() && prices.size() != controls.size() + 1) {
        throw DimensionError("path_cost: controls (" + std::to_string(controls.size())
                             + ") and prices (" + std::to_string(prices.size())
                             + ") are not on the same time grid");
    }
    require_finite(terminal_inventory, "path_cost: terminal inventory");
    double acc = 0.0;
    for (std::size_t j = 0; j < controls.size(); ++j) {
        acc += running_cost(pop, controls[j], prices[j]) * dt;
    }
    return acc + P * penalty(requirement - terminal_inventory, delta);
}

}  // namespace srec
