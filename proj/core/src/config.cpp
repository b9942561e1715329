#include "srec/config.hpp"

#include <cmath>
#include <sstream>

#include "srec/errors.hpp"

namespace srec {

namespace {

// dt must tile [0,T] exactly; tolerate rounding of human-entered fractions.
bool steps_from_dt(double T, double dt, int* steps) {
    if (!(dt > 0.0) || !(T > 0.0)) return false;
    const double ratio = T / dt;
    const auto m = static_cast<long long>(std::llround(ratio));
    if (m < 1 || m > 2'000'000) return false;
    if (std::abs(static_cast<double>(m) * dt - T) > 1e-9 * std::max(1.0, T)) return false;
    *steps = static_cast<int>(m);
    return true;
}

}  // namespace

int MarketConfig::n_steps() const {
    int m = 0;
    if (!steps_from_dt(compliance.horizon_years, scheme.dt, &m)) {
        throw ConfigError("scheme.dt=" + std::to_string(scheme.dt)
                          + " does not divide compliance.T=" + std::to_string(compliance.horizon_years));
    }
    return m;
}

void MarketConfig::validate() const {
    std::vector<std::string> bad;
    auto complain = [&bad](const std::string& msg) { bad.push_back(msg); };

    if (!(compliance.horizon_years > 0.0) || !std::isfinite(compliance.horizon_years))
        complain("compliance.T must be > 0");
    if (!(compliance.penalty >= 0.0) || !std::isfinite(compliance.penalty))
        complain("compliance.P must be >= 0 and finite");
    if (!(compliance.smoothing_delta > 0.0) || !std::isfinite(compliance.smoothing_delta))
        complain("compliance.delta must be > 0");
    if (compliance.periods != 1)
        complain("compliance.periods must be 1 (single-period market)");
    if (classes.empty())
        complain("at least one [class.<k>] section is required");
    if (compliance.requirement.size() != classes.size())
        complain("compliance.R must list one requirement per class (got "
                 + std::to_string(compliance.requirement.size()) + " for "
                 + std::to_string(classes.size()) + " classes)");
    for (std::size_t k = 0; k < compliance.requirement.size(); ++k) {
        if (!(compliance.requirement[k] >= 0.0) || !std::isfinite(compliance.requirement[k]))
            complain("compliance.R[" + std::to_string(k + 1) + "] must be >= 0");
    }

    double pi_sum = 0.0;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const auto& pop = classes[k];
        const std::string key = "class." + std::to_string(k + 1) + ".";
        if (!(pop.fraction > 0.0) || pop.fraction > 1.0)
            complain(key + "pi=" + std::to_string(pop.fraction) + " must lie in (0,1]");
        if (!(pop.baseline_rate >= 0.0) || !std::isfinite(pop.baseline_rate))
            complain(key + "h must be >= 0 and finite");
        if (!(pop.volatility > 0.0) || !std::isfinite(pop.volatility))
            complain(key + "sigma must be > 0");
        if (!(pop.generation_cost > 0.0) || !std::isfinite(pop.generation_cost))
            complain(key + "zeta must be > 0");
        if (!(pop.trading_cost > 0.0) || !std::isfinite(pop.trading_cost))
            complain(key + "gamma must be > 0");
        if (!std::isfinite(pop.initial_mean))
            complain(key + "nu0 must be finite");
        if (!(pop.initial_var >= 0.0) || !std::isfinite(pop.initial_var))
            complain(key + "m0 must be >= 0");
        pi_sum += pop.fraction;
    }
    if (!classes.empty() && std::abs(pi_sum - 1.0) > 1e-9) {
        std::ostringstream os;
        os << "class fractions must sum to 1 (got " << pi_sum << "):";
        for (std::size_t k = 0; k < classes.size(); ++k)
            os << " class." << (k + 1) << ".pi=" << classes[k].fraction;
        complain(os.str());
    }

    int m = 0;
    if (!steps_from_dt(compliance.horizon_years, scheme.dt, &m))
        complain("scheme.dt=" + std::to_string(scheme.dt) + " does not divide compliance.T");
    if (scheme.x_nodes < 16)
        complain("scheme.x_nodes must be >= 16");
    if (!(scheme.epsilon > 0.0))
        complain("scheme.epsilon must be > 0");
    if (scheme.max_iters < 1)
        complain("scheme.max_iters must be >= 1");
    if (!(scheme.omega > 0.0) || scheme.omega > 1.0)
        complain("scheme.omega must lie in (0,1]");
    if (scheme.quad_nodes < 2)
        complain("scheme.quad_nodes must be >= 2");
    if (run.n_agents < 1)
        complain("run.n_agents must be >= 1");
    if (run.threads < 0)
        complain("run.threads must be >= 0");

    if (!bad.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(bad.size()) + " problem(s)):";
        for (const auto& b : bad) msg += "\n  - " + b;
        throw ConfigError(msg);
    }
}

MarketConfig paper_base_config() {
    MarketConfig cfg;
    cfg.compliance.horizon_years = 1.0;
    cfg.compliance.penalty = 1.0;
    cfg.compliance.smoothing_delta = 0.05;
    cfg.compliance.requirement = {1.0, 1.0};

    SubPopulationParams k1;
    k1.fraction = 0.25;
    k1.baseline_rate = 0.2;
    k1.volatility = 0.1;
    k1.generation_cost = 1.75;
    k1.trading_cost = 1.25;
    k1.initial_mean = 0.6;
    k1.initial_var = 0.1;

    SubPopulationParams k2;
    k2.fraction = 0.75;
    k2.baseline_rate = 0.5;
    k2.volatility = 0.15;
    k2.generation_cost = 1.25;
    k2.trading_cost = 1.75;
    k2.initial_mean = 0.2;
    k2.initial_var = 0.1;

    cfg.classes = {k1, k2};
    cfg.run.seed = 42;
    cfg.run.n_agents = 2000;
    return cfg;
}

}  // namespace srec
