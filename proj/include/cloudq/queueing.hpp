#pragma once

#include <algorithm>
#include <vector>

#include "cloudq/common.hpp"

namespace cloudq {

// State-indexed loss rate L(i) and total death rate D(i) of one M/M/m+M node.
// DBS loses only waiting jobs, DES every job in the system.
struct NodeStateRates {
    NodeParams node;
    AbandonmentEnv env;

    double L(int i) const {
        if (env.regime == Regime::DBS) return std::max(i - node.m, 0) * env.theta;
        return i * env.theta;
    }
    double D(int i) const { return std::min(i, node.m) * node.mu + L(i); }
};

inline NodeStateRates loss_rate_fn(NodeParams node, AbandonmentEnv env) {
    node.validate();
    env.validate();
    return NodeStateRates{node, env};
}

// Erlang-B blocking probability via the numerically stable inverse recursion
// 1/B_m = 1 + (m/r)/B_{m-1}. Underflows to 0 once 1/B overflows.
inline double erlang_b(int m, double r) {
    if (r <= 0.0) return m == 0 ? 1.0 : 0.0;
    double inv = 1.0;
    for (int j = 1; j <= m; ++j) {
        inv = 1.0 + (static_cast<double>(j) / r) * inv;
        if (inv > 1e300) return 0.0;
    }
    return 1.0 / inv;
}

// Extended Erlang-C: a probability for r < m, allowed to exceed 1 for r >= m.
inline double erlang_c_ext(int m, double r) {
    const double B = erlang_b(m, r);
    return B / (1.0 - (r / m) * (1.0 - B));
}

// Palm's W(lambda) = 1 + sum_{i>=1} (lambda/theta)^i / ((beta+1)...(beta+i)),
// beta = m*mu/theta. Series stops once terms are past their peak and
// negligible; saturates to +inf instead of overflowing.
inline double palm_w(double lambda, NodeParams node, double theta) {
    if (lambda <= 0.0) return 1.0;
    const double beta = node.m * node.mu / theta;
    const double x = lambda / theta;
    double sum = 1.0, term = 1.0;
    for (long i = 1; i <= 1000000; ++i) {
        term *= x / (beta + i);
        sum += term;
        if (sum > 1e290) return detail::kInf;
        if (term < 1e-15 * sum && x / (beta + i + 1) < 1.0) break;
    }
    return sum;
}

// Abandonment probability of the M/M/m+M queue under DBS (Palm's formula).
// Written with V = 1/W so the overloaded regime (W -> inf) stays finite:
// P_wait = B/(V(1-B) + B), P_ab = (V + rho - 1) * P_wait / rho.
inline double p_abandon_dbs(double lambda, NodeParams node, double theta) {
    if (lambda <= 0.0) return 0.0;
    const double W = palm_w(lambda, node, theta);
    const double V = std::isinf(W) ? 0.0 : 1.0 / W;
    const double rho = lambda / (node.m * node.mu);
    const double B = erlang_b(node.m, lambda / node.mu);
    const double p_wait = B > 0.0 ? B / (V * (1.0 - B) + B) : 0.0;
    const double p = (V + rho - 1.0) * p_wait / rho;
    return std::clamp(p, 0.0, 1.0);
}

// Loss (abandonment) rate ell(lambda). DES reduces to the DBS pipeline at
// server rate mu+theta: (mu+theta) * ell_DES = lambda*theta + mu * ell_DBS.
inline double loss_rate(double lambda, NodeParams node, AbandonmentEnv env) {
    if (lambda <= 0.0) return 0.0;
    if (env.regime == Regime::DBS) return lambda * p_abandon_dbs(lambda, node, env.theta);
    const NodeParams shifted{node.m, node.mu + env.theta};
    const double ell_dbs = lambda * p_abandon_dbs(lambda, shifted, env.theta);
    return (lambda * env.theta + node.mu * ell_dbs) / (node.mu + env.theta);
}

namespace detail {

inline double loss_rate_deriv_dbs(double lambda, NodeParams node, double theta) {
    const double r = lambda / node.mu;
    const double rho = lambda / (node.m * node.mu);
    const double beta = node.m * node.mu / theta;
    const double B = erlang_b(node.m, r);
    const double Cm = erlang_c_ext(node.m, r);
    const double ell = loss_rate(lambda, node, {theta, Regime::DBS});
    const double d = Cm - (Cm / B - 1.0 + (beta - node.m) * (1.0 - rho)) * ell / lambda
                     - (node.mu - theta) / (node.mu * theta) * ell * ell / lambda;
    // cancellation at extreme overload can push the value a few ulp past 1;
    // the true derivative lies strictly inside (0,1)
    return std::clamp(d, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

}  // namespace detail

// d ell / d lambda, closed form; right limits 0 (DBS) and theta/(theta+mu)
// (DES) at lambda = 0.
inline double loss_rate_deriv(double lambda, NodeParams node, AbandonmentEnv env) {
    if (env.regime == Regime::DBS) {
        if (lambda <= 0.0) return 0.0;
        return detail::loss_rate_deriv_dbs(lambda, node, env.theta);
    }
    if (lambda <= 0.0) return env.theta / (env.theta + node.mu);
    const NodeParams shifted{node.m, node.mu + env.theta};
    const double d_dbs = detail::loss_rate_deriv_dbs(lambda, shifted, env.theta);
    return (env.theta + node.mu * d_dbs) / (node.mu + env.theta);
}

struct SteadyState {
    std::vector<double> p;         // stationary probabilities on {0..N}
    bool truncation_warning = false;  // tail mass p(N) > 1e-12

    double loss_rate(const NodeStateRates& rates) const {
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += rates.L(static_cast<int>(i)) * p[i];
        return s;
    }
};

// Truncated birth-death stationary distribution with birth rate lambda and
// death rate D(i), accumulated in log space to dodge overflow.
inline SteadyState steady_state_oracle(double lambda, NodeParams node, AbandonmentEnv env, int N) {
    if (N < node.m) throw std::invalid_argument("steady_state_oracle: N must be >= m");
    const NodeStateRates rates = loss_rate_fn(node, env);
    std::vector<double> logq(static_cast<std::size_t>(N) + 1, 0.0);
    if (lambda <= 0.0) {
        SteadyState out;
        out.p.assign(static_cast<std::size_t>(N) + 1, 0.0);
        out.p[0] = 1.0;
        return out;
    }
    const double log_lambda = std::log(lambda);
    for (int i = 1; i <= N; ++i)
        logq[i] = logq[i - 1] + log_lambda - std::log(rates.D(i));
    const double peak = *std::max_element(logq.begin(), logq.end());
    SteadyState out;
    out.p.resize(logq.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logq.size(); ++i) {
        out.p[i] = std::exp(logq[i] - peak);
        total += out.p[i];
    }
    for (double& v : out.p) v /= total;
    out.truncation_warning = out.p.back() > 1e-12;
    return out;
}

// Default oracle truncation: deep enough that the tail beyond the abandonment
// drift region is negligible.
inline int oracle_truncation(double lambda, NodeParams node, double theta) {
    return std::max(400, node.m + static_cast<int>(std::ceil(20.0 * lambda / theta)));
}

}  // namespace cloudq
