#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cloudq/queueing.hpp"

namespace cloudq {

enum class IndexFamily { IO, PI, RB };

inline const char* to_string(IndexFamily f) {
    switch (f) {
        case IndexFamily::IO: return "IO";
        case IndexFamily::PI: return "PI";
    }
    return "RB";
}

// State-indexed routing index table for one node. States beyond the table
// length read the last entry (the tails are asymptotically flat).
struct IndexTable {
    IndexFamily family = IndexFamily::IO;
    int node_id = 0;
    std::vector<double> values;  // phi(0..N)
    double lambda_input = 0.0;   // PI: node rate from the optimal split; RB: total rate
    double ell_input = 0.0;      // PI: loss rate at lambda_input
    bool unstable = false;       // PI recursion monitor tripped
    int freeze_state = -1;       // first state held constant after a trip

    double at(long long i) const {
        const long long last = static_cast<long long>(values.size()) - 1;
        return values[static_cast<std::size_t>(std::clamp(i, 0LL, last))];
    }
};

// Marginal abandonment probability of a job arriving to find i others present.
inline IndexTable io_index(const NodeParams& node, const AbandonmentEnv& env, int N) {
    const NodeStateRates r = loss_rate_fn(node, env);
    IndexTable t;
    t.family = IndexFamily::IO;
    t.values.resize(N + 1);
    for (int i = 0; i <= N; ++i) {
        if (env.regime == Regime::DES && i < node.m)
            t.values[i] = env.theta / (env.theta + node.mu);
        else
            t.values[i] = r.L(i + 1) / r.D(i + 1);
    }
    return t;
}

// First-order marginal cost of routing to the node when it holds i jobs,
// relative to a baseline Bernoulli stream of rate lambda_node. Computed by
// the forward recursion on bias differences; the recursion amplifies
// rounding in ell_node geometrically, so growth is monitored and the table
// frozen at the last stable state when it trips.
inline IndexTable pi_index(const NodeParams& node, const AbandonmentEnv& env, double lambda_node,
                           double ell_node, int N) {
    if (lambda_node == 0.0) {
        IndexTable t = io_index(node, env, N);
        t.family = IndexFamily::PI;
        return t;
    }
    const NodeStateRates r = loss_rate_fn(node, env);
    IndexTable t;
    t.family = IndexFamily::PI;
    t.lambda_input = lambda_node;
    t.ell_input = ell_node;
    t.values.resize(N + 1);
    t.values[0] = ell_node / lambda_node;
    for (int i = 1; i <= N; ++i) {
        const double v = (ell_node - r.L(i) + r.D(i) * t.values[i - 1]) / lambda_node;
        const bool decreasing_tail = i > 2 * node.m && v < t.values[i - 1] - 1e-6;
        if (!std::isfinite(v) || v < -0.1 || v > 2.0 || decreasing_tail) {
            std::fill(t.values.begin() + i, t.values.end(), t.values[i - 1]);
            t.unstable = true;
            t.freeze_state = i;
            break;
        }
        t.values[i] = v;
    }
    return t;
}

// Whittle restless-bandit index of the node fed by the full arrival stream.
// Prefix states use the closed forms; beyond them the simplified recursion
// tracks the auxiliaries z and g.
inline IndexTable rb_index(const NodeParams& node, const AbandonmentEnv& env, double lambda_total,
                           int N) {
    if (!(lambda_total > 0.0)) throw std::invalid_argument("rb_index: lambda_total must be > 0");
    const NodeStateRates r = loss_rate_fn(node, env);
    IndexTable t;
    t.family = IndexFamily::RB;
    t.lambda_input = lambda_total;
    t.values.resize(N + 1);
    const double lam = lambda_total;
    const double base =
        env.regime == Regime::DBS ? 0.0 : env.theta / (node.mu + env.theta);
    const double D1 = r.D(1);
    t.values[0] = r.L(1) / D1;
    double z = 1.0;
    double g = lam * D1 / (lam + D1);
    for (int i = 1; i <= N; ++i) {
        const double Di = r.D(i);
        const double Di1 = r.D(i + 1);
        const double s = (Di1 - Di) + g * Di / lam;
        if (i <= node.m - 1)
            t.values[i] = base;
        else
            t.values[i] =
                t.values[i - 1] +
                env.theta * (1.0 - t.values[i - 1]) / (env.theta + Di * g / lam);
        const double znew = 1.0 - lam * Di / ((lam + Di) * (lam + Di1) * z);
        g = lam * s / (znew * (lam + Di1));
        z = znew;
    }
    for (int i = 1; i <= N; ++i)
        if (t.values[i] < t.values[i - 1] - 1e-12)
            throw IndexabilityViolation("rb_index: values decrease at state " + std::to_string(i));
    return t;
}

// Index routing rule: send the job to the node with the currently lowest
// index value (ties to the lowest node id) provided it does not exceed the
// external usage cost C; otherwise route externally (action 0). A caller
// evaluating on a capped state space can exclude full nodes via caps
// (state[k] >= caps[k] removes node k from consideration).
inline int route(const std::vector<long long>& state, const std::vector<IndexTable>& tables,
                 double C, const std::vector<int>* caps = nullptr) {
    int best = -1;
    double best_phi = detail::kInf;
    for (std::size_t k = 0; k < tables.size(); ++k) {
        if (caps && state[k] >= (*caps)[k]) continue;
        const double phi = tables[k].at(state[k]);
        if (phi < best_phi) {
            best_phi = phi;
            best = static_cast<int>(k);
        }
    }
    if (best >= 0 && best_phi <= C) return best + 1;
    return 0;
}

}  // namespace cloudq
