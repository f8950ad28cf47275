#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "cloudq/instance.hpp"
#include "cloudq/queueing.hpp"

namespace cloudq {

struct SplitVector {
    std::vector<double> rates;  // (lambda_0, lambda_1, ..., lambda_n)

    double external() const { return rates.at(0); }
    double total() const { return std::accumulate(rates.begin(), rates.end(), 0.0); }

    void validate(double lambda) const {
        if (rates.size() < 2) throw InfeasibleSplit("split needs external plus one node rate");
        for (double v : rates)
            if (v < 0.0) throw InfeasibleSplit("split has a negative component");
        if (std::abs(total() - lambda) > 1e-10 * std::max(1.0, lambda))
            throw InfeasibleSplit("split components do not sum to lambda");
    }
};

// Marginal loss slope at zero traffic: 0 under DBS, theta/(theta+mu) under DES.
inline double alpha_floor(NodeParams node, AbandonmentEnv env) {
    return loss_rate_deriv(0.0, node, env);
}

struct LambdaStarResult {
    double value = 0.0;
    bool unbounded = false;
};

// Inverse marginal function: the unique root of ell'(lambda) = alpha, extended
// by 0 below alpha_floor and unbounded at alpha >= 1. f_tol bounds the
// derivative residual at the root; 0 drives the bracket to full double
// precision in lambda, which c_star needs near saturation.
inline LambdaStarResult lambda_star(NodeParams node, AbandonmentEnv env, double alpha,
                                    double f_tol = 1e-10) {
    if (alpha < 0.0) throw std::invalid_argument("lambda_star: alpha must be >= 0");
    if (alpha >= 1.0) return {detail::kInf, true};
    const double floor = alpha_floor(node, env);
    if (alpha <= floor) return {0.0, false};
    auto f = [&](double lam) { return loss_rate_deriv(lam, node, env) - alpha; };
    double lo = 1e-12, hi = node.m * node.mu;
    double flo = f(lo);
    if (flo >= 0.0) {
        // root sits below the starting bracket; shrink toward zero
        while (flo > 0.0 && lo > 1e-300) {
            hi = lo;
            lo *= 0.5;
            flo = f(lo);
        }
        if (flo > 0.0) return {0.0, false};
        return {detail::brent(f, lo, hi, flo, f(hi), f_tol), false};
    }
    double fhi = f(hi);
    int guard = 0;
    while (fhi < 0.0) {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        fhi = f(hi);
        if (++guard > 80)
            throw RootBracketFailure("lambda_star: could not bracket ell'(lambda) = alpha");
    }
    return {detail::brent(f, lo, hi, flo, fhi, f_tol), false};
}

// Aggregate inverse marginal over the basic nodes.
inline double big_lambda_star(const Instance& inst, double alpha, double f_tol = 1e-10) {
    if (alpha < 0.0 || alpha >= 1.0)
        throw std::invalid_argument("big_lambda_star: alpha must lie in [0,1)");
    double sum = 0.0;
    const AbandonmentEnv env{inst.theta, inst.regime};
    for (const auto& node : inst.nodes) sum += lambda_star(node, env, alpha, f_tol).value;
    return sum;
}

namespace detail {

struct CStarRoot {
    double alpha = 0.0;
    double residual = 0.0;  // |Lambda*(alpha) - lambda|
};

// Bisection for Lambda*(alpha) = lambda, run to interval exhaustion. Inner
// inverse-marginal probes run at full precision, so the returned residual is
// limited only by alpha granularity: where ell' is flat, one ulp of alpha
// moves Lambda* by 1/ell'', which can exceed any fixed tolerance.
inline CStarRoot c_star_search(const Instance& inst) {
    const AbandonmentEnv env{inst.theta, inst.regime};
    double alpha1 = 1.0;
    for (const auto& node : inst.nodes) alpha1 = std::min(alpha1, alpha_floor(node, env));
    double lo = alpha1 + 1e-12, hi = 1.0 - 1e-12;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;  // interval exhausted at double precision
        const double v = big_lambda_star(inst, mid, 0.0);
        if (std::abs(v - inst.lambda) <= 1e-8 * inst.lambda) return {mid, std::abs(v - inst.lambda)};
        (v < inst.lambda ? lo : hi) = mid;
    }
    const double rlo = std::abs(big_lambda_star(inst, lo, 0.0) - inst.lambda);
    const double rhi = std::abs(big_lambda_star(inst, hi, 0.0) - inst.lambda);
    return rlo < rhi ? CStarRoot{lo, rlo} : CStarRoot{hi, rhi};
}

}  // namespace detail

// Root of big_lambda_star(alpha) = lambda within a relative residual of 1e-8.
// Throws when the root is not representable to that accuracy: the threshold
// saturates toward 1 as lambda grows and eventually leaves the bisection
// range, and flat stretches of ell' make the residual unreachable at any
// alpha granularity.
inline double c_star(const Instance& inst) {
    inst.validate();
    if (big_lambda_star(inst, 1.0 - 1e-12, 0.0) < inst.lambda)
        throw RootBracketFailure("c_star: threshold saturated within double precision of 1");
    const detail::CStarRoot root = detail::c_star_search(inst);
    if (root.residual <= 1e-8 * inst.lambda) return root.alpha;
    throw RootBracketFailure("c_star: bisection residual not met");
}

struct SplitResult {
    SplitVector split;
    double alpha_star = 0.0;
    std::optional<double> c_star_value;  // unset when out of reach: all-external
                                         // shortcut, or saturation toward 1
    std::vector<double> alpha_floors;
    double kkt_residual = 0.0;
    bool fallback_used = false;
};

namespace detail {

inline double kkt_residual_of(const Instance& inst, const SplitVector& split, double alpha_star) {
    const AbandonmentEnv env{inst.theta, inst.regime};
    const double tiny = 1e-12 * inst.lambda;
    double res = 0.0;
    for (std::size_t k = 0; k < inst.nodes.size(); ++k) {
        const double lam_k = split.rates[k + 1];
        if (lam_k > tiny)
            res = std::max(res, std::abs(loss_rate_deriv(lam_k, inst.nodes[k], env) - alpha_star));
        else
            res = std::max(res, alpha_star - alpha_floor(inst.nodes[k], env));
    }
    if (split.external() > tiny)
        res = std::max(res, std::abs(inst.C - alpha_star));
    else
        res = std::max(res, alpha_star - inst.C);
    return std::max(res, 0.0);
}

}  // namespace detail

// KKT-certified optimal Bernoulli split: alpha* = min{C, C*(lambda)}, node
// rates lambda_k*(alpha*), remainder external.
inline SplitResult optimal_bs(const Instance& inst) {
    inst.validate();
    const AbandonmentEnv env{inst.theta, inst.regime};
    SplitResult out;
    out.alpha_floors.reserve(inst.nodes.size());
    double alpha1 = 1.0;
    for (const auto& node : inst.nodes) {
        out.alpha_floors.push_back(alpha_floor(node, env));
        alpha1 = std::min(alpha1, out.alpha_floors.back());
    }
    out.split.rates.assign(inst.nodes.size() + 1, 0.0);

    if (inst.C <= alpha1) {
        // every node's marginal loss at zero traffic already exceeds the
        // external cost: send everything external
        out.alpha_star = inst.C;
        out.split.rates[0] = inst.lambda;
        out.kkt_residual = detail::kkt_residual_of(inst, out.split, out.alpha_star);
        return out;
    }

    // C < C*(lambda) iff the nodes cannot absorb all of lambda at marginal
    // cost C; testing absorption directly keeps this branch healthy even
    // when C* itself saturates beyond double precision. The margin matches
    // the c_star residual so a tie takes the zero-external branch.
    if (inst.C < 1.0 && big_lambda_star(inst, inst.C, 0.0) < inst.lambda * (1.0 - 1e-8)) {
        out.alpha_star = inst.C;
        double assigned = 0.0;
        for (std::size_t k = 0; k < inst.nodes.size(); ++k) {
            out.split.rates[k + 1] = lambda_star(inst.nodes[k], env, inst.C).value;
            assigned += out.split.rates[k + 1];
        }
        out.split.rates[0] = std::max(inst.lambda - assigned, 0.0);
        try {
            out.c_star_value = c_star(inst);
        } catch (const RootBracketFailure&) {
            // threshold saturated toward 1; the split itself never needs it
        }
        out.split.validate(inst.lambda);
        out.kkt_residual = detail::kkt_residual_of(inst, out.split, out.alpha_star);
        return out;
    }

    // alpha* = C*(lambda). The best bisection point suffices even when its
    // residual misses the c_star contract: the rescale below restores exact
    // feasibility, and exhaustion only happens where ell' is flat, so the
    // KKT residual stays honest.
    const detail::CStarRoot root = detail::c_star_search(inst);
    if (root.residual <= 1e-8 * inst.lambda) out.c_star_value = root.alpha;
    out.alpha_star = std::min(inst.C, root.alpha);
    for (std::size_t k = 0; k < inst.nodes.size(); ++k)
        out.split.rates[k + 1] = lambda_star(inst.nodes[k], env, out.alpha_star).value;

    double assigned = 0.0;
    for (std::size_t k = 1; k < out.split.rates.size(); ++k) assigned += out.split.rates[k];
    out.split.rates[0] = 0.0;
    if (assigned > 0.0) {
        const double scale = inst.lambda / assigned;
        for (std::size_t k = 1; k < out.split.rates.size(); ++k) out.split.rates[k] *= scale;
    }
    out.split.validate(inst.lambda);
    out.kkt_residual = detail::kkt_residual_of(inst, out.split, out.alpha_star);
    return out;
}

// Expected cost rate of a split: C*lambda_0 + sum_k ell_k(lambda_k).
inline double bs_objective(const Instance& inst, const SplitVector& split) {
    if (split.rates.size() != inst.nodes.size() + 1)
        throw InfeasibleSplit("split arity does not match instance");
    split.validate(inst.lambda);
    const AbandonmentEnv env{inst.theta, inst.regime};
    double obj = inst.C * split.external();
    for (std::size_t k = 0; k < inst.nodes.size(); ++k)
        obj += loss_rate(split.rates[k + 1], inst.nodes[k], env);
    return obj;
}

namespace detail {

// Euclidean projection onto the simplex {x >= 0, sum x = lambda}.
inline std::vector<double> project_simplex(std::vector<double> x, double lambda) {
    std::vector<double> u = x;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cum = 0.0, tau = 0.0;
    int rho = 0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cum += u[j];
        const double t = (cum - lambda) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            rho = static_cast<int>(j + 1);
            tau = t;
        }
    }
    (void)rho;
    for (double& v : x) v = std::max(v - tau, 0.0);
    return x;
}

}  // namespace detail

// Projected-gradient descent on the split objective, used when the smooth
// KKT pipeline cannot run (non-convex loss curves). Starts from the uniform
// split.
inline SplitResult optimal_bs_fallback(const Instance& inst, int max_iter = 20000) {
    inst.validate();
    const AbandonmentEnv env{inst.theta, inst.regime};
    const std::size_t n = inst.nodes.size();
    std::vector<double> x(n + 1, inst.lambda / static_cast<double>(n + 1));
    auto objective = [&](const std::vector<double>& v) {
        double obj = inst.C * v[0];
        for (std::size_t k = 0; k < n; ++k) obj += loss_rate(v[k + 1], inst.nodes[k], env);
        return obj;
    };
    double fx = objective(x);
    double step = inst.lambda;
    for (int it = 0; it < max_iter; ++it) {
        std::vector<double> grad(n + 1);
        grad[0] = inst.C;
        for (std::size_t k = 0; k < n; ++k)
            grad[k + 1] = loss_rate_deriv(x[k + 1], inst.nodes[k], env);
        bool moved = false;
        while (step > 1e-14 * inst.lambda) {
            std::vector<double> trial(n + 1);
            for (std::size_t j = 0; j <= n; ++j) trial[j] = x[j] - step * grad[j];
            trial = detail::project_simplex(std::move(trial), inst.lambda);
            const double ft = objective(trial);
            if (ft < fx - 1e-14 * std::max(1.0, std::abs(fx))) {
                double delta = 0.0;
                for (std::size_t j = 0; j <= n; ++j) delta = std::max(delta, std::abs(trial[j] - x[j]));
                x = std::move(trial);
                fx = ft;
                moved = true;
                step *= 1.3;
                if (delta <= 1e-12 * inst.lambda) moved = false;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    SplitResult out;
    out.split.rates = std::move(x);
    out.fallback_used = true;
    const AbandonmentEnv env2{inst.theta, inst.regime};
    for (const auto& node : inst.nodes) out.alpha_floors.push_back(alpha_floor(node, env2));
    // report the active marginal as alpha*: the largest used-node slope
    double astar = 0.0;
    bool any = false;
    for (std::size_t k = 0; k < n; ++k)
        if (out.split.rates[k + 1] > 1e-10 * inst.lambda) {
            astar = std::max(astar, loss_rate_deriv(out.split.rates[k + 1], inst.nodes[k], env2));
            any = true;
        }
    out.alpha_star = any ? astar : inst.C;
    out.kkt_residual = detail::kkt_residual_of(inst, out.split, out.alpha_star);
    return out;
}

}  // namespace cloudq
