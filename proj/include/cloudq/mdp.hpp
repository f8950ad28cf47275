#pragma once

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "cloudq/indices.hpp"
#include "cloudq/instance.hpp"
#include "cloudq/queueing.hpp"
#include "cloudq/split.hpp"

namespace cloudq {

// What happens to a job routed to a node whose buffer is at the truncation
// cap. OverflowExternal sends it to the external node (pays C), keeping the
// truncated model honest; SelfLoop discards it free of charge, which lets
// the solver harvest fee income at the boundary and is only useful for
// studying that artifact.
enum class BoundaryRule { OverflowExternal, SelfLoop };

// Jacobi: synchronous value-iteration sweeps, used by the optimizer and the
// default iterative evaluator; parallelizable and bit-stable. GaussSeidel:
// in-place relaxation of the grounded stationary measure, an accelerated
// single-threaded option for policy evaluation only (the optimizer always
// sweeps synchronously).
enum class SweepMode { Jacobi, GaussSeidel };

struct ChainOptions {
    long long state_cap = 5'000'000;
    BoundaryRule boundary = BoundaryRule::OverflowExternal;
};

// Uniformized truncated product chain. Transitions are generated on the fly
// from the per-node rate tables; only the per-state holding-cost and
// departure-rate sums are materialized.
struct ProductChain {
    double lambda = 0.0;
    double C = 0.0;
    AbandonmentEnv env;
    std::vector<NodeParams> nodes;
    std::vector<int> caps;            // N_k per node
    std::vector<long long> stride;    // mixed-radix strides
    long long S = 0;
    std::vector<std::vector<double>> Ltab, Dtab;  // per node, 0..N_k
    double lambda_u = 0.0;
    BoundaryRule boundary = BoundaryRule::OverflowExternal;
    std::vector<double> hold;         // sum_k L_k(i_k)
    std::vector<double> depart;       // sum_k D_k(i_k)

    int n() const { return static_cast<int>(nodes.size()); }
    void decode(long long s, std::vector<int>& i) const {
        i.resize(nodes.size());
        for (int k = n() - 1; k >= 0; --k) {
            i[k] = static_cast<int>(s % (caps[k] + 1));
            s /= caps[k] + 1;
        }
    }
    long long encode(const std::vector<int>& i) const {
        long long s = 0;
        for (int k = 0; k < n(); ++k) s += i[k] * stride[k];
        return s;
    }
};

// Iterates product states in linear-index order, maintaining occupancies.
struct Odometer {
    const ProductChain& chain;
    std::vector<int> i;
    explicit Odometer(const ProductChain& c) : chain(c), i(c.nodes.size(), 0) {}
    void advance() {
        for (int k = chain.n() - 1; k >= 0; --k) {
            if (i[k] < chain.caps[k]) {
                ++i[k];
                return;
            }
            i[k] = 0;
        }
    }
};

inline ProductChain build_chain(const Instance& inst, const ChainOptions& opts = {}) {
    inst.validate();
    ProductChain c;
    c.lambda = inst.lambda;
    c.C = inst.C;
    c.env = {inst.theta, inst.regime};
    c.nodes = inst.nodes;
    c.boundary = opts.boundary;
    c.caps.assign(inst.nodes.size(), inst.truncation);
    double approx = 1.0;
    for (std::size_t k = 0; k < c.nodes.size(); ++k) {
        if (c.caps[k] < c.nodes[k].m)
            throw std::invalid_argument("build_chain: truncation below server count");
        approx *= c.caps[k] + 1;
    }
    if (approx > static_cast<double>(opts.state_cap)) {
        std::ostringstream os;
        os << "build_chain: " << std::setprecision(15) << approx << " states exceed cap "
           << opts.state_cap;
        throw StateSpaceTooLarge(os.str());
    }
    long long S = 1;
    for (std::size_t k = 0; k < c.nodes.size(); ++k) S *= c.caps[k] + 1;
    c.S = S;
    c.stride.assign(c.nodes.size(), 1);
    for (int k = c.n() - 2; k >= 0; --k) c.stride[k] = c.stride[k + 1] * (c.caps[k + 1] + 1);

    double dmax = 0.0;
    for (int k = 0; k < c.n(); ++k) {
        const NodeStateRates r = loss_rate_fn(c.nodes[k], c.env);
        std::vector<double> L(c.caps[k] + 1), D(c.caps[k] + 1);
        for (int i = 0; i <= c.caps[k]; ++i) {
            L[i] = r.L(i);
            D[i] = r.D(i);
        }
        dmax += D[c.caps[k]];
        c.Ltab.push_back(std::move(L));
        c.Dtab.push_back(std::move(D));
    }
    c.lambda_u = c.lambda + dmax;

    c.hold.resize(S);
    c.depart.resize(S);
    Odometer od(c);
    for (long long s = 0; s < S; ++s, od.advance()) {
        double h = 0.0, d = 0.0;
        for (int k = 0; k < c.n(); ++k) {
            h += c.Ltab[k][od.i[k]];
            d += c.Dtab[k][od.i[k]];
        }
        c.hold[s] = h;
        c.depart[s] = d;
    }
    return c;
}

// Policies. Action encoding: 0 = external, k in 1..n = basic node k.
struct BernoulliSplitPolicy {
    SplitVector split;
};
struct IndexRoutePolicy {
    std::vector<IndexTable> tables;
    double C = 0.0;
};
struct LookupPolicy {
    std::vector<std::uint8_t> actions;
};
using Policy = std::variant<BernoulliSplitPolicy, IndexRoutePolicy, LookupPolicy>;

struct SolveOptions {
    double tol = 1e-10;                // on span(h_{t+1} - h_t) per unit of Lambda_u
    long long max_iter = 1'000'000;    // value/policy iterations combined
    bool rvi_only = false;             // skip the exact policy-iteration warm start
    SweepMode mode = SweepMode::Jacobi;
    long long exact_cap = 100'000;     // largest |S| for sparse linear solves
    long long ref_state = 0;
    int threads = 0;                   // 0: from CLOUDQ_THREADS, else 1
};

struct SolveResult {
    double gain = 0.0;                 // average cost rate
    std::vector<double> h;             // bias, rate units, h(ref) = 0
    std::vector<std::uint8_t> actions; // greedy policy
    long long iterations = 0;
    double span_residual = 0.0;        // span of the last h update, rate units
};

struct EvalReport {
    double gain = 0.0;
    double profit_per_job = 0.0;
    long long iterations = 0;
    double residual = 0.0;
    std::string method;
};

namespace detail {

inline int sweep_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("CLOUDQ_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

// Per-state arrival term under a fixed action, as a value in h-units:
// reject costs C and stays put; routing moves up if the node has room,
// otherwise the boundary rule applies.
inline double arrival_value(const ProductChain& c, const std::vector<int>& occ, long long s,
                            int action, const double* h) {
    if (action == 0) return c.C + h[s];
    const int k = action - 1;
    if (occ[k] < c.caps[k]) return h[s + c.stride[k]];
    return c.boundary == BoundaryRule::OverflowExternal ? c.C + h[s] : h[s];
}

inline double arrival_best(const ProductChain& c, const std::vector<int>& occ, long long s,
                           const double* h, int* amin) {
    double best = c.C + h[s];
    int ba = 0;
    for (int k = 0; k < c.n(); ++k) {
        const double v = arrival_value(c, occ, s, k + 1, h);
        if (v < best) {
            best = v;
            ba = k + 1;
        }
    }
    if (amin) *amin = ba;
    return best;
}

// One uniformized value-update at state s given the arrival-part value av.
inline double state_update(const ProductChain& c, const std::vector<int>& occ, long long s,
                           double av, const double* h) {
    double acc = c.hold[s] + c.lambda * av;
    for (int k = 0; k < c.n(); ++k)
        if (occ[k] > 0) acc += c.Dtab[k][occ[k]] * h[s - c.stride[k]];
    acc += (c.lambda_u - c.lambda - c.depart[s]) * h[s];
    return acc / c.lambda_u;
}

// Relative value iteration. Optimizing when actions == nullptr (greedy over
// actions each sweep), otherwise evaluating the fixed action table. BS
// policies evaluate through rvi_bs below instead.
inline SolveResult rvi(const ProductChain& c, const std::vector<std::uint8_t>* actions,
                       const SolveOptions& opts, const std::vector<double>* warm = nullptr) {
    const long long S = c.S;
    std::vector<double> h(S, 0.0), y(S, 0.0);
    if (warm && static_cast<long long>(warm->size()) == S) {
        h = *warm;
        const double ref = h[opts.ref_state];
        for (double& v : h) v -= ref;
    }
    const int nthreads = sweep_threads(opts.threads);
    double span = detail::kInf;
    long long it = 0;
    for (; it < opts.max_iter; ++it) {
        double lo = detail::kInf, hi = -detail::kInf;
        {
            auto block = [&](long long s0, long long s1, double* plo, double* phi) {
                std::vector<int> occ(c.nodes.size());
                {
                    long long rem = s0;
                    for (int k = 0; k < c.n(); ++k) {
                        occ[k] = static_cast<int>(rem / c.stride[k]);
                        rem %= c.stride[k];
                    }
                }
                ProductChain const& cc = c;
                Odometer od(cc);
                od.i = occ;
                double blo = detail::kInf, bhi = -detail::kInf;
                for (long long s = s0; s < s1; ++s, od.advance()) {
                    const double av = actions ? arrival_value(cc, od.i, s, (*actions)[s], h.data())
                                              : arrival_best(cc, od.i, s, h.data(), nullptr);
                    const double v = state_update(cc, od.i, s, av, h.data());
                    y[s] = v;
                    const double d = v - h[s];
                    blo = std::min(blo, d);
                    bhi = std::max(bhi, d);
                }
                *plo = blo;
                *phi = bhi;
            };
            if (nthreads <= 1 || S < 4096) {
                block(0, S, &lo, &hi);
            } else {
                std::vector<std::thread> pool;
                std::vector<double> los(nthreads), his(nthreads);
                const long long chunk = (S + nthreads - 1) / nthreads;
                for (int t = 0; t < nthreads; ++t) {
                    const long long s0 = t * chunk, s1 = std::min<long long>(S, s0 + chunk);
                    if (s0 >= s1) {
                        los[t] = detail::kInf;
                        his[t] = -detail::kInf;
                        continue;
                    }
                    pool.emplace_back(block, s0, s1, &los[t], &his[t]);
                }
                for (auto& th : pool) th.join();
                lo = *std::min_element(los.begin(), los.end());
                hi = *std::max_element(his.begin(), his.end());
            }
            const double ref = y[opts.ref_state];
            for (long long s = 0; s < S; ++s) h[s] = y[s] - ref;
        }
        span = hi - lo;
        if (span <= opts.tol) {
            SolveResult r;
            r.gain = c.lambda_u * 0.5 * (hi + lo);
            r.h = h;
            r.iterations = it + 1;
            r.span_residual = span * c.lambda_u;
            if (!actions) {
                r.actions.resize(S);
                Odometer od(c);
                for (long long s = 0; s < S; ++s, od.advance()) {
                    int a = 0;
                    arrival_best(c, od.i, s, h.data(), &a);
                    r.actions[s] = static_cast<std::uint8_t>(a);
                }
            } else {
                r.actions = *actions;
            }
            return r;
        }
    }
    throw NoConvergence("value iteration: span residual above tolerance after " +
                            std::to_string(it) + " sweeps",
                        span * c.lambda_u);
}

// Expected arrival behavior of a Bernoulli split folded into per-state
// rates: node k receives lambda_k when it has room; blocked and external
// fractions follow the boundary rule.
struct BsFold {
    std::vector<double> rate;  // per node
    double external;           // lambda_0
};

inline BsFold bs_fold(const ProductChain& c, const BernoulliSplitPolicy& p) {
    if (p.split.rates.size() != c.nodes.size() + 1)
        throw std::invalid_argument("evaluate_policy: split arity mismatch");
    p.split.validate(c.lambda);
    BsFold f;
    f.external = p.split.rates[0];
    f.rate.assign(p.split.rates.begin() + 1, p.split.rates.end());
    return f;
}

inline SolveResult rvi_bs(const ProductChain& c, const BernoulliSplitPolicy& p,
                          const SolveOptions& opts) {
    const BsFold f = bs_fold(c, p);
    const long long S = c.S;
    std::vector<double> h(S, 0.0), y(S, 0.0);
    double span = detail::kInf;
    const bool pay_blocked = c.boundary == BoundaryRule::OverflowExternal;
    for (long long it = 0; it < opts.max_iter; ++it) {
        double lo = detail::kInf, hi = -detail::kInf;
        Odometer od(c);
        for (long long s = 0; s < S; ++s, od.advance()) {
            double acc = c.hold[s] + f.external * (c.C + h[s]);
            for (int k = 0; k < c.n(); ++k) {
                if (od.i[k] < c.caps[k])
                    acc += f.rate[k] * h[s + c.stride[k]];
                else
                    acc += f.rate[k] * (pay_blocked ? c.C + h[s] : h[s]);
                if (od.i[k] > 0) acc += c.Dtab[k][od.i[k]] * h[s - c.stride[k]];
            }
            acc += (c.lambda_u - c.lambda - c.depart[s]) * h[s];
            const double v = acc / c.lambda_u;
            y[s] = v;
            const double d = v - h[s];
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        const double ref = y[opts.ref_state];
        for (long long s = 0; s < S; ++s) h[s] = y[s] - ref;
        span = hi - lo;
        if (span <= opts.tol) {
            SolveResult r;
            r.gain = c.lambda_u * 0.5 * (hi + lo);
            r.iterations = it + 1;
            r.span_residual = span * c.lambda_u;
            return r;
        }
    }
    throw NoConvergence("BS evaluation: span residual above tolerance", span * c.lambda_u);
}

// Gauss-Seidel sweeps for the stationary distribution: every state is
// relaxed through its balance equation in place, and the iterate is
// re-normalized each sweep. A fixed point of the sweep satisfies every
// balance equation exactly, so the limit is the stationary distribution.
// The stop rule extrapolates the geometric tail of the L1 change between
// normalized iterates and converts it into a gain-error bound through the
// spread of the per-state cost rates, on the tol * lambda_u scale of the
// Jacobi certificate.
inline SolveResult stationary_gs(const ProductChain& c, const std::vector<std::uint8_t>* actions,
                                 const BsFold* fold, const SolveOptions& opts) {
    const long long S = c.S;
    const bool pay_blocked = c.boundary == BoundaryRule::OverflowExternal;
    std::vector<double> pi(S, 1.0 / static_cast<double>(S)), prev(S, 0.0);

    auto cost_at = [&](const std::vector<int>& occ, long long s) {
        double cst = c.hold[s];
        if (fold) {
            cst += fold->external * c.C;
            if (pay_blocked)
                for (int k = 0; k < c.n(); ++k)
                    if (occ[k] >= c.caps[k]) cst += fold->rate[k] * c.C;
        } else {
            const int act = (*actions)[s];
            if (act == 0 || (occ[act - 1] >= c.caps[act - 1] && pay_blocked))
                cst += c.lambda * c.C;
        }
        return cst;
    };

    double gain = 0.0, err = detail::kInf;
    double cspread = 0.0, prev_delta = detail::kInf;
    for (long long it = 0; it < opts.max_iter; ++it) {
        Odometer od(c);
        for (long long s = 0; s < S; ++s, od.advance()) {
            double in = 0.0;
            double arr_out = 0.0;
            for (int k = 0; k < c.n(); ++k) {
                const int ik = od.i[k];
                if (ik < c.caps[k]) in += c.Dtab[k][ik + 1] * pi[s + c.stride[k]];
                if (fold) {
                    if (ik > 0) in += fold->rate[k] * pi[s - c.stride[k]];
                    if (ik < c.caps[k]) arr_out += fold->rate[k];
                } else {
                    if (ik > 0 && (*actions)[s - c.stride[k]] == k + 1)
                        in += c.lambda * pi[s - c.stride[k]];
                }
            }
            if (!fold) {
                const int act = (*actions)[s];
                if (act > 0 && od.i[act - 1] < c.caps[act - 1]) arr_out = c.lambda;
            }
            const double out = c.depart[s] + arr_out;
            if (out > 0.0) pi[s] = in / out;
        }

        double mass = 0.0, cost = 0.0;
        Odometer oc(c);
        double cmin = detail::kInf, cmax = -detail::kInf;
        for (long long s = 0; s < S; ++s, oc.advance()) {
            const double cs = cost_at(oc.i, s);
            mass += pi[s];
            cost += pi[s] * cs;
            if (it == 0) {
                cmin = std::min(cmin, cs);
                cmax = std::max(cmax, cs);
            }
        }
        if (it == 0) cspread = 0.5 * (cmax - cmin);
        gain = cost / mass;

        double delta = 0.0;
        for (long long s = 0; s < S; ++s) {
            const double v = pi[s] / mass;
            delta += std::abs(v - prev[s]);
            prev[s] = v;
            pi[s] = v;
        }

        err = detail::kInf;
        if (delta == 0.0) {
            err = 0.0;
        } else if (std::isfinite(prev_delta) && prev_delta > delta) {
            const double rho = delta / prev_delta;
            err = delta * rho / (1.0 - rho) * cspread;
        }
        if (err <= opts.tol * c.lambda_u) {
            SolveResult r;
            r.gain = gain;
            r.iterations = it + 1;
            r.span_residual = err;
            return r;
        }
        prev_delta = delta;
    }
    throw NoConvergence("stationary evaluation: gain not settled", err);
}

// Exact gain/bias of a fixed deterministic policy from the sparse Poisson
// system; unknowns [g, h(1..S-1)] with h(ref)=0 after re-centering.
inline std::pair<double, std::vector<double>> poisson_solve(const ProductChain& c,
                                                            const std::vector<std::uint8_t>& a) {
    const long long S = c.S;
    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> trips;
    trips.reserve(static_cast<std::size_t>(S) * (c.n() + 3));
    Eigen::VectorXd rhs(S);
    Odometer od(c);
    for (long long s = 0; s < S; ++s, od.advance()) {
        trips.emplace_back(s, 0, 1.0);
        double cost = c.hold[s];
        double diag = 0.0;
        auto arc = [&](long long to, double rate) {
            diag += rate;
            if (to >= 1) trips.emplace_back(s, to, -rate);
        };
        for (int k = 0; k < c.n(); ++k)
            if (od.i[k] > 0) arc(s - c.stride[k], c.Dtab[k][od.i[k]]);
        const int act = a[s];
        bool reject = act == 0;
        if (!reject) {
            const int k = act - 1;
            if (od.i[k] < c.caps[k])
                arc(s + c.stride[k], c.lambda);
            else if (c.boundary == BoundaryRule::OverflowExternal)
                reject = true;
            // SelfLoop: arrival leaves the state unchanged, no cost
        }
        if (reject) cost += c.lambda * c.C;
        if (s >= 1) trips.emplace_back(s, s, diag);
        rhs[s] = cost;
    }
    Eigen::SparseMatrix<double> A(S, S);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
    if (lu.info() != Eigen::Success)
        throw NoConvergence("poisson_solve: factorization failed", detail::kInf);
    Eigen::VectorXd x = lu.solve(rhs);
    std::vector<double> h(S);
    h[0] = 0.0;
    for (long long s = 1; s < S; ++s) h[s] = x[s];
    return {x[0], std::move(h)};
}

// Stationary distribution of a fixed policy (or BS fold) and its cost rate.
inline std::pair<double, long long> stationary_eval(const ProductChain& c,
                                                    const std::vector<std::uint8_t>* actions,
                                                    const BsFold* fold) {
    const long long S = c.S;
    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> trips;
    trips.reserve(static_cast<std::size_t>(S) * (c.n() + 3));
    std::vector<double> cost(S);
    const bool pay_blocked = c.boundary == BoundaryRule::OverflowExternal;
    Odometer od(c);
    for (long long s = 0; s < S; ++s, od.advance()) {
        double out = 0.0;
        double cst = c.hold[s];
        auto arc = [&](long long to, double rate) {
            out += rate;
            if (to != 0) trips.emplace_back(to, s, rate);  // row 0 replaced below
        };
        for (int k = 0; k < c.n(); ++k)
            if (od.i[k] > 0) arc(s - c.stride[k], c.Dtab[k][od.i[k]]);
        if (fold) {
            cst += fold->external * c.C;
            for (int k = 0; k < c.n(); ++k) {
                if (od.i[k] < c.caps[k])
                    arc(s + c.stride[k], fold->rate[k]);
                else if (pay_blocked)
                    cst += fold->rate[k] * c.C;
            }
        } else {
            const int act = (*actions)[s];
            bool reject = act == 0;
            if (!reject) {
                const int k = act - 1;
                if (od.i[k] < c.caps[k])
                    arc(s + c.stride[k], c.lambda);
                else if (pay_blocked)
                    reject = true;
            }
            if (reject) cst += c.lambda * c.C;
        }
        if (s != 0) trips.emplace_back(s, s, -out);
        cost[s] = cst;
    }
    for (long long s = 0; s < S; ++s) trips.emplace_back(0, s, 1.0);
    Eigen::SparseMatrix<double> A(S, S);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
    if (lu.info() != Eigen::Success)
        throw NoConvergence("stationary_eval: factorization failed", detail::kInf);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(S);
    b[0] = 1.0;
    Eigen::VectorXd pi = lu.solve(b);
    double g = 0.0;
    for (long long s = 0; s < S; ++s) g += pi[s] * cost[s];
    return {g, 1};
}

inline std::vector<std::uint8_t> greedy_actions(const ProductChain& c,
                                                const std::vector<double>& h_rate) {
    std::vector<double> h(h_rate);
    std::vector<std::uint8_t> a(c.S);
    Odometer od(c);
    for (long long s = 0; s < c.S; ++s, od.advance()) {
        int best = 0;
        arrival_best(c, od.i, s, h.data(), &best);
        a[s] = static_cast<std::uint8_t>(best);
    }
    return a;
}

}  // namespace detail

// Average-cost optimal policy on the truncated chain. For state spaces
// within exact_cap, policy iteration with exact Poisson solves finds the
// fixed point, then value-iteration sweeps certify the span residual.
// Larger chains (or rvi_only) run relative value iteration directly.
inline SolveResult solve_optimal(const ProductChain& chain, const SolveOptions& opts = {}) {
    if (chain.S <= opts.exact_cap && !opts.rvi_only) {
        std::vector<std::uint8_t> a(chain.S, 0);
        long long pi_iters = 0;
        for (; pi_iters < 500; ++pi_iters) {
            auto [g, h] = detail::poisson_solve(chain, a);
            std::vector<std::uint8_t> anew(chain.S);
            Odometer od(chain);
            bool changed = false;
            for (long long s = 0; s < chain.S; ++s, od.advance()) {
                int best = 0;
                const double bv = detail::arrival_best(chain, od.i, s, h.data(), &best);
                const double cur = detail::arrival_value(chain, od.i, s, a[s], h.data());
                // keep the incumbent unless strictly better (anti-cycling)
                const bool improve = bv < cur - 1e-10 * std::max(1.0, std::abs(cur));
                anew[s] = improve ? static_cast<std::uint8_t>(best) : a[s];
                changed = changed || anew[s] != a[s];
            }
            if (!changed) {
                SolveOptions verify = opts;
                verify.max_iter = 10'000;
                SolveResult r = detail::rvi(chain, nullptr, verify, &h);
                r.iterations += pi_iters + 1;
                return r;
            }
            a = std::move(anew);
        }
        throw NoConvergence("solve_optimal: policy iteration cycling", detail::kInf);
    }
    return detail::rvi(chain, nullptr, opts);
}

// Exact evaluation of a stationary policy on the chain: direct stationary
// solve within exact_cap, value-iteration sweeps beyond it.
inline EvalReport evaluate_policy(const ProductChain& chain, const Policy& policy,
                                  const SolveOptions& opts = {}) {
    EvalReport rep;
    const bool direct = chain.S <= opts.exact_cap;

    std::vector<std::uint8_t> actions;
    const BernoulliSplitPolicy* bs = std::get_if<BernoulliSplitPolicy>(&policy);
    if (const auto* ip = std::get_if<IndexRoutePolicy>(&policy)) {
        actions.resize(chain.S);
        Odometer od(chain);
        std::vector<long long> st(chain.nodes.size());
        const std::vector<int>* caps =
            chain.boundary == BoundaryRule::OverflowExternal ? &chain.caps : nullptr;
        for (long long s = 0; s < chain.S; ++s, od.advance()) {
            for (std::size_t k = 0; k < st.size(); ++k) st[k] = od.i[k];
            actions[s] = static_cast<std::uint8_t>(route(st, ip->tables, ip->C, caps));
        }
    } else if (const auto* lp = std::get_if<LookupPolicy>(&policy)) {
        if (static_cast<long long>(lp->actions.size()) != chain.S)
            throw std::invalid_argument("evaluate_policy: lookup table size mismatch");
        actions = lp->actions;
    }

    if (direct) {
        if (bs) {
            const detail::BsFold fold = detail::bs_fold(chain, *bs);
            auto [g, iters] = detail::stationary_eval(chain, nullptr, &fold);
            rep.gain = g;
            rep.iterations = iters;
        } else {
            auto [g, iters] = detail::stationary_eval(chain, &actions, nullptr);
            rep.gain = g;
            rep.iterations = iters;
        }
        rep.method = "stationary-direct";
        rep.residual = 0.0;
    } else if (opts.mode == SweepMode::GaussSeidel) {
        detail::BsFold fold;
        if (bs) fold = detail::bs_fold(chain, *bs);
        SolveResult r =
            detail::stationary_gs(chain, bs ? nullptr : &actions, bs ? &fold : nullptr, opts);
        rep.gain = r.gain;
        rep.iterations = r.iterations;
        rep.residual = r.span_residual;
        rep.method = "stationary-gauss-seidel";
    } else {
        SolveResult r = bs ? detail::rvi_bs(chain, *bs, opts) : detail::rvi(chain, &actions, opts);
        rep.gain = r.gain;
        rep.iterations = r.iterations;
        rep.residual = r.span_residual;
        rep.method = "rvi-jacobi";
    }
    rep.profit_per_job = (chain.lambda - rep.gain) / chain.lambda;
    return rep;
}

inline double optimality_gap(double z_star, double z_pi) {
    if (!(z_star > 0.0)) throw DegenerateBaseline("optimality_gap: nonpositive optimum");
    return 100.0 * (z_star - z_pi) / z_star;
}

inline double profit_per_job(const ProductChain& chain, double gain) {
    return (chain.lambda - gain) / chain.lambda;
}

}  // namespace cloudq
