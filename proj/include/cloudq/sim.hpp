#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cloudq/indices.hpp"
#include "cloudq/instance.hpp"
#include "cloudq/mdp.hpp"

namespace cloudq {

// Event-driven simulation of the routing system with unbounded queues. Each
// arriving job draws its deadline on arrival; the deadline is canceled at
// service start (DBS) or at service completion (DES, the server is freed
// when it fires mid-service). Every abandonment at a basic node refunds one
// fee unit and every externally routed job costs C, so the measured cost
// rate is directly comparable to the chain evaluator's gain.
struct SimConfig {
    double horizon = 0.0;    // run length in time units; used when > 0
    long long jobs = 0;      // run length in arrivals; exactly one of the two
    double warmup = 0.2;     // leading fraction of the run excluded from estimates
    long long replications = 1;
    std::uint64_t seed = 1;
    Policy policy;
};

// Whole-run bookkeeping, not warmup-filtered. Every processed arrival is
// accounted for: arrivals = completions + abandonments + externals +
// in_system_end holds exactly per replication and summed.
struct SimCounts {
    long long arrivals = 0;
    long long completions = 0;
    long long abandonments = 0;
    long long externals = 0;
    long long in_system_end = 0;
};

// Replication-averaged estimates with 95% half-widths from the replication
// variance (Student t). Half-widths are 0 when replications < 2. Per-node
// vectors follow instance node order. abandon_balance is the measured
// abandonment rate minus theta times the time-average abandoning population
// (full occupancy under DES, queue excess under DBS); it vanishes in the
// stationary limit.
struct SimReport {
    long long replications = 0;
    double time = 0.0;  // measured time summed over replications
    double cost_rate = 0.0, cost_rate_hw = 0.0;
    double profit_per_job = 0.0, profit_per_job_hw = 0.0;
    double external_fraction = 0.0, external_fraction_hw = 0.0;
    std::vector<long long> abandonments;
    std::vector<double> abandon_rate, abandon_rate_hw;
    std::vector<double> occupancy, queue_excess;
    std::vector<double> abandon_balance, abandon_balance_hw;
    SimCounts totals;
};

namespace detail {

// splitmix64 finalizer; independent streams are keyed by hashing the
// (seed, replication, role) tuple through it.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 sim_stream(std::uint64_t seed, long long rep, int role) {
    return std::mt19937_64(
        mix64(mix64(mix64(seed) ^ static_cast<std::uint64_t>(rep)) ^
              static_cast<std::uint64_t>(role)));
}

inline double exp_draw(std::mt19937_64& g, double rate) {
    if (!(rate > 0.0)) return kInf;
    const double u = (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-53;
    return -std::log(u) / rate;
}

inline double unit_draw(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

enum class EvKind : std::uint8_t { Arrival, Completion, Deadline };

struct SimEvent {
    double t;
    long long seq;  // insertion order breaks time ties deterministically
    EvKind kind;
    long long job;
};

struct SimEventLater {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
        if (a.t != b.t) return a.t > b.t;
        return a.seq > b.seq;
    }
};

enum class JobPhase : std::uint8_t { Waiting, InService, Gone };

struct SimJob {
    int node;
    JobPhase phase;
};

struct RepStats {
    double time = 0.0;
    double cost_rate = 0.0;
    double external_fraction = 0.0;
    std::vector<long long> ab_count;
    std::vector<double> ab_rate, occ_avg, excess_avg, balance;
    SimCounts counts;
};

// Lookup policies carry actions on the truncated box; the simulator clamps
// each coordinate to the truncation level, extending the policy constantly
// beyond it.
struct LookupCtx {
    std::vector<long long> stride;
    int cap = 0;
    const std::vector<std::uint8_t>* actions = nullptr;
};

inline RepStats run_replication(const Instance& inst, const SimConfig& cfg, long long rep) {
    const int n = static_cast<int>(inst.nodes.size());
    const bool des = inst.regime == Regime::DES;
    const bool by_jobs = cfg.jobs > 0;

    std::mt19937_64 arr_eng = sim_stream(cfg.seed, rep, 0);
    std::mt19937_64 svc_eng = sim_stream(cfg.seed, rep, 1);
    std::mt19937_64 dl_eng = sim_stream(cfg.seed, rep, 2);
    std::mt19937_64 rt_eng = sim_stream(cfg.seed, rep, 3);

    const BernoulliSplitPolicy* bs = std::get_if<BernoulliSplitPolicy>(&cfg.policy);
    const IndexRoutePolicy* ip = std::get_if<IndexRoutePolicy>(&cfg.policy);
    const LookupPolicy* lp = std::get_if<LookupPolicy>(&cfg.policy);
    LookupCtx lk;
    if (bs) {
        if (bs->split.rates.size() != static_cast<std::size_t>(n) + 1)
            throw std::invalid_argument("simulate: split size does not match node count");
    } else if (ip) {
        if (ip->tables.size() != static_cast<std::size_t>(n))
            throw std::invalid_argument("simulate: index table count does not match node count");
    } else {
        lk.cap = inst.truncation;
        lk.stride.assign(n, 1);
        for (int k = n - 2; k >= 0; --k) lk.stride[k] = lk.stride[k + 1] * (lk.cap + 1);
        long long states = lk.stride[0] * (lk.cap + 1);
        if (lp->actions.size() != static_cast<std::size_t>(states))
            throw std::invalid_argument("simulate: lookup table does not match the truncated box");
        lk.actions = &lp->actions;
    }

    std::vector<long long> occ(n, 0), busy(n, 0);
    std::vector<std::deque<long long>> fifo(n);
    std::vector<SimJob> jobs;
    std::priority_queue<SimEvent, std::vector<SimEvent>, SimEventLater> heap;
    long long seq = 0;

    SimCounts counts;
    const long long warm_jobs = by_jobs ? static_cast<long long>(cfg.warmup * cfg.jobs) : 0;
    bool t0_set = !by_jobs;  // in job-count mode t0 is the first post-warmup arrival
    double t0 = by_jobs ? kInf : cfg.warmup * cfg.horizon;

    double last_t = 0.0, end_t = 0.0;
    double cost = 0.0;
    long long pw_arrivals = 0, pw_externals = 0;
    std::vector<long long> pw_ab(n, 0);
    std::vector<double> occ_int(n, 0.0), excess_int(n, 0.0);

    auto integrate = [&](double t) {
        if (t0_set && t > t0) {
            const double a = std::max(last_t, t0);
            if (t > a)
                for (int k = 0; k < n; ++k) {
                    occ_int[k] += static_cast<double>(occ[k]) * (t - a);
                    excess_int[k] +=
                        static_cast<double>(std::max(occ[k] - inst.nodes[k].m, 0LL)) * (t - a);
                }
        }
        last_t = t;
    };

    auto start_next = [&](int k, double t) {
        while (!fifo[k].empty()) {
            const long long id = fifo[k].front();
            fifo[k].pop_front();
            if (jobs[id].phase != JobPhase::Waiting) continue;
            jobs[id].phase = JobPhase::InService;
            ++busy[k];
            heap.push({t + exp_draw(svc_eng, inst.nodes[k].mu), seq++, EvKind::Completion, id});
            return;
        }
    };

    auto route_one = [&]() {
        if (bs) {
            const double u = unit_draw(rt_eng) * bs->split.total();
            double cum = 0.0;
            for (int k = 0; k <= n; ++k) {
                cum += bs->split.rates[k];
                if (u < cum) return k;
            }
            return 0;
        }
        std::vector<long long> st(occ.begin(), occ.end());
        if (ip) return route(st, ip->tables, ip->C);
        long long s = 0;
        for (int k = 0; k < n; ++k) s += std::min(st[k], static_cast<long long>(lk.cap)) * lk.stride[k];
        return static_cast<int>((*lk.actions)[static_cast<std::size_t>(s)]);
    };

    heap.push({exp_draw(arr_eng, inst.lambda), seq++, EvKind::Arrival, -1});
    while (!heap.empty()) {
        const SimEvent e = heap.top();
        heap.pop();
        if (!by_jobs && e.t > cfg.horizon) {
            integrate(cfg.horizon);
            end_t = cfg.horizon;
            break;
        }
        integrate(e.t);
        if (e.kind == EvKind::Arrival) {
            ++counts.arrivals;
            if (!t0_set && counts.arrivals > warm_jobs) {
                t0 = e.t;
                t0_set = true;
            }
            const bool counted = t0_set && e.t >= t0;
            if (counted) ++pw_arrivals;
            const int a = route_one();
            if (a == 0) {
                ++counts.externals;
                if (counted) {
                    ++pw_externals;
                    cost += inst.C;
                }
            } else {
                const int k = a - 1;
                const long long id = static_cast<long long>(jobs.size());
                jobs.push_back({k, JobPhase::Waiting});
                ++occ[k];
                heap.push({e.t + exp_draw(dl_eng, inst.theta), seq++, EvKind::Deadline, id});
                if (busy[k] < inst.nodes[k].m) {
                    jobs[id].phase = JobPhase::InService;
                    ++busy[k];
                    heap.push(
                        {e.t + exp_draw(svc_eng, inst.nodes[k].mu), seq++, EvKind::Completion, id});
                } else {
                    fifo[k].push_back(id);
                }
            }
            if (by_jobs && counts.arrivals == cfg.jobs) {
                end_t = e.t;
                break;
            }
            heap.push({e.t + exp_draw(arr_eng, inst.lambda), seq++, EvKind::Arrival, -1});
        } else if (e.kind == EvKind::Completion) {
            if (jobs[e.job].phase != JobPhase::InService) continue;
            const int k = jobs[e.job].node;
            jobs[e.job].phase = JobPhase::Gone;
            ++counts.completions;
            --occ[k];
            --busy[k];
            start_next(k, e.t);
        } else {
            const JobPhase ph = jobs[e.job].phase;
            if (ph == JobPhase::Gone) continue;
            if (ph == JobPhase::InService && !des) continue;  // canceled at service start
            const int k = jobs[e.job].node;
            jobs[e.job].phase = JobPhase::Gone;
            ++counts.abandonments;
            --occ[k];
            const bool counted = t0_set && e.t >= t0;
            if (counted) {
                ++pw_ab[k];
                cost += 1.0;
            }
            if (ph == JobPhase::InService) {
                --busy[k];
                start_next(k, e.t);
            }
        }
    }

    for (int k = 0; k < n; ++k) counts.in_system_end += occ[k];

    RepStats r;
    r.counts = counts;
    r.time = t0_set ? std::max(end_t - t0, 0.0) : 0.0;
    r.cost_rate = r.time > 0.0 ? cost / r.time : 0.0;
    r.external_fraction =
        pw_arrivals > 0 ? static_cast<double>(pw_externals) / static_cast<double>(pw_arrivals) : 0.0;
    r.ab_count = pw_ab;
    r.ab_rate.resize(n);
    r.occ_avg.resize(n);
    r.excess_avg.resize(n);
    r.balance.resize(n);
    for (int k = 0; k < n; ++k) {
        r.ab_rate[k] = r.time > 0.0 ? static_cast<double>(pw_ab[k]) / r.time : 0.0;
        r.occ_avg[k] = r.time > 0.0 ? occ_int[k] / r.time : 0.0;
        r.excess_avg[k] = r.time > 0.0 ? excess_int[k] / r.time : 0.0;
        r.balance[k] = r.ab_rate[k] - inst.theta * (des ? r.occ_avg[k] : r.excess_avg[k]);
    }
    return r;
}

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double half_width(const std::vector<double>& xs, double mean) {
    const std::size_t r = xs.size();
    if (r < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(r - 1));
    const boost::math::students_t dist(static_cast<double>(r - 1));
    return boost::math::quantile(dist, 0.975) * sd / std::sqrt(static_cast<double>(r));
}

}  // namespace detail

inline SimReport simulate(const Instance& inst, const SimConfig& cfg) {
    inst.validate();
    if ((cfg.horizon > 0.0) == (cfg.jobs > 0))
        throw std::invalid_argument("simulate: set exactly one of horizon and jobs");
    if (!(cfg.warmup >= 0.0 && cfg.warmup <= 0.5))
        throw std::invalid_argument("simulate: warmup must lie in [0, 0.5]");
    if (cfg.replications < 1)
        throw std::invalid_argument("simulate: replications must be >= 1");

    const int n = static_cast<int>(inst.nodes.size());
    std::vector<detail::RepStats> reps;
    reps.reserve(static_cast<std::size_t>(cfg.replications));
    for (long long r = 0; r < cfg.replications; ++r)
        reps.push_back(detail::run_replication(inst, cfg, r));

    SimReport out;
    out.replications = cfg.replications;
    out.abandonments.assign(n, 0);
    out.abandon_rate.resize(n);
    out.abandon_rate_hw.resize(n);
    out.occupancy.resize(n);
    out.queue_excess.resize(n);
    out.abandon_balance.resize(n);
    out.abandon_balance_hw.resize(n);

    std::vector<double> buf(reps.size());
    auto stat = [&](auto&& get, double& mean, double* hw) {
        for (std::size_t i = 0; i < reps.size(); ++i) buf[i] = get(reps[i]);
        mean = detail::mean_of(buf);
        if (hw) *hw = detail::half_width(buf, mean);
    };

    stat([](const detail::RepStats& r) { return r.cost_rate; }, out.cost_rate, &out.cost_rate_hw);
    stat([](const detail::RepStats& r) { return r.external_fraction; }, out.external_fraction,
         &out.external_fraction_hw);
    out.profit_per_job = (inst.lambda - out.cost_rate) / inst.lambda;
    out.profit_per_job_hw = out.cost_rate_hw / inst.lambda;
    for (int k = 0; k < n; ++k) {
        stat([&](const detail::RepStats& r) { return r.ab_rate[k]; }, out.abandon_rate[k],
             &out.abandon_rate_hw[k]);
        stat([&](const detail::RepStats& r) { return r.occ_avg[k]; }, out.occupancy[k], nullptr);
        stat([&](const detail::RepStats& r) { return r.excess_avg[k]; }, out.queue_excess[k],
             nullptr);
        stat([&](const detail::RepStats& r) { return r.balance[k]; }, out.abandon_balance[k],
             &out.abandon_balance_hw[k]);
    }
    for (const detail::RepStats& r : reps) {
        out.time += r.time;
        for (int k = 0; k < n; ++k) out.abandonments[k] += r.ab_count[k];
        out.totals.arrivals += r.counts.arrivals;
        out.totals.completions += r.counts.completions;
        out.totals.abandonments += r.counts.abandonments;
        out.totals.externals += r.counts.externals;
        out.totals.in_system_end += r.counts.in_system_end;
    }
    return out;
}

struct ValidationRecord {
    double simulated = 0.0;
    double exact = 0.0;
    double half_width = 0.0;
    SimReport report;
};

// Simulates the policy and compares the measured cost rate against the exact
// chain evaluation at the instance's truncation. Unset run parameters default
// to 100000 jobs over 8 replications. Disagreement beyond 3 half-widths
// throws ValidationFailure carrying both values.
inline ValidationRecord validate_against_exact(const Instance& inst, const Policy& policy,
                                               SimConfig cfg = SimConfig{}) {
    cfg.policy = policy;
    if (cfg.horizon <= 0.0 && cfg.jobs <= 0) cfg.jobs = 100000;
    if (cfg.replications < 2) cfg.replications = 8;

    ValidationRecord rec;
    rec.report = simulate(inst, cfg);
    rec.simulated = rec.report.cost_rate;
    rec.half_width = rec.report.cost_rate_hw;
    const ProductChain chain = build_chain(inst);
    rec.exact = evaluate_policy(chain, policy).gain;
    if (std::abs(rec.simulated - rec.exact) > 3.0 * rec.half_width) {
        std::ostringstream os;
        os.precision(10);
        os << "validation failed: simulated cost rate " << rec.simulated << " vs exact "
           << rec.exact << " exceeds 3 x half-width " << rec.half_width;
        throw ValidationFailure(os.str(), rec.simulated, rec.exact, rec.half_width);
    }
    return rec;
}

}  // namespace cloudq
