#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cloudq/indices.hpp"
#include "cloudq/instance.hpp"
#include "cloudq/mdp.hpp"
#include "cloudq/split.hpp"

namespace cloudq {

enum class PolicyKind { BS, IO, PI, RB };

inline constexpr std::array<PolicyKind, 4> kAllPolicyKinds{PolicyKind::BS, PolicyKind::IO,
                                                           PolicyKind::PI, PolicyKind::RB};

inline const char* to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::BS: return "bs";
        case PolicyKind::IO: return "io";
        case PolicyKind::PI: return "pi";
        case PolicyKind::RB: return "rb";
    }
    return "?";
}

// Benchmark grid over two-node systems with m = (10, 40) and mu2 = 1. The
// arrival rate is derived from the nominal load at generation time,
// lambda = (10 mu1 + 40) rho, and stored explicitly on every instance.
struct TestBedSpec {
    std::vector<double> mu1, rho, theta, C;
    Regime regime = Regime::DBS;
    int truncation = 80;

    void validate() const {
        if (mu1.empty() || rho.empty() || theta.empty() || C.empty())
            throw std::invalid_argument("TestBedSpec: all grids must be non-empty");
        for (double r : rho)
            if (!(r > 0.0)) throw std::invalid_argument("TestBedSpec: rho entries must be > 0");
    }
};

// The full grid: 9 x 7 x 10 x 8 = 5040 instances per regime.
inline TestBedSpec full_testbed(Regime regime) {
    TestBedSpec s;
    s.regime = regime;
    for (int i = 0; i < 9; ++i) s.mu1.push_back(1.0 + 0.5 * i);
    for (int i = 0; i < 7; ++i) s.rho.push_back(0.9 + 0.1 * i);
    for (int i = 0; i < 10; ++i) s.theta.push_back(0.2 + 0.1 * i);
    for (int i = 0; i < 8; ++i) s.C.push_back(0.1 + 0.1 * i);
    return s;
}

// Default scaled-down bed: 3^4 = 81 instances spanning the grid corners and
// center.
inline TestBedSpec small_testbed(Regime regime) {
    TestBedSpec s;
    s.regime = regime;
    s.mu1 = {1.0, 3.0, 5.0};
    s.rho = {0.9, 1.2, 1.5};
    s.theta = {0.2, 0.6, 1.1};
    s.C = {0.2, 0.5, 0.8};
    return s;
}

namespace detail {

inline std::string grid_label(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace detail

inline std::vector<Instance> generate_testbed(const TestBedSpec& spec) {
    spec.validate();
    std::vector<Instance> out;
    out.reserve(spec.mu1.size() * spec.rho.size() * spec.theta.size() * spec.C.size());
    for (double mu1 : spec.mu1)
        for (double rho : spec.rho)
            for (double theta : spec.theta)
                for (double C : spec.C) {
                    Instance inst;
                    inst.regime = spec.regime;
                    inst.lambda = (10.0 * mu1 + 40.0) * rho;
                    inst.theta = theta;
                    inst.C = C;
                    inst.nodes = {{10, mu1}, {40, 1.0}};
                    inst.truncation = spec.truncation;
                    std::ostringstream id;
                    id << (spec.regime == Regime::DBS ? "dbs" : "des")
                       << "-mu1=" << detail::grid_label(mu1)
                       << "-rho=" << detail::grid_label(rho)
                       << "-theta=" << detail::grid_label(theta)
                       << "-C=" << detail::grid_label(C);
                    inst.id = id.str();
                    inst.validate();
                    out.push_back(std::move(inst));
                }
    return out;
}

struct GapRecord {
    std::string id;
    Regime regime = Regime::DBS;
    double lambda = 0.0, theta = 0.0, C = 0.0;
    double z_star = std::numeric_limits<double>::quiet_NaN();
    std::array<double, 4> z{};    // profit per job, indexed by PolicyKind
    std::array<double, 4> gap{};  // percent shortfall against z_star
    std::string error;            // empty on success

    GapRecord() {
        z.fill(std::numeric_limits<double>::quiet_NaN());
        gap.fill(std::numeric_limits<double>::quiet_NaN());
    }
};

struct GapStat {
    double min = 0.0, avg = 0.0, max = 0.0;
};

struct GapTable {
    std::vector<PolicyKind> policies;
    std::array<GapStat, 4> stats{};  // filled for requested policies
    std::vector<GapRecord> records;
    int failures = 0;
};

namespace detail {

inline std::vector<IndexTable> bench_tables(const Instance& inst, PolicyKind kind,
                                            const SplitVector* split) {
    const AbandonmentEnv env{inst.theta, inst.regime};
    std::vector<IndexTable> tables;
    for (std::size_t k = 0; k < inst.nodes.size(); ++k) {
        if (kind == PolicyKind::IO) {
            tables.push_back(io_index(inst.nodes[k], env, inst.truncation));
        } else if (kind == PolicyKind::PI) {
            const double lk = split->rates.at(k + 1);
            tables.push_back(pi_index(inst.nodes[k], env, lk,
                                      loss_rate(lk, inst.nodes[k], env), inst.truncation));
        } else {
            tables.push_back(rb_index(inst.nodes[k], env, inst.lambda, inst.truncation));
        }
    }
    return tables;
}

inline GapRecord bench_one(const Instance& inst, const std::vector<PolicyKind>& policies,
                           const SolveOptions& opts) {
    GapRecord rec;
    rec.id = inst.id;
    rec.regime = inst.regime;
    rec.lambda = inst.lambda;
    rec.theta = inst.theta;
    rec.C = inst.C;
    try {
        inst.validate();
        const ProductChain chain = build_chain(inst);
        const SolveResult opt = solve_optimal(chain, opts);
        rec.z_star = profit_per_job(chain, opt.gain);

        std::optional<SplitResult> bs;
        for (PolicyKind kind : policies)
            if (kind == PolicyKind::BS || kind == PolicyKind::PI) {
                bs = optimal_bs(inst);
                break;
            }
        for (PolicyKind kind : policies) {
            EvalReport rep;
            if (kind == PolicyKind::BS)
                rep = evaluate_policy(chain, BernoulliSplitPolicy{bs->split}, opts);
            else
                rep = evaluate_policy(
                    chain, IndexRoutePolicy{bench_tables(inst, kind, bs ? &bs->split : nullptr),
                                            inst.C},
                    opts);
            const auto idx = static_cast<std::size_t>(kind);
            rec.z[idx] = rep.profit_per_job;
            rec.gap[idx] = optimality_gap(rec.z_star, rep.profit_per_job);
        }
    } catch (const std::exception& e) {
        rec.error = e.what();
    }
    return rec;
}

}  // namespace detail

// Builds the routing policy a benchmark row evaluates: the optimal split for
// BS, index-rule tables for IO, PI and RB (PI consumes the split rates).
inline Policy make_policy(const Instance& inst, PolicyKind kind) {
    if (kind == PolicyKind::BS) return BernoulliSplitPolicy{optimal_bs(inst).split};
    std::optional<SplitResult> bs;
    const SplitVector* split = nullptr;
    if (kind == PolicyKind::PI) {
        bs = optimal_bs(inst);
        split = &bs->split;
    }
    return IndexRoutePolicy{detail::bench_tables(inst, kind, split), inst.C};
}

// Runs every instance against the requested policy families and aggregates
// the percent optimality gaps. Per-instance failures are recorded on the
// record and skipped by the aggregates; the run continues. Instances are
// independent, so they are distributed over CLOUDQ_THREADS workers (inner
// solves are forced single-threaded whenever more than one worker runs);
// results are collated by instance index, making the table independent of
// the execution order.
inline GapTable run_benchmark(const std::vector<Instance>& instances,
                              const std::vector<PolicyKind>& policies = {kAllPolicyKinds.begin(),
                                                                         kAllPolicyKinds.end()},
                              const SolveOptions& opts = SolveOptions{}) {
    GapTable table;
    table.policies = policies;
    table.records.resize(instances.size());

    const int workers =
        std::min<long long>(detail::sweep_threads(0), static_cast<long long>(instances.size()));
    SolveOptions inner = opts;
    if (workers > 1) inner.threads = 1;
    if (workers <= 1) {
        for (std::size_t i = 0; i < instances.size(); ++i)
            table.records[i] = detail::bench_one(instances[i], policies, inner);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w]() {
                for (std::size_t i = static_cast<std::size_t>(w); i < instances.size();
                     i += static_cast<std::size_t>(workers))
                    table.records[i] = detail::bench_one(instances[i], policies, inner);
            });
        for (auto& t : pool) t.join();
    }

    for (PolicyKind kind : policies) {
        const auto idx = static_cast<std::size_t>(kind);
        GapStat st{detail::kInf, 0.0, -detail::kInf};
        long long n = 0;
        for (const GapRecord& rec : table.records) {
            if (!rec.error.empty()) continue;
            st.min = std::min(st.min, rec.gap[idx]);
            st.max = std::max(st.max, rec.gap[idx]);
            st.avg += rec.gap[idx];
            ++n;
        }
        if (n > 0) st.avg /= static_cast<double>(n);
        table.stats[idx] = st;
    }
    for (const GapRecord& rec : table.records)
        if (!rec.error.empty()) ++table.failures;
    return table;
}

namespace detail {

inline void csv_quote(std::ostream& out, const std::string& s) {
    out << '"';
    for (char c : s) {
        if (c == '"') out << '"';
        out << c;
    }
    out << '"';
}

}  // namespace detail

inline void write_gap_csv(std::ostream& out, const GapTable& table) {
    out << "# cloudq gap-table v1\n";
    out << "id,regime,lambda,theta,C,z_star,z_bs,gap_bs,z_io,gap_io,z_pi,gap_pi,z_rb,gap_rb,error\n";
    out.precision(17);
    for (const GapRecord& rec : table.records) {
        detail::csv_quote(out, rec.id);
        out << ',' << to_string(rec.regime) << ',' << rec.lambda << ',' << rec.theta << ','
            << rec.C << ',';
        if (rec.error.empty()) out << rec.z_star;
        for (std::size_t idx = 0; idx < 4; ++idx) {
            out << ',';
            if (!std::isnan(rec.z[idx])) out << rec.z[idx] << ',' << rec.gap[idx];
            else out << ',';
        }
        out << ',';
        detail::csv_quote(out, rec.error);
        out << '\n';
    }
}

struct SweepResult {
    std::string parameter;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

namespace detail {

inline void check_monotone(const std::vector<std::vector<double>>& rows, std::size_t col,
                           bool increasing, const std::string& what) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double prev = rows[i - 1][col], cur = rows[i][col];
        const double slack = 1e-9 * std::max(1.0, std::abs(prev));
        if (increasing ? cur < prev - slack : cur > prev + slack) {
            std::ostringstream os;
            os.precision(12);
            os << "sweep: " << what << " moves the wrong way between grid points " << i - 1
               << " and " << i << " (" << prev << " -> " << cur << ")";
            throw MonotonicityViolation(os.str());
        }
    }
}

}  // namespace detail

// Re-optimizes the Bernoulli split along a one-parameter family of instances
// (parameter in {lambda, theta, C, mu, m}) or tabulates the three index
// families over states (parameter "state"). Split sweeps carry the known
// structure as hard assertions: the external rate is nondecreasing in lambda
// and theta and nonincreasing in C, node rates freeze once the external rate
// turns positive in a lambda sweep, and a C sweep pins the external rate to
// zero from C*(lambda) on. node is 1-based and only read for mu and m.
inline SweepResult sweep(const Instance& base, const std::string& parameter,
                         const std::vector<double>& grid, int node = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
    const int n = static_cast<int>(base.nodes.size());
    SweepResult res;
    res.parameter = parameter;

    if (parameter == "state") {
        const AbandonmentEnv env{base.theta, base.regime};
        int top = base.truncation;
        for (double g : grid) top = std::max(top, static_cast<int>(g));
        const SplitResult bs = optimal_bs(base);
        std::vector<IndexTable> io, pi, rb;
        for (int k = 0; k < n; ++k) {
            io.push_back(io_index(base.nodes[k], env, top));
            const double lk = bs.split.rates.at(k + 1);
            pi.push_back(pi_index(base.nodes[k], env, lk, loss_rate(lk, base.nodes[k], env), top));
            rb.push_back(rb_index(base.nodes[k], env, base.lambda, top));
        }
        res.columns.push_back("state");
        for (const char* fam : {"io", "pi", "rb"})
            for (int k = 1; k <= n; ++k)
                res.columns.push_back(std::string(fam) + "_" + std::to_string(k));
        for (double g : grid) {
            const long long i = static_cast<long long>(g);
            std::vector<double> row{static_cast<double>(i)};
            for (int k = 0; k < n; ++k) row.push_back(io[k].at(i));
            for (int k = 0; k < n; ++k) row.push_back(pi[k].at(i));
            for (int k = 0; k < n; ++k) row.push_back(rb[k].at(i));
            res.rows.push_back(std::move(row));
        }
        return res;
    }

    const bool is_lambda = parameter == "lambda";
    const bool is_theta = parameter == "theta";
    const bool is_cost = parameter == "C";
    const bool is_mu = parameter == "mu";
    const bool is_m = parameter == "m";
    if (!is_lambda && !is_theta && !is_cost && !is_mu && !is_m)
        throw std::invalid_argument("sweep: unknown parameter '" + parameter + "'");
    if ((is_mu || is_m) && (node < 1 || node > n))
        throw std::invalid_argument("sweep: node out of range");

    res.columns.push_back(parameter);
    for (int k = 0; k <= n; ++k) res.columns.push_back("lambda_" + std::to_string(k));
    res.columns.push_back("cost_rate");
    res.columns.push_back("profit_per_job");
    for (double v : grid) {
        Instance inst = base;
        if (is_lambda) inst.lambda = v;
        else if (is_theta) inst.theta = v;
        else if (is_cost) inst.C = v;
        else if (is_mu) inst.nodes[node - 1].mu = v;
        else {
            if (v < 1.0 || v != std::floor(v))
                throw std::invalid_argument("sweep: m grid values must be positive integers");
            inst.nodes[node - 1].m = static_cast<int>(v);
            inst.truncation = std::max(inst.truncation, inst.nodes[node - 1].m);
        }
        inst.validate();
        const SplitResult bs = optimal_bs(inst);
        const double cost = bs_objective(inst, bs.split);
        std::vector<double> row{v};
        for (int k = 0; k <= n; ++k) row.push_back(bs.split.rates.at(k));
        row.push_back(cost);
        row.push_back((inst.lambda - cost) / inst.lambda);
        res.rows.push_back(std::move(row));
    }

    if (is_lambda || is_theta) detail::check_monotone(res.rows, 1, true, "external rate");
    if (is_cost) detail::check_monotone(res.rows, 1, false, "external rate");
    if (is_lambda) {
        std::size_t first = res.rows.size();
        for (std::size_t i = 0; i < res.rows.size(); ++i)
            if (res.rows[i][1] > 1e-9) {
                first = i;
                break;
            }
        for (std::size_t i = first; i < res.rows.size(); ++i)
            for (int k = 1; k <= n; ++k) {
                const double ref = res.rows[first][1 + static_cast<std::size_t>(k)];
                const double cur = res.rows[i][1 + static_cast<std::size_t>(k)];
                if (std::abs(cur - ref) > 1e-6 * std::max(1.0, std::abs(ref)))
                    throw MonotonicityViolation(
                        "sweep: node rate drifts past the external threshold");
            }
    }
    if (is_cost) {
        Instance inst = base;
        double cs = std::numeric_limits<double>::infinity();
        try {
            cs = c_star(inst);
        } catch (const RootBracketFailure&) {
            // threshold saturated toward 1, no grid point can exceed it
        }
        for (const auto& row : res.rows)
            if (row[0] >= cs + 1e-12 && row[1] > 1e-8 * inst.lambda)
                throw MonotonicityViolation(
                    "sweep: external rate positive beyond the usage-cost threshold");
    }
    return res;
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& res) {
    out << "# cloudq sweep v1 parameter=" << res.parameter << "\n";
    for (std::size_t c = 0; c < res.columns.size(); ++c)
        out << (c ? "," : "") << res.columns[c];
    out << '\n';
    out.precision(17);
    for (const auto& row : res.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
        out << '\n';
    }
}

}  // namespace cloudq
