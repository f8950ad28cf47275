// Command-line surface over the cloudq library. Subcommands cover the node
// analytics (analyze), the optimal Bernoulli split (split), index tables
// (indices), the exact MDP (solve, evaluate), the event simulator (simulate),
// the gap study (bench) and one-parameter structure sweeps (sweep). Tabular
// results go out as versioned CSV, single records as JSON lines. Exit codes:
// 0 success, 1 usage or input error, 2 numerical failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cloudq/bench.hpp"
#include "cloudq/instance.hpp"
#include "cloudq/mdp.hpp"
#include "cloudq/queueing.hpp"
#include "cloudq/sim.hpp"
#include "cloudq/split.hpp"

namespace {

using nlohmann::ordered_json;

cloudq::Instance load_instance(const std::string& path, int truncation = 0) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open instance file '" + path + "'");
    cloudq::Instance inst;
    try {
        inst = cloudq::parse_instance(in);
    } catch (const cloudq::ParseError& e) {
        throw cloudq::ParseError(path + ": " + e.what());
    }
    if (truncation > 0) {
        inst.truncation = truncation;
        inst.validate();
    }
    return inst;
}

cloudq::PolicyKind parse_policy(const std::string& name) {
    for (cloudq::PolicyKind kind : cloudq::kAllPolicyKinds)
        if (name == cloudq::to_string(kind)) return kind;
    throw std::invalid_argument("unknown policy '" + name + "' (expected bs, io, pi or rb)");
}

// Output sink: --out path or stdout.
struct Sink {
    std::ofstream file;
    std::ostream* os = &std::cout;
    explicit Sink(const std::string& path) {
        if (path.empty()) return;
        file.open(path);
        if (!file) throw std::invalid_argument("cannot open output file '" + path + "'");
        os = &file;
    }
    std::ostream& out() { return *os; }
};

std::vector<double> expand_grid(const std::vector<double>& values,
                                const std::vector<double>& range) {
    if (values.empty() == range.empty())
        throw std::invalid_argument("give exactly one of --values and --range");
    if (!values.empty()) return values;
    const double from = range[0], to = range[1], step = range[2];
    if (!(step > 0.0)) throw std::invalid_argument("--range step must be > 0");
    if (to < from) throw std::invalid_argument("--range end below start");
    std::vector<double> grid;
    for (double v = from; v <= to + 0.5 * step; v += step)
        grid.push_back(std::min(v, to));
    return grid;
}

ordered_json split_json(const cloudq::Instance& inst, const cloudq::SplitResult& r) {
    const double cost = cloudq::bs_objective(inst, r.split);
    ordered_json j;
    j["id"] = inst.id;
    j["regime"] = cloudq::to_string(inst.regime);
    j["lambda"] = inst.lambda;
    j["rates"] = r.split.rates;
    j["external_fraction"] = r.split.external() / inst.lambda;
    j["alpha_star"] = r.alpha_star;
    if (r.c_star_value) j["c_star"] = *r.c_star_value;
    else j["c_star"] = nullptr;
    j["alpha_floors"] = r.alpha_floors;
    j["kkt_residual"] = r.kkt_residual;
    j["cost_rate"] = cost;
    j["profit_per_job"] = (inst.lambda - cost) / inst.lambda;
    return j;
}

int cmd_analyze(const std::string& instance_path, double rate, const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path);
    const cloudq::AbandonmentEnv env{inst.theta, inst.regime};
    const double probe = rate > 0.0 ? rate : inst.lambda;
    Sink sink(out_path);
    std::ostream& out = sink.out();
    out.precision(17);
    out << "# cloudq analyze v1 id=" << inst.id << " regime=" << cloudq::to_string(inst.regime)
        << " lambda=" << inst.lambda << " theta=" << inst.theta << " C=" << inst.C << "\n";
    out << "node,m,mu,rate,loss_rate,loss_rate_deriv,alpha_floor\n";
    for (std::size_t k = 0; k < inst.nodes.size(); ++k) {
        const cloudq::NodeParams& node = inst.nodes[k];
        out << k + 1 << ',' << node.m << ',' << node.mu << ',' << probe << ','
            << cloudq::loss_rate(probe, node, env) << ','
            << cloudq::loss_rate_deriv(probe, node, env) << ','
            << cloudq::alpha_floor(node, env) << '\n';
    }
    return 0;
}

int cmd_split(const std::string& instance_path, const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path);
    Sink sink(out_path);
    sink.out() << split_json(inst, cloudq::optimal_bs(inst)) << "\n";
    return 0;
}

int cmd_indices(const std::string& instance_path, int top, const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path);
    if (top < 0) top = inst.truncation;
    std::vector<double> grid;
    for (int i = 0; i <= top; ++i) grid.push_back(i);
    const cloudq::SweepResult res = cloudq::sweep(inst, "state", grid);
    Sink sink(out_path);
    cloudq::write_sweep_csv(sink.out(), res);
    return 0;
}

int cmd_solve(const std::string& instance_path, int truncation,
              const cloudq::SolveOptions& opts, const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path, truncation);
    const cloudq::ProductChain chain = cloudq::build_chain(inst);
    const cloudq::SolveResult r = cloudq::solve_optimal(chain, opts);
    ordered_json j;
    j["id"] = inst.id;
    j["policy"] = "optimal";
    j["states"] = chain.S;
    j["gain"] = r.gain;
    j["profit_per_job"] = cloudq::profit_per_job(chain, r.gain);
    j["gap_percent"] = 0.0;
    j["iterations"] = r.iterations;
    j["residual"] = r.span_residual;
    Sink sink(out_path);
    sink.out() << j << "\n";
    return 0;
}

int cmd_evaluate(const std::string& instance_path, int truncation,
                 const std::string& policy_name, const cloudq::SolveOptions& opts,
                 const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path, truncation);
    const cloudq::PolicyKind kind = parse_policy(policy_name);
    const cloudq::ProductChain chain = cloudq::build_chain(inst);
    const cloudq::Policy policy = cloudq::make_policy(inst, kind);
    const cloudq::EvalReport rep = cloudq::evaluate_policy(chain, policy, opts);
    const cloudq::SolveResult opt = cloudq::solve_optimal(chain, opts);
    const double z_star = cloudq::profit_per_job(chain, opt.gain);
    ordered_json j;
    j["id"] = inst.id;
    j["policy"] = policy_name;
    j["states"] = chain.S;
    j["gain"] = rep.gain;
    j["profit_per_job"] = rep.profit_per_job;
    j["z_star"] = z_star;
    j["gap_percent"] = cloudq::optimality_gap(z_star, rep.profit_per_job);
    j["iterations"] = rep.iterations;
    j["residual"] = rep.residual;
    j["method"] = rep.method;
    Sink sink(out_path);
    sink.out() << j << "\n";
    return 0;
}

int cmd_simulate(const std::string& instance_path, int truncation,
                 const std::string& policy_name, cloudq::SimConfig cfg, bool validate,
                 const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path, truncation);
    cfg.policy = cloudq::make_policy(inst, parse_policy(policy_name));
    if (cfg.horizon <= 0.0 && cfg.jobs <= 0) cfg.jobs = 100000;

    ordered_json j;
    j["id"] = inst.id;
    j["policy"] = policy_name;
    cloudq::SimReport rep;
    if (validate) {
        const cloudq::ValidationRecord rec = cloudq::validate_against_exact(inst, cfg.policy, cfg);
        rep = rec.report;
        j["exact_cost_rate"] = rec.exact;
        j["validation"] = "within 3 half-widths of the exact chain evaluation";
    } else {
        rep = cloudq::simulate(inst, cfg);
    }
    j["replications"] = rep.replications;
    j["measured_time"] = rep.time;
    j["cost_rate"] = rep.cost_rate;
    j["cost_rate_hw"] = rep.cost_rate_hw;
    j["profit_per_job"] = rep.profit_per_job;
    j["profit_per_job_hw"] = rep.profit_per_job_hw;
    j["external_fraction"] = rep.external_fraction;
    j["external_fraction_hw"] = rep.external_fraction_hw;
    j["abandon_rate"] = rep.abandon_rate;
    j["abandon_rate_hw"] = rep.abandon_rate_hw;
    j["occupancy"] = rep.occupancy;
    j["queue_excess"] = rep.queue_excess;
    j["abandon_balance"] = rep.abandon_balance;
    j["abandon_balance_hw"] = rep.abandon_balance_hw;
    j["totals"] = {{"arrivals", rep.totals.arrivals},
                   {"completions", rep.totals.completions},
                   {"abandonments", rep.totals.abandonments},
                   {"externals", rep.totals.externals},
                   {"in_system_end", rep.totals.in_system_end}};
    j["conventions"] = {
        {"seed", cfg.seed},
        {"warmup_fraction", cfg.warmup},
        {"estimates", "post-warmup event-time averages"},
        {"half_widths", "95% Student-t over replication means"},
        {"streams", "independent substreams keyed by (seed, replication, role)"}};
    Sink sink(out_path);
    sink.out() << j << "\n";
    return 0;
}

int cmd_bench(const std::string& scale, const std::string& regime_name, int truncation,
              const std::vector<std::string>& policy_names, const std::string& out_path) {
    std::vector<cloudq::Regime> regimes;
    if (regime_name == "dbs") regimes = {cloudq::Regime::DBS};
    else if (regime_name == "des") regimes = {cloudq::Regime::DES};
    else if (regime_name == "both") regimes = {cloudq::Regime::DBS, cloudq::Regime::DES};
    else
        throw std::invalid_argument("unknown regime '" + regime_name
                                    + "' (expected dbs, des or both)");

    std::vector<cloudq::PolicyKind> policies;
    for (const std::string& name : policy_names) policies.push_back(parse_policy(name));

    std::vector<cloudq::Instance> instances;
    for (cloudq::Regime regime : regimes) {
        cloudq::TestBedSpec spec =
            scale == "full" ? cloudq::full_testbed(regime) : cloudq::small_testbed(regime);
        spec.truncation = truncation;
        std::vector<cloudq::Instance> bed = cloudq::generate_testbed(spec);
        instances.insert(instances.end(), bed.begin(), bed.end());
    }

    const cloudq::GapTable table = cloudq::run_benchmark(instances, policies);
    Sink sink(out_path);
    cloudq::write_gap_csv(sink.out(), table);

    std::cerr.precision(4);
    std::cerr << "bench: " << instances.size() << " instances, " << table.failures
              << " failures\n";
    for (cloudq::PolicyKind kind : table.policies) {
        const cloudq::GapStat& st = table.stats[static_cast<std::size_t>(kind)];
        std::cerr << "  " << cloudq::to_string(kind) << " gap % min " << st.min << " avg "
                  << st.avg << " max " << st.max << "\n";
    }
    return 0;
}

int cmd_sweep(const std::string& instance_path, const std::string& parameter,
              const std::vector<double>& values, const std::vector<double>& range, int node,
              const std::string& out_path) {
    const cloudq::Instance inst = load_instance(instance_path);
    const std::vector<double> grid = expand_grid(values, range);
    const cloudq::SweepResult res = cloudq::sweep(inst, parameter, grid, node);
    Sink sink(out_path);
    cloudq::write_sweep_csv(sink.out(), res);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"profit-driven routing toolkit for parallel queues with abandonment"};
    app.require_subcommand(1);

    std::string instance_path, out_path, policy_name = "bs";
    double analyze_rate = 0.0;
    int indices_top = -1;

    cloudq::SolveOptions opts;
    std::string eval_mode = "jacobi";
    int truncation = 0;

    cloudq::SimConfig sim_cfg;
    sim_cfg.replications = 8;
    bool sim_validate = false;

    std::string bench_scale = "small", bench_regime = "dbs";
    int bench_truncation = 80;
    std::vector<std::string> bench_policies = {"bs", "io", "pi", "rb"};

    std::string sweep_parameter;
    std::vector<double> sweep_values, sweep_range;
    int sweep_node = 1;

    const auto add_instance = [&](CLI::App* sub) {
        sub->add_option("--instance", instance_path, "instance file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", out_path, "write output here instead of stdout");
    };
    const auto add_solver = [&](CLI::App* sub) {
        sub->add_option("--truncation", truncation,
                        "override the instance's per-node buffer truncation");
        sub->add_option("--tol", opts.tol, "span tolerance per unit of uniformization rate");
        sub->add_option("--max-iter", opts.max_iter, "iteration cap");
        sub->add_option("--threads", opts.threads, "sweep threads (0: CLOUDQ_THREADS)");
        sub->add_flag("--rvi-only", opts.rvi_only, "skip the exact policy-iteration warm start");
    };

    CLI::App* analyze = app.add_subcommand("analyze", "per-node loss metrics at a probe rate");
    add_instance(analyze);
    analyze->add_option("--rate", analyze_rate,
                        "arrival rate offered to each node (default: instance lambda)");

    CLI::App* split = app.add_subcommand("split", "optimal Bernoulli split with KKT certificate");
    add_instance(split);

    CLI::App* indices = app.add_subcommand("indices", "IO, PI and RB index tables per state");
    add_instance(indices);
    indices->add_option("--top", indices_top, "largest state (default: instance truncation)");

    CLI::App* solve = app.add_subcommand("solve", "optimal routing policy on the exact chain");
    add_instance(solve);
    add_solver(solve);

    CLI::App* evaluate =
        app.add_subcommand("evaluate", "exact optimality gap of a policy family");
    add_instance(evaluate);
    add_solver(evaluate);
    evaluate->add_option("--policy", policy_name, "bs, io, pi or rb")->required();
    evaluate->add_option("--mode", eval_mode, "evaluation sweeps: jacobi or gs")
        ->check(CLI::IsMember({"jacobi", "gs"}));

    CLI::App* simulate = app.add_subcommand("simulate", "discrete-event simulation of a policy");
    add_instance(simulate);
    simulate->add_option("--policy", policy_name, "bs, io, pi or rb")->required();
    simulate->add_option("--truncation", truncation,
                         "override the instance's per-node buffer truncation");
    simulate->add_option("--jobs", sim_cfg.jobs, "run length in arrivals (default 100000)");
    simulate->add_option("--horizon", sim_cfg.horizon, "run length in time units");
    simulate->add_option("--replications", sim_cfg.replications, "independent replications");
    simulate->add_option("--seed", sim_cfg.seed, "stream seed");
    simulate->add_option("--warmup", sim_cfg.warmup, "leading fraction excluded from estimates");
    simulate->add_flag("--validate", sim_validate,
                       "require agreement with the exact chain evaluation");

    CLI::App* bench = app.add_subcommand("bench", "optimality-gap study over the test bed");
    bench->add_option("--scale", bench_scale, "small (81 instances) or full (5040)")
        ->check(CLI::IsMember({"small", "full"}));
    bench->add_option("--regime", bench_regime, "dbs, des or both");
    bench->add_option("--truncation", bench_truncation, "per-node buffer truncation");
    bench->add_option("--policies", bench_policies, "policy families to evaluate")
        ->delimiter(',');
    bench->add_option("--out", out_path, "write the gap CSV here instead of stdout");

    CLI::App* sweep = app.add_subcommand("sweep", "re-optimize the split along one parameter");
    add_instance(sweep);
    sweep->add_option("--parameter", sweep_parameter, "lambda, theta, C, mu, m or state")
        ->required();
    sweep->add_option("--values", sweep_values, "explicit grid points")->delimiter(',');
    sweep->add_option("--range", sweep_range, "FROM TO STEP inclusive grid")->expected(3);
    sweep->add_option("--node", sweep_node, "1-based node for mu and m sweeps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*analyze) return cmd_analyze(instance_path, analyze_rate, out_path);
        if (*split) return cmd_split(instance_path, out_path);
        if (*indices) return cmd_indices(instance_path, indices_top, out_path);
        if (*solve) return cmd_solve(instance_path, truncation, opts, out_path);
        if (*evaluate) {
            if (eval_mode == "gs") opts.mode = cloudq::SweepMode::GaussSeidel;
            return cmd_evaluate(instance_path, truncation, policy_name, opts, out_path);
        }
        if (*simulate)
            return cmd_simulate(instance_path, truncation, policy_name, sim_cfg,
                                sim_validate, out_path);
        if (*bench)
            return cmd_bench(bench_scale, bench_regime, bench_truncation, bench_policies,
                             out_path);
        if (*sweep)
            return cmd_sweep(instance_path, sweep_parameter, sweep_values, sweep_range,
                             sweep_node, out_path);
    } catch (const cloudq::ParseError& e) {
        std::cerr << "cloudq: " << e.what() << "\n";
        return 1;
    } catch (const cloudq::MonotonicityViolation& e) {
        std::cerr << "cloudq: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "cloudq: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "cloudq: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
