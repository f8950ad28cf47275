#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cloudq/sim.hpp"
#include "cloudq/split.hpp"
#include "test_util.hpp"

using namespace cloudq;
using testutil::rel_err;

namespace {

Instance one_node(Regime regime) {
    Instance t;
    t.regime = regime;
    t.lambda = 2.1;
    t.theta = 0.7;
    t.C = 0.45;
    t.nodes = {{2, 1.3}};
    t.truncation = 60;
    t.id = "one-node";
    return t;
}

Instance two_node(Regime regime) {
    Instance b;
    b.regime = regime;
    b.lambda = 1.2 * (10.0 * 3.0 + 40.0);
    b.theta = 0.6;
    b.C = 0.5;
    b.nodes = {{10, 3.0}, {40, 1.0}};
    b.truncation = 80;
    b.id = "two-node";
    return b;
}

Policy all_to_node(const Instance& inst) {
    SplitVector sv;
    sv.rates.assign(inst.nodes.size() + 1, 0.0);
    sv.rates[1] = inst.lambda;
    return BernoulliSplitPolicy{sv};
}

Policy all_external(const Instance& inst) {
    SplitVector sv;
    sv.rates.assign(inst.nodes.size() + 1, 0.0);
    sv.rates[0] = inst.lambda;
    return BernoulliSplitPolicy{sv};
}

Policy io_policy(const Instance& inst) {
    const AbandonmentEnv env{inst.theta, inst.regime};
    std::vector<IndexTable> tables;
    for (std::size_t k = 0; k < inst.nodes.size(); ++k)
        tables.push_back(io_index(inst.nodes[k], env, inst.truncation));
    return IndexRoutePolicy{tables, inst.C};
}

Policy pi_policy(const Instance& inst) {
    const AbandonmentEnv env{inst.theta, inst.regime};
    const SplitResult bs = optimal_bs(inst);
    std::vector<IndexTable> tables;
    for (std::size_t k = 0; k < inst.nodes.size(); ++k) {
        const double lk = bs.split.rates.at(k + 1);
        tables.push_back(
            pi_index(inst.nodes[k], env, lk, loss_rate(lk, inst.nodes[k], env), inst.truncation));
    }
    return IndexRoutePolicy{tables, inst.C};
}

}  // namespace

TEST_CASE("an idle horizon yields an empty run", "[sim]") {
    Instance t = one_node(Regime::DBS);
    t.lambda = 1e-12;
    SimConfig cfg;
    cfg.horizon = 500.0;
    cfg.replications = 3;
    cfg.policy = all_to_node(t);
    const SimReport rep = simulate(t, cfg);
    CHECK(rep.totals.arrivals == 0);
    CHECK(rep.totals.completions == 0);
    CHECK(rep.totals.abandonments == 0);
    CHECK(rep.totals.externals == 0);
    CHECK(rep.totals.in_system_end == 0);
    CHECK(rep.cost_rate == 0.0);
    CHECK(rep.cost_rate_hw == 0.0);
    CHECK(rep.time == Catch::Approx(3 * 0.8 * 500.0).epsilon(1e-12));
}

TEST_CASE("the same seed reproduces the report bit for bit", "[sim]") {
    const Instance t = one_node(Regime::DES);
    SimConfig cfg;
    cfg.jobs = 20000;
    cfg.replications = 3;
    cfg.seed = 42;
    cfg.policy = all_to_node(t);
    const SimReport a = simulate(t, cfg);
    const SimReport b = simulate(t, cfg);
    CHECK(a.cost_rate == b.cost_rate);
    CHECK(a.cost_rate_hw == b.cost_rate_hw);
    CHECK(a.profit_per_job == b.profit_per_job);
    CHECK(a.external_fraction == b.external_fraction);
    CHECK(a.time == b.time);
    CHECK(a.abandonments == b.abandonments);
    CHECK(a.abandon_rate == b.abandon_rate);
    CHECK(a.occupancy == b.occupancy);
    CHECK(a.queue_excess == b.queue_excess);
    CHECK(a.totals.arrivals == b.totals.arrivals);
    CHECK(a.totals.completions == b.totals.completions);
    CHECK(a.totals.in_system_end == b.totals.in_system_end);

    cfg.seed = 43;
    const SimReport c = simulate(t, cfg);
    CHECK(c.cost_rate != a.cost_rate);
}

TEST_CASE("abandonment rate matches the analytic loss rate on one node", "[sim]") {
    for (Regime regime : {Regime::DBS, Regime::DES}) {
        const Instance t = one_node(regime);
        const double ell = loss_rate(t.lambda, t.nodes[0], {t.theta, t.regime});

        SimConfig cfg;
        cfg.jobs = 100000;
        cfg.replications = 20;
        cfg.seed = 7;
        cfg.policy = all_to_node(t);
        const SimReport rep = simulate(t, cfg);
        REQUIRE(rep.abandon_rate_hw[0] > 0.0);
        CHECK(std::abs(rep.abandon_rate[0] - ell) <= rep.abandon_rate_hw[0]);
        CHECK(rep.cost_rate == Catch::Approx(rep.abandon_rate[0]).epsilon(1e-12));
        CHECK(rep.external_fraction == 0.0);
    }
}

TEST_CASE("every arrival is accounted for", "[sim]") {
    const Instance b = two_node(Regime::DBS);

    SimConfig cfg;
    cfg.jobs = 30000;
    cfg.replications = 2;
    cfg.seed = 11;
    cfg.policy = io_policy(b);
    const SimReport rep = simulate(b, cfg);
    CHECK(rep.totals.arrivals == 2 * 30000);
    CHECK(rep.totals.arrivals == rep.totals.completions + rep.totals.abandonments +
                                     rep.totals.externals + rep.totals.in_system_end);

    SimConfig hz;
    hz.horizon = 300.0;
    hz.replications = 2;
    hz.seed = 11;
    hz.policy = io_policy(b);
    const SimReport rep2 = simulate(b, hz);
    CHECK(rep2.totals.arrivals > 0);
    CHECK(rep2.totals.arrivals == rep2.totals.completions + rep2.totals.abandonments +
                                      rep2.totals.externals + rep2.totals.in_system_end);
}

TEST_CASE("abandonments balance theta times the abandoning population", "[sim]") {
    for (Regime regime : {Regime::DBS, Regime::DES}) {
        const Instance b = two_node(regime);
        SimConfig cfg;
        cfg.jobs = 50000;
        cfg.replications = 6;
        cfg.seed = 5;
        cfg.policy = io_policy(b);
        const SimReport rep = simulate(b, cfg);
        for (std::size_t k = 0; k < b.nodes.size(); ++k) {
            REQUIRE(rep.abandon_balance_hw[k] > 0.0);
            CHECK(std::abs(rep.abandon_balance[k]) <= 3.0 * rep.abandon_balance_hw[k]);
        }
        if (regime == Regime::DBS) {
            CHECK(rep.occupancy[0] > rep.queue_excess[0]);
        }
    }
}

TEST_CASE("validation agrees with the exact chain evaluation", "[sim]") {
    const Instance b = two_node(Regime::DBS);

    SECTION("index policy") {
        SimConfig cfg;
        cfg.jobs = 80000;
        cfg.replications = 8;
        cfg.seed = 3;
        const ValidationRecord rec = validate_against_exact(b, pi_policy(b), cfg);
        CHECK(rec.half_width > 0.0);
        CHECK(std::abs(rec.simulated - rec.exact) <= 3.0 * rec.half_width);
        CHECK(rec.report.replications == 8);
    }

    SECTION("all-external policy") {
        SimConfig cfg;
        cfg.jobs = 40000;
        cfg.replications = 6;
        cfg.seed = 9;
        const ValidationRecord rec = validate_against_exact(b, all_external(b), cfg);
        CHECK(rec.exact == Catch::Approx(b.lambda * b.C).epsilon(1e-10));
        CHECK(rec.report.external_fraction == 1.0);
    }

    SECTION("optimal split policy against its analytic objective") {
        const SplitResult bs = optimal_bs(b);
        SimConfig cfg;
        cfg.jobs = 80000;
        cfg.replications = 8;
        cfg.seed = 17;
        const ValidationRecord rec =
            validate_against_exact(b, BernoulliSplitPolicy{bs.split}, cfg);
        CHECK(std::abs(rec.simulated - bs_objective(b, bs.split)) <= 3.0 * rec.half_width);
    }

    SECTION("lookup policy from the optimizer") {
        const Instance t = one_node(Regime::DES);
        Instance tiny = t;
        tiny.truncation = 3;
        const SolveResult opt = solve_optimal(build_chain(tiny));
        SimConfig cfg;
        cfg.jobs = 60000;
        cfg.replications = 6;
        cfg.seed = 21;
        const ValidationRecord rec = validate_against_exact(tiny, LookupPolicy{opt.actions}, cfg);
        CHECK(std::abs(rec.simulated - rec.exact) <= 3.0 * rec.half_width);

        LookupPolicy bad;
        bad.actions.assign(3, 0);
        cfg.policy = bad;
        CHECK_THROWS_AS(simulate(tiny, cfg), std::invalid_argument);
    }

    SECTION("a starved truncation is caught") {
        Instance starved = b;
        starved.truncation = 40;
        SimConfig cfg;
        cfg.jobs = 40000;
        cfg.replications = 6;
        cfg.seed = 13;
        try {
            validate_against_exact(starved, io_policy(starved), cfg);
            FAIL("expected ValidationFailure");
        } catch (const ValidationFailure& e) {
            CHECK(e.simulated > 0.0);
            CHECK(e.exact > 0.0);
            CHECK(std::abs(e.simulated - e.exact) > 3.0 * e.half_width);
            CHECK(std::string(e.what()).find("vs exact") != std::string::npos);
        }
    }
}

TEST_CASE("simulation config is checked", "[sim]") {
    const Instance t = one_node(Regime::DBS);
    SimConfig cfg;
    cfg.policy = all_to_node(t);
    CHECK_THROWS_AS(simulate(t, cfg), std::invalid_argument);  // neither length set
    cfg.horizon = 100.0;
    cfg.jobs = 100;
    CHECK_THROWS_AS(simulate(t, cfg), std::invalid_argument);  // both set
    cfg.jobs = 0;
    cfg.warmup = 0.6;
    CHECK_THROWS_AS(simulate(t, cfg), std::invalid_argument);
    cfg.warmup = -0.1;
    CHECK_THROWS_AS(simulate(t, cfg), std::invalid_argument);
    cfg.warmup = 0.2;
    cfg.replications = 0;
    CHECK_THROWS_AS(simulate(t, cfg), std::invalid_argument);
    cfg.replications = 1;
    CHECK_NOTHROW(simulate(t, cfg));

    SplitVector narrow;
    narrow.rates = {1.0};
    cfg.policy = BernoulliSplitPolicy{narrow};
    CHECK_THROWS_AS(simulate(t, cfg), std::invalid_argument);
}
