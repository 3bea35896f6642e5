#include <doctest.h>

#include <algorithm>
#include <random>

#include "polca/metrics.hpp"
#include "polca/workload.hpp"

using namespace polca;

namespace {

RequestRecord rec(Priority p, double arrival, double latency, const std::string& cls = "w") {
    RequestRecord r;
    r.cls = cls;
    r.priority = p;
    r.arrival_s = arrival;
    r.start_s = arrival;
    r.completion_s = arrival + latency;
    r.completed = true;
    return r;
}

SimulationResult result_with(std::vector<RequestRecord> reqs, std::uint64_t seed = 1, std::uint64_t hash = 42) {
    SimulationResult r;
    r.seed = seed;
    r.trace_hash = hash;
    r.trace_size = reqs.size();
    r.horizon_s = 1000.0;
    r.requests = std::move(reqs);
    return r;
}

Config short_row(double hours) {
    Config c;
    c.cluster.sim_duration_s = hours * 3600.0;
    c.arrivals.phase_s = -6.0 * 3600.0;
    return c;
}

}  // namespace

TEST_CASE("nearest-rank percentiles") {
    const std::vector<double> v{10, 1, 9, 2, 8, 3, 7, 4, 6, 5};
    CHECK(nearest_rank(v, 50) == 5);
    CHECK(nearest_rank(v, 99) == 10);
    CHECK(nearest_rank(v, 100) == 10);
    CHECK(nearest_rank(v, 10) == 1);
    CHECK(nearest_rank(v, 11) == 2);
    CHECK(nearest_rank({7.0}, 1) == 7.0);
    CHECK_THROWS_AS(nearest_rank({}, 50), std::invalid_argument);
    CHECK_THROWS_AS(nearest_rank(v, 0), std::invalid_argument);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 100);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(1 + trial);
        for (double& y : x) y = u(rng);
        auto sorted = x;
        std::sort(sorted.begin(), sorted.end());
        for (double q : {1.0, 50.0, 99.0, 100.0}) {
            // Smallest value with at least q% of the sample at or below it.
            double expect = sorted.back();
            for (std::size_t i = 0; i < sorted.size(); ++i) {
                if (100.0 * (i + 1) >= q * sorted.size()) {
                    expect = sorted[i];
                    break;
                }
            }
            CHECK(nearest_rank(x, q) == expect);
        }
    }
}

TEST_CASE("impacts against the uncapped run") {
    std::vector<RequestRecord> base, capped;
    for (int i = 0; i < 100; ++i) {
        base.push_back(rec(Priority::High, i, 10.0));
        capped.push_back(rec(Priority::High, i, i < 98 ? 10.05 : 10.6));
        base.push_back(rec(Priority::Low, i, 20.0));
        capped.push_back(rec(Priority::Low, i, 21.2));
    }
    const auto slo = compute_slo(result_with(capped), result_with(base));
    CHECK(slo.high.p50_pct == doctest::Approx(0.5));
    CHECK(slo.high.p99_pct == doctest::Approx(6.0));
    CHECK(slo.high.p100_pct == doctest::Approx(6.0));
    CHECK(slo.low.p50_pct == doctest::Approx(6.0));
    CHECK_FALSE(slo.hp_pass);
    CHECK_FALSE(slo.lp_pass);
    CHECK_FALSE(slo.pass);
    CHECK(slo.hp_throughput_delta_pct == 0.0);

    const auto same = compute_slo(result_with(base), result_with(base));
    CHECK(same.pass);
    CHECK(same.high.p99_pct == 0.0);

    auto braked = result_with(base);
    braked.powerbrake_count = 1;
    CHECK_FALSE(compute_slo(braked, result_with(base)).pass);
}

TEST_CASE("throughput counts completions within the horizon") {
    std::vector<RequestRecord> base, capped;
    for (int i = 0; i < 50; ++i) {
        base.push_back(rec(Priority::Low, 900 + i, 10.0, "a"));
        // The last ten finish after the horizon when capped.
        capped.push_back(rec(Priority::Low, 900 + i, i < 40 ? 10.0 : 200.0, "a"));
    }
    const auto slo = compute_slo(result_with(capped), result_with(base));
    CHECK(slo.lp_throughput_delta_pct == doctest::Approx(-20.0));
    CHECK(slo.class_throughput_delta_pct.at("a") == doctest::Approx(-20.0));
}

TEST_CASE("mixing seeds or traces is an error") {
    const auto a = result_with({rec(Priority::High, 0, 1)}, 1, 42);
    CHECK_THROWS_AS(compute_slo(a, result_with({rec(Priority::High, 0, 1)}, 2, 42)), PairingError);
    CHECK_THROWS_AS(compute_slo(a, result_with({rec(Priority::High, 0, 1)}, 1, 43)), PairingError);
}

TEST_CASE("sweep specs") {
    const auto s = parse_sweep_spec(
        "# thresholds\nvariable = t1_t2_pair\nvalues = 0.75:0.85, 0.80:0.89\nseeds = 4, 5\n"
        "added_server_fraction = 0.3\npolicy = polca\n");
    CHECK(s.variable == SweepVariable::T1T2Pair);
    REQUIRE(s.values.size() == 2);
    CHECK(s.values[1].a == 0.80);
    CHECK(s.values[1].b == 0.89);
    CHECK(s.values[0].label() == "0.75:0.85");
    CHECK(sweep_seeds(s) == std::vector<std::uint64_t>{4, 5});
    CHECK(*s.added_server_fraction == 0.3);

    const auto r = parse_sweep_spec("variable = lp_fraction\nvalues = 0.2\nrepetitions = 3\n");
    CHECK(sweep_seeds(r) == std::vector<std::uint64_t>{1, 2, 3});

    CHECK_THROWS_AS(parse_sweep_spec("values = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_sweep_spec("variable = t1_t2_pair\nvalues = 0.8\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_sweep_spec("variable = voltage\nvalues = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_sweep_spec("variable = power_scale\nvalues = 1\ncolour = red\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_sweep_spec("variable = power_scale\n"), std::invalid_argument);
}

TEST_CASE("shipped sweep specs validate") {
    const std::string dir = std::string(POLCA_CONFIG_DIR) + "/sweeps/";
    for (const char* f : {"thresholds.spec", "added_servers.spec", "lp_frequency.spec", "lp_fraction.spec"}) {
        CAPTURE(f);
        const auto spec = load_sweep_spec(dir + f);
        CHECK_NOTHROW(validate_sweep(spec, Config{}));
    }
}

TEST_CASE("sweep values apply to the config") {
    const Config base;
    CHECK(apply_sweep_value(base, SweepVariable::AddedServerFraction, {0.3, 0}).cluster.added_servers == 12);
    CHECK(added_servers_for(40, 0.25) == 10);
    CHECK(apply_sweep_value(base, SweepVariable::FLpT1, {1200, 0}).policy.f_lp_t1 == 1200);
    CHECK(apply_sweep_value(base, SweepVariable::PowerScale, {1.05, 0}).power.dynamic_power_scale == 1.05);
    const auto t = apply_sweep_value(base, SweepVariable::T1T2Pair, {0.75, 0.85});
    CHECK(t.policy.t1 == 0.75);
    CHECK(t.policy.t2 == 0.85);
    const auto lp = apply_sweep_value(base, SweepVariable::LpFraction, {0.8, 0});
    double low = 0.0;
    for (const auto& w : lp.cluster.workloads) low += w.mix_ratio * w.low_probability();
    CHECK(low == doctest::Approx(0.8));
    CHECK(expected_work(lp.cluster.workloads, lp.power).low_share() > 0.6);

    SweepSpec bad;
    bad.variable = SweepVariable::LpFraction;
    bad.values = {{1.5, 0}};
    bad.seeds = {1};
    CHECK_THROWS_AS(validate_sweep(bad, base), std::invalid_argument);
    bad.variable = SweepVariable::T1T2Pair;
    bad.values = {{0.9, 0.85}};
    CHECK_THROWS_AS(validate_sweep(bad, base), std::invalid_argument);
}

TEST_CASE("a failing sweep cell is recorded and the sweep continues") {
    SweepSpec s;
    s.variable = SweepVariable::T1T2Pair;
    s.values = {{0.9, 0.85}, {0.80, 0.89}};
    s.seeds = {1};
    const auto table = run_sweep(s, short_row(1.0));
    REQUIRE(table.rows.size() == 2);
    CHECK_FALSE(table.rows[0].ok);
    CHECK(table.rows[0].error.find("t1 < t2") != std::string::npos);
    CHECK(table.rows[1].ok);
}

TEST_CASE("more servers never mean fewer brakes") {
    SweepSpec s;
    s.variable = SweepVariable::AddedServerFraction;
    // Past about +45% the idle floor alone sits above T2 and the brake never releases.
    s.values = {{0.0, 0}, {0.15, 0}, {0.3, 0}};
    s.seeds = {1, 2};
    const auto table = run_sweep(s, short_row(8.0));
    REQUIRE(table.rows.size() == 6);
    for (std::size_t seed = 0; seed < 2; ++seed) {
        const auto& none = table.rows[seed * 3];
        REQUIRE(none.ok);
        for (std::size_t i = 1; i < 3; ++i) {
            const auto& lo = table.rows[seed * 3 + i - 1];
            const auto& hi = table.rows[seed * 3 + i];
            REQUIRE(hi.ok);
            CHECK(hi.run.powerbrakes >= lo.run.powerbrakes);
            // Pool rounding makes the LP tail non-monotone between nonzero
            // fractions; against no oversubscription it only grows.
            CHECK(hi.slo.low.p99_pct >= none.slo.low.p99_pct);
        }
    }
    REQUIRE(table.max_fraction_without_brakes.has_value());
    CHECK(*table.max_fraction_without_brakes >= 0.0);
}

TEST_CASE("comparison is normalized against polca") {
    const std::vector<PolicyKind> k{PolicyKind::Polca, PolicyKind::NoCap};
    const std::vector<std::uint64_t> seeds{3};
    Config c = short_row(2.0);
    c.cluster.added_servers = 12;
    const auto rows = compare_policies(k, 1.0, c, seeds);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].policy == "polca");
    CHECK(rows[0].hp_p50_norm == 1.0);
    CHECK(rows[0].lp_p99_norm == 1.0);
    CHECK(rows[1].policy == "no-cap");
    CHECK(rows[1].slo.low.p50_pct == 0.0);
    CHECK(rows[1].lp_p50_norm <= 1.0);
}

TEST_CASE("paired runs share the trace") {
    Config c = short_row(1.0);
    const Trace t = generate_trace(c);
    const auto p = run_paired(c, t, PolicyKind::Polca);
    CHECK(p.capped.trace_hash == p.uncapped.trace_hash);
    CHECK(p.uncapped.policy == "no-cap");
    CHECK(p.capped.policy == "polca");
}
