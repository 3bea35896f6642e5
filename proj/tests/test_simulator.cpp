#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "polca/simulator.hpp"
#include "polca/workload.hpp"

using namespace polca;

namespace {

namespace fs = std::filesystem;

// One high-priority class: 0.1 s prompt, 1.0 s token phase at f_max.
Config tiny_row(int servers) {
    Config c;
    c.cluster.baseline_servers = servers;
    c.cluster.workloads = {{"w", 1024, 1024, 20, 20, 1.0, PriorityRule::AllHigh, 0.0, 1}};
    c.cluster.sim_duration_s = 10.0;
    return c;
}

InferenceRequest req(std::int64_t id, double t, Priority p = Priority::High) {
    InferenceRequest r;
    r.id = id;
    r.arrival_s = t;
    r.cls = "w";
    r.prompt_tokens = 1024;
    r.output_tokens = 20;
    r.priority = p;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Config busy_row(double hours) {
    Config c;
    c.cluster.added_servers = 12;
    c.cluster.sim_duration_s = hours * 3600.0;
    // Start near the daily peak.
    c.arrivals.phase_s = -6.0 * 3600.0;
    return c;
}

}  // namespace

TEST_CASE("two servers, one-request buffers and the overflow queue") {
    const Config c = tiny_row(2);
    const Trace t{req(0, 0.0), req(1, 0.5), req(2, 0.6), req(3, 0.7), req(4, 0.8)};
    const auto r = run_simulation(c, t, PolicyKind::NoCap);
    REQUIRE(r.requests.size() == 5);
    // 0 and 1 start at once; 2 and 3 wait in the buffers of the server that
    // frees up first; 4 overflows and refills server 0's buffer at 1.1 s.
    const double start[] = {0.0, 0.5, 1.1, 1.6, 2.2};
    const double done[] = {1.1, 1.6, 2.2, 2.7, 3.3};
    const int server[] = {0, 1, 0, 1, 0};
    for (int i = 0; i < 5; ++i) {
        CAPTURE(i);
        CHECK(r.requests[i].completed);
        CHECK(r.requests[i].server == server[i]);
        CHECK(r.requests[i].start_s == doctest::Approx(start[i]));
        CHECK(r.requests[i].prompt_end_s == doctest::Approx(start[i] + 0.1));
        CHECK(r.requests[i].completion_s == doctest::Approx(done[i]));
    }
    CHECK(r.max_overflow[static_cast<int>(Priority::High)] == 1);
    CHECK(r.lp_servers == 0);
}

TEST_CASE("sampled power follows the phases") {
    Config c = tiny_row(1);
    c.cluster.budget_watts = 10000.0;
    c.cluster.sim_duration_s = 2.0;
    c.policy.telemetry_delay_s = 0.5;
    c.policy.control_period_s = 0.5;
    const auto r = run_simulation(c, Trace{req(0, 0.0)}, PolicyKind::NoCap);
    const auto& s = c.cluster.server;
    const double host = s.host_power_watts;
    const double prompt = host + 8 * 400.0 * gpu_power_fraction(Phase::Prompt, 1024, 1410, s.gpu, c.power);
    const double token = host + 8 * 400.0 * gpu_power_fraction(Phase::Token, 1, 1410, s.gpu, c.power);
    const double idle = host + 8 * 400.0 * 0.2;
    REQUIRE(r.power.mean.size() >= 20);
    CHECK(r.power.mean[0] == doctest::Approx(prompt / 10000.0));
    CHECK(r.power.mean[5] == doctest::Approx(token / 10000.0));
    CHECK(r.power.mean[15] == doctest::Approx(idle / 10000.0));
    // A reading is the mean over its control period, delivered one delay later.
    REQUIRE(r.readings.size() >= 3);
    CHECK(r.readings[0].measured_at_s == 0.5);
    CHECK(r.readings[0].delivered_at_s == 1.0);
    CHECK(r.readings[0].power_norm == doctest::Approx((0.1 * prompt + 0.4 * token) / 0.5 / 10000.0));
    CHECK(r.readings[2].power_norm == doctest::Approx(((0.1 * token) + 0.4 * idle) / 0.5 / 10000.0));
}

TEST_CASE("commands map to targets and latencies") {
    const PolicyConfig p;
    const GpuSpec g;
    const auto brake = to_command({ActionType::CapAll, 288}, 10.0, p, g);
    CHECK(brake.kind == CommandKind::Brake);
    CHECK(brake.target == CapTarget::All);
    CHECK(brake.effective_at_s == 15.0);
    const auto lp = to_command({ActionType::CapLP, 1275}, 10.0, p, g);
    CHECK(lp.kind == CommandKind::OOB);
    CHECK(lp.target == CapTarget::AllLow);
    CHECK(lp.effective_at_s == 50.0);
    CHECK(to_command({ActionType::UncapHP, 0}, 0, p, g).freq_mhz == 1410.0);
    CHECK(to_command({ActionType::UncapHP, 0}, 0, p, g).target == CapTarget::AllHigh);
    CHECK(to_command({ActionType::SetLP, 1275}, 0, p, g).target == CapTarget::AllLow);
}

TEST_CASE("a brake is released only by a later command") {
    const GpuSpec g;
    std::vector<ServerState> s(2);
    s[0].id = 0;
    s[0].priority = Priority::Low;
    s[1].id = 1;
    s[1].priority = Priority::High;
    for (auto& x : s) x.cap_freq_mhz = x.effective_freq_mhz = 1410.0;

    CapCommand brake{100.0, 105.0, CapTarget::All, 288.0, CommandKind::Brake};
    CHECK(apply_command(brake, s, g) == std::vector<int>{0, 1});
    // An OOB command issued before the brake lands afterwards and must not release it.
    CapCommand stale{70.0, 110.0, CapTarget::AllLow, 1110.0, CommandKind::OOB};
    CHECK(apply_command(stale, s, g).empty());
    CHECK(s[0].effective_freq_mhz == 288.0);
    CHECK(s[0].cap_freq_mhz == 1110.0);
    CapCommand fresh{102.0, 142.0, CapTarget::AllLow, 1275.0, CommandKind::OOB};
    CHECK(apply_command(fresh, s, g) == std::vector<int>{0});
    CHECK(s[0].effective_freq_mhz == 1275.0);
    CHECK(s[1].effective_freq_mhz == 288.0);
}

TEST_CASE("normalization identity") {
    Config c;
    c.cluster.baseline_servers = 3;
    const Trace t{req(0, 0), req(1, 0), req(2, 0)};
    std::vector<ServerState> s(3);
    for (int i = 0; i < 3; ++i) {
        s[i].id = i;
        s[i].effective_freq_mhz = 1410.0;
        s[i].active = ActiveRequest{static_cast<std::size_t>(i), Phase::Prompt, 0.1, 0.0};
    }
    const double each = server_watts(s[0], t, c.cluster.server, c.power);
    const auto rp = row_power(s, t, c.cluster.server, c.power, 3 * each);
    CHECK(rp.norm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rp.watts == doctest::Approx(3 * each).epsilon(1e-12));
}

TEST_CASE("pool sizes") {
    ClusterConfig c;
    const PowerModelParams p;
    CHECK(lp_server_count(c, p) == 14);
    c.added_servers = 12;
    CHECK(lp_server_count(c, p) == 19);
    c.lp_server_fraction = 0.5;
    CHECK(lp_server_count(c, p) == 26);
}

TEST_CASE("conservation, causality and work conservation under capping") {
    const Config c = busy_row(6.0);
    const Trace trace = generate_trace(c);
    SimOptions o;
    o.verify_conservation = true;
    const auto r = run_simulation(c, trace, PolicyKind::Polca, o);
    CHECK(r.max_conservation_error <= 1e-9);
    CHECK(r.action_counts[static_cast<int>(ActionType::CapLP)] > 0);

    for (const auto& rd : r.readings) {
        CHECK(rd.delivered_at_s > rd.measured_at_s);
        CHECK(rd.power_norm >= 0.0);
    }
    // Actions happen only at delivery instants.
    std::size_t k = 0;
    for (const auto& a : r.actions) {
        while (k < r.readings.size() && r.readings[k].delivered_at_s < a.t_s) ++k;
        REQUIRE(k < r.readings.size());
        CHECK(r.readings[k].delivered_at_s == a.t_s);
    }
    // Nothing runs capped before the first command can take effect.
    REQUIRE(r.first_cap_s > 0.0);
    for (const auto& q : r.requests)
        if (q.completed && q.completion_s < r.first_cap_s + c.policy.brake_latency_s) CHECK(q.min_freq_mhz == 1410.0);

    const auto nocap = run_simulation(c, trace, PolicyKind::NoCap);
    std::size_t done = 0;
    for (const auto& q : nocap.requests) done += q.completed;
    CHECK(done == trace.size());
    CHECK(nocap.actions.empty());
}

TEST_CASE("identical inputs give byte-identical results") {
    const Config c = busy_row(3.0);
    const Trace trace = generate_trace(c);
    const auto a = run_simulation(c, trace, PolicyKind::Polca);
    const auto b = run_simulation(c, generate_trace(c), PolicyKind::Polca);
    const fs::path base = fs::temp_directory_path() / "polca_test_determinism";
    fs::remove_all(base);
    write_result(a, (base / "a").string());
    write_result(b, (base / "b").string());
    for (const char* f : {"power.csv", "requests.csv", "actions.csv", "telemetry.csv", "summary.json"}) {
        CAPTURE(f);
        const auto x = slurp(base / "a" / f);
        CHECK_FALSE(x.empty());
        CHECK(x == slurp(base / "b" / f));
    }
    fs::remove_all(base);
}

TEST_CASE("row peak stays below the sum of server peaks") {
    Config c;
    c.cluster.sim_duration_s = 12 * 3600.0;
    c.arrivals.phase_s = -6.0 * 3600.0;
    const auto r = run_simulation(c, generate_trace(c), PolicyKind::NoCap);
    const auto& s = c.cluster.server;
    const double server_peak = s.host_power_watts + 8 * 400.0 * c.power.prompt_overshoot_max;
    const double sum_of_peaks = c.cluster.total_servers() * server_peak / r.budget_watts;
    double row_peak = 0.0;
    for (double m : r.power.max) row_peak = std::max(row_peak, m);
    CHECK(row_peak < sum_of_peaks);
    CHECK(row_peak < 0.9 * sum_of_peaks);
}

TEST_CASE("polca is a no-op when power never reaches T1") {
    Config c;
    c.cluster.sim_duration_s = 6 * 3600.0;
    c.arrivals.base_rate = 0.1;
    const Trace trace = generate_trace(c);
    const auto p = run_simulation(c, trace, PolicyKind::Polca);
    const auto n = run_simulation(c, trace, PolicyKind::NoCap);
    REQUIRE(p.max_reading < c.policy.t1);
    CHECK(p.actions.empty());
    CHECK(p.power.mean == n.power.mean);
    CHECK(p.readings.size() == n.readings.size());
    bool same = true;
    for (std::size_t i = 0; i < p.requests.size(); ++i)
        same = same && p.requests[i].completion_s == n.requests[i].completion_s;
    CHECK(same);
}

TEST_CASE("an overloaded row brakes within the brake latency") {
    Config c = tiny_row(4);
    c.cluster.budget_watts = 4 * 3000.0;
    c.cluster.sim_duration_s = 60.0;
    Trace t;
    for (int i = 0; i < 40; ++i) t.push_back(req(i, 0.01 * i));
    const auto r = run_simulation(c, t, PolicyKind::Polca);
    REQUIRE(r.powerbrake_count >= 1);
    REQUIRE_FALSE(r.actions.empty());
    const auto first = std::find_if(r.actions.begin(), r.actions.end(),
                                    [](const auto& a) { return a.action == ActionType::CapAll; });
    REQUIRE(first != r.actions.end());
    bool any_braked = false;
    for (const auto& q : r.requests) {
        if (q.min_freq_mhz == 288.0) {
            any_braked = true;
            CHECK(q.completion_s > first->t_s + c.policy.brake_latency_s);
        }
    }
    CHECK(any_braked);
}

TEST_CASE("bad traces are rejected") {
    const Config c = tiny_row(2);
    CHECK_THROWS_AS(run_simulation(c, Trace{req(0, 0.0, Priority::Low)}, PolicyKind::NoCap), std::invalid_argument);
    CHECK_THROWS_AS(run_simulation(c, Trace{req(0, 1.0), req(1, 0.5)}, PolicyKind::NoCap), std::invalid_argument);
}
