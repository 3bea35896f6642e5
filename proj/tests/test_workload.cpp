#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "polca/simulator.hpp"
#include "polca/workload.hpp"

using namespace polca;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("polca_test_" + name)).string();
}

double brute_max_rise(const std::vector<double>& v, std::size_t w) {
    double best = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size() && j <= i + w; ++j) best = std::max(best, v[j] - v[i]);
    return best;
}

}  // namespace

TEST_CASE("sampled requests respect their class") {
    const auto mix = default_workload_mix();
    Rng rng = make_rng(11, 2);
    std::map<std::string, int> counts;
    int chat_low = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto r = sample_request(mix, rng);
        const auto it = std::find_if(mix.begin(), mix.end(), [&](const auto& w) { return w.name == r.cls; });
        REQUIRE(it != mix.end());
        CHECK(r.prompt_tokens >= it->prompt_min);
        CHECK(r.prompt_tokens <= it->prompt_max);
        CHECK(r.output_tokens >= it->output_min);
        CHECK(r.output_tokens <= it->output_max);
        CHECK(r.batch == it->batch);
        if (it->priority_rule == PriorityRule::AllLow) CHECK(r.priority == Priority::Low);
        if (it->priority_rule == PriorityRule::AllHigh) CHECK(r.priority == Priority::High);
        if (r.cls == "chat" && r.priority == Priority::Low) ++chat_low;
        ++counts[r.cls];
    }
    for (const auto& w : mix) CHECK(std::abs(counts[w.name] / double(n) - w.mix_ratio) < 0.01);
    CHECK(std::abs(chat_low / double(counts["chat"]) - 0.5) < 0.01);
}

TEST_CASE("arrivals follow the diurnal rate") {
    DiurnalProfile p;
    p.base_rate = 0.5;
    p.amplitude = 0.6;
    p.phase_s = 3600.0;
    Rng rng = make_rng(3, 1);
    const double days = 4.0;
    const auto t = generate_arrivals(p, days * 86400.0, rng);
    CHECK(std::adjacent_find(t.begin(), t.end(), std::greater_equal<double>()) == t.end());
    CHECK(t.front() >= 0.0);
    CHECK(t.back() < days * 86400.0);
    // Whole periods: expected count is base_rate * duration.
    const double expected = p.base_rate * days * 86400.0;
    CHECK(std::abs(t.size() - expected) < 4.0 * std::sqrt(expected));

    // Hourly counts against the rate function.
    std::vector<double> counts(static_cast<std::size_t>(days * 24), 0.0);
    for (double x : t) counts[static_cast<std::size_t>(x / 3600.0)] += 1.0;
    double ss_res = 0.0, ss_tot = 0.0, mean = 0.0;
    for (double c : counts) mean += c / counts.size();
    for (std::size_t h = 0; h < counts.size(); ++h) {
        // Exact integral of the rate over the hour.
        const double w = 2.0 * std::numbers::pi / p.period_s;
        const double a = h * 3600.0, b = a + 3600.0;
        const double integral =
            p.base_rate * ((b - a) - p.amplitude / w * (std::cos(w * (b - p.phase_s)) - std::cos(w * (a - p.phase_s))));
        ss_res += (counts[h] - integral) * (counts[h] - integral);
        ss_tot += (counts[h] - mean) * (counts[h] - mean);
    }
    CHECK(1.0 - ss_res / ss_tot > 0.9);
}

TEST_CASE("lognormal block noise keeps the mean") {
    DiurnalProfile p;
    p.base_rate = 1.0;
    p.amplitude = 0.0;
    p.noise_sigma = 0.3;
    Rng rng = make_rng(5, 1);
    const double dur = 5 * 86400.0;
    const auto t = generate_arrivals(p, dur, rng);
    CHECK(t.size() / dur == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("traces are deterministic per seed") {
    Config c;
    c.cluster.sim_duration_s = 6 * 3600.0;
    const Trace a = generate_trace(c);
    const Trace b = generate_trace(c);
    CHECK(trace_to_csv(a) == trace_to_csv(b));
    CHECK(trace_hash(a) == trace_hash(b));
    c.cluster.rng_seed = 2;
    CHECK(trace_hash(generate_trace(c)) != trace_hash(a));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == static_cast<std::int64_t>(i));
}

TEST_CASE("load scales with the row") {
    Config c;
    c.cluster.sim_duration_s = 86400.0;
    const auto base = generate_trace(c).size();
    c.cluster.added_servers = 20;
    CHECK(load_scale(c.cluster) == 1.5);
    const auto more = generate_trace(c).size();
    CHECK(more / double(base) == doctest::Approx(1.5).epsilon(0.03));
    c.cluster.scale_load_with_servers = false;
    CHECK(load_scale(c.cluster) == 1.0);
}

TEST_CASE("trace csv round-trip and validation") {
    Config c;
    c.cluster.sim_duration_s = 3600.0;
    const Trace t = generate_trace(c);
    const auto path = temp_path("trace.csv");
    write_trace_csv(t, path);
    const Trace back = read_trace_csv(path, c.cluster.workloads);
    CHECK(back == t);

    auto write = [&](const std::string& text) {
        std::ofstream(path) << text;
        return path;
    };
    const std::string header = "id,arrival_s,class,prompt_tokens,output_tokens,batch,priority\n";
    CHECK_THROWS(read_trace_csv(write(header + "0,5,chat,10,10,1,low\n1,4,chat,10,10,1,low\n")));
    CHECK_THROWS(read_trace_csv(write(header + "0,5,poetry,10,10,1,low\n"), c.cluster.workloads));
    CHECK_THROWS(read_trace_csv(write(header + "0,5,chat,0,10,1,low\n")));
    CHECK_THROWS(read_trace_csv(write(header + "0,5,chat,10,10,1\n")));
    CHECK_THROWS(read_trace_csv(write("a,b\n0,1\n")));
    CHECK(read_trace_csv(write(header)).empty());
    std::remove(path.c_str());
}

TEST_CASE("expected work of the default mix") {
    const PowerModelParams p;
    const auto w = expected_work(default_workload_mix(), p);
    // Mean tokens per class at 0.1 s per 1024 prompt tokens and 0.05 s per output token.
    const double summarize = 0.1 * 5120 / 1024 + 0.05 * 384;
    const double search = 0.1 * 1280 / 1024 + 0.05 * 1536;
    const double chat = 0.1 * 3072 / 1024 + 0.05 * 1088;
    CHECK(w.low_s == doctest::Approx(0.25 * summarize + 0.25 * chat));
    CHECK(w.high_s == doctest::Approx(0.25 * search + 0.25 * chat));
    CHECK(w.low_share() == doctest::Approx(0.3611).epsilon(1e-3));
}

TEST_CASE("rescaling the low-priority share") {
    const auto mix = default_workload_mix();
    for (double f : {0.0, 0.2, 0.5, 0.65, 1.0}) {
        const auto m = mix_with_lp_fraction(mix, f);
        double low = 0.0, sum = 0.0;
        for (const auto& w : m) {
            low += w.mix_ratio * w.low_probability();
            sum += w.mix_ratio;
        }
        CHECK(sum == doctest::Approx(1.0));
        CHECK(low == doctest::Approx(f));
    }
    // Within the low pool summarize and chat keep their 1:1 ratio.
    const auto m = mix_with_lp_fraction(mix, 0.2);
    CHECK(m[0].mix_ratio == doctest::Approx(m[2].mix_ratio * m[2].low_fraction));
    CHECK_THROWS_AS(mix_with_lp_fraction(mix, 1.5), std::invalid_argument);
}

TEST_CASE("mape") {
    const std::vector<double> a{97, 103}, b{100, 100};
    CHECK(mape(a, b) == doctest::Approx(3.0));
    CHECK(mape(b, b) == 0.0);
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(mape(a, one), std::invalid_argument);
}

TEST_CASE("block means drop a partial tail") {
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7};
    CHECK(block_means(v, 3) == std::vector<double>{2, 5});
    CHECK(block_means(v, 0).empty());
}

TEST_CASE("max rise matches a brute force scan") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(500);
        double x = 0.0;
        for (double& y : v) y = x += n(rng);
        for (std::size_t w : {1u, 4u, 20u, 400u})
            CHECK(max_rise(v, 0.5, 0.5 * w) == doctest::Approx(brute_max_rise(v, w)));
    }
    const std::vector<double> falling{5, 4, 3, 2};
    CHECK(max_rise(falling, 1.0, 10.0) == 0.0);
}

TEST_CASE("shipped reference matches its shape") {
    const auto ref = read_reference_csv(std::string(POLCA_DATA_DIR) + "/reference_week.csv");
    const auto built = build_reference(ReferenceShape{});
    CHECK(ref.period_s == 300.0);
    REQUIRE(ref.values.size() == 2016);
    REQUIRE(built.values.size() == 2016);
    for (std::size_t i = 0; i < ref.values.size(); ++i) CHECK(ref.values[i] == doctest::Approx(built.values[i]).epsilon(1e-12));
    CHECK(*std::max_element(ref.values.begin(), ref.values.end()) == doctest::Approx(0.79).epsilon(1e-12));
    CHECK(*std::min_element(ref.values.begin(), ref.values.end()) > 0.6);
}

TEST_CASE("reference csv round-trip and errors") {
    PowerSeries s;
    s.period_s = 60.0;
    s.values = {0.5, 0.6, 0.55};
    const auto path = temp_path("ref.csv");
    write_reference_csv(s, path);
    const auto back = read_reference_csv(path);
    CHECK(back.period_s == 60.0);
    CHECK(back.values == s.values);
    std::ofstream(path) << "t_s,power_norm\n0,0.5\n60,0.5\n200,0.5\n";
    CHECK_THROWS(read_reference_csv(path));
    std::remove(path.c_str());
}

TEST_CASE("fit recovers a profile from its own simulation") {
    Config c;
    c.cluster.sim_duration_s = 86400.0;
    DiurnalProfile truth = c.arrivals;
    truth.base_rate = 0.42;
    truth.amplitude = 0.35;
    truth.phase_s = 20000.0;
    SimOptions o;
    o.keep_power_series = false;
    const auto r = run_simulation(c, generate_trace(c, truth), PolicyKind::NoCap, o);
    PowerSeries ref;
    ref.period_s = 300.0;
    ref.values = r.block_mean;
    ref.values.resize(288);

    const auto fit = fit_to_reference(ref, c);
    CHECK(fit.mape_pct < 1.0);
    CHECK(fit.converged);
    CHECK(fit.profile.base_rate == doctest::Approx(truth.base_rate).epsilon(0.05));
    CHECK(fit.profile.amplitude == doctest::Approx(truth.amplitude).epsilon(0.2));
}

TEST_CASE("a flat reference fits with near-zero amplitude") {
    Config c;
    c.cluster.sim_duration_s = 86400.0;
    PowerSeries ref;
    ref.period_s = 300.0;
    ref.values.assign(288, 0.68);
    const auto fit = fit_to_reference(ref, c);
    CHECK(fit.converged);
    CHECK(fit.profile.amplitude < 0.1);
}

TEST_CASE("fit rejects bad references") {
    const Config c;
    PowerSeries empty;
    CHECK_THROWS_AS(fit_to_reference(empty, c), std::invalid_argument);
    PowerSeries zero;
    zero.values = {0.5, 0.0};
    CHECK_THROWS_AS(fit_to_reference(zero, c), std::invalid_argument);
}
