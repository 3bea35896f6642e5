#include "polca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "polca/workload.hpp"

namespace polca {

double nearest_rank(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("nearest_rank: empty input");
    if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("nearest_rank: q must lie in (0, 100]");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
    return values[rank - 1];
}

namespace {

std::vector<double> latencies(const SimulationResult& r, Priority p) {
    std::vector<double> out;
    for (const auto& q : r.requests)
        if (q.completed && q.priority == p) out.push_back(q.latency_s());
    return out;
}

double rel_pct(double capped, double base) { return base > 0.0 ? 100.0 * (capped - base) / base : 0.0; }

PriorityImpact impact(const SimulationResult& capped, const SimulationResult& uncapped, Priority p) {
    PriorityImpact out;
    const auto c = latencies(capped, p);
    const auto u = latencies(uncapped, p);
    out.completed = c.size();
    if (c.empty() || u.empty()) return out;
    out.p50_s = nearest_rank(c, 50.0);
    out.p99_s = nearest_rank(c, 99.0);
    out.p100_s = nearest_rank(c, 100.0);
    out.base_p50_s = nearest_rank(u, 50.0);
    out.base_p99_s = nearest_rank(u, 99.0);
    out.base_p100_s = nearest_rank(u, 100.0);
    out.p50_pct = rel_pct(out.p50_s, out.base_p50_s);
    out.p99_pct = rel_pct(out.p99_s, out.base_p99_s);
    out.p100_pct = rel_pct(out.p100_s, out.base_p100_s);
    return out;
}

}  // namespace

SloReport compute_slo(const SimulationResult& capped, const SimulationResult& uncapped, const SloThresholds& slo) {
    if (capped.seed != uncapped.seed)
        throw PairingError("compute_slo: runs use different seeds (" + std::to_string(capped.seed) + " vs " +
                           std::to_string(uncapped.seed) + ")");
    if (capped.trace_hash != uncapped.trace_hash || capped.trace_size != uncapped.trace_size)
        throw PairingError("compute_slo: runs use different traces");

    SloReport out;
    out.high = impact(capped, uncapped, Priority::High);
    out.low = impact(capped, uncapped, Priority::Low);

    std::map<std::string, std::pair<double, double>> per_class;
    std::array<std::pair<double, double>, 2> per_priority{};
    auto count = [](const SimulationResult& r, auto&& add) {
        for (const auto& q : r.requests)
            if (q.completed && q.completion_s <= r.horizon_s) add(q);
    };
    count(capped, [&](const RequestRecord& q) {
        per_class[q.cls].first += 1.0;
        per_priority[static_cast<int>(q.priority)].first += 1.0;
    });
    count(uncapped, [&](const RequestRecord& q) {
        per_class[q.cls].second += 1.0;
        per_priority[static_cast<int>(q.priority)].second += 1.0;
    });
    // Per-hour rates share the horizon, so the relative change of counts is the rate change.
    for (const auto& [cls, c] : per_class) out.class_throughput_delta_pct[cls] = rel_pct(c.first, c.second);
    out.hp_throughput_delta_pct = rel_pct(per_priority[0].first, per_priority[0].second);
    out.lp_throughput_delta_pct = rel_pct(per_priority[1].first, per_priority[1].second);

    out.powerbrake_count = capped.powerbrake_count;
    out.budget_breaches = capped.budget_breaches;
    out.max_reading = capped.max_reading;
    out.first_cap_s = capped.first_cap_s;
    out.cap_event_counts = capped.action_counts;
    out.time_t1_only_s = capped.time_t1_only_s;
    out.time_t2_s = capped.time_t2_s;
    out.time_brake_s = capped.time_brake_s;

    out.hp_pass = out.high.empty() || (out.high.p50_pct < slo.hp_p50_pct && out.high.p99_pct < slo.hp_p99_pct);
    out.lp_pass = out.low.empty() || (out.low.p50_pct < slo.lp_p50_pct && out.low.p99_pct < slo.lp_p99_pct);
    out.pass = out.hp_pass && out.lp_pass && out.powerbrake_count == 0;
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SweepVariable v) {
    switch (v) {
        case SweepVariable::T1T2Pair: return "t1_t2_pair";
        case SweepVariable::AddedServerFraction: return "added_server_fraction";
        case SweepVariable::FLpT1: return "f_lp_t1";
        case SweepVariable::LpFraction: return "lp_fraction";
        case SweepVariable::PowerScale: return "power_scale";
    }
    return "?";
}

SweepVariable parse_sweep_variable(std::string_view s) {
    for (auto v : {SweepVariable::T1T2Pair, SweepVariable::AddedServerFraction, SweepVariable::FLpT1,
                   SweepVariable::LpFraction, SweepVariable::PowerScale})
        if (s == to_string(v)) return v;
    throw std::invalid_argument("unknown sweep variable '" + std::string(s) + "'");
}

std::string SweepValue::label() const {
    std::ostringstream os;
    os << a;
    if (b != 0.0) os << ':' << b;
    return os.str();
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_num(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
    return out;
}

}  // namespace

SweepSpec parse_sweep_spec(const std::string& text) {
    SweepSpec spec;
    bool have_variable = false;
    std::vector<std::string> raw_values;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("sweep spec line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "variable") {
            spec.variable = parse_sweep_variable(value);
            have_variable = true;
        } else if (key == "values") {
            raw_values = split(value, ',');
        } else if (key == "seeds") {
            for (const auto& s : split(value, ',')) spec.seeds.push_back(std::stoull(s));
        } else if (key == "repetitions") {
            spec.repetitions = static_cast<int>(to_num(key, value));
        } else if (key == "policy") {
            spec.policy = parse_policy(value);
        } else if (key == "added_server_fraction") {
            spec.added_server_fraction = to_num(key, value);
        } else if (key == "power_scale") {
            spec.power_scale = to_num(key, value);
        } else {
            throw std::invalid_argument("sweep spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    if (!have_variable) throw std::invalid_argument("sweep spec: missing 'variable'");
    for (const auto& v : raw_values) {
        SweepValue sv;
        if (spec.variable == SweepVariable::T1T2Pair) {
            const auto parts = split(v, ':');
            if (parts.size() != 2) throw std::invalid_argument("values: expected t1:t2 pairs, got '" + v + "'");
            sv.a = to_num("values", parts[0]);
            sv.b = to_num("values", parts[1]);
        } else {
            sv.a = to_num("values", v);
        }
        spec.values.push_back(sv);
    }
    if (spec.values.empty()) throw std::invalid_argument("sweep spec: no values");
    return spec;
}

SweepSpec load_sweep_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open sweep spec '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_sweep_spec(ss.str());
}

std::vector<std::uint64_t> sweep_seeds(const SweepSpec& spec) {
    if (!spec.seeds.empty()) return spec.seeds;
    std::vector<std::uint64_t> out;
    for (int i = 1; i <= spec.repetitions; ++i) out.push_back(static_cast<std::uint64_t>(i));
    return out;
}

int added_servers_for(int baseline, double fraction) {
    return static_cast<int>(std::lround(baseline * fraction));
}

Config apply_sweep_value(const Config& base, SweepVariable v, const SweepValue& value) {
    Config cfg = base;
    switch (v) {
        case SweepVariable::T1T2Pair:
            cfg.policy.t1 = value.a;
            cfg.policy.t2 = value.b;
            break;
        case SweepVariable::AddedServerFraction:
            cfg.cluster.added_servers = added_servers_for(cfg.cluster.baseline_servers, value.a);
            break;
        case SweepVariable::FLpT1: cfg.policy.f_lp_t1 = value.a; break;
        case SweepVariable::LpFraction:
            cfg.cluster.workloads = mix_with_lp_fraction(base.cluster.workloads, value.a);
            cfg.cluster.lp_server_fraction = 0.0;
            break;
        case SweepVariable::PowerScale: cfg.power.dynamic_power_scale = value.a; break;
    }
    return cfg;
}

void validate_sweep(const SweepSpec& spec, const Config& base) {
    if (sweep_seeds(spec).empty()) throw std::invalid_argument("sweep: no seeds");
    for (const auto& v : spec.values) {
        const std::string where = std::string(to_string(spec.variable)) + " value " + v.label();
        switch (spec.variable) {
            case SweepVariable::AddedServerFraction:
                if (v.a < 0.0) throw std::invalid_argument(where + ": must be >= 0");
                break;
            case SweepVariable::LpFraction:
                if (!(v.a >= 0.0 && v.a <= 1.0)) throw std::invalid_argument(where + ": must lie in [0, 1]");
                break;
            case SweepVariable::PowerScale:
                if (!(v.a > 0.0)) throw std::invalid_argument(where + ": must be > 0");
                break;
            default: break;
        }
        try {
            validate(apply_sweep_value(base, spec.variable, v));
        } catch (const ConfigError& e) {
            throw std::invalid_argument(where + ": " + e.what());
        }
    }
}

namespace {

SimOptions sim_options(const ExperimentOptions& opt) {
    SimOptions o;
    o.keep_power_series = opt.keep_power_series;
    return o;
}

RunSummary summarize(const SimulationResult& r) {
    RunSummary s;
    s.powerbrakes = r.powerbrake_count;
    s.budget_breaches = r.budget_breaches;
    s.max_reading = r.max_reading;
    s.first_cap_s = r.first_cap_s;
    s.hp_cap_events = static_cast<std::size_t>(r.action_counts[static_cast<std::size_t>(ActionType::CapHP)]);
    s.trace_hash = r.trace_hash;
    return s;
}

// Traces do not depend on these variables, so one per seed serves every value.
bool trace_shared(SweepVariable v) {
    return v == SweepVariable::T1T2Pair || v == SweepVariable::FLpT1 || v == SweepVariable::PowerScale;
}

}  // namespace

PairedRun run_paired(const Config& cfg, const Trace& trace, PolicyKind policy, const ExperimentOptions& opt) {
    PairedRun out;
    out.uncapped = run_simulation(cfg, trace, PolicyKind::NoCap, sim_options(opt));
    out.capped = policy == PolicyKind::NoCap ? out.uncapped : run_simulation(cfg, trace, policy, sim_options(opt));
    out.slo = compute_slo(out.capped, out.uncapped, opt.slo);
    return out;
}

SweepTable run_sweep(const SweepSpec& spec, const Config& base_in, const ExperimentOptions& opt) {
    Config base = base_in;
    if (spec.added_server_fraction)
        base.cluster.added_servers = added_servers_for(base.cluster.baseline_servers, *spec.added_server_fraction);
    if (spec.power_scale) base.power.dynamic_power_scale = *spec.power_scale;

    SweepTable table;
    table.variable = spec.variable;
    for (std::uint64_t seed : sweep_seeds(spec)) {
        std::optional<Trace> shared;
        std::optional<SimulationResult> shared_uncapped;
        for (const auto& value : spec.values) {
            SweepRow row;
            row.value = value.label();
            row.numeric = value.a;
            row.seed = seed;
            try {
                Config cfg = apply_sweep_value(base, spec.variable, value);
                cfg.cluster.rng_seed = seed;
                validate(cfg);
                Trace local;
                const Trace* trace = &local;
                if (trace_shared(spec.variable)) {
                    if (!shared) shared = generate_trace(cfg);
                    trace = &*shared;
                } else {
                    local = generate_trace(cfg);
                }
                // The uncapped run only varies with the power scale.
                SimulationResult uncapped;
                if (trace_shared(spec.variable) && spec.variable != SweepVariable::PowerScale) {
                    if (!shared_uncapped)
                        shared_uncapped = run_simulation(cfg, *trace, PolicyKind::NoCap, sim_options(opt));
                    uncapped = *shared_uncapped;
                } else {
                    uncapped = run_simulation(cfg, *trace, PolicyKind::NoCap, sim_options(opt));
                }
                const SimulationResult capped = spec.policy == PolicyKind::NoCap
                                                    ? uncapped
                                                    : run_simulation(cfg, *trace, spec.policy, sim_options(opt));
                row.slo = compute_slo(capped, uncapped, opt.slo);
                row.run = summarize(capped);
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
            }
            table.rows.push_back(std::move(row));
        }
    }

    if (spec.variable == SweepVariable::AddedServerFraction) {
        std::map<double, bool> clean;
        for (const auto& r : table.rows) {
            auto it = clean.try_emplace(r.numeric, true).first;
            it->second = it->second && r.ok && r.run.powerbrakes == 0;
        }
        for (const auto& [fraction, ok] : clean) {
            if (!ok) break;
            table.max_fraction_without_brakes = fraction;
        }
    }
    return table;
}

std::vector<ComparisonRow> compare_policies(std::span<const PolicyKind> policies, double power_scale,
                                            const Config& base, std::span<const std::uint64_t> seeds,
                                            const ExperimentOptions& opt) {
    std::vector<ComparisonRow> out;
    for (std::uint64_t seed : seeds) {
        Config cfg = base;
        cfg.cluster.rng_seed = seed;
        cfg.power.dynamic_power_scale = power_scale;
        const Trace trace = generate_trace(cfg);
        const SimulationResult uncapped = run_simulation(cfg, trace, PolicyKind::NoCap, sim_options(opt));
        std::map<PolicyKind, SloReport> reports;
        auto report_for = [&](PolicyKind k) -> const SloReport& {
            auto it = reports.find(k);
            if (it != reports.end()) return it->second;
            const SimulationResult r =
                k == PolicyKind::NoCap ? uncapped : run_simulation(cfg, trace, k, sim_options(opt));
            return reports.emplace(k, compute_slo(r, uncapped, opt.slo)).first->second;
        };
        const SloReport& ref = report_for(PolicyKind::Polca);
        auto norm = [](double v, double r) { return r > 0.0 ? v / r : 1.0; };
        for (PolicyKind k : policies) {
            const SloReport& rep = report_for(k);
            ComparisonRow row;
            row.policy = std::string(to_string(k));
            row.seed = seed;
            row.power_scale = power_scale;
            row.slo = rep;
            row.hp_p50_norm = norm(rep.high.p50_s, ref.high.p50_s);
            row.hp_p99_norm = norm(rep.high.p99_s, ref.high.p99_s);
            row.lp_p50_norm = norm(rep.low.p50_s, ref.low.p50_s);
            row.lp_p99_norm = norm(rep.low.p99_s, ref.low.p99_s);
            out.push_back(std::move(row));
        }
    }
    return out;
}

std::vector<LpRatioRow> lp_ratio_sweep(std::span<const double> fractions, const Config& base,
                                       std::span<const std::uint64_t> seeds, const ExperimentOptions& opt) {
    std::vector<LpRatioRow> out;
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("lp_ratio_sweep: fractions must lie in (0, 1]");
        for (std::uint64_t seed : seeds) {
            Config cfg = apply_sweep_value(base, SweepVariable::LpFraction, {f, 0.0});
            cfg.cluster.rng_seed = seed;
            const Trace trace = generate_trace(cfg);
            PairedRun run = run_paired(cfg, trace, PolicyKind::Polca, opt);
            LpRatioRow row;
            row.lp_fraction = f;
            row.seed = seed;
            row.slo = run.slo;
            row.hp_cap_events =
                static_cast<std::size_t>(run.capped.action_counts[static_cast<std::size_t>(ActionType::CapHP)]);
            out.push_back(std::move(row));
        }
    }
    return out;
}

}  // namespace polca
