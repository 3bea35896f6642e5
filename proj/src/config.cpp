#include "polca/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace polca {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

[[noreturn]] void parse_fail(const std::string& key, const std::string& msg) {
    throw ConfigError(ConfigError::Kind::Parse, key, msg);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) parse_fail(key, "expected a number, got '" + v + "'");
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) parse_fail(key, "expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    parse_fail(key, "expected true/false, got '" + v + "'");
}

PriorityRule to_rule(const std::string& key, const std::string& v) {
    if (v == "low") return PriorityRule::AllLow;
    if (v == "high") return PriorityRule::AllHigh;
    if (v == "split") return PriorityRule::Split;
    parse_fail(key, "expected low, high or split, got '" + v + "'");
}

std::string rule_name(PriorityRule r) {
    switch (r) {
        case PriorityRule::AllLow: return "low";
        case PriorityRule::AllHigh: return "high";
        case PriorityRule::Split: return "split";
    }
    return "low";
}

// dvfs_points = freq:scale:slowdown, ...
std::vector<DvfsPoint> to_points(const std::string& key, const std::string& v) {
    std::vector<DvfsPoint> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        auto c1 = item.find(':');
        auto c2 = item.find(':', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            parse_fail(key, "expected freq:scale:slowdown, got '" + item + "'");
        out.push_back({to_double(key, trim(item.substr(0, c1))), to_double(key, trim(item.substr(c1 + 1, c2 - c1 - 1))),
                       to_double(key, trim(item.substr(c2 + 1)))});
    }
    return out;
}

using Setter = std::function<void(Config&, const std::string& key, const std::string& value)>;

template <class T>
Setter dbl(T Config::*section, double T::*field) {
    return [=](Config& c, const std::string& k, const std::string& v) { (c.*section).*field = to_double(k, v); };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> m;
        using C = ClusterConfig;
        m["cluster.baseline_servers"] = [](Config& c, auto& k, auto& v) { c.cluster.baseline_servers = static_cast<int>(to_int(k, v)); };
        m["cluster.added_servers"] = [](Config& c, auto& k, auto& v) { c.cluster.added_servers = static_cast<int>(to_int(k, v)); };
        m["cluster.budget_watts"] = dbl(&Config::cluster, &C::budget_watts);
        m["cluster.provisioned_server_watts"] = dbl(&Config::cluster, &C::provisioned_server_watts);
        m["cluster.rng_seed"] = [](Config& c, auto& k, auto& v) {
            std::uint64_t seed = 0;
            auto res = std::from_chars(v.data(), v.data() + v.size(), seed);
            if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) parse_fail(k, "expected an unsigned integer");
            c.cluster.rng_seed = seed;
        };
        m["cluster.sim_duration_s"] = dbl(&Config::cluster, &C::sim_duration_s);
        m["cluster.power_sample_period_s"] = dbl(&Config::cluster, &C::power_sample_period_s);
        m["cluster.scale_load_with_servers"] = [](Config& c, auto& k, auto& v) { c.cluster.scale_load_with_servers = to_bool(k, v); };
        m["cluster.lp_server_fraction"] = dbl(&Config::cluster, &C::lp_server_fraction);
        m["cluster.gpus_per_server"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpus_per_server = static_cast<int>(to_int(k, v)); };
        m["cluster.gpu_power_share"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpu_power_share = to_double(k, v); };
        m["cluster.host_power_watts"] = [](Config& c, auto& k, auto& v) { c.cluster.server.host_power_watts = to_double(k, v); };
        m["cluster.gpu_tdp_watts"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpu.tdp_watts = to_double(k, v); };
        m["cluster.f_max"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpu.f_max = to_double(k, v); };
        m["cluster.f_base"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpu.f_base = to_double(k, v); };
        m["cluster.f_min"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpu.f_min = to_double(k, v); };
        m["cluster.idle_fraction"] = [](Config& c, auto& k, auto& v) { c.cluster.server.gpu.idle_fraction = to_double(k, v); };

        using P = PolicyConfig;
        for (auto [name, field] : std::initializer_list<std::pair<const char*, double P::*>>{
                 {"t1", &P::t1}, {"t2", &P::t2}, {"t1_buffer", &P::t1_buffer}, {"t2_buffer", &P::t2_buffer},
                 {"f_lp_t1", &P::f_lp_t1}, {"f_lp_t2", &P::f_lp_t2}, {"f_hp_t2", &P::f_hp_t2},
                 {"f_brake", &P::f_brake}, {"telemetry_delay_s", &P::telemetry_delay_s},
                 {"oob_latency_s", &P::oob_latency_s}, {"brake_latency_s", &P::brake_latency_s},
                 {"control_period_s", &P::control_period_s}})
            m[std::string("policy.") + name] = dbl(&Config::policy, field);

        using M = PowerModelParams;
        for (auto [name, field] : std::initializer_list<std::pair<const char*, double M::*>>{
                 {"p_token_frac", &M::p_token_frac}, {"p_prompt_base_frac", &M::p_prompt_base_frac},
                 {"prompt_overshoot_max", &M::prompt_overshoot_max},
                 {"prompt_saturation_tokens", &M::prompt_saturation_tokens}, {"gamma", &M::gamma},
                 {"prompt_time_per_ktoken_s", &M::prompt_time_per_ktoken_s}, {"token_time_s", &M::token_time_s},
                 {"alpha_token", &M::alpha_token}, {"dynamic_power_scale", &M::dynamic_power_scale}})
            m[std::string("power_model.") + name] = dbl(&Config::power, field);
        m["power_model.dvfs_points"] = [](Config& c, auto& k, auto& v) { c.power.dvfs_points = to_points(k, v); };

        using D = DiurnalProfile;
        for (auto [name, field] : std::initializer_list<std::pair<const char*, double D::*>>{
                 {"base_rate", &D::base_rate}, {"amplitude", &D::amplitude}, {"period_s", &D::period_s},
                 {"phase_s", &D::phase_s}, {"noise_sigma", &D::noise_sigma}, {"noise_block_s", &D::noise_block_s}})
            m[std::string("arrivals.") + name] = dbl(&Config::arrivals, field);
        return m;
    }();
    return table;
}

void set_workload_key(WorkloadClass& w, const std::string& key, const std::string& field, const std::string& v) {
    if (field == "prompt_min") w.prompt_min = static_cast<int>(to_int(key, v));
    else if (field == "prompt_max") w.prompt_max = static_cast<int>(to_int(key, v));
    else if (field == "output_min") w.output_min = static_cast<int>(to_int(key, v));
    else if (field == "output_max") w.output_max = static_cast<int>(to_int(key, v));
    else if (field == "mix_ratio") w.mix_ratio = to_double(key, v);
    else if (field == "priority") w.priority_rule = to_rule(key, v);
    else if (field == "low_fraction") w.low_fraction = to_double(key, v);
    else if (field == "batch") w.batch = static_cast<int>(to_int(key, v));
    else parse_fail(key, "unknown key");
}

[[noreturn]] void invalid(const std::string& key, const std::string& msg) {
    throw ConfigError(ConfigError::Kind::Validation, key, msg + " violated");
}

void require(bool ok, const std::string& key, const std::string& invariant) {
    if (!ok) invalid(key, invariant);
}

}  // namespace

Config parse_config(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    bool host_set = false;
    std::vector<WorkloadClass> workloads;
    std::map<std::string, std::size_t> workload_index;

    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') parse_fail(where, "unterminated section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            const bool known = section == "cluster" || section == "policy" || section == "power_model" ||
                               section == "arrivals" || section.rfind("workload.", 0) == 0;
            if (!known) parse_fail(where, "unknown section [" + section + "]");
            if (section.rfind("workload.", 0) == 0) {
                const std::string name = section.substr(9);
                if (name.empty()) parse_fail(where, "workload section needs a name");
                if (!workload_index.contains(name)) {
                    workload_index[name] = workloads.size();
                    WorkloadClass w;
                    w.name = name;
                    workloads.push_back(w);
                }
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) parse_fail(where, "expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) parse_fail(where, "empty key");
        if (section.empty()) parse_fail(where, "key '" + key + "' outside any section");
        const std::string full = section + "." + key;
        if (section.rfind("workload.", 0) == 0) {
            set_workload_key(workloads[workload_index[section.substr(9)]], full, key, value);
            continue;
        }
        auto it = setters().find(full);
        if (it == setters().end()) parse_fail(full, "unknown key");
        it->second(cfg, full, value);
        if (full == "cluster.host_power_watts") host_set = true;
    }
    if (!workloads.empty()) cfg.cluster.workloads = std::move(workloads);
    if (!host_set) cfg.cluster.server.host_power_watts = cfg.cluster.server.derived_host_watts();
    validate(cfg);
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(ConfigError::Kind::Parse, path, "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string serialize_config(const Config& cfg) {
    std::ostringstream os;
    const auto& c = cfg.cluster;
    const auto& g = c.server.gpu;
    os << "[cluster]\n"
       << "baseline_servers = " << c.baseline_servers << "\n"
       << "added_servers = " << c.added_servers << "\n"
       << "budget_watts = " << fmt_double(c.budget_watts) << "\n"
       << "provisioned_server_watts = " << fmt_double(c.provisioned_server_watts) << "\n"
       << "rng_seed = " << c.rng_seed << "\n"
       << "sim_duration_s = " << fmt_double(c.sim_duration_s) << "\n"
       << "power_sample_period_s = " << fmt_double(c.power_sample_period_s) << "\n"
       << "scale_load_with_servers = " << (c.scale_load_with_servers ? "true" : "false") << "\n"
       << "lp_server_fraction = " << fmt_double(c.lp_server_fraction) << "\n"
       << "gpus_per_server = " << c.server.gpus_per_server << "\n"
       << "gpu_power_share = " << fmt_double(c.server.gpu_power_share) << "\n"
       << "host_power_watts = " << fmt_double(c.server.host_power_watts) << "\n"
       << "gpu_tdp_watts = " << fmt_double(g.tdp_watts) << "\n"
       << "f_max = " << fmt_double(g.f_max) << "\n"
       << "f_base = " << fmt_double(g.f_base) << "\n"
       << "f_min = " << fmt_double(g.f_min) << "\n"
       << "idle_fraction = " << fmt_double(g.idle_fraction) << "\n\n";

    const auto& p = cfg.policy;
    os << "[policy]\n"
       << "t1 = " << fmt_double(p.t1) << "\n"
       << "t2 = " << fmt_double(p.t2) << "\n"
       << "t1_buffer = " << fmt_double(p.t1_buffer) << "\n"
       << "t2_buffer = " << fmt_double(p.t2_buffer) << "\n"
       << "f_lp_t1 = " << fmt_double(p.f_lp_t1) << "\n"
       << "f_lp_t2 = " << fmt_double(p.f_lp_t2) << "\n"
       << "f_hp_t2 = " << fmt_double(p.f_hp_t2) << "\n"
       << "f_brake = " << fmt_double(p.f_brake) << "\n"
       << "telemetry_delay_s = " << fmt_double(p.telemetry_delay_s) << "\n"
       << "oob_latency_s = " << fmt_double(p.oob_latency_s) << "\n"
       << "brake_latency_s = " << fmt_double(p.brake_latency_s) << "\n"
       << "control_period_s = " << fmt_double(p.control_period_s) << "\n\n";

    const auto& m = cfg.power;
    os << "[power_model]\n"
       << "p_token_frac = " << fmt_double(m.p_token_frac) << "\n"
       << "p_prompt_base_frac = " << fmt_double(m.p_prompt_base_frac) << "\n"
       << "prompt_overshoot_max = " << fmt_double(m.prompt_overshoot_max) << "\n"
       << "prompt_saturation_tokens = " << fmt_double(m.prompt_saturation_tokens) << "\n"
       << "gamma = " << fmt_double(m.gamma) << "\n"
       << "prompt_time_per_ktoken_s = " << fmt_double(m.prompt_time_per_ktoken_s) << "\n"
       << "token_time_s = " << fmt_double(m.token_time_s) << "\n"
       << "alpha_token = " << fmt_double(m.alpha_token) << "\n"
       << "dynamic_power_scale = " << fmt_double(m.dynamic_power_scale) << "\n"
       << "dvfs_points = ";
    for (std::size_t i = 0; i < m.dvfs_points.size(); ++i) {
        const auto& pt = m.dvfs_points[i];
        os << (i ? ", " : "") << fmt_double(pt.freq_mhz) << ":" << fmt_double(pt.power_scale) << ":"
           << fmt_double(pt.token_slowdown);
    }
    os << "\n\n";

    const auto& a = cfg.arrivals;
    os << "[arrivals]\n"
       << "base_rate = " << fmt_double(a.base_rate) << "\n"
       << "amplitude = " << fmt_double(a.amplitude) << "\n"
       << "period_s = " << fmt_double(a.period_s) << "\n"
       << "phase_s = " << fmt_double(a.phase_s) << "\n"
       << "noise_sigma = " << fmt_double(a.noise_sigma) << "\n"
       << "noise_block_s = " << fmt_double(a.noise_block_s) << "\n";

    for (const auto& w : c.workloads) {
        os << "\n[workload." << w.name << "]\n"
           << "prompt_min = " << w.prompt_min << "\n"
           << "prompt_max = " << w.prompt_max << "\n"
           << "output_min = " << w.output_min << "\n"
           << "output_max = " << w.output_max << "\n"
           << "mix_ratio = " << fmt_double(w.mix_ratio) << "\n"
           << "priority = " << rule_name(w.priority_rule) << "\n"
           << "low_fraction = " << fmt_double(w.low_fraction) << "\n"
           << "batch = " << w.batch << "\n";
    }
    return os.str();
}

void validate(const Config& cfg) {
    const auto& c = cfg.cluster;
    const auto& g = c.server.gpu;
    require(c.baseline_servers >= 1, "cluster.baseline_servers", "baseline_servers >= 1");
    require(c.added_servers >= 0, "cluster.added_servers", "added_servers >= 0");
    require(g.f_min > 0, "cluster.f_min", "f_min > 0");
    require(g.f_min <= g.f_base, "cluster.f_base", "f_min <= f_base");
    require(g.f_base <= g.f_max, "cluster.f_max", "f_base <= f_max");
    require(g.tdp_watts > 0, "cluster.gpu_tdp_watts", "gpu_tdp_watts > 0");
    require(g.idle_fraction > 0 && g.idle_fraction < 1, "cluster.idle_fraction", "0 < idle_fraction < 1");
    require(c.server.gpus_per_server >= 1, "cluster.gpus_per_server", "gpus_per_server >= 1");
    require(c.server.gpu_power_share > 0 && c.server.gpu_power_share < 1, "cluster.gpu_power_share",
            "0 < gpu_power_share < 1");
    require(c.server.host_power_watts >= 0, "cluster.host_power_watts", "host_power_watts >= 0");
    require(c.budget_watts >= 0, "cluster.budget_watts", "budget_watts >= 0");
    require(c.effective_budget_watts() > 0, "cluster.provisioned_server_watts", "provisioned_server_watts > 0");
    require(c.lp_server_fraction >= 0 && c.lp_server_fraction <= 1, "cluster.lp_server_fraction",
            "0 <= lp_server_fraction <= 1");
    require(c.sim_duration_s > 0, "cluster.sim_duration_s", "sim_duration_s > 0");
    require(c.power_sample_period_s > 0, "cluster.power_sample_period_s", "power_sample_period_s > 0");

    require(!c.workloads.empty(), "workload", "at least one workload class");
    double mix = 0.0;
    for (const auto& w : c.workloads) {
        const std::string k = "workload." + w.name;
        require(w.prompt_min >= 1, k + ".prompt_min", "prompt_min >= 1");
        require(w.prompt_min <= w.prompt_max, k + ".prompt_max", "prompt_min <= prompt_max");
        require(w.output_min >= 1, k + ".output_min", "output_min >= 1");
        require(w.output_min <= w.output_max, k + ".output_max", "output_min <= output_max");
        require(w.mix_ratio >= 0, k + ".mix_ratio", "mix_ratio >= 0");
        require(w.low_fraction >= 0 && w.low_fraction <= 1, k + ".low_fraction", "0 <= low_fraction <= 1");
        require(w.batch >= 1, k + ".batch", "batch >= 1");
        mix += w.mix_ratio;
    }
    require(std::abs(mix - 1.0) <= 1e-9, "workload.mix_ratio", "sum of mix_ratio = 1");

    const auto& p = cfg.policy;
    require(p.t1 > 0, "policy.t1", "t1 > 0");
    require(p.t1 < p.t2, "policy.t1", "t1 < t2");
    require(p.t2 <= 1.0, "policy.t2", "t2 <= 1.0");
    require(p.t1_buffer > 0, "policy.t1_buffer", "t1_buffer > 0");
    require(p.t2_buffer > 0, "policy.t2_buffer", "t2_buffer > 0");
    require(p.t1 - p.t1_buffer > 0, "policy.t1_buffer", "t1 - t1_buffer > 0");
    require(p.t2 - p.t2_buffer > p.t1, "policy.t2_buffer", "t2 - t2_buffer > t1");
    require(p.f_brake >= g.f_min, "policy.f_brake", "f_brake >= f_min");
    require(p.f_brake < p.f_lp_t2, "policy.f_brake", "f_brake < f_lp_t2");
    require(p.f_lp_t2 < p.f_lp_t1, "policy.f_lp_t2", "f_lp_t2 < f_lp_t1");
    require(p.f_lp_t1 <= g.f_base, "policy.f_lp_t1", "f_lp_t1 <= f_base");
    require(p.f_hp_t2 >= g.f_min, "policy.f_hp_t2", "f_hp_t2 >= f_min");
    require(p.f_hp_t2 <= g.f_max, "policy.f_hp_t2", "f_hp_t2 <= f_max");
    require(p.telemetry_delay_s >= 0, "policy.telemetry_delay_s", "telemetry_delay_s >= 0");
    require(p.oob_latency_s >= 0, "policy.oob_latency_s", "oob_latency_s >= 0");
    require(p.brake_latency_s >= 0, "policy.brake_latency_s", "brake_latency_s >= 0");
    require(p.control_period_s > 0, "policy.control_period_s", "control_period_s > 0");

    const auto& m = cfg.power;
    require(g.idle_fraction <= m.p_token_frac, "power_model.p_token_frac", "idle_fraction <= p_token_frac");
    require(m.p_token_frac < m.p_prompt_base_frac, "power_model.p_prompt_base_frac",
            "p_token_frac < p_prompt_base_frac");
    require(m.p_prompt_base_frac <= m.prompt_overshoot_max, "power_model.prompt_overshoot_max",
            "p_prompt_base_frac <= prompt_overshoot_max");
    require(m.prompt_saturation_tokens > kPromptBaseTokens, "power_model.prompt_saturation_tokens",
            "prompt_saturation_tokens > 256");
    require(m.gamma > 0, "power_model.gamma", "gamma > 0");
    require(m.alpha_token >= 0 && m.alpha_token <= 1, "power_model.alpha_token", "0 <= alpha_token <= 1");
    require(m.prompt_time_per_ktoken_s > 0, "power_model.prompt_time_per_ktoken_s", "prompt_time_per_ktoken_s > 0");
    require(m.token_time_s > 0, "power_model.token_time_s", "token_time_s > 0");
    require(m.dynamic_power_scale > 0, "power_model.dynamic_power_scale", "dynamic_power_scale > 0");
    double prev_f = g.f_max, prev_s = 1.0, prev_m = 1.0;
    for (const auto& pt : m.dvfs_points) {
        require(pt.freq_mhz > g.f_min && pt.freq_mhz < prev_f, "power_model.dvfs_points",
                "dvfs_points strictly descending within (f_min, f_max)");
        require(pt.power_scale > 0 && pt.power_scale <= prev_s, "power_model.dvfs_points",
                "dvfs power_scale non-increasing in (0, 1]");
        require(pt.token_slowdown >= prev_m, "power_model.dvfs_points", "dvfs token_slowdown non-decreasing >= 1");
        prev_f = pt.freq_mhz;
        prev_s = pt.power_scale;
        prev_m = pt.token_slowdown;
    }

    const auto& a = cfg.arrivals;
    require(a.base_rate >= 0, "arrivals.base_rate", "base_rate >= 0");
    require(a.amplitude >= 0 && a.amplitude < 1, "arrivals.amplitude", "0 <= amplitude < 1");
    require(a.period_s > 0, "arrivals.period_s", "period_s > 0");
    require(a.noise_sigma >= 0, "arrivals.noise_sigma", "noise_sigma >= 0");
    require(a.noise_block_s > 0, "arrivals.noise_block_s", "noise_block_s > 0");
}

void apply_env_overrides(Config& cfg) {
    if (const char* seed = std::getenv("POLCA_SEED"); seed && *seed) {
        std::string v(seed);
        std::uint64_t out = 0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
            throw ConfigError(ConfigError::Kind::Parse, "POLCA_SEED", "expected an unsigned integer, got '" + v + "'");
        cfg.cluster.rng_seed = out;
    }
}

}  // namespace polca
