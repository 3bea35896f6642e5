#include "polca/workload.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "polca/power_model.hpp"

namespace polca {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x504f4cu};
    return Rng(seq);
}

InferenceRequest sample_request(std::span<const WorkloadClass> mix, Rng& rng) {
    if (mix.empty()) throw std::invalid_argument("sample_request: empty workload mix");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double total = 0.0;
    for (const auto& w : mix) total += w.mix_ratio;
    double pick = u01(rng) * total;
    std::size_t idx = mix.size() - 1;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        if (mix[i].mix_ratio <= 0.0) continue;
        if (pick < mix[i].mix_ratio) {
            idx = i;
            break;
        }
        pick -= mix[i].mix_ratio;
    }
    while (mix[idx].mix_ratio <= 0.0 && idx > 0) --idx;
    const auto& w = mix[idx];

    InferenceRequest r;
    r.cls = w.name;
    r.prompt_tokens = std::uniform_int_distribution<int>(w.prompt_min, w.prompt_max)(rng);
    r.output_tokens = std::uniform_int_distribution<int>(w.output_min, w.output_max)(rng);
    r.batch = w.batch;
    const double p_low = w.low_probability();
    if (p_low >= 1.0) r.priority = Priority::Low;
    else if (p_low <= 0.0) r.priority = Priority::High;
    else r.priority = u01(rng) < p_low ? Priority::Low : Priority::High;
    return r;
}

std::vector<double> generate_arrivals(const DiurnalProfile& profile, double duration_s, Rng& rng) {
    std::vector<double> out;
    if (duration_s <= 0.0 || profile.base_rate <= 0.0) return out;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double sigma = profile.noise_sigma;
    for (double block = 0.0; block < duration_s; block += profile.noise_block_s) {
        // Mean-one lognormal multiplier for this block.
        const double factor = std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
        const double end = std::min(block + profile.noise_block_s, duration_s);
        const double lambda_max = profile.base_rate * (1.0 + profile.amplitude) * factor;
        if (lambda_max <= 0.0) continue;
        std::exponential_distribution<double> gap(lambda_max);
        double t = block;
        while (true) {
            t += gap(rng);
            if (t >= end) break;
            const double rate = profile.rate_at(t) * factor;
            if (u01(rng) * lambda_max < rate && (out.empty() || t > out.back())) out.push_back(t);
        }
    }
    return out;
}

double load_scale(const ClusterConfig& cluster) {
    return cluster.scale_load_with_servers
               ? static_cast<double>(cluster.total_servers()) / cluster.baseline_servers
               : 1.0;
}

Trace generate_trace(const Config& cfg, const DiurnalProfile& profile) {
    DiurnalProfile scaled = profile;
    scaled.base_rate *= load_scale(cfg.cluster);
    Rng arrivals_rng = make_rng(cfg.cluster.rng_seed, 1);
    Rng shape_rng = make_rng(cfg.cluster.rng_seed, 2);
    const auto times = generate_arrivals(scaled, cfg.cluster.sim_duration_s, arrivals_rng);
    Trace trace;
    trace.reserve(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        InferenceRequest r = sample_request(cfg.cluster.workloads, shape_rng);
        r.id = static_cast<std::int64_t>(i);
        r.arrival_s = times[i];
        trace.push_back(std::move(r));
    }
    return trace;
}

Trace generate_trace(const Config& cfg) { return generate_trace(cfg, cfg.arrivals); }

MixWork expected_work(std::span<const WorkloadClass> mix, const PowerModelParams& params) {
    MixWork out;
    double total = 0.0;
    for (const auto& w : mix) total += w.mix_ratio;
    if (total <= 0.0) return out;
    for (const auto& w : mix) {
        const double prompt = prompt_work_s(1, w.batch, params) * 0.5 * (w.prompt_min + w.prompt_max);
        const double token = token_work_s(1, params) * 0.5 * (w.output_min + w.output_max);
        const double work = (w.mix_ratio / total) * (prompt + token);
        out.low_s += work * w.low_probability();
        out.high_s += work * (1.0 - w.low_probability());
    }
    return out;
}

std::vector<WorkloadClass> mix_with_lp_fraction(std::span<const WorkloadClass> mix, double lp_fraction) {
    if (!(lp_fraction >= 0.0 && lp_fraction <= 1.0))
        throw std::invalid_argument("lp_fraction must lie in [0, 1]");
    double low = 0.0, total = 0.0;
    for (const auto& w : mix) {
        low += w.mix_ratio * w.low_probability();
        total += w.mix_ratio;
    }
    const double high = total - low;
    if ((lp_fraction > 0.0 && low <= 0.0) || (lp_fraction < 1.0 && high <= 0.0))
        throw std::invalid_argument("mix has no requests of a priority needed for lp_fraction");
    std::vector<WorkloadClass> out(mix.begin(), mix.end());
    double sum = 0.0;
    for (auto& w : out) {
        const double p = w.low_probability();
        const double l = low > 0.0 ? w.mix_ratio * p * lp_fraction / low : 0.0;
        const double h = high > 0.0 ? w.mix_ratio * (1.0 - p) * (1.0 - lp_fraction) / high : 0.0;
        w.mix_ratio = l + h;
        if (w.priority_rule == PriorityRule::Split) w.low_fraction = w.mix_ratio > 0.0 ? l / w.mix_ratio : 0.5;
        sum += w.mix_ratio;
    }
    // Renormalize away rounding so the ratios sum to one.
    for (auto& w : out) w.mix_ratio /= sum;
    return out;
}

std::string trace_to_csv(const Trace& trace) {
    std::ostringstream os;
    os << "id,arrival_s,class,prompt_tokens,output_tokens,batch,priority\n";
    os << std::setprecision(17);
    for (const auto& r : trace)
        os << r.id << ',' << r.arrival_s << ',' << r.cls << ',' << r.prompt_tokens << ',' << r.output_tokens << ','
           << r.batch << ',' << to_string(r.priority) << '\n';
    return os.str();
}

void write_trace_csv(const Trace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trace file '" + path + "'");
    out << trace_to_csv(trace);
    if (!out) throw std::runtime_error("error writing trace file '" + path + "'");
}

Trace read_trace_csv(const std::string& path, std::span<const WorkloadClass> mix) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) return {};
    if (line.rfind("id,arrival_s,class", 0) != 0) throw std::runtime_error(path + ": missing trace header");
    Trace trace;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        const std::string where = path + ":" + std::to_string(lineno);
        if (cols.size() != 7) throw std::runtime_error(where + ": expected 7 columns");
        InferenceRequest r;
        try {
            r.id = std::stoll(cols[0]);
            r.arrival_s = std::stod(cols[1]);
            r.cls = cols[2];
            r.prompt_tokens = std::stoi(cols[3]);
            r.output_tokens = std::stoi(cols[4]);
            r.batch = std::stoi(cols[5]);
            r.priority = parse_priority(cols[6]);
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        if (r.prompt_tokens < 1 || r.output_tokens < 0 || r.batch < 1)
            throw std::runtime_error(where + ": token counts out of range");
        if (!trace.empty() && r.arrival_s < trace.back().arrival_s)
            throw std::runtime_error(where + ": trace not sorted by arrival");
        if (!mix.empty()) {
            bool known = false;
            for (const auto& w : mix) known = known || w.name == r.cls;
            if (!known) throw std::runtime_error(where + ": unknown workload class '" + r.cls + "'");
        }
        trace.push_back(std::move(r));
    }
    return trace;
}

std::uint64_t trace_hash(const Trace& trace) {
    // FNV-1a over the canonical CSV text.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : trace_to_csv(trace)) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

PowerSeries read_reference_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open reference file '" + path + "'");
    std::string line;
    std::vector<double> times;
    PowerSeries out;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 && line.rfind("t_s", 0) == 0) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected t_s,power_norm");
        try {
            times.push_back(std::stod(line.substr(0, comma)));
            out.values.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    if (times.size() >= 2) out.period_s = times[1] - times[0];
    for (std::size_t i = 1; i < times.size(); ++i)
        if (std::abs((times[i] - times[i - 1]) - out.period_s) > 1e-6 * out.period_s)
            throw std::runtime_error(path + ": reference series must have a constant step");
    return out;
}

void write_reference_csv(const PowerSeries& series, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write reference file '" + path + "'");
    out << "t_s,power_norm\n" << std::setprecision(17);
    for (std::size_t i = 0; i < series.values.size(); ++i) out << i * series.period_s << ',' << series.values[i] << '\n';
}

double mape(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("mape: series lengths differ");
    if (a.empty()) throw std::invalid_argument("mape: empty series");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (b[i] == 0.0) throw std::invalid_argument("mape: zero in reference series");
        sum += std::abs(a[i] - b[i]) / std::abs(b[i]);
    }
    return 100.0 * sum / static_cast<double>(a.size());
}

std::vector<double> block_means(std::span<const double> values, std::size_t per_block) {
    std::vector<double> out;
    if (per_block == 0) return out;
    for (std::size_t i = 0; i + per_block <= values.size(); i += per_block) {
        double s = 0.0;
        for (std::size_t j = i; j < i + per_block; ++j) s += values[j];
        out.push_back(s / static_cast<double>(per_block));
    }
    return out;
}

double max_rise(std::span<const double> values, double period_s, double window_s) {
    const auto w = static_cast<std::size_t>(std::llround(window_s / period_s));
    std::deque<std::size_t> mins;  // indices with increasing values
    double best = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
        while (!mins.empty() && mins.front() + w < j) mins.pop_front();
        if (!mins.empty()) best = std::max(best, values[j] - values[mins.front()]);
        while (!mins.empty() && values[mins.back()] >= values[j]) mins.pop_back();
        mins.push_back(j);
    }
    return best;
}

PowerSeries build_reference(const ReferenceShape& shape) {
    PowerSeries out;
    out.period_s = shape.step_s;
    const auto n = static_cast<std::size_t>(std::llround(shape.days * 86400.0 / shape.step_s));
    Rng rng = make_rng(shape.seed, 7);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double mid = 0.5 * (shape.peak + shape.trough);
    const double amp = 0.5 * (shape.peak - shape.trough);
    double ar = 0.0;
    double hi = 0.0;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = i * shape.step_s;
        ar = shape.noise_rho * ar + shape.noise_sigma * std::sqrt(1.0 - shape.noise_rho * shape.noise_rho) * normal(rng);
        out.values[i] = mid + amp * std::sin(2.0 * std::numbers::pi * (t - shape.phase_s) / 86400.0) + ar;
        hi = std::max(hi, out.values[i]);
    }
    for (double& v : out.values) v *= shape.peak / hi;
    return out;
}

}  // namespace polca
