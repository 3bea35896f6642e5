#include "polca/power_model.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace polca {

namespace {

void check_range(double f_mhz, const GpuSpec& gpu) {
    // Small slack so that values computed as f_max * k round-trip.
    constexpr double eps = 1e-9;
    if (!(f_mhz >= gpu.f_min - eps && f_mhz <= gpu.f_max + eps)) {
        std::ostringstream os;
        os << "frequency " << f_mhz << " MHz outside [" << gpu.f_min << ", " << gpu.f_max << "]";
        throw std::out_of_range(os.str());
    }
}

double clamp_freq(double f_mhz, const GpuSpec& gpu) { return std::clamp(f_mhz, gpu.f_min, gpu.f_max); }

}  // namespace

namespace {

// Piecewise-linear curve through (f_min, at_min), the DVFS points and (f_max, 1).
template <class Get>
double dvfs_curve(double f_mhz, const GpuSpec& gpu, const std::vector<DvfsPoint>& pts, double at_min, Get get) {
    double hi_f = gpu.f_max, hi_v = 1.0;
    for (const auto& p : pts) {
        if (f_mhz >= p.freq_mhz) {
            const double w = (f_mhz - p.freq_mhz) / (hi_f - p.freq_mhz);
            return get(p) + w * (hi_v - get(p));
        }
        hi_f = p.freq_mhz;
        hi_v = get(p);
    }
    const double w = (f_mhz - gpu.f_min) / (hi_f - gpu.f_min);
    return at_min + w * (hi_v - at_min);
}

}  // namespace

double freq_power_scale(double f_mhz, const GpuSpec& gpu, const PowerModelParams& params) {
    check_range(f_mhz, gpu);
    f_mhz = clamp_freq(f_mhz, gpu);
    if (params.dvfs_points.empty()) {
        double x = (f_mhz - gpu.f_min) / (gpu.f_max - gpu.f_min);
        return std::pow(x, params.gamma);
    }
    return dvfs_curve(f_mhz, gpu, params.dvfs_points, 0.0, [](const DvfsPoint& p) { return p.power_scale; });
}

double token_slowdown(double f_mhz, const GpuSpec& gpu, const PowerModelParams& params) {
    check_range(f_mhz, gpu);
    f_mhz = clamp_freq(f_mhz, gpu);
    if (params.dvfs_points.empty()) return std::pow(gpu.f_max / f_mhz, params.alpha_token);
    // At the bottom of the range the token phase is compute bound.
    const double at_min = gpu.f_max / gpu.f_min;
    return dvfs_curve(f_mhz, gpu, params.dvfs_points, at_min, [](const DvfsPoint& p) { return p.token_slowdown; });
}

double prompt_peak_fraction(double effective_tokens, const PowerModelParams& params) {
    if (effective_tokens <= kPromptBaseTokens) return params.p_prompt_base_frac;
    if (effective_tokens >= params.prompt_saturation_tokens) return params.prompt_overshoot_max;
    double w = (effective_tokens - kPromptBaseTokens) / (params.prompt_saturation_tokens - kPromptBaseTokens);
    return params.p_prompt_base_frac + w * (params.prompt_overshoot_max - params.p_prompt_base_frac);
}

double gpu_power_fraction(Phase phase, double effective_tokens, double f_mhz, const GpuSpec& gpu,
                          const PowerModelParams& params) {
    const double idle = gpu.idle_fraction;
    switch (phase) {
        case Phase::Idle:
        case Phase::Brake: return idle;
        case Phase::Token:
            return idle + (params.p_token_frac - idle) * params.dynamic_power_scale *
                              freq_power_scale(f_mhz, gpu, params);
        case Phase::Prompt:
            return idle + (prompt_peak_fraction(effective_tokens, params) - idle) * params.dynamic_power_scale *
                              freq_power_scale(f_mhz, gpu, params);
    }
    return idle;
}

double server_power(std::span<const double> gpu_fractions, const ServerSpec& spec) {
    if (static_cast<int>(gpu_fractions.size()) != spec.gpus_per_server) {
        std::ostringstream os;
        os << "server_power: got " << gpu_fractions.size() << " GPU fractions, server has "
           << spec.gpus_per_server << " GPUs";
        throw std::invalid_argument(os.str());
    }
    double watts = spec.host_power_watts;
    for (double f : gpu_fractions) watts += f * spec.gpu.tdp_watts;
    return watts;
}

double server_power_uniform(double gpu_fraction, const ServerSpec& spec) {
    return spec.host_power_watts + spec.gpus_per_server * gpu_fraction * spec.gpu.tdp_watts;
}

double prompt_work_s(int prompt_tokens, int batch, const PowerModelParams& params) {
    return params.prompt_time_per_ktoken_s * (static_cast<double>(prompt_tokens) * batch / 1024.0);
}

double token_work_s(int output_tokens, const PowerModelParams& params) {
    return static_cast<double>(output_tokens) * params.token_time_s;
}

LatencyBreakdown request_latency(const InferenceRequest& req, std::span<const FreqSegment> profile,
                                 const GpuSpec& gpu, const PowerModelParams& params) {
    if (profile.empty() || profile.front().start_s != 0.0)
        throw std::invalid_argument("request_latency: profile must start at 0");

    double prompt_left = prompt_work_s(req.prompt_tokens, req.batch, params);
    double token_left = token_work_s(req.output_tokens, params);
    LatencyBreakdown out;
    double t = 0.0;
    for (std::size_t i = 0; i < profile.size(); ++i) {
        const double f = profile[i].freq_mhz;
        const double seg_end = i + 1 < profile.size() ? profile[i + 1].start_s
                                                      : std::numeric_limits<double>::infinity();
        // Prompt work progresses at f / f_max, token work at 1 / slowdown.
        if (prompt_left > 0.0) {
            const double rate = 1.0 / prompt_slowdown(f, gpu);
            const double need = prompt_left / rate;
            if (t + need <= seg_end) {
                t += need;
                prompt_left = 0.0;
                out.prompt_s = t;
            } else {
                prompt_left -= (seg_end - t) * rate;
                t = seg_end;
                continue;
            }
        }
        if (token_left > 0.0) {
            const double rate = 1.0 / token_slowdown(f, gpu, params);
            const double need = token_left / rate;
            if (t + need <= seg_end) {
                t += need;
                token_left = 0.0;
                break;
            }
            token_left -= (seg_end - t) * rate;
            t = seg_end;
        } else {
            break;
        }
    }
    out.token_s = t - out.prompt_s;
    return out;
}

LatencyBreakdown request_latency_at(const InferenceRequest& req, double f_mhz, const GpuSpec& gpu,
                                    const PowerModelParams& params) {
    const FreqSegment seg{0.0, f_mhz};
    return request_latency(req, std::span<const FreqSegment>(&seg, 1), gpu, params);
}

// ---------------------------------------------------------------------------

double peak_power_reduction(double f_mhz, const CalibrationRequest& req, const GpuSpec& gpu,
                            const PowerModelParams& params) {
    const double tokens = static_cast<double>(req.prompt_tokens) * req.batch;
    const double p0 = gpu_power_fraction(Phase::Prompt, tokens, gpu.f_max, gpu, params);
    const double pf = gpu_power_fraction(Phase::Prompt, tokens, f_mhz, gpu, params);
    return (p0 - pf) / p0;
}

double latency_increase(double f_mhz, const CalibrationRequest& req, const GpuSpec& gpu,
                        const PowerModelParams& params) {
    InferenceRequest r;
    r.prompt_tokens = req.prompt_tokens;
    r.output_tokens = req.output_tokens;
    r.batch = req.batch;
    const double t0 = request_latency_at(r, gpu.f_max, gpu, params).total_s();
    const double tf = request_latency_at(r, f_mhz, gpu, params).total_s();
    return (tf - t0) / t0;
}

namespace {

// Golden-section search for the minimum of a unimodal function on [lo, hi].
template <class F>
double golden_min(F&& fn, double lo, double hi, int iters = 200) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = fn(c), fd = fn(d);
    for (int i = 0; i < iters && b - a > 1e-12; ++i) {
        if (fc < fd) {
            b = d; d = c; fd = fc;
            c = b - g * (b - a); fc = fn(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + g * (b - a); fd = fn(d);
        }
    }
    return (a + b) / 2.0;
}

std::vector<AnchorResidual> residuals_of(std::span<const CalibrationAnchor> anchors, const CalibrationRequest& req,
                                         const GpuSpec& gpu, const PowerModelParams& p) {
    std::vector<AnchorResidual> out;
    for (const auto& a : anchors)
        out.push_back({a, peak_power_reduction(a.freq_mhz, req, gpu, p), latency_increase(a.freq_mhz, req, gpu, p)});
    return out;
}

bool within(const std::vector<AnchorResidual>& rs, double tol) {
    return std::all_of(rs.begin(), rs.end(), [&](const AnchorResidual& r) {
        const bool power_ok =
            std::isnan(r.anchor.power_reduction) || std::abs(r.power_reduction - r.anchor.power_reduction) <= tol;
        return power_ok && std::abs(r.perf_reduction - r.anchor.perf_reduction) <= tol;
    });
}

}  // namespace

PowerModelParams calibrate(std::span<const CalibrationAnchor> anchors, const GpuSpec& gpu, PowerModelParams base,
                           const CalibrationRequest& req, double tolerance) {
    if (anchors.empty()) throw std::invalid_argument("calibrate: no anchors");
    for (const auto& a : anchors) {
        if (a.freq_mhz < gpu.f_min || a.freq_mhz > gpu.f_max) {
            std::ostringstream os;
            os << "calibrate: anchor frequency " << a.freq_mhz << " MHz outside the supported range";
            throw std::invalid_argument(os.str());
        }
    }

    // Power law: gamma and alpha_token each by least squares.
    PowerModelParams law = base;
    law.dvfs_points.clear();
    law.gamma = golden_min(
        [&](double lg) {
            PowerModelParams p = law;
            p.gamma = std::exp(lg);
            double s = 0.0;
            for (const auto& a : anchors) {
                if (std::isnan(a.power_reduction)) continue;
                double r = peak_power_reduction(a.freq_mhz, req, gpu, p) - a.power_reduction;
                s += r * r;
            }
            return s;
        },
        std::log(0.02), std::log(50.0));
    law.gamma = std::exp(law.gamma);
    law.alpha_token = golden_min(
        [&](double alpha) {
            PowerModelParams p = law;
            p.alpha_token = alpha;
            double s = 0.0;
            for (const auto& a : anchors) {
                double r = latency_increase(a.freq_mhz, req, gpu, p) - a.perf_reduction;
                s += r * r;
            }
            return s;
        },
        0.0, 1.0);

    auto law_res = residuals_of(anchors, req, gpu, law);
    if (within(law_res, tolerance)) return law;

    // Calibrated DVFS points at the anchor frequencies.
    std::vector<CalibrationAnchor> sorted(anchors.begin(), anchors.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.freq_mhz > b.freq_mhz; });

    const double tokens = static_cast<double>(req.prompt_tokens) * req.batch;
    const double idle = gpu.idle_fraction;
    const double peak = prompt_peak_fraction(tokens, base);
    const double dyn = (peak - idle) * base.dynamic_power_scale;
    const double p_uncapped = idle + dyn;
    const double prompt0 = prompt_work_s(req.prompt_tokens, req.batch, base);
    const double token0 = token_work_s(req.output_tokens, base);

    PowerModelParams fit = base;
    fit.gamma = law.gamma;
    fit.alpha_token = law.alpha_token;
    fit.dvfs_points.clear();
    double prev_scale = 1.0, prev_slow = 1.0;
    bool monotone = dyn > 0.0 && token0 > 0.0;
    for (const auto& a : sorted) {
        if (a.freq_mhz >= gpu.f_max) {
            monotone = monotone && (std::isnan(a.power_reduction) || a.power_reduction == 0.0) &&
                       a.perf_reduction == 0.0;
            continue;
        }
        if (!monotone) break;
        // Latency-only anchors get their power scale interpolated below.
        const double scale = std::isnan(a.power_reduction) ? std::numeric_limits<double>::quiet_NaN()
                                                           : 1.0 - a.power_reduction * p_uncapped / dyn;
        const double slow =
            ((1.0 + a.perf_reduction) * (prompt0 + token0) - prompt0 * prompt_slowdown(a.freq_mhz, gpu)) / token0;
        if (!(std::isnan(scale) || (scale > 0.0 && scale <= prev_scale)) || !(slow >= prev_slow) ||
            slow > gpu.f_max / gpu.f_min) {
            monotone = false;
            break;
        }
        fit.dvfs_points.push_back({a.freq_mhz, scale, slow});
        if (!std::isnan(scale)) prev_scale = scale;
        prev_slow = slow;
    }
    if (monotone && !fit.dvfs_points.empty()) {
        auto& pts = fit.dvfs_points;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (!std::isnan(pts[i].power_scale)) continue;
            double f_hi = gpu.f_max, s_hi = 1.0, f_lo = gpu.f_min, s_lo = 0.0;
            for (std::size_t j = i; j-- > 0;)
                if (!std::isnan(pts[j].power_scale)) { f_hi = pts[j].freq_mhz; s_hi = pts[j].power_scale; break; }
            for (std::size_t j = i + 1; j < pts.size(); ++j)
                if (!std::isnan(pts[j].power_scale)) { f_lo = pts[j].freq_mhz; s_lo = pts[j].power_scale; break; }
            pts[i].power_scale = s_lo + (s_hi - s_lo) * (pts[i].freq_mhz - f_lo) / (f_hi - f_lo);
        }
        auto fit_res = residuals_of(anchors, req, gpu, fit);
        if (within(fit_res, tolerance)) return fit;
        law_res = std::move(fit_res);
    }

    std::ostringstream os;
    os << "calibrate: anchors infeasible;";
    for (const auto& r : law_res)
        os << " [" << r.anchor.freq_mhz << " MHz: power " << r.power_reduction << " vs " << r.anchor.power_reduction
           << ", perf " << r.perf_reduction << " vs " << r.anchor.perf_reduction << "]";
    throw CalibrationError(os.str(), law_res);
}

std::vector<CalibrationAnchor> default_anchors() {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {{1305.0, nan, 0.01}, {1275.0, 0.13, 0.05}, {1110.0, 0.20, 0.07}};
}

PowerModelParams default_power_model() {
    static const PowerModelParams params = [] {
        auto anchors = default_anchors();
        return calibrate(anchors, GpuSpec{});
    }();
    return params;
}

std::vector<CalibrationAnchor> read_anchors_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open anchors file '" + path + "'");
    std::vector<CalibrationAnchor> out;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    // Columns: freq_mhz,power_reduction,perf_reduction. An empty or "nan"
    // power field marks a latency-only anchor.
    auto field = [&](const std::string& text, bool allow_nan, double& value) {
        std::string t;
        for (char c : text)
            if (!std::isspace(static_cast<unsigned char>(c))) t += c;
        if (allow_nan && (t.empty() || t == "nan" || t == "NaN")) {
            value = std::numeric_limits<double>::quiet_NaN();
            return true;
        }
        char* end = nullptr;
        value = std::strtod(t.c_str(), &end);
        return !t.empty() && end == t.c_str() + t.size();
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        CalibrationAnchor a;
        const bool ok = cols.size() == 3 && field(cols[0], false, a.freq_mhz) &&
                        field(cols[1], true, a.power_reduction) && field(cols[2], false, a.perf_reduction);
        if (!ok) {
            if (out.empty() && !header_seen) {
                header_seen = true;
                continue;
            }
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected freq_mhz,power_reduction,perf_reduction");
        }
        out.push_back(a);
    }
    return out;
}

std::vector<double> apply_power_cap(std::span<const double> watts, double sample_period_s, double cap_watts,
                                    double reaction_s) {
    std::vector<double> out(watts.begin(), watts.end());
    double above_s = 0.0;
    for (double& w : out) {
        if (w > cap_watts) {
            above_s += sample_period_s;
            if (above_s > reaction_s) w = cap_watts;
        } else {
            above_s = 0.0;
        }
    }
    return out;
}

}  // namespace polca
