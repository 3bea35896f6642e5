#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polca/types.hpp"

namespace polca {

// One calibrated operating point of the DVFS curve.
struct DvfsPoint {
    double freq_mhz = 0.0;
    double power_scale = 1.0;     // share of dynamic (above-idle) power kept
    double token_slowdown = 1.0;  // token-phase time multiplier vs f_max

    bool operator==(const DvfsPoint&) const = default;
};

struct PowerModelParams {
    double p_token_frac = 0.55;
    double p_prompt_base_frac = 0.75;
    double prompt_overshoot_max = 1.05;
    double prompt_saturation_tokens = 8192.0;
    double gamma = 1.37;
    double prompt_time_per_ktoken_s = 0.1;
    double token_time_s = 0.05;
    double alpha_token = 0.42;
    // Multiplier on dynamic power; 1.05 models workloads 5% more power hungry.
    double dynamic_power_scale = 1.0;
    // Interior DVFS points, sorted by descending frequency. Empty means the
    // pure power laws x^gamma and (f_max/f)^alpha_token are used everywhere.
    std::vector<DvfsPoint> dvfs_points;

    bool operator==(const PowerModelParams&) const = default;
};

// Parameters produced by calibrating against the shipped anchors.
PowerModelParams default_power_model();

// Reference prompt token count where prompt power equals p_prompt_base_frac.
inline constexpr double kPromptBaseTokens = 256.0;

// Multiplier in [0, 1] on dynamic GPU power at frequency f. Throws
// std::out_of_range outside [f_min, f_max].
double freq_power_scale(double f_mhz, const GpuSpec& gpu, const PowerModelParams& params);

// Token-phase time multiplier relative to f_max (>= 1).
double token_slowdown(double f_mhz, const GpuSpec& gpu, const PowerModelParams& params);

// Prompt phase is compute bound: time scales with f_max / f.
inline double prompt_slowdown(double f_mhz, const GpuSpec& gpu) { return gpu.f_max / f_mhz; }

// Uncapped prompt power (fraction of TDP) as a function of prompt_tokens * batch.
double prompt_peak_fraction(double effective_tokens, const PowerModelParams& params);

double gpu_power_fraction(Phase phase, double effective_tokens, double f_mhz, const GpuSpec& gpu,
                          const PowerModelParams& params);

// Host power plus each GPU's fraction of TDP.
double server_power(std::span<const double> gpu_fractions, const ServerSpec& spec);

// Same as server_power with every GPU at the same fraction.
double server_power_uniform(double gpu_fraction, const ServerSpec& spec);

// Work content of a request's phases, in seconds at f_max.
double prompt_work_s(int prompt_tokens, int batch, const PowerModelParams& params);
double token_work_s(int output_tokens, const PowerModelParams& params);

// Piecewise-constant frequency: segment i starts at start_s (relative to the
// request start) and lasts until the next segment. The first segment must start at 0.
struct FreqSegment {
    double start_s = 0.0;
    double freq_mhz = 0.0;
};

struct LatencyBreakdown {
    double prompt_s = 0.0;
    double token_s = 0.0;
    double total_s() const { return prompt_s + token_s; }
};

LatencyBreakdown request_latency(const InferenceRequest& req, std::span<const FreqSegment> profile,
                                 const GpuSpec& gpu, const PowerModelParams& params);

LatencyBreakdown request_latency_at(const InferenceRequest& req, double f_mhz, const GpuSpec& gpu,
                                    const PowerModelParams& params);

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationAnchor {
    double freq_mhz = 0.0;
    double power_reduction = 0.0;  // relative prompt-peak reduction, 0.13 = 13%; NaN = latency only
    double perf_reduction = 0.0;   // relative end-to-end latency increase
};

struct CalibrationRequest {
    int prompt_tokens = 8192;
    int output_tokens = 128;
    int batch = 1;
};

struct AnchorResidual {
    CalibrationAnchor anchor;
    double power_reduction = 0.0;
    double perf_reduction = 0.0;
};

class CalibrationError : public std::runtime_error {
  public:
    CalibrationError(const std::string& what, std::vector<AnchorResidual> residuals)
        : std::runtime_error(what), residuals_(std::move(residuals)) {}
    const std::vector<AnchorResidual>& residuals() const { return residuals_; }

  private:
    std::vector<AnchorResidual> residuals_;
};

// Relative prompt-peak power reduction at f for the calibration request.
double peak_power_reduction(double f_mhz, const CalibrationRequest& req, const GpuSpec& gpu,
                            const PowerModelParams& params);
// Relative end-to-end latency increase at constant f for the calibration request.
double latency_increase(double f_mhz, const CalibrationRequest& req, const GpuSpec& gpu,
                        const PowerModelParams& params);

// Fits the frequency response to the anchors (each within `tolerance`
// absolute). Tries the two-exponent power law first; if that cannot meet every
// anchor it places calibrated DVFS points at the anchor frequencies.
// Throws CalibrationError with per-anchor residuals when no monotone fit exists.
PowerModelParams calibrate(std::span<const CalibrationAnchor> anchors, const GpuSpec& gpu,
                           PowerModelParams base = {}, const CalibrationRequest& req = {},
                           double tolerance = 0.01);

std::vector<CalibrationAnchor> default_anchors();
std::vector<CalibrationAnchor> read_anchors_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Reactive power capping, for comparison with frequency capping only: the
// limiter engages once power has been above the cap for reaction_s, so
// shorter spikes pass through untouched.
std::vector<double> apply_power_cap(std::span<const double> watts, double sample_period_s,
                                    double cap_watts, double reaction_s);

}  // namespace polca
