#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "polca/config.hpp"
#include "polca/types.hpp"

namespace polca {

using Rng = std::mt19937_64;

// Independent, reproducible stream `stream` of generator `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

// Class by mix_ratio, token counts uniform over the class ranges, priority by rule.
// The returned request has id 0 and arrival_s 0.
InferenceRequest sample_request(std::span<const WorkloadClass> mix, Rng& rng);

// Nonhomogeneous Poisson arrivals by thinning; strictly increasing.
std::vector<double> generate_arrivals(const DiurnalProfile& profile, double duration_s, Rng& rng);

// Arrival-rate multiplier applied to cfg.arrivals for this row.
double load_scale(const ClusterConfig& cluster);

// Full trace for the config: arrivals from stream 1, request shapes from stream 2.
Trace generate_trace(const Config& cfg);
Trace generate_trace(const Config& cfg, const DiurnalProfile& profile);

// Expected work (seconds at f_max) of one request of each priority per
// request of the mix, and the low-priority share of work.
struct MixWork {
    double low_s = 0.0;
    double high_s = 0.0;
    double low_share() const { return low_s + high_s > 0.0 ? low_s / (low_s + high_s) : 0.0; }
};
MixWork expected_work(std::span<const WorkloadClass> mix, const PowerModelParams& params);

// Mix with the low-priority share of requests rescaled to lp_fraction while
// keeping each class's shape and the class ratios within each priority.
std::vector<WorkloadClass> mix_with_lp_fraction(std::span<const WorkloadClass> mix, double lp_fraction);

// CSV: id,arrival_s,class,prompt_tokens,output_tokens,batch,priority
std::string trace_to_csv(const Trace& trace);
void write_trace_csv(const Trace& trace, const std::string& path);
// Validates every row; the mix, when non-empty, must contain each class.
Trace read_trace_csv(const std::string& path, std::span<const WorkloadClass> mix = {});
std::uint64_t trace_hash(const Trace& trace);

// Uniformly sampled series starting at t = 0.
struct PowerSeries {
    double period_s = 300.0;
    std::vector<double> values;
};

// CSV: t_s,power_norm with a constant step.
PowerSeries read_reference_csv(const std::string& path);
void write_reference_csv(const PowerSeries& series, const std::string& path);

// Mean of |a_i - b_i| / b_i, as a percentage.
double mape(std::span<const double> a, std::span<const double> b);

// Means over consecutive blocks of `per_block` samples; a trailing partial block is dropped.
std::vector<double> block_means(std::span<const double> values, std::size_t per_block);

// Largest increase from any sample to a later sample at most window_s ahead.
double max_rise(std::span<const double> values, double period_s, double window_s);

// Shape of the shipped reference target.
struct ReferenceShape {
    double days = 7.0;
    double step_s = 300.0;
    double peak = 0.79;
    double trough = 0.65;
    double phase_s = 0.0;
    double noise_sigma = 0.01;  // AR(1) innovation scale, fraction of budget
    double noise_rho = 0.8;
    std::uint64_t seed = 2024;
};
// Sinusoid plus AR(1) noise, rescaled so the maximum equals shape.peak exactly.
PowerSeries build_reference(const ReferenceShape& shape);

struct FitOptions {
    double target_pct = 3.0;    // success threshold
    double stop_pct = 1.0;      // stop searching below this
    int max_simulations = 40;
    std::uint64_t seed = 1;
};

struct FitResult {
    DiurnalProfile profile;
    double mape_pct = 0.0;
    bool converged = false;
    int simulations = 0;
    std::vector<double> simulated;  // block means of the best candidate
};

// Searches (base_rate, amplitude, phase_s) so that the uncapped baseline row's
// block-mean power matches the reference. converged is false when the best
// MAPE exceeds options.target_pct.
FitResult fit_to_reference(const PowerSeries& reference, const Config& cfg, const FitOptions& options = {});

}  // namespace polca
