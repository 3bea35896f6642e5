#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polca/config.hpp"
#include "polca/policy.hpp"
#include "polca/simulator.hpp"

namespace polca {

// Nearest-rank percentile, q in (0, 100]. Throws on empty input.
double nearest_rank(std::vector<double> values, double q);

struct SloThresholds {
    double hp_p50_pct = 1.0;
    double hp_p99_pct = 5.0;
    double lp_p50_pct = 5.0;
    double lp_p99_pct = 50.0;
};

struct PriorityImpact {
    std::size_t completed = 0;
    double p50_s = 0.0, p99_s = 0.0, p100_s = 0.0;
    double base_p50_s = 0.0, base_p99_s = 0.0, base_p100_s = 0.0;
    double p50_pct = 0.0, p99_pct = 0.0, p100_pct = 0.0;
    bool empty() const { return completed == 0; }
};

struct SloReport {
    PriorityImpact high;
    PriorityImpact low;
    // Completed requests per hour within the horizon, relative change in percent.
    std::map<std::string, double> class_throughput_delta_pct;
    double hp_throughput_delta_pct = 0.0;
    double lp_throughput_delta_pct = 0.0;
    int powerbrake_count = 0;
    int budget_breaches = 0;
    double max_reading = 0.0;
    double first_cap_s = -1.0;
    std::array<int, 6> cap_event_counts{};
    double time_t1_only_s = 0.0;
    double time_t2_s = 0.0;
    double time_brake_s = 0.0;
    bool hp_pass = true;
    bool lp_pass = true;
    bool pass = true;
};

class PairingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Impacts of `capped` against the uncapped run on the same trace and seed.
// Throws PairingError when the runs do not share trace and seed.
SloReport compute_slo(const SimulationResult& capped, const SimulationResult& uncapped,
                      const SloThresholds& slo = {});

// ---------------------------------------------------------------------------
// Experiments

enum class SweepVariable { T1T2Pair, AddedServerFraction, FLpT1, LpFraction, PowerScale };

std::string_view to_string(SweepVariable v);
SweepVariable parse_sweep_variable(std::string_view s);

struct SweepValue {
    double a = 0.0;
    double b = 0.0;  // second element of a t1/t2 pair
    std::string label() const;
};

struct SweepSpec {
    SweepVariable variable = SweepVariable::T1T2Pair;
    std::vector<SweepValue> values;
    std::vector<std::uint64_t> seeds;
    int repetitions = 1;
    PolicyKind policy = PolicyKind::Polca;
    // Settings applied to the base config before each value.
    std::optional<double> added_server_fraction;
    std::optional<double> power_scale;
};

// Key-value file: variable, values, seeds, repetitions, policy,
// added_server_fraction, power_scale. Pairs are written t1:t2.
SweepSpec parse_sweep_spec(const std::string& text);
SweepSpec load_sweep_spec(const std::string& path);
// Throws std::invalid_argument when a value lies outside its domain.
void validate_sweep(const SweepSpec& spec, const Config& base);

// Seeds actually run: spec.seeds, or 1..repetitions when empty.
std::vector<std::uint64_t> sweep_seeds(const SweepSpec& spec);

// Config for one sweep cell.
Config apply_sweep_value(const Config& base, SweepVariable v, const SweepValue& value);
int added_servers_for(int baseline, double fraction);

struct RunSummary {
    int powerbrakes = 0;
    int budget_breaches = 0;
    double max_reading = 0.0;
    double first_cap_s = -1.0;
    std::size_t hp_cap_events = 0;
    std::uint64_t trace_hash = 0;
};

struct SweepRow {
    std::string value;
    double numeric = 0.0;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    SloReport slo;
    RunSummary run;
};

struct SweepTable {
    SweepVariable variable = SweepVariable::T1T2Pair;
    std::vector<SweepRow> rows;
    // Largest added-server fraction with zero powerbrakes on every seed.
    std::optional<double> max_fraction_without_brakes;
};

struct ExperimentOptions {
    bool keep_power_series = false;
    SloThresholds slo;
};

// Runs the spec's cross product. A failing cell is recorded and the sweep continues.
SweepTable run_sweep(const SweepSpec& spec, const Config& base, const ExperimentOptions& opt = {});

// Uncapped reference and capped run on one trace.
struct PairedRun {
    SimulationResult capped;
    SimulationResult uncapped;
    SloReport slo;
};
PairedRun run_paired(const Config& cfg, const Trace& trace, PolicyKind policy, const ExperimentOptions& opt = {});

struct ComparisonRow {
    std::string policy;
    std::uint64_t seed = 0;
    double power_scale = 1.0;
    SloReport slo;
    // Latency percentiles divided by the polca run's on the same seed.
    double hp_p50_norm = 1.0, hp_p99_norm = 1.0, lp_p50_norm = 1.0, lp_p99_norm = 1.0;
};

std::vector<ComparisonRow> compare_policies(std::span<const PolicyKind> policies, double power_scale,
                                            const Config& base, std::span<const std::uint64_t> seeds,
                                            const ExperimentOptions& opt = {});

struct LpRatioRow {
    double lp_fraction = 0.0;
    std::uint64_t seed = 0;
    SloReport slo;
    std::size_t hp_cap_events = 0;
};

std::vector<LpRatioRow> lp_ratio_sweep(std::span<const double> fractions, const Config& base,
                                       std::span<const std::uint64_t> seeds, const ExperimentOptions& opt = {});

// ---------------------------------------------------------------------------
// Reporting

struct ReportInput {
    std::optional<PowerSamples> power;  // one run's power series
    double t1 = 0.80;
    double t2 = 0.89;
    std::vector<SweepRow> sweep;
    std::vector<ComparisonRow> comparison;
    std::vector<LpRatioRow> lp_ratio;
};

// sweep.csv, comparison.csv and lp_ratio.csv always (header-only when empty);
// power.svg, slo.svg and powerbrakes.svg when the data is present.
void emit_report(const ReportInput& in, const std::string& out_dir);

std::string sweep_csv(std::span<const SweepRow> rows);
std::string comparison_csv(std::span<const ComparisonRow> rows);
std::string lp_ratio_csv(std::span<const LpRatioRow> rows);

// Loads whatever of power.csv, summary.json, sweep.csv and comparison.csv exists in dir.
ReportInput load_report_input(const std::string& dir);

}  // namespace polca
