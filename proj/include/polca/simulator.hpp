#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polca/config.hpp"
#include "polca/policy.hpp"
#include "polca/types.hpp"

namespace polca {

enum class CapTarget { AllLow, AllHigh, All };
enum class CommandKind { OOB, Brake };

std::string_view to_string(CapTarget t);

struct CapCommand {
    double issued_at_s = 0.0;
    double effective_at_s = 0.0;
    CapTarget target = CapTarget::All;
    double freq_mhz = 0.0;
    CommandKind kind = CommandKind::OOB;
};

// The command an action turns into, issued at `now`.
CapCommand to_command(const PolicyAction& action, double now_s, const PolicyConfig& policy, const GpuSpec& gpu);

struct ActiveRequest {
    std::size_t trace_index = 0;
    Phase phase = Phase::Prompt;
    double remaining_work_s = 0.0;  // of the current phase, in seconds at f_max
    double updated_at_s = 0.0;
};

struct ServerState {
    int id = 0;
    Priority priority = Priority::High;
    std::optional<ActiveRequest> active;
    std::optional<std::size_t> buffer;  // trace index, capacity one
    double cap_freq_mhz = 0.0;           // last OOB frequency
    bool braked = false;
    double brake_freq_mhz = 0.0;
    double brake_issued_at_s = 0.0;
    double effective_freq_mhz = 0.0;
    std::uint64_t version = 0;  // invalidates stale completion events
    double watts = 0.0;

    bool idle() const { return !active.has_value(); }
};

struct RowPower {
    double watts = 0.0;
    double norm = 0.0;
};

// Power of one server from its phase, request shape and frequency.
double server_watts(const ServerState& s, const Trace& trace, const ServerSpec& spec, const PowerModelParams& params);

// Sum of server powers, normalized by the budget.
RowPower row_power(std::span<const ServerState> servers, const Trace& trace, const ServerSpec& spec,
                   const PowerModelParams& params, double budget_watts);

// Applies a command to every server it targets. Returns the ids whose
// effective frequency changed.
std::vector<int> apply_command(const CapCommand& cmd, std::span<ServerState> servers, const GpuSpec& gpu);

struct RequestRecord {
    std::int64_t id = 0;
    std::string cls;
    Priority priority = Priority::High;
    int server = -1;
    double arrival_s = 0.0;
    double start_s = 0.0;
    double prompt_end_s = 0.0;
    double completion_s = 0.0;
    double min_freq_mhz = 0.0;
    double capped_s = 0.0;  // execution time spent below f_max
    bool completed = false;

    double latency_s() const { return completion_s - arrival_s; }
};

struct TelemetryReading {
    double measured_at_s = 0.0;
    double delivered_at_s = 0.0;
    double power_norm = 0.0;
};

struct ActionRecord {
    double t_s = 0.0;
    ActionType action = ActionType::CapLP;
    CapTarget target = CapTarget::All;
    double freq_mhz = 0.0;
};

struct PowerSamples {
    double period_s = 0.1;
    std::vector<double> mean;
    std::vector<double> max;
};

struct SimulationResult {
    std::string policy;
    std::uint64_t seed = 0;
    std::uint64_t trace_hash = 0;
    std::size_t trace_size = 0;
    int servers = 0;
    int lp_servers = 0;
    double budget_watts = 0.0;
    double horizon_s = 0.0;
    double end_s = 0.0;
    double t1 = 0.0;
    double t2 = 0.0;

    std::vector<RequestRecord> requests;
    std::vector<TelemetryReading> readings;
    std::vector<ActionRecord> actions;
    PowerSamples power;                 // empty unless kept
    std::vector<double> block_mean;     // mean normalized power per block_s
    double block_s = 300.0;

    int powerbrake_count = 0;           // rising edges of the brake flag
    int budget_breaches = 0;            // readings above 1.0
    double max_reading = 0.0;
    double first_cap_s = -1.0;          // first cap action, -1 if none
    double time_t1_only_s = 0.0;
    double time_t2_s = 0.0;
    double time_brake_s = 0.0;
    std::array<int, 6> action_counts{};  // indexed by ActionType
    std::array<std::size_t, 2> max_overflow{};  // indexed by Priority
    double max_conservation_error = 0.0;  // relative, when verified
};

struct SimOptions {
    bool keep_power_series = true;
    bool verify_conservation = false;
    double block_s = 300.0;
    // Extra time allowed after the horizon for queued work to finish.
    double drain_limit_s = 86400.0;
};

// Low-priority pool size for the config.
int lp_server_count(const ClusterConfig& cluster, const PowerModelParams& params);

SimulationResult run_simulation(const Config& cfg, const Trace& trace, PolicyKind policy,
                                const SimOptions& options = {});

// power.csv, requests.csv, actions.csv, telemetry.csv and summary.json.
void write_result(const SimulationResult& result, const std::string& dir);

}  // namespace polca
