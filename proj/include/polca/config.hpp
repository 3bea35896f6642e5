#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "polca/power_model.hpp"
#include "polca/types.hpp"

namespace polca {

struct PolicyConfig {
    double t1 = 0.80;
    double t2 = 0.89;
    double t1_buffer = 0.05;
    double t2_buffer = 0.05;
    double f_lp_t1 = 1275.0;
    double f_lp_t2 = 1110.0;
    double f_hp_t2 = 1305.0;
    double f_brake = 288.0;
    double telemetry_delay_s = 2.0;
    double oob_latency_s = 40.0;
    double brake_latency_s = 5.0;
    double control_period_s = 2.0;

    bool operator==(const PolicyConfig&) const = default;
};

struct ClusterConfig {
    int baseline_servers = 40;
    int added_servers = 0;
    ServerSpec server;
    // Row budget. Zero means baseline_servers * provisioned_server_watts.
    double budget_watts = 0.0;
    // Per-server provisioned peak used to derive the budget.
    double provisioned_server_watts = 4900.0;
    std::vector<WorkloadClass> workloads = default_workload_mix();
    std::uint64_t rng_seed = 1;
    double sim_duration_s = 7 * 86400.0;
    double power_sample_period_s = 0.1;
    // Arrival rates are per row of baseline_servers; when set, traces for a
    // larger row carry proportionally more requests.
    bool scale_load_with_servers = true;
    // Share of servers in the low-priority pool. Zero means the low-priority
    // share of expected work under the workload mix.
    double lp_server_fraction = 0.0;

    int total_servers() const { return baseline_servers + added_servers; }
    double effective_budget_watts() const {
        return budget_watts > 0.0 ? budget_watts : baseline_servers * provisioned_server_watts;
    }

    bool operator==(const ClusterConfig&) const = default;
};

// Everything a config file can set.
struct Config {
    ClusterConfig cluster;
    PolicyConfig policy;
    PowerModelParams power = default_power_model();
    DiurnalProfile arrivals;

    bool operator==(const Config&) const = default;
};

class ConfigError : public std::runtime_error {
  public:
    enum class Kind { Parse, Validation };
    ConfigError(Kind kind, std::string key, const std::string& message)
        : std::runtime_error(key.empty() ? message : key + ": " + message), kind_(kind), key_(std::move(key)) {}
    Kind kind() const { return kind_; }
    const std::string& key() const { return key_; }

  private:
    Kind kind_;
    std::string key_;
};

Config load_config(const std::string& path);
Config parse_config(const std::string& text, const std::string& origin = "<string>");
std::string serialize_config(const Config& cfg);

// Throws ConfigError(Validation) naming the first violated invariant.
void validate(const Config& cfg);

// Applies POLCA_SEED when it is set.
void apply_env_overrides(Config& cfg);

}  // namespace polca
