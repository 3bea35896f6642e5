#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace polca {

enum class Priority { High, Low };

// A server's GPUs are always in exactly one phase.
enum class Phase { Idle, Prompt, Token, Brake };

std::string_view to_string(Priority p);
std::string_view to_string(Phase p);
Priority parse_priority(std::string_view s);

// A100 defaults.
struct GpuSpec {
    double tdp_watts = 400.0;
    double f_max = 1410.0;
    double f_base = 1275.0;
    double f_min = 288.0;
    double idle_fraction = 0.20;

    bool operator==(const GpuSpec&) const = default;
};

// DGX-A100 class server. The host (CPUs, NICs, fans, ...) draws constant power.
struct ServerSpec {
    int gpus_per_server = 8;
    GpuSpec gpu;
    double gpu_power_share = 0.60;
    // Derived from gpu_power_share at TDP unless set.
    double host_power_watts = 2133.3333333333335;

    double gpu_tdp_total() const { return gpus_per_server * gpu.tdp_watts; }
    // Host power such that GPUs at TDP make up gpu_power_share of the server's peak.
    double derived_host_watts() const { return gpu_tdp_total() * (1.0 - gpu_power_share) / gpu_power_share; }
    // Nameplate peak: host plus every GPU at TDP.
    double nameplate_watts() const { return host_power_watts + gpu_tdp_total(); }

    bool operator==(const ServerSpec&) const = default;
};

enum class PriorityRule { AllLow, AllHigh, Split };

struct WorkloadClass {
    std::string name;
    int prompt_min = 1;
    int prompt_max = 1;
    int output_min = 1;
    int output_max = 1;
    double mix_ratio = 0.0;
    PriorityRule priority_rule = PriorityRule::AllLow;
    // Probability that a request of a Split class is low priority.
    double low_fraction = 0.5;
    int batch = 1;

    // Probability that a request of this class is low priority.
    double low_probability() const;

    bool operator==(const WorkloadClass&) const = default;
};

// Summarize / Search / Chat mix for BLOOM-176B.
std::vector<WorkloadClass> default_workload_mix();

struct InferenceRequest {
    std::int64_t id = 0;
    double arrival_s = 0.0;
    std::string cls;
    int prompt_tokens = 1;
    int output_tokens = 0;
    int batch = 1;
    Priority priority = Priority::High;

    bool operator==(const InferenceRequest&) const = default;
};

using Trace = std::vector<InferenceRequest>;

// rate(t) = base_rate * (1 + amplitude * sin(2*pi*(t - phase_s) / period_s)),
// multiplied by a mean-one lognormal factor redrawn every noise_block_s.
// Defaults reproduce the shipped reference week on the default row.
struct DiurnalProfile {
    double base_rate = 0.4643;
    double amplitude = 0.4892;
    double period_s = 86400.0;
    double phase_s = 244.0;
    double noise_sigma = 0.0;
    double noise_block_s = 300.0;

    double rate_at(double t_s) const;

    bool operator==(const DiurnalProfile&) const = default;
};

}  // namespace polca
