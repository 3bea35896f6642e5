#include "polca/types.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace polca {

std::string_view to_string(Priority p) { return p == Priority::High ? "high" : "low"; }

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::Idle: return "idle";
        case Phase::Prompt: return "prompt";
        case Phase::Token: return "token";
        case Phase::Brake: return "brake";
    }
    return "?";
}

Priority parse_priority(std::string_view s) {
    if (s == "high" || s == "High" || s == "HP") return Priority::High;
    if (s == "low" || s == "Low" || s == "LP") return Priority::Low;
    throw std::invalid_argument("unknown priority '" + std::string(s) + "'");
}

double WorkloadClass::low_probability() const {
    switch (priority_rule) {
        case PriorityRule::AllLow: return 1.0;
        case PriorityRule::AllHigh: return 0.0;
        case PriorityRule::Split: return low_fraction;
    }
    return 0.0;
}

std::vector<WorkloadClass> default_workload_mix() {
    return {
        {"summarize", 2048, 8192, 256, 512, 0.25, PriorityRule::AllLow, 1.0, 1},
        {"search", 512, 2048, 1024, 2048, 0.25, PriorityRule::AllHigh, 0.0, 1},
        {"chat", 2048, 4096, 128, 2048, 0.50, PriorityRule::Split, 0.5, 1},
    };
}

double DiurnalProfile::rate_at(double t_s) const {
    return base_rate * (1.0 + amplitude * std::sin(2.0 * std::numbers::pi * (t_s - phase_s) / period_s));
}

}  // namespace polca
