#pragma once

#include <limits>
#include <string_view>
#include <vector>

#include "polca/config.hpp"

namespace polca {

enum class PolicyKind { Polca, OneThreshLowPri, OneThreshAll, NoCap };

std::string_view to_string(PolicyKind k);
// Accepts polca, 1-thresh-low-pri, 1-thresh-all, no-cap.
PolicyKind parse_policy(std::string_view name);

struct PolicyState {
    bool t1cap = false;
    bool t2cap = false;
    bool powerbrake = false;
    bool hp_capped_at_t2 = false;
    double last_action_t_s = -std::numeric_limits<double>::infinity();

    bool operator==(const PolicyState&) const = default;
};

enum class ActionType { CapLP, CapHP, CapAll, UncapHP, SetLP, UncapLP };

std::string_view to_string(ActionType a);

// freq_mhz is 0 for the uncap actions, meaning the GPU maximum.
struct PolicyAction {
    ActionType type = ActionType::CapLP;
    double freq_mhz = 0.0;

    bool operator==(const PolicyAction&) const = default;
};

// An empty action list is the NoOp.
struct StepResult {
    PolicyState state;
    std::vector<PolicyAction> actions;

    bool operator==(const StepResult&) const = default;
};

// One control-loop step of the dual-threshold policy on normalized power p.
StepResult polca_step(double p, const PolicyState& state, const PolicyConfig& cfg);

// Single-threshold baselines and the uncapped policy. Throws
// std::invalid_argument for PolicyKind::Polca.
StepResult baseline_step(PolicyKind kind, double p, const PolicyState& state, const PolicyConfig& cfg);

StepResult policy_step(PolicyKind kind, double p, const PolicyState& state, const PolicyConfig& cfg);

}  // namespace polca
