#include "polca/policy.hpp"

#include <stdexcept>
#include <string>

namespace polca {

std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::Polca: return "polca";
        case PolicyKind::OneThreshLowPri: return "1-thresh-low-pri";
        case PolicyKind::OneThreshAll: return "1-thresh-all";
        case PolicyKind::NoCap: return "no-cap";
    }
    return "?";
}

PolicyKind parse_policy(std::string_view name) {
    for (auto k : {PolicyKind::Polca, PolicyKind::OneThreshLowPri, PolicyKind::OneThreshAll, PolicyKind::NoCap})
        if (name == to_string(k)) return k;
    throw std::invalid_argument("unknown policy '" + std::string(name) +
                                "' (expected polca, 1-thresh-low-pri, 1-thresh-all or no-cap)");
}

std::string_view to_string(ActionType a) {
    switch (a) {
        case ActionType::CapLP: return "CapLP";
        case ActionType::CapHP: return "CapHP";
        case ActionType::CapAll: return "CapAll";
        case ActionType::UncapHP: return "UncapHP";
        case ActionType::SetLP: return "SetLP";
        case ActionType::UncapLP: return "UncapLP";
    }
    return "?";
}

StepResult polca_step(double p, const PolicyState& state, const PolicyConfig& cfg) {
    StepResult out{state, {}};
    PolicyState& s = out.state;
    auto emit = [&](ActionType t, double f) { out.actions.push_back({t, f}); };

    if (p > 1.0) {
        emit(ActionType::CapAll, cfg.f_brake);
        s.powerbrake = s.t1cap = s.t2cap = s.hp_capped_at_t2 = true;
    } else if (p > cfg.t2) {
        if (!s.t2cap) {
            s.t2cap = true;
            emit(ActionType::CapLP, cfg.f_lp_t2);
        } else if (!s.hp_capped_at_t2) {
            s.hp_capped_at_t2 = true;
            emit(ActionType::CapHP, cfg.f_hp_t2);
        }
    } else if (p > cfg.t1) {
        // A stronger T2 cap already covers LP.
        if (!s.t1cap && !s.t2cap) emit(ActionType::CapLP, cfg.f_lp_t1);
        s.t1cap = true;
    }

    if (s.t2cap && p < cfg.t2 - cfg.t2_buffer) {
        emit(ActionType::UncapHP, 0.0);
        emit(ActionType::SetLP, cfg.f_lp_t1);
        s.t2cap = s.hp_capped_at_t2 = s.powerbrake = false;
        s.t1cap = true;
    }
    if (s.t1cap && p < cfg.t1 - cfg.t1_buffer) {
        emit(ActionType::UncapLP, 0.0);
        s.t1cap = false;
    }
    return out;
}

StepResult baseline_step(PolicyKind kind, double p, const PolicyState& state, const PolicyConfig& cfg) {
    if (kind == PolicyKind::Polca) throw std::invalid_argument("baseline_step: polca is not a baseline");
    StepResult out{state, {}};
    if (kind == PolicyKind::NoCap) return out;
    PolicyState& s = out.state;
    auto emit = [&](ActionType t, double f) { out.actions.push_back({t, f}); };
    const bool all = kind == PolicyKind::OneThreshAll;

    if (p > 1.0) {
        emit(ActionType::CapAll, cfg.f_brake);
        s.powerbrake = s.t1cap = s.t2cap = s.hp_capped_at_t2 = true;
    } else if (p > cfg.t2 && !s.t2cap) {
        s.t2cap = true;
        emit(ActionType::CapLP, cfg.f_lp_t2);
        if (all) {
            s.hp_capped_at_t2 = true;
            emit(ActionType::CapHP, cfg.f_lp_t2);
        }
    }

    if (s.t2cap && p < cfg.t2 - cfg.t2_buffer) {
        // After a brake the HP pool is released too.
        if (all || s.powerbrake) emit(ActionType::UncapHP, 0.0);
        emit(ActionType::UncapLP, 0.0);
        s = PolicyState{};
        s.last_action_t_s = state.last_action_t_s;
    }
    return out;
}

StepResult policy_step(PolicyKind kind, double p, const PolicyState& state, const PolicyConfig& cfg) {
    return kind == PolicyKind::Polca ? polca_step(p, state, cfg) : baseline_step(kind, p, state, cfg);
}

}  // namespace polca
