#include "polca/simulator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <stdexcept>

#include <json.hpp>

#include "polca/power_model.hpp"
#include "polca/workload.hpp"

namespace polca {

std::string_view to_string(CapTarget t) {
    switch (t) {
        case CapTarget::AllLow: return "AllLow";
        case CapTarget::AllHigh: return "AllHigh";
        case CapTarget::All: return "All";
    }
    return "?";
}

CapCommand to_command(const PolicyAction& action, double now_s, const PolicyConfig& policy, const GpuSpec& gpu) {
    CapCommand cmd;
    cmd.issued_at_s = now_s;
    cmd.kind = CommandKind::OOB;
    switch (action.type) {
        case ActionType::CapLP:
        case ActionType::SetLP: cmd.target = CapTarget::AllLow; cmd.freq_mhz = action.freq_mhz; break;
        case ActionType::UncapLP: cmd.target = CapTarget::AllLow; cmd.freq_mhz = gpu.f_max; break;
        case ActionType::CapHP: cmd.target = CapTarget::AllHigh; cmd.freq_mhz = action.freq_mhz; break;
        case ActionType::UncapHP: cmd.target = CapTarget::AllHigh; cmd.freq_mhz = gpu.f_max; break;
        case ActionType::CapAll:
            cmd.target = CapTarget::All;
            cmd.freq_mhz = action.freq_mhz;
            cmd.kind = CommandKind::Brake;
            break;
    }
    cmd.effective_at_s = now_s + (cmd.kind == CommandKind::Brake ? policy.brake_latency_s : policy.oob_latency_s);
    return cmd;
}

double server_watts(const ServerState& s, const Trace& trace, const ServerSpec& spec, const PowerModelParams& params) {
    double frac = spec.gpu.idle_fraction;
    if (s.active) {
        const auto& r = trace[s.active->trace_index];
        const double tokens = s.active->phase == Phase::Prompt ? static_cast<double>(r.prompt_tokens) * r.batch
                                                               : static_cast<double>(r.batch);
        frac = gpu_power_fraction(s.active->phase, tokens, s.effective_freq_mhz, spec.gpu, params);
    }
    return server_power_uniform(frac, spec);
}

RowPower row_power(std::span<const ServerState> servers, const Trace& trace, const ServerSpec& spec,
                   const PowerModelParams& params, double budget_watts) {
    RowPower out;
    std::vector<double> fractions(static_cast<std::size_t>(spec.gpus_per_server));
    for (const auto& s : servers) {
        double frac = spec.gpu.idle_fraction;
        if (s.active) {
            const auto& r = trace[s.active->trace_index];
            const double tokens = s.active->phase == Phase::Prompt ? static_cast<double>(r.prompt_tokens) * r.batch
                                                                   : static_cast<double>(r.batch);
            frac = gpu_power_fraction(s.active->phase, tokens, s.effective_freq_mhz, spec.gpu, params);
        }
        std::fill(fractions.begin(), fractions.end(), frac);
        out.watts += server_power(fractions, spec);
    }
    out.norm = budget_watts > 0.0 ? out.watts / budget_watts : 0.0;
    return out;
}

namespace {

bool targets(CapTarget t, Priority p) {
    return t == CapTarget::All || (t == CapTarget::AllLow) == (p == Priority::Low);
}

}  // namespace

std::vector<int> apply_command(const CapCommand& cmd, std::span<ServerState> servers, const GpuSpec& gpu) {
    std::vector<int> changed;
    const double f = std::clamp(cmd.freq_mhz, gpu.f_min, gpu.f_max);
    for (auto& s : servers) {
        if (!targets(cmd.target, s.priority)) continue;
        if (cmd.kind == CommandKind::Brake) {
            s.braked = true;
            s.brake_freq_mhz = f;
            s.brake_issued_at_s = cmd.issued_at_s;
        } else {
            s.cap_freq_mhz = f;
            // Only a command issued after the brake releases it.
            if (s.braked && cmd.issued_at_s > s.brake_issued_at_s) s.braked = false;
        }
        const double eff = s.braked ? s.brake_freq_mhz : s.cap_freq_mhz;
        if (eff != s.effective_freq_mhz) {
            s.effective_freq_mhz = eff;
            changed.push_back(s.id);
        }
    }
    return changed;
}

int lp_server_count(const ClusterConfig& cluster, const PowerModelParams& params) {
    const int n = cluster.total_servers();
    const MixWork work = expected_work(cluster.workloads, params);
    const double share = cluster.lp_server_fraction > 0.0 ? cluster.lp_server_fraction : work.low_share();
    int lp = static_cast<int>(std::lround(share * n));
    if (work.low_s > 0.0) lp = std::max(lp, 1);
    if (work.high_s > 0.0) lp = std::min(lp, n - 1);
    if (work.low_s <= 0.0) lp = 0;
    if (work.high_s <= 0.0) lp = n;
    return std::clamp(lp, 0, n);
}

namespace {

enum class EventType { Command = 0, PhaseEnd = 1, Arrival = 2, Telemetry = 3 };

struct Event {
    double t = 0.0;
    EventType type = EventType::Arrival;
    std::uint64_t seq = 0;
    int server = -1;
    std::uint64_t version = 0;
    std::size_t index = 0;

    // Min-heap order: time, then kind rank, then insertion sequence.
    bool operator>(const Event& o) const {
        if (t != o.t) return t > o.t;
        if (type != o.type) return static_cast<int>(type) > static_cast<int>(o.type);
        return seq > o.seq;
    }
};

// Integrates piecewise-constant power into fixed-length buckets.
class Bucketizer {
  public:
    explicit Bucketizer(double period) : period_(period) {}

    template <class Emit>
    void advance(double t_to, double watts, Emit&& emit) {
        while (now_ < t_to) {
            const double bucket_end = static_cast<double>(index_ + 1) * period_;
            const double end = std::min(t_to, bucket_end);
            acc_ += watts * (end - now_);
            peak_ = std::max(peak_, watts);
            now_ = end;
            if (end >= bucket_end) {
                emit(index_, acc_ / period_, peak_);
                ++index_;
                acc_ = 0.0;
                peak_ = 0.0;
            }
        }
    }

    // Emits the trailing partial bucket, averaged over its covered length.
    template <class Emit>
    void flush(Emit&& emit) {
        const double start = static_cast<double>(index_) * period_;
        if (now_ > start) emit(index_, acc_ / (now_ - start), peak_);
    }

  private:
    double period_;
    double now_ = 0.0;
    double acc_ = 0.0;
    double peak_ = 0.0;
    std::uint64_t index_ = 0;
};

class Engine {
  public:
    Engine(const Config& cfg, const Trace& trace, PolicyKind policy, const SimOptions& opt)
        : cfg_(cfg),
          trace_(trace),
          policy_(policy),
          opt_(opt),
          gpu_(cfg.cluster.server.gpu),
          budget_(cfg.cluster.effective_budget_watts()),
          samples_(cfg.cluster.power_sample_period_s),
          control_(cfg.policy.control_period_s),
          blocks_(opt.block_s) {}

    SimulationResult run();

  private:
    void push(Event e) {
        e.seq = seq_++;
        queue_.push(e);
    }
    double rate(const ServerState& s) const {
        if (!s.active) return 0.0;
        return s.active->phase == Phase::Prompt ? s.effective_freq_mhz / gpu_.f_max
                                                : 1.0 / token_slowdown(s.effective_freq_mhz, gpu_, cfg_.power);
    }
    void settle(ServerState& s, double t);
    void schedule_end(ServerState& s, double t);
    void refresh_watts(ServerState& s);
    void advance_power(double t);
    void start(ServerState& s, std::size_t idx, double t);
    void on_arrival(std::size_t idx, double t);
    void on_phase_end(ServerState& s, double t);
    void on_command(const CapCommand& cmd, double t);
    void on_telemetry(double t);
    double remaining_total(const ServerState& s, double t) const;
    void verify();
    bool work_outstanding() const;

    const Config& cfg_;
    const Trace& trace_;
    PolicyKind policy_;
    SimOptions opt_;
    GpuSpec gpu_;
    double budget_;

    std::vector<ServerState> servers_;
    std::array<std::deque<std::size_t>, 2> overflow_;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
    std::uint64_t seq_ = 0;
    std::vector<CapCommand> commands_;
    std::size_t next_arrival_ = 0;
    std::size_t busy_ = 0;

    double now_ = 0.0;
    double total_watts_ = 0.0;
    Bucketizer samples_, control_, blocks_;
    std::deque<TelemetryReading> in_flight_;
    PolicyState state_;
    double last_delivery_ = 0.0;

    SimulationResult res_;
};

double Engine::remaining_total(const ServerState& s, double t) const {
    if (!s.active) return 0.0;
    double left = s.active->remaining_work_s - (t - s.active->updated_at_s) * rate(s);
    if (s.active->phase == Phase::Prompt) left += token_work_s(trace_[s.active->trace_index].output_tokens, cfg_.power);
    return std::max(left, 0.0);
}

void Engine::settle(ServerState& s, double t) {
    if (!s.active) return;
    const double elapsed = t - s.active->updated_at_s;
    if (elapsed > 0.0) {
        s.active->remaining_work_s = std::max(0.0, s.active->remaining_work_s - elapsed * rate(s));
        if (s.effective_freq_mhz < gpu_.f_max) res_.requests[s.active->trace_index].capped_s += elapsed;
    }
    s.active->updated_at_s = t;
}

void Engine::schedule_end(ServerState& s, double t) {
    ++s.version;
    Event e;
    e.t = t + s.active->remaining_work_s / rate(s);
    e.type = EventType::PhaseEnd;
    e.server = s.id;
    e.version = s.version;
    push(e);
}

void Engine::refresh_watts(ServerState& s) {
    s.watts = server_watts(s, trace_, cfg_.cluster.server, cfg_.power);
    double total = 0.0;
    for (const auto& x : servers_) total += x.watts;
    total_watts_ = total;
}

void Engine::advance_power(double t) {
    if (t <= now_) return;
    const double w = total_watts_;
    if (opt_.keep_power_series) {
        samples_.advance(t, w, [&](std::uint64_t, double mean, double peak) {
            res_.power.mean.push_back(mean / budget_);
            res_.power.max.push_back(peak / budget_);
        });
    }
    control_.advance(t, w, [&](std::uint64_t k, double mean, double) {
        TelemetryReading r;
        r.measured_at_s = static_cast<double>(k + 1) * cfg_.policy.control_period_s;
        r.delivered_at_s = r.measured_at_s + cfg_.policy.telemetry_delay_s;
        r.power_norm = mean / budget_;
        in_flight_.push_back(r);
    });
    blocks_.advance(t, w, [&](std::uint64_t, double mean, double) { res_.block_mean.push_back(mean / budget_); });
    now_ = t;
}

void Engine::start(ServerState& s, std::size_t idx, double t) {
    const auto& r = trace_[idx];
    s.active = ActiveRequest{idx, Phase::Prompt, prompt_work_s(r.prompt_tokens, r.batch, cfg_.power), t};
    ++busy_;
    auto& rec = res_.requests[idx];
    rec.server = s.id;
    rec.start_s = t;
    rec.min_freq_mhz = s.effective_freq_mhz;
    schedule_end(s, t);
    refresh_watts(s);
}

void Engine::on_arrival(std::size_t idx, double t) {
    const auto& r = trace_[idx];
    ServerState* idle = nullptr;
    ServerState* least = nullptr;
    double least_work = 0.0;
    for (auto& s : servers_) {
        if (s.priority != r.priority) continue;
        if (s.idle()) {
            idle = &s;
            break;
        }
        if (!s.buffer) {
            const double w = remaining_total(s, t);
            if (!least || w < least_work) {
                least = &s;
                least_work = w;
            }
        }
    }
    if (idle) {
        start(*idle, idx, t);
    } else if (least) {
        least->buffer = idx;
    } else {
        auto& q = overflow_[static_cast<int>(r.priority)];
        q.push_back(idx);
        auto& mx = res_.max_overflow[static_cast<int>(r.priority)];
        mx = std::max(mx, q.size());
    }
}

void Engine::on_phase_end(ServerState& s, double t) {
    settle(s, t);
    const std::size_t idx = s.active->trace_index;
    const auto& r = trace_[idx];
    auto& rec = res_.requests[idx];
    if (s.active->phase == Phase::Prompt) {
        rec.prompt_end_s = t;
        if (r.output_tokens > 0) {
            s.active->phase = Phase::Token;
            s.active->remaining_work_s = token_work_s(r.output_tokens, cfg_.power);
            schedule_end(s, t);
            refresh_watts(s);
            return;
        }
    }
    rec.completion_s = t;
    rec.completed = true;
    s.active.reset();
    --busy_;
    auto& q = overflow_[static_cast<int>(s.priority)];
    if (s.buffer) {
        const std::size_t next = *s.buffer;
        s.buffer.reset();
        if (!q.empty()) {
            s.buffer = q.front();
            q.pop_front();
        }
        start(s, next, t);
    } else if (!q.empty()) {
        const std::size_t next = q.front();
        q.pop_front();
        start(s, next, t);
    } else {
        refresh_watts(s);
    }
}

void Engine::on_command(const CapCommand& cmd, double t) {
    for (auto& s : servers_)
        if (targets(cmd.target, s.priority)) settle(s, t);
    for (int id : apply_command(cmd, servers_, gpu_)) {
        auto& s = servers_[static_cast<std::size_t>(id)];
        if (s.active) {
            auto& rec = res_.requests[s.active->trace_index];
            rec.min_freq_mhz = std::min(rec.min_freq_mhz, s.effective_freq_mhz);
            schedule_end(s, t);
        }
        refresh_watts(s);
    }
}

void Engine::on_telemetry(double t) {
    if (in_flight_.empty() || in_flight_.front().delivered_at_s > t)
        throw std::logic_error("telemetry delivered before it was measured");
    const TelemetryReading reading = in_flight_.front();
    in_flight_.pop_front();
    res_.readings.push_back(reading);
    const double p = reading.power_norm;
    res_.max_reading = std::max(res_.max_reading, p);
    if (p > 1.0) ++res_.budget_breaches;

    const double dt = t - last_delivery_;
    if (state_.powerbrake) res_.time_brake_s += dt;
    else if (state_.t2cap) res_.time_t2_s += dt;
    else if (state_.t1cap) res_.time_t1_only_s += dt;
    last_delivery_ = t;

    StepResult step = policy_step(policy_, p, state_, cfg_.policy);
    if (step.state.powerbrake && !state_.powerbrake) ++res_.powerbrake_count;
    if (!step.actions.empty()) step.state.last_action_t_s = t;
    state_ = step.state;
    for (const auto& a : step.actions) {
        const CapCommand cmd = to_command(a, t, cfg_.policy, gpu_);
        res_.actions.push_back({t, a.type, cmd.target, cmd.freq_mhz});
        ++res_.action_counts[static_cast<std::size_t>(a.type)];
        const bool cap = a.type == ActionType::CapLP || a.type == ActionType::CapHP || a.type == ActionType::CapAll;
        if (cap && res_.first_cap_s < 0.0) res_.first_cap_s = t;
        commands_.push_back(cmd);
        Event e;
        e.t = cmd.effective_at_s;
        e.type = EventType::Command;
        e.index = commands_.size() - 1;
        push(e);
    }
}

bool Engine::work_outstanding() const {
    return busy_ > 0 || next_arrival_ < trace_.size() || !overflow_[0].empty() || !overflow_[1].empty();
}

void Engine::verify() {
    const double independent = row_power(servers_, trace_, cfg_.cluster.server, cfg_.power, budget_).watts;
    const double err = std::abs(independent - total_watts_) / std::max(std::abs(independent), 1e-300);
    res_.max_conservation_error = std::max(res_.max_conservation_error, err);
}

SimulationResult Engine::run() {
    const auto& cl = cfg_.cluster;
    const int n = cl.total_servers();
    const int n_lp = lp_server_count(cl, cfg_.power);
    servers_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& s = servers_[static_cast<std::size_t>(i)];
        s.id = i;
        s.priority = i < n_lp ? Priority::Low : Priority::High;
        s.cap_freq_mhz = s.effective_freq_mhz = gpu_.f_max;
        s.watts = server_watts(s, trace_, cl.server, cfg_.power);
    }
    for (const auto& s : servers_) total_watts_ += s.watts;

    for (std::size_t i = 0; i < trace_.size(); ++i) {
        const auto& r = trace_[i];
        const bool has_pool = r.priority == Priority::Low ? n_lp > 0 : n_lp < n;
        if (!has_pool)
            throw std::invalid_argument("trace request " + std::to_string(r.id) + " has priority " +
                                        std::string(to_string(r.priority)) + " but the row has no such servers");
        if (i > 0 && r.arrival_s < trace_[i - 1].arrival_s)
            throw std::invalid_argument("trace is not sorted by arrival time");
    }

    res_.policy = std::string(to_string(policy_));
    res_.seed = cl.rng_seed;
    res_.trace_hash = trace_hash(trace_);
    res_.trace_size = trace_.size();
    res_.servers = n;
    res_.lp_servers = n_lp;
    res_.budget_watts = budget_;
    res_.horizon_s = cl.sim_duration_s;
    res_.t1 = cfg_.policy.t1;
    res_.t2 = cfg_.policy.t2;
    res_.block_s = opt_.block_s;
    res_.power.period_s = cl.power_sample_period_s;
    res_.requests.resize(trace_.size());
    for (std::size_t i = 0; i < trace_.size(); ++i) {
        auto& rec = res_.requests[i];
        rec.id = trace_[i].id;
        rec.cls = trace_[i].cls;
        rec.priority = trace_[i].priority;
        rec.arrival_s = trace_[i].arrival_s;
    }
    if (opt_.keep_power_series) {
        const auto samples = static_cast<std::size_t>(cl.sim_duration_s / cl.power_sample_period_s) + 1;
        res_.power.mean.reserve(samples);
        res_.power.max.reserve(samples);
    }

    auto push_arrival = [&] {
        if (next_arrival_ >= trace_.size()) return;
        Event e;
        e.t = trace_[next_arrival_].arrival_s;
        e.type = EventType::Arrival;
        e.index = next_arrival_;
        push(e);
    };
    push_arrival();
    {
        Event e;
        e.t = cfg_.policy.control_period_s + cfg_.policy.telemetry_delay_s;
        e.type = EventType::Telemetry;
        push(e);
    }

    const double hard_stop = cl.sim_duration_s + opt_.drain_limit_s;
    if (opt_.verify_conservation) verify();
    while (!queue_.empty()) {
        const Event e = queue_.top();
        if (e.t > hard_stop) break;
        queue_.pop();
        if (e.t < now_) throw std::logic_error("event queue out of order");
        advance_power(e.t);
        switch (e.type) {
            case EventType::Arrival:
                ++next_arrival_;
                push_arrival();
                on_arrival(e.index, e.t);
                break;
            case EventType::PhaseEnd: {
                auto& s = servers_[static_cast<std::size_t>(e.server)];
                if (s.version == e.version && s.active) on_phase_end(s, e.t);
                break;
            }
            case EventType::Command: on_command(commands_[e.index], e.t); break;
            case EventType::Telemetry:
                on_telemetry(e.t);
                if (e.t < cl.sim_duration_s || work_outstanding()) {
                    Event next;
                    next.t = e.t + cfg_.policy.control_period_s;
                    next.type = EventType::Telemetry;
                    push(next);
                }
                break;
        }
        if (opt_.verify_conservation) verify();
    }
    if (opt_.keep_power_series) {
        samples_.flush([&](std::uint64_t, double mean, double peak) {
            res_.power.mean.push_back(mean / budget_);
            res_.power.max.push_back(peak / budget_);
        });
    }
    res_.end_s = now_;
    return std::move(res_);
}

}  // namespace

SimulationResult run_simulation(const Config& cfg, const Trace& trace, PolicyKind policy, const SimOptions& options) {
    Engine engine(cfg, trace, policy, options);
    return engine.run();
}

namespace {

class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot write '" + path + "'");
        buf_.reserve(1 << 20);
    }
    ~CsvWriter() { flush(); }
    CsvWriter& raw(std::string_view s) {
        buf_.append(s);
        if (buf_.size() > (1 << 20)) flush();
        return *this;
    }
    CsvWriter& num(double v) {
        char tmp[32];
        auto r = std::to_chars(tmp, tmp + sizeof tmp, v);
        return raw(std::string_view(tmp, static_cast<std::size_t>(r.ptr - tmp)));
    }
    CsvWriter& integer(long long v) { return raw(std::to_string(v)); }
    void flush() {
        out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        buf_.clear();
        if (!out_) throw std::runtime_error("error writing '" + path_ + "'");
    }

  private:
    std::string path_;
    std::ofstream out_;
    std::string buf_;
};

}  // namespace

void write_result(const SimulationResult& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        CsvWriter w((fs::path(dir) / "power.csv").string());
        w.raw("t_s,power_norm_mean,power_norm_max\n");
        for (std::size_t i = 0; i < r.power.mean.size(); ++i)
            w.num(static_cast<double>(i) * r.power.period_s).raw(",").num(r.power.mean[i]).raw(",").num(r.power.max[i]).raw("\n");
    }
    {
        CsvWriter w((fs::path(dir) / "requests.csv").string());
        w.raw("id,class,priority,server,arrival_s,start_s,prompt_end_s,completion_s,latency_s,min_freq_mhz,capped_s,"
              "completed\n");
        for (const auto& q : r.requests) {
            w.integer(q.id).raw(",").raw(q.cls).raw(",").raw(to_string(q.priority)).raw(",").integer(q.server).raw(",");
            w.num(q.arrival_s).raw(",").num(q.start_s).raw(",").num(q.prompt_end_s).raw(",").num(q.completion_s).raw(",");
            w.num(q.completed ? q.latency_s() : 0.0).raw(",").num(q.min_freq_mhz).raw(",").num(q.capped_s).raw(",");
            w.raw(q.completed ? "1\n" : "0\n");
        }
    }
    {
        CsvWriter w((fs::path(dir) / "actions.csv").string());
        w.raw("t_s,action,target,freq\n");
        for (const auto& a : r.actions)
            w.num(a.t_s).raw(",").raw(to_string(a.action)).raw(",").raw(to_string(a.target)).raw(",").num(a.freq_mhz).raw("\n");
    }
    {
        CsvWriter w((fs::path(dir) / "telemetry.csv").string());
        w.raw("measured_at_s,delivered_at_s,power_norm\n");
        for (const auto& t : r.readings)
            w.num(t.measured_at_s).raw(",").num(t.delivered_at_s).raw(",").num(t.power_norm).raw("\n");
    }
    {
        nlohmann::ordered_json j;
        j["policy"] = r.policy;
        j["seed"] = r.seed;
        j["trace_hash"] = r.trace_hash;
        j["trace_size"] = r.trace_size;
        j["servers"] = r.servers;
        j["lp_servers"] = r.lp_servers;
        j["budget_watts"] = r.budget_watts;
        j["horizon_s"] = r.horizon_s;
        j["end_s"] = r.end_s;
        j["t1"] = r.t1;
        j["t2"] = r.t2;
        j["powerbrake_count"] = r.powerbrake_count;
        j["budget_breaches"] = r.budget_breaches;
        j["max_reading"] = r.max_reading;
        j["first_cap_s"] = r.first_cap_s;
        j["time_t1_only_s"] = r.time_t1_only_s;
        j["time_t2_s"] = r.time_t2_s;
        j["time_brake_s"] = r.time_brake_s;
        for (std::size_t i = 0; i < r.action_counts.size(); ++i)
            j["action_counts"][std::string(to_string(static_cast<ActionType>(i)))] = r.action_counts[i];
        j["max_overflow_high"] = r.max_overflow[0];
        j["max_overflow_low"] = r.max_overflow[1];
        std::ofstream out(fs::path(dir) / "summary.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + (fs::path(dir) / "summary.json").string() + "'");
        out << j.dump(2) << "\n";
    }
}

}  // namespace polca
