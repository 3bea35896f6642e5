#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "polca/simulator.hpp"
#include "polca/workload.hpp"

namespace polca {

namespace {

struct Candidate {
    DiurnalProfile profile;
    double mape_pct = 0.0;
    std::vector<double> simulated;
};

class Fitter {
  public:
    Fitter(const PowerSeries& reference, const Config& cfg, const FitOptions& options)
        : ref_(reference), cfg_(cfg), opt_(options) {
        cfg_.cluster.added_servers = 0;
        cfg_.cluster.rng_seed = opt_.seed;
        const double ref_span = ref_.period_s * static_cast<double>(ref_.values.size());
        cfg_.cluster.sim_duration_s = std::min(cfg.cluster.sim_duration_s, ref_span);
        blocks_ = static_cast<std::size_t>(cfg_.cluster.sim_duration_s / ref_.period_s);
        if (blocks_ == 0) throw std::invalid_argument("fit_to_reference: reference shorter than one block");
        sim_opt_.keep_power_series = false;
        sim_opt_.block_s = ref_.period_s;
    }

    Candidate evaluate(const DiurnalProfile& p) {
        ++simulations_;
        const Trace trace = generate_trace(cfg_, p);
        const SimulationResult r = run_simulation(cfg_, trace, PolicyKind::NoCap, sim_opt_);
        Candidate c;
        c.profile = p;
        c.simulated.assign(r.block_mean.begin(),
                           r.block_mean.begin() + static_cast<std::ptrdiff_t>(std::min(blocks_, r.block_mean.size())));
        c.simulated.resize(blocks_, 0.0);
        last_counts_ = arrivals_per_block(trace);
        c.mape_pct = mape(c.simulated, std::span(ref_.values).first(blocks_));
        return c;
    }

    // Linear map from arrivals per block to block power, from one pilot run.
    std::pair<double, double> power_per_arrival(const Candidate& pilot) const {
        double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < blocks_; ++i) {
            const double x = last_counts_[i], y = pilot.simulated[i];
            n += 1;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double den = n * sxx - sx * sx;
        if (den <= 0.0) throw std::runtime_error("fit_to_reference: pilot run has no arrival variation");
        const double slope = (n * sxy - sx * sy) / den;
        return {slope, (sy - slope * sx) / n};
    }

    // Least-squares sinusoid through the arrival rate implied by the reference.
    DiurnalProfile initial_guess(double slope, double intercept) const {
        const double w = 2.0 * std::numbers::pi / cfg_.arrivals.period_s;
        std::array<std::array<double, 4>, 3> m{};
        for (std::size_t i = 0; i < blocks_; ++i) {
            const double t = (static_cast<double>(i) + 0.5) * ref_.period_s;
            const double rate = (ref_.values[i] - intercept) / slope / ref_.period_s;
            const std::array<double, 3> x{1.0, std::sin(w * t), std::cos(w * t)};
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) m[r][c] += x[r] * x[c];
                m[r][3] += x[r] * rate;
            }
        }
        const auto c = solve3(m);
        DiurnalProfile p = cfg_.arrivals;
        p.base_rate = std::max(c[0], 1e-6);
        p.amplitude = std::clamp(std::hypot(c[1], c[2]) / p.base_rate, 0.0, 0.99);
        double phase = std::atan2(-c[2], c[1]) / w;
        phase = std::fmod(phase, p.period_s);
        if (phase < 0.0) phase += p.period_s;
        p.phase_s = phase;
        return p;
    }

    int simulations() const { return simulations_; }

  private:
    std::vector<double> arrivals_per_block(const Trace& trace) const {
        std::vector<double> counts(blocks_, 0.0);
        for (const auto& r : trace) {
            const auto b = static_cast<std::size_t>(r.arrival_s / ref_.period_s);
            if (b < blocks_) counts[b] += 1.0;
        }
        return counts;
    }

    static std::array<double, 3> solve3(std::array<std::array<double, 4>, 3> m) {
        for (int col = 0; col < 3; ++col) {
            int pivot = col;
            for (int r = col + 1; r < 3; ++r)
                if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
            std::swap(m[col], m[pivot]);
            if (std::abs(m[col][col]) < 1e-12) throw std::runtime_error("fit_to_reference: singular sinusoid fit");
            for (int r = 0; r < 3; ++r) {
                if (r == col) continue;
                const double f = m[r][col] / m[col][col];
                for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
            }
        }
        return {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
    }

    const PowerSeries& ref_;
    Config cfg_;
    FitOptions opt_;
    SimOptions sim_opt_;
    std::size_t blocks_ = 0;
    std::vector<double> last_counts_;
    int simulations_ = 0;
};

}  // namespace

FitResult fit_to_reference(const PowerSeries& reference, const Config& cfg, const FitOptions& options) {
    if (reference.values.empty()) throw std::invalid_argument("fit_to_reference: empty reference");
    if (!(reference.period_s > 0.0)) throw std::invalid_argument("fit_to_reference: reference step must be > 0");
    for (double v : reference.values)
        if (!(v > 0.0)) throw std::invalid_argument("fit_to_reference: reference values must be > 0");

    Fitter fitter(reference, cfg, options);

    DiurnalProfile pilot_profile = cfg.arrivals;
    pilot_profile.amplitude = std::max(pilot_profile.amplitude, 0.3);
    const Candidate pilot = fitter.evaluate(pilot_profile);
    const auto [slope, intercept] = fitter.power_per_arrival(pilot);
    if (!(slope > 0.0)) throw std::runtime_error("fit_to_reference: power does not grow with load");

    Candidate best = fitter.evaluate(fitter.initial_guess(slope, intercept));
    if (pilot.mape_pct < best.mape_pct) best = pilot;

    // Coordinate descent with step halving.
    std::array<double, 3> step{0.05 * best.profile.base_rate, 0.05, 1800.0};
    auto moved = [](DiurnalProfile p, int coord, double delta) {
        switch (coord) {
            case 0: p.base_rate = std::max(p.base_rate + delta, 1e-6); break;
            case 1: p.amplitude = std::clamp(p.amplitude + delta, 0.0, 0.99); break;
            default: p.phase_s = std::fmod(p.phase_s + delta + p.period_s, p.period_s); break;
        }
        return p;
    };
    while (best.mape_pct > options.stop_pct && fitter.simulations() < options.max_simulations) {
        bool improved = false;
        for (int coord = 0; coord < 3 && fitter.simulations() < options.max_simulations; ++coord) {
            for (double sign : {1.0, -1.0}) {
                if (fitter.simulations() >= options.max_simulations) break;
                Candidate c = fitter.evaluate(moved(best.profile, coord, sign * step[coord]));
                if (c.mape_pct < best.mape_pct) {
                    best = std::move(c);
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) {
            for (double& s : step) s *= 0.5;
            if (step[2] < 60.0) break;
        }
    }

    FitResult out;
    out.profile = best.profile;
    out.mape_pct = best.mape_pct;
    out.converged = best.mape_pct <= options.target_pct;
    out.simulations = fitter.simulations();
    out.simulated = std::move(best.simulated);
    return out;
}

}  // namespace polca
