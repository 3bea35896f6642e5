#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "polca/config.hpp"
#include "polca/metrics.hpp"
#include "polca/power_model.hpp"
#include "polca/simulator.hpp"
#include "polca/workload.hpp"

namespace fs = std::filesystem;
using namespace polca;

namespace {

Config config_from(const std::string& path) {
    Config cfg = path.empty() ? Config{} : load_config(path);
    apply_env_overrides(cfg);
    validate(cfg);
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoull(item));
    if (out.empty()) throw std::invalid_argument("--seeds: no seeds given");
    return out;
}

void print_slo(const std::string& label, const SloReport& r) {
    std::printf("%-24s HP p50 %+7.2f%% p99 %+7.2f%% | LP p50 %+7.2f%% p99 %+7.2f%% | brakes %d | %s\n",
                label.c_str(), r.high.p50_pct, r.high.p99_pct, r.low.p50_pct, r.low.p99_pct, r.powerbrake_count,
                r.pass ? "PASS" : "FAIL");
}

int cmd_calibrate(const std::string& anchors_path, const std::string& out) {
    const auto anchors = anchors_path.empty() ? default_anchors() : read_anchors_csv(anchors_path);
    const GpuSpec gpu;
    PowerModelParams params;
    try {
        params = calibrate(anchors, gpu);
    } catch (const CalibrationError& e) {
        std::cerr << "calibration failed: " << e.what() << "\n";
        for (const auto& r : e.residuals())
            std::cerr << "  " << r.anchor.freq_mhz << " MHz: power " << r.power_reduction << " (target "
                      << r.anchor.power_reduction << "), perf " << r.perf_reduction << " (target "
                      << r.anchor.perf_reduction << ")\n";
        return 1;
    }
    Config cfg;
    cfg.power = params;
    // Only the [power_model] section is emitted.
    const std::string all = serialize_config(cfg);
    const auto begin = all.find("[power_model]");
    const auto end = all.find("\n\n", begin);
    write_text(out, all.substr(begin, end - begin) + "\n");
    for (const auto& a : anchors)
        std::cerr << a.freq_mhz << " MHz: power reduction " << peak_power_reduction(a.freq_mhz, {}, gpu, params)
                  << ", latency increase " << latency_increase(a.freq_mhz, {}, gpu, params) << "\n";
    return 0;
}

int cmd_generate_trace(const std::string& config, const std::string& out) {
    const Config cfg = config_from(config);
    const Trace trace = generate_trace(cfg);
    write_trace_csv(trace, out);
    std::cerr << "wrote " << trace.size() << " requests to " << out << "\n";
    return 0;
}

int cmd_make_reference(const ReferenceShape& shape, const std::string& out) {
    write_reference_csv(build_reference(shape), out);
    return 0;
}

int cmd_fit(const std::string& reference, const std::string& config, const FitOptions& opt,
            const std::string& out) {
    Config cfg = config_from(config);
    const PowerSeries ref = read_reference_csv(reference);
    const FitResult fit = fit_to_reference(ref, cfg, opt);
    std::printf("base_rate %.6g amplitude %.6g phase_s %.6g | MAPE %.3f%% after %d simulations | %s\n",
                fit.profile.base_rate, fit.profile.amplitude, fit.profile.phase_s, fit.mape_pct, fit.simulations,
                fit.converged ? "converged" : "NOT converged");
    if (!out.empty()) {
        cfg.arrivals = fit.profile;
        write_text(out, serialize_config(cfg));
    }
    return fit.converged ? 0 : 2;
}

int cmd_simulate(const std::string& config, const std::string& trace_path, const std::string& policy,
                 const std::string& out, bool power_series) {
    const Config cfg = config_from(config);
    const Trace trace = trace_path.empty() ? generate_trace(cfg) : read_trace_csv(trace_path, cfg.cluster.workloads);
    SimOptions opt;
    opt.keep_power_series = power_series;
    const SimulationResult r = run_simulation(cfg, trace, parse_policy(policy), opt);
    write_result(r, out);
    std::printf("%s: %zu requests, %d servers (%d LP), max reading %.4f, powerbrakes %d, breaches %d\n",
                r.policy.c_str(), r.trace_size, r.servers, r.lp_servers, r.max_reading, r.powerbrake_count,
                r.budget_breaches);
    return 0;
}

int cmd_sweep(const std::string& spec_path, const std::string& config, const std::string& out) {
    const Config base = config_from(config);
    const SweepSpec spec = load_sweep_spec(spec_path);
    validate_sweep(spec, base);
    const SweepTable table = run_sweep(spec, base);
    ReportInput rep;
    rep.t1 = base.policy.t1;
    rep.t2 = base.policy.t2;
    rep.sweep = table.rows;
    emit_report(rep, out);
    bool failed = false;
    for (const auto& row : table.rows) {
        const std::string label = std::string(to_string(table.variable)) + "=" + row.value + " seed " +
                                  std::to_string(row.seed);
        if (!row.ok) {
            std::printf("%-24s ERROR %s\n", label.c_str(), row.error.c_str());
            failed = true;
            continue;
        }
        print_slo(label, row.slo);
    }
    if (table.max_fraction_without_brakes)
        std::printf("largest added-server fraction without powerbrakes: %.3g\n", *table.max_fraction_without_brakes);
    return failed ? 1 : 0;
}

int cmd_compare(const std::string& policies, double power_scale, const std::string& seeds,
                const std::string& config, const std::string& out) {
    const Config base = config_from(config);
    std::vector<PolicyKind> kinds;
    std::stringstream ss(policies);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) kinds.push_back(parse_policy(item));
    if (kinds.empty()) throw std::invalid_argument("--policies: no policies given");
    const auto seed_list = parse_seeds(seeds);
    const auto rows = compare_policies(kinds, power_scale, base, seed_list);
    ReportInput rep;
    rep.t1 = base.policy.t1;
    rep.t2 = base.policy.t2;
    rep.comparison = rows;
    emit_report(rep, out);
    bool polca_failed = false;
    for (const auto& r : rows) {
        print_slo(r.policy + " seed " + std::to_string(r.seed), r.slo);
        if (r.policy == to_string(PolicyKind::Polca) && !r.slo.pass) polca_failed = true;
    }
    return polca_failed ? 1 : 0;
}

int cmd_lp_ratio(const std::string& fractions, const std::string& seeds, const std::string& config,
                 const std::string& out) {
    const Config base = config_from(config);
    std::vector<double> fs_;
    std::stringstream ss(fractions);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) fs_.push_back(std::stod(item));
    const auto rows = lp_ratio_sweep(fs_, base, parse_seeds(seeds));
    ReportInput rep;
    rep.lp_ratio = rows;
    emit_report(rep, out);
    for (const auto& r : rows) {
        char label[64];
        std::snprintf(label, sizeof label, "lp %.2f seed %llu", r.lp_fraction,
                      static_cast<unsigned long long>(r.seed));
        print_slo(label, r.slo);
    }
    return 0;
}

int cmd_report(const std::string& in, const std::string& out) {
    const ReportInput rep = load_report_input(in);
    emit_report(rep, out.empty() ? in : out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"POLCA power-oversubscription simulator"};
    app.require_subcommand(1);

    std::string anchors, out, config, reference, trace, policy = "polca", spec, policies = "polca",
                                                                seeds = "1,2,3", in, fractions = "0.2,0.35,0.5,0.65";
    std::string sweep_out = "sweep-out", compare_out = "compare-out", lp_out = "lp-ratio-out";
    double power_scale = 1.0;
    bool power_series = true;
    FitOptions fit_opt;
    ReferenceShape shape;

    auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit the power model to calibration anchors");
    calibrate_cmd->add_option("--anchors", anchors, "CSV freq_mhz,power_reduction,perf_reduction");
    calibrate_cmd->add_option("--out", out, "Write the [power_model] section here (default stdout)");

    auto* gen_cmd = app.add_subcommand("generate-trace", "Generate a request trace");
    gen_cmd->add_option("--config", config, "Config file");
    gen_cmd->add_option("--out", out, "Trace CSV")->required();

    auto* ref_cmd = app.add_subcommand("make-reference", "Write a diurnal reference power series");
    ref_cmd->add_option("--out", out, "Reference CSV")->required();
    ref_cmd->add_option("--days", shape.days, "Length in days");
    ref_cmd->add_option("--peak", shape.peak, "Maximum, fraction of budget");
    ref_cmd->add_option("--trough", shape.trough, "Minimum of the sinusoid, fraction of budget");
    ref_cmd->add_option("--noise", shape.noise_sigma, "AR(1) innovation scale");
    ref_cmd->add_option("--seed", shape.seed, "Noise seed");

    auto* fit_cmd = app.add_subcommand("fit", "Fit arrival parameters to a reference power series");
    fit_cmd->add_option("--reference", reference, "Reference CSV t_s,power_norm")->required();
    fit_cmd->add_option("--config", config, "Config file");
    fit_cmd->add_option("--out", out, "Write the config with fitted [arrivals]");
    fit_cmd->add_option("--max-simulations", fit_opt.max_simulations, "Simulation budget");
    fit_cmd->add_option("--target", fit_opt.target_pct, "MAPE threshold for success, percent");
    fit_cmd->add_option("--seed", fit_opt.seed, "Trace seed used while fitting");

    auto* sim_cmd = app.add_subcommand("simulate", "Run one simulation");
    sim_cmd->add_option("--config", config, "Config file");
    sim_cmd->add_option("--trace", trace, "Trace CSV (default: generated from the config)");
    sim_cmd->add_option("--policy", policy, "polca, 1-thresh-low-pri, 1-thresh-all or no-cap");
    sim_cmd->add_option("--out", out, "Output directory")->required();
    sim_cmd->add_flag("!--no-power-series", power_series, "Skip power.csv samples");

    auto* sweep_cmd = app.add_subcommand("sweep", "Run a parameter sweep");
    sweep_cmd->add_option("--spec", spec, "Sweep spec file")->required();
    sweep_cmd->add_option("--config", config, "Base config file");
    sweep_cmd->add_option("--out", sweep_out, "Output directory")->capture_default_str();

    auto* cmp_cmd = app.add_subcommand("compare", "Compare policies on paired traces");
    cmp_cmd->add_option("--policies", policies, "Comma-separated policy names");
    cmp_cmd->add_option("--power-scale", power_scale, "Dynamic power multiplier");
    cmp_cmd->add_option("--seeds", seeds, "Comma-separated seeds");
    cmp_cmd->add_option("--config", config, "Base config file");
    cmp_cmd->add_option("--out", compare_out, "Output directory")->capture_default_str();

    auto* lp_cmd = app.add_subcommand("lp-ratio", "Sweep the low-priority share under POLCA");
    lp_cmd->add_option("--fractions", fractions, "Comma-separated LP fractions");
    lp_cmd->add_option("--seeds", seeds, "Comma-separated seeds");
    lp_cmd->add_option("--config", config, "Base config file");
    lp_cmd->add_option("--out", lp_out, "Output directory")->capture_default_str();

    auto* report_cmd = app.add_subcommand("report", "Render CSV and SVG from a results directory");
    report_cmd->add_option("--in", in, "Results directory")->required();
    report_cmd->add_option("--out", out, "Output directory (default: --in)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*calibrate_cmd) return cmd_calibrate(anchors, out);
        if (*gen_cmd) return cmd_generate_trace(config, out);
        if (*ref_cmd) return cmd_make_reference(shape, out);
        if (*fit_cmd) return cmd_fit(reference, config, fit_opt, out);
        if (*sim_cmd) return cmd_simulate(config, trace, policy, out, power_series);
        if (*sweep_cmd) return cmd_sweep(spec, config, sweep_out);
        if (*cmp_cmd) return cmd_compare(policies, power_scale, seeds, config, compare_out);
        if (*lp_cmd) return cmd_lp_ratio(fractions, seeds, config, lp_out);
        if (*report_cmd) return cmd_report(in, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
