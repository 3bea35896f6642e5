#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "polca/metrics.hpp"

namespace fs = std::filesystem;

namespace polca {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

const char* kSloColumns =
    "hp_completed,hp_p50_pct,hp_p99_pct,hp_p100_pct,lp_completed,lp_p50_pct,lp_p99_pct,lp_p100_pct,"
    "hp_throughput_pct,lp_throughput_pct,powerbrakes,budget_breaches,max_reading,first_cap_s,hp_cap_events,"
    "hp_pass,lp_pass,pass";

void slo_fields(std::ostream& os, const SloReport& s) {
    os << s.high.completed << ',' << fmt(s.high.p50_pct) << ',' << fmt(s.high.p99_pct) << ','
       << fmt(s.high.p100_pct) << ',' << s.low.completed << ',' << fmt(s.low.p50_pct) << ','
       << fmt(s.low.p99_pct) << ',' << fmt(s.low.p100_pct) << ',' << fmt(s.hp_throughput_delta_pct) << ','
       << fmt(s.lp_throughput_delta_pct) << ',' << s.powerbrake_count << ',' << s.budget_breaches << ','
       << fmt(s.max_reading) << ',' << fmt(s.first_cap_s) << ','
       << s.cap_event_counts[static_cast<std::size_t>(ActionType::CapHP)] << ',' << s.hp_pass << ','
       << s.lp_pass << ',' << s.pass;
}

// Rows of a CSV keyed by header name.
using CsvRow = std::map<std::string, std::string>;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::vector<CsvRow> read_csv(const fs::path& path) {
    std::ifstream in(path);
    std::vector<CsvRow> rows;
    std::string line;
    if (!std::getline(in, line)) return rows;
    const auto header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error(path.string() + ": row has " + std::to_string(fields.size()) +
                                     " fields, header has " + std::to_string(header.size()));
        CsvRow row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

double num(const CsvRow& r, const std::string& key) {
    auto it = r.find(key);
    if (it == r.end()) throw std::runtime_error("missing column '" + key + "'");
    return std::stod(it->second);
}

SloReport slo_from(const CsvRow& r) {
    SloReport s;
    s.high.completed = static_cast<std::size_t>(num(r, "hp_completed"));
    s.high.p50_pct = num(r, "hp_p50_pct");
    s.high.p99_pct = num(r, "hp_p99_pct");
    s.high.p100_pct = num(r, "hp_p100_pct");
    s.low.completed = static_cast<std::size_t>(num(r, "lp_completed"));
    s.low.p50_pct = num(r, "lp_p50_pct");
    s.low.p99_pct = num(r, "lp_p99_pct");
    s.low.p100_pct = num(r, "lp_p100_pct");
    s.hp_throughput_delta_pct = num(r, "hp_throughput_pct");
    s.lp_throughput_delta_pct = num(r, "lp_throughput_pct");
    s.powerbrake_count = static_cast<int>(num(r, "powerbrakes"));
    s.budget_breaches = static_cast<int>(num(r, "budget_breaches"));
    s.max_reading = num(r, "max_reading");
    s.first_cap_s = num(r, "first_cap_s");
    s.cap_event_counts[static_cast<std::size_t>(ActionType::CapHP)] = static_cast<int>(num(r, "hp_cap_events"));
    s.hp_pass = num(r, "hp_pass") != 0.0;
    s.lp_pass = num(r, "lp_pass") != 0.0;
    s.pass = num(r, "pass") != 0.0;
    return s;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

// ---------------------------------------------------------------------------
// SVG

constexpr double kWidth = 800, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

class Svg {
  public:
    explicit Svg(const std::string& title) {
        os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
            << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        text(kWidth / 2, 22, title, "middle", 15);
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke, const std::string& extra = "") {
        os_ << "<line x1=\"" << fixed(x1) << "\" y1=\"" << fixed(y1) << "\" x2=\"" << fixed(x2) << "\" y2=\""
            << fixed(y2) << "\" stroke=\"" << stroke << "\"" << extra << "/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill) {
        os_ << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(w) << "\" height=\""
            << fixed(h) << "\" fill=\"" << fill << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 12) {
        os_ << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" text-anchor=\"" << anchor
            << "\" font-size=\"" << size << "\">" << s << "</text>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
        os_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) os_ << (i ? " " : "") << fixed(pts[i].first) << ',' << fixed(pts[i].second);
        os_ << "\"/>\n";
    }
    std::string finish() {
        os_ << "</svg>\n";
        return os_.str();
    }

  private:
    std::ostringstream os_;
};

struct Axis {
    double lo, hi;
    double y(double v) const { return kTop + (kHeight - kTop - kBottom) * (1.0 - (v - lo) / (hi - lo)); }
};

void y_axis(Svg& svg, const Axis& ax, const std::string& label, int ticks = 5) {
    svg.line(kLeft, kTop, kLeft, kHeight - kBottom, "black");
    svg.line(kLeft, ax.y(std::clamp(0.0, ax.lo, ax.hi)), kWidth - kRight, ax.y(std::clamp(0.0, ax.lo, ax.hi)),
             "black");
    for (int i = 0; i <= ticks; ++i) {
        const double v = ax.lo + (ax.hi - ax.lo) * i / ticks;
        svg.line(kLeft - 4, ax.y(v), kLeft, ax.y(v), "black");
        svg.text(kLeft - 6, ax.y(v) + 4, fixed(v), "end");
    }
    svg.text(14, kTop - 10, label);
}

std::string power_svg(const PowerSamples& p, double t1, double t2) {
    Svg svg("Row power (normalized to budget)");
    const std::size_t n = p.mean.size();
    const std::size_t max_points = 2000;
    const std::size_t stride = std::max<std::size_t>(1, (n + max_points - 1) / max_points);
    std::vector<double> xs, ys;
    double top = 1.05;
    for (std::size_t i = 0; i < n; i += stride) {
        double peak = 0.0;
        for (std::size_t j = i; j < std::min(n, i + stride); ++j) peak = std::max(peak, p.mean[j]);
        xs.push_back(static_cast<double>(i) * p.period_s);
        ys.push_back(peak);
        top = std::max(top, peak * 1.05);
    }
    const Axis ax{0.0, top};
    y_axis(svg, ax, "power / budget");
    const double span = n > 0 ? static_cast<double>(n) * p.period_s : 1.0;
    const double plot_w = kWidth - kLeft - kRight;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < xs.size(); ++i) pts.emplace_back(kLeft + plot_w * xs[i] / span, ax.y(ys[i]));
    svg.polyline(pts, kPalette[0]);
    const std::pair<double, const char*> rules[] = {{t1, "T1"}, {t2, "T2"}, {1.0, "budget"}};
    for (const auto& [v, name] : rules) {
        svg.line(kLeft, ax.y(v), kWidth - kRight, ax.y(v), "#d62728", " stroke-dasharray=\"6 4\"");
        svg.text(kWidth - kRight - 4, ax.y(v) - 4, std::string(name) + " " + fixed(v), "end");
    }
    svg.text(kLeft + plot_w / 2, kHeight - 20, "time (hours, " + fixed(span / 3600.0, 1) + " total)", "middle");
    return svg.finish();
}

struct Group {
    std::string label;
    std::vector<double> values;
};

std::string bar_svg(const std::string& title, const std::string& y_label, const std::vector<std::string>& series,
                    const std::vector<Group>& groups) {
    Svg svg(title);
    double lo = 0.0, hi = 1.0;
    for (const auto& g : groups)
        for (double v : g.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    hi *= 1.1;
    lo *= 1.1;
    const Axis ax{lo, hi};
    y_axis(svg, ax, y_label);
    const double plot_w = kWidth - kLeft - kRight;
    const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, groups.size()));
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double x0 = kLeft + group_w * static_cast<double>(g) + group_w * 0.1;
        for (std::size_t s = 0; s < groups[g].values.size(); ++s) {
            const double v = groups[g].values[s];
            const double y = ax.y(std::max(v, 0.0));
            svg.rect(x0 + bar_w * static_cast<double>(s), y, bar_w * 0.9, std::abs(ax.y(v) - ax.y(0.0)),
                     kPalette[s % std::size(kPalette)]);
        }
        svg.text(x0 + group_w * 0.4, kHeight - kBottom + 16, groups[g].label, "middle");
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double x = kLeft + 10 + 120 * static_cast<double>(s);
        svg.rect(x, kHeight - 22, 10, 10, kPalette[s % std::size(kPalette)]);
        svg.text(x + 14, kHeight - 13, series[s]);
    }
    return svg.finish();
}

// Seed-averaged SLO impacts per label, in first-seen order.
template <class Row, class LabelFn>
std::vector<Group> averaged(std::span<const Row> rows, LabelFn label, bool brakes) {
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::vector<double>, int>> acc;
    for (const auto& r : rows) {
        if constexpr (requires { r.ok; })
            if (!r.ok) continue;
        const std::string key = label(r);
        auto [it, fresh] = acc.try_emplace(key);
        if (fresh) order.push_back(key);
        const SloReport& s = r.slo;
        const std::vector<double> v = brakes ? std::vector<double>{static_cast<double>(s.powerbrake_count)}
                                             : std::vector<double>{s.high.p50_pct, s.high.p99_pct, s.low.p50_pct,
                                                                   s.low.p99_pct};
        auto& [sum, count] = it->second;
        sum.resize(v.size(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
        ++count;
    }
    std::vector<Group> out;
    for (const auto& key : order) {
        auto [sum, count] = acc[key];
        for (double& x : sum) x /= count;
        out.push_back({key, sum});
    }
    return out;
}

}  // namespace

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream os;
    os << "value,seed,ok,error," << kSloColumns << "\n";
    for (const auto& r : rows) {
        os << csv_field(r.value) << ',' << r.seed << ',' << r.ok << ',' << csv_field(r.error) << ',';
        slo_fields(os, r.slo);
        os << "\n";
    }
    return os.str();
}

std::string comparison_csv(std::span<const ComparisonRow> rows) {
    std::ostringstream os;
    os << "policy,seed,power_scale,hp_p50_norm,hp_p99_norm,lp_p50_norm,lp_p99_norm," << kSloColumns << "\n";
    for (const auto& r : rows) {
        os << r.policy << ',' << r.seed << ',' << fmt(r.power_scale) << ',' << fmt(r.hp_p50_norm) << ','
           << fmt(r.hp_p99_norm) << ',' << fmt(r.lp_p50_norm) << ',' << fmt(r.lp_p99_norm) << ',';
        slo_fields(os, r.slo);
        os << "\n";
    }
    return os.str();
}

std::string lp_ratio_csv(std::span<const LpRatioRow> rows) {
    std::ostringstream os;
    os << "lp_fraction,seed," << kSloColumns << "\n";
    for (const auto& r : rows) {
        os << fmt(r.lp_fraction) << ',' << r.seed << ',';
        slo_fields(os, r.slo);
        os << "\n";
    }
    return os.str();
}

void emit_report(const ReportInput& in, const std::string& out_dir) {
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_file(dir / "sweep.csv", sweep_csv(in.sweep));
    write_file(dir / "comparison.csv", comparison_csv(in.comparison));
    write_file(dir / "lp_ratio.csv", lp_ratio_csv(in.lp_ratio));

    if (in.power && !in.power->mean.empty()) write_file(dir / "power.svg", power_svg(*in.power, in.t1, in.t2));

    const std::vector<std::string> slo_series{"HP P50", "HP P99", "LP P50", "LP P99"};
    std::vector<Group> slo, brakes;
    std::string by;
    if (!in.comparison.empty()) {
        auto label = [](const ComparisonRow& r) { return r.policy + " x" + fixed(r.power_scale); };
        slo = averaged(std::span(in.comparison), label, false);
        brakes = averaged(std::span(in.comparison), label, true);
        by = "policy";
    } else if (!in.sweep.empty()) {
        auto label = [](const SweepRow& r) { return r.value; };
        slo = averaged(std::span(in.sweep), label, false);
        brakes = averaged(std::span(in.sweep), label, true);
        by = "sweep value";
    } else if (!in.lp_ratio.empty()) {
        auto label = [](const LpRatioRow& r) { return fixed(r.lp_fraction); };
        slo = averaged(std::span(in.lp_ratio), label, false);
        brakes = averaged(std::span(in.lp_ratio), label, true);
        by = "LP fraction";
    }
    if (!slo.empty()) {
        write_file(dir / "slo.svg", bar_svg("Latency impact vs uncapped by " + by, "% change", slo_series, slo));
        write_file(dir / "powerbrakes.svg", bar_svg("Powerbrakes by " + by, "count", {"powerbrakes"}, brakes));
    }
}

ReportInput load_report_input(const std::string& dir_in) {
    const fs::path dir(dir_in);
    if (!fs::is_directory(dir)) throw std::runtime_error("report input '" + dir_in + "' is not a directory");
    ReportInput in;
    if (fs::exists(dir / "summary.json")) {
        std::ifstream f(dir / "summary.json");
        const auto j = nlohmann::json::parse(f);
        in.t1 = j.value("t1", in.t1);
        in.t2 = j.value("t2", in.t2);
    }
    if (fs::exists(dir / "power.csv")) {
        PowerSamples p;
        const auto rows = read_csv(dir / "power.csv");
        for (const auto& r : rows) {
            p.mean.push_back(num(r, "power_norm_mean"));
            p.max.push_back(num(r, "power_norm_max"));
        }
        if (rows.size() > 1) p.period_s = num(rows[1], "t_s") - num(rows[0], "t_s");
        in.power = std::move(p);
    }
    if (fs::exists(dir / "sweep.csv"))
        for (const auto& r : read_csv(dir / "sweep.csv")) {
            SweepRow row;
            row.value = r.at("value");
            row.numeric = std::stod(row.value);
            row.seed = std::stoull(r.at("seed"));
            row.ok = num(r, "ok") != 0.0;
            row.error = r.at("error");
            row.slo = slo_from(r);
            in.sweep.push_back(std::move(row));
        }
    if (fs::exists(dir / "comparison.csv"))
        for (const auto& r : read_csv(dir / "comparison.csv")) {
            ComparisonRow row;
            row.policy = r.at("policy");
            row.seed = std::stoull(r.at("seed"));
            row.power_scale = num(r, "power_scale");
            row.hp_p50_norm = num(r, "hp_p50_norm");
            row.hp_p99_norm = num(r, "hp_p99_norm");
            row.lp_p50_norm = num(r, "lp_p50_norm");
            row.lp_p99_norm = num(r, "lp_p99_norm");
            row.slo = slo_from(r);
            in.comparison.push_back(std::move(row));
        }
    if (fs::exists(dir / "lp_ratio.csv"))
        for (const auto& r : read_csv(dir / "lp_ratio.csv")) {
            LpRatioRow row;
            row.lp_fraction = num(r, "lp_fraction");
            row.seed = std::stoull(r.at("seed"));
            row.slo = slo_from(r);
            row.hp_cap_events = static_cast<std::size_t>(num(r, "hp_cap_events"));
            in.lp_ratio.push_back(std::move(row));
        }
    return in;
}

}  // namespace polca
