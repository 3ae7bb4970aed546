#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cathnav/metrics.hpp"
#include "commands.hpp"

namespace cathnav::cli {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

// One rectangular plotting area inside the SVG canvas.
struct Panel {
  double x0, y0, w, h;
  Range xr, yr;

  double px(double x) const { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * w; }
  double py(double y) const { return y0 + h - (y - yr.lo) / (yr.hi - yr.lo) * h; }
};

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  void axes(const Panel& p, const std::string& title, const std::string& xlabel) {
    os_ << "<rect x='" << p.x0 << "' y='" << p.y0 << "' width='" << p.w << "' height='" << p.h
        << "' fill='none' stroke='#444'/>\n";
    text(p.x0, p.y0 - 6, title, "start", 13);
    text(p.x0 + p.w / 2, p.y0 + p.h + 30, xlabel, "middle", 11);
    for (int i = 0; i <= 4; ++i) {
      const double fy = p.yr.lo + (p.yr.hi - p.yr.lo) * i / 4.0;
      const double fx = p.xr.lo + (p.xr.hi - p.xr.lo) * i / 4.0;
      text(p.x0 - 4, p.py(fy) + 4, number(fy), "end", 10);
      text(p.px(fx), p.y0 + p.h + 14, number(fx), "middle", 10);
    }
  }

  void polyline(const Panel& p, const std::vector<double>& xs, const std::vector<double>& ys, const char* color,
                double width = 1.5) {
    os_ << "<polyline fill='none' stroke='" << color << "' stroke-width='" << width << "' points='";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (std::isfinite(ys[i])) os_ << p.px(xs[i]) << ',' << p.py(ys[i]) << ' ';
    }
    os_ << "'/>\n";
  }

  void dot(double x, double y, double r, const char* color) {
    os_ << "<circle cx='" << x << "' cy='" << y << "' r='" << r << "' fill='" << color << "'/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const char* color) {
    os_ << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2 << "' stroke='" << color
        << "'/>\n";
  }

  void rect(double x, double y, double w, double h, const char* color) {
    os_ << "<rect x='" << x << "' y='" << y << "' width='" << w << "' height='" << h << "' fill='" << color
        << "' fill-opacity='0.35' stroke='" << color << "'/>\n";
  }

  void text(double x, double y, const std::string& s, const char* anchor, int size) {
    os_ << "<text x='" << x << "' y='" << y << "' text-anchor='" << anchor << "' font-size='" << size
        << "' font-family='sans-serif'>" << escape(s) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width_ << "' height='" << height_
        << "' viewBox='0 0 " << width_ << ' ' << height_ << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
        << os_.str() << "</svg>\n";
    return out.str();
  }

 private:
  static std::string number(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
  }

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '\'': out += "&apos;"; break;
        default: out += c;
      }
    }
    return out;
  }

  double width_, height_;
  std::ostringstream os_;
};

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + (pos - static_cast<double>(i)) * (v[i + 1] - v[i]);
}

const std::vector<double>& metric_samples(const MetricsReport& r, const std::string& metric) {
  if (metric == "T_a") return r.T_a;
  if (metric == "T_s") return r.T_s;
  if (metric == "T") return r.T;
  if (metric == "T_r") return r.T_r_mean;
  if (metric == "curvature") return r.curvature_mean;
  throw ConfigError("unknown metric '" + metric + "' (T_a, T_s, T, T_r, curvature)");
}

}  // namespace

void cmd_plot_log(const fs::path& csv, const fs::path& out) {
  const auto rows = parse_train_log(read_file(csv));
  if (rows.empty()) throw ConfigError("training log " + csv.string() + " has no rows");
  std::vector<double> x;
  for (const auto& r : rows) x.push_back(static_cast<double>(r.env_steps));

  struct Series {
    const char* name;
    double TrainLogRow::*field;
  };
  const std::vector<std::pair<std::string, std::vector<Series>>> panels = {
      {"mean episode reward", {{"mean_reward", &TrainLogRow::mean_reward}}},
      {"success rate", {{"success_rate", &TrainLogRow::success_rate}}},
      {"losses",
       {{"L_PPO", &TrainLogRow::L_PPO},
        {"L_GAIL", &TrainLogRow::L_GAIL},
        {"L_BC", &TrainLogRow::L_BC},
        {"L_curiosity", &TrainLogRow::L_curiosity}}},
      {"theta_max_current (rad)", {{"theta_max_current", &TrainLogRow::theta_max_current}}}};

  Svg svg(900, 720);
  for (std::size_t k = 0; k < panels.size(); ++k) {
    Panel p{70.0 + 430.0 * static_cast<double>(k % 2), 40.0 + 340.0 * static_cast<double>(k / 2), 360.0, 260.0, {}, {}};
    for (double v : x) p.xr.add(v);
    const bool log_scale = panels[k].first == "losses";
    for (const auto& s : panels[k].second) {
      for (const auto& r : rows) p.yr.add(log_scale ? std::log10(std::max(r.*s.field, 1e-12)) : r.*s.field);
    }
    p.xr.finish();
    p.yr.finish();
    svg.axes(p, log_scale ? "losses (log10)" : panels[k].first, "environment steps");
    for (std::size_t i = 0; i < panels[k].second.size(); ++i) {
      const auto& s = panels[k].second[i];
      std::vector<double> y;
      for (const auto& r : rows) y.push_back(log_scale ? std::log10(std::max(r.*s.field, 1e-12)) : r.*s.field);
      svg.polyline(p, x, y, kColors[i % 6]);
      if (panels[k].second.size() > 1) svg.text(p.x0 + p.w - 4, p.y0 + 14 + 13.0 * i, s.name, "end", 10);
    }
  }
  write_file_atomic(out, svg.str());
}

void cmd_plot_reports(const std::vector<fs::path>& files, const std::string& metric, const fs::path& out) {
  if (files.empty()) throw ConfigError("plot reports: no report files");
  std::vector<MetricsReport> reports;
  for (const auto& f : files) reports.push_back(report_from_json(read_file(f)));
  Panel p{70, 40, 120.0 * static_cast<double>(reports.size()), 300, {}, {}};
  p.xr.lo = 0.0;
  p.xr.hi = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    for (double v : metric_samples(r, metric)) p.yr.add(v);
  }
  p.yr.finish();
  Svg svg(p.w + 120, 420);
  svg.axes(p, metric + " per episode", "");
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& v = metric_samples(reports[i], metric);
    const double cx = p.px(static_cast<double>(i) + 0.5);
    const char* color = kColors[i % 6];
    svg.text(cx, p.y0 + p.h + 30, reports[i].label, "middle", 11);
    if (v.empty()) continue;
    const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
    svg.line(cx, p.py(*std::min_element(v.begin(), v.end())), cx, p.py(*std::max_element(v.begin(), v.end())), color);
    svg.rect(cx - 30, p.py(q3), 60, std::max(p.py(q1) - p.py(q3), 1.0), color);
    svg.line(cx - 30, p.py(q2), cx + 30, p.py(q2), "#000");
  }
  write_file_atomic(out, svg.str());
}

void cmd_plot_path(const std::string& scenario, const std::vector<fs::path>& paths, const fs::path& out) {
  const Scenario s = resolve_scenario(scenario);
  const auto [world, spaces] = build_world(s);
  std::vector<PlannedPath> planned;
  for (const auto& f : paths) planned.push_back(load_path(f));

  // Top view: x right, y up.
  Panel p{60, 40, 640, 640, {}, {}};
  for (const auto& v : world.surface_positions()) {
    p.xr.add(v.x());
    p.yr.add(v.y());
  }
  p.xr.finish();
  p.yr.finish();
  const double span = std::max(p.xr.hi - p.xr.lo, p.yr.hi - p.yr.lo);
  p.xr.hi = p.xr.lo + span;
  p.yr.hi = p.yr.lo + span;
  Svg svg(760, 740);
  svg.axes(p, s.name + " (x-y projection, mm)", "x");
  for (const auto& v : world.surface_positions()) svg.dot(p.px(v.x()), p.py(v.y()), 1.0, "#bbbbbb");
  std::vector<double> cx, cy;
  for (const auto& c : spaces.centerline) {
    cx.push_back(c.x());
    cy.push_back(c.y());
  }
  svg.polyline(p, cx, cy, "#555555", 1.0);
  for (std::size_t i = 0; i < planned.size(); ++i) {
    std::vector<double> xs, ys;
    for (const auto& w : planned[i].waypoints()) {
      xs.push_back(w.x());
      ys.push_back(w.y());
    }
    svg.polyline(p, xs, ys, kColors[i % 6], 2.0);
    if (!planned[i].records.empty()) {
      const Vec3 t = planned[i].records.back().target;
      svg.dot(p.px(t.x()), p.py(t.y()), 4.0, kColors[i % 6]);
    }
  }
  write_file_atomic(out, svg.str());
}

}  // namespace cathnav::cli
