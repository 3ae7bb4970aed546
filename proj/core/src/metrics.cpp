#include "cathnav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>
#include <nlohmann/json.hpp>

namespace cathnav {

double success_rate(long successes, long trials) {
  if (trials <= 0) throw DomainError("success_rate: no trials");
  if (successes < 0 || successes > trials) throw DomainError("success_rate: successes outside [0, trials]");
  return static_cast<double>(successes) / static_cast<double>(trials);
}

long timesteps(long n0, long ng) {
  if (ng < n0) throw DomainError("timesteps: N_g precedes N_0");
  return ng - n0 + 1;
}

double duration(double t0, double tg) {
  if (tg < t0) throw DomainError("duration: t_g precedes t_0");
  return tg - t0;
}

namespace {

std::vector<Vec3> collapse_duplicates(std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) {
    if (out.empty() || (p - out.back()).norm() > 1e-12) out.push_back(p);
  }
  return out;
}

class ClampedCubic {
 public:
  explicit ClampedCubic(std::vector<Vec3> ctrl) : ctrl_(std::move(ctrl)) {
    const std::size_t m = ctrl_.size();
    std::vector<double> u(m, 0.0);
    for (std::size_t i = 1; i < m; ++i) u[i] = u[i - 1] + (ctrl_[i] - ctrl_[i - 1]).norm();
    for (auto& x : u) x /= u.back();
    knots_.assign(m + 4, 0.0);
    for (std::size_t i = m; i < m + 4; ++i) knots_[i] = 1.0;
    // Knot averaging over the chord-length parameters.
    for (std::size_t j = 1; j + 4 <= m; ++j) {
      knots_[j + 3] = (u[j] + u[j + 1] + u[j + 2]) / 3.0;
    }
  }

  Vec3 operator()(double t) const {
    constexpr int p = 3;
    const std::size_t m = ctrl_.size();
    t = std::clamp(t, 0.0, 1.0);
    std::size_t k = p;
    while (k + 1 < m && knots_[k + 1] <= t) ++k;
    std::array<Vec3, 4> d;
    for (int j = 0; j <= p; ++j) d[j] = ctrl_[k - p + j];
    for (int r = 1; r <= p; ++r) {
      for (int j = p; j >= r; --j) {
        const std::size_t i = k - p + j;
        const double denom = knots_[i + p - r + 1] - knots_[i];
        const double a = denom > 0.0 ? (t - knots_[i]) / denom : 0.0;
        d[j] = (1.0 - a) * d[j - 1] + a * d[j];
      }
    }
    return d[p];
  }

 private:
  std::vector<Vec3> ctrl_;
  std::vector<double> knots_;
};

std::vector<Vec3> resample_by_arc_length(const std::vector<Vec3>& dense, int samples) {
  std::vector<double> s(dense.size(), 0.0);
  for (std::size_t i = 1; i < dense.size(); ++i) s[i] = s[i - 1] + (dense[i] - dense[i - 1]).norm();
  std::vector<Vec3> out;
  out.reserve(samples);
  std::size_t j = 0;
  for (int k = 0; k < samples; ++k) {
    const double target = s.back() * k / (samples - 1);
    while (j + 2 < dense.size() && s[j + 1] < target) ++j;
    const double span = s[j + 1] - s[j];
    const double t = span > 0.0 ? std::clamp((target - s[j]) / span, 0.0, 1.0) : 0.0;
    out.push_back(dense[j] + t * (dense[j + 1] - dense[j]));
  }
  out.front() = dense.front();
  out.back() = dense.back();
  return out;
}

}  // namespace

std::vector<Vec3> resample_path(std::span<const Vec3> waypoints, int samples) {
  if (waypoints.empty()) throw DomainError("resample_path: no waypoints");
  if (samples < 2) throw DomainError("resample_path: need at least 2 samples");
  auto pts = collapse_duplicates(waypoints);
  if (pts.size() == 1) return std::vector<Vec3>(static_cast<std::size_t>(samples), pts.front());
  if (pts.size() < 4) return resample_by_arc_length(pts, samples);

  const ClampedCubic spline(pts);
  const std::size_t dense_n = std::max<std::size_t>(64 * pts.size(), 20 * static_cast<std::size_t>(samples));
  std::vector<Vec3> dense(dense_n + 1);
  for (std::size_t i = 0; i <= dense_n; ++i) dense[i] = spline(static_cast<double>(i) / dense_n);
  return resample_by_arc_length(collapse_duplicates(dense), samples);
}

SeriesStats series_stats(std::vector<double> values) {
  SeriesStats st;
  st.values = std::move(values);
  if (st.values.empty()) return st;
  const double n = static_cast<double>(st.values.size());
  st.mean = std::accumulate(st.values.begin(), st.values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : st.values) ss += (v - st.mean) * (v - st.mean);
  st.stddev = std::sqrt(ss / n);
  return st;
}

SeriesStats tracking_error(std::span<const Vec3> trajectory, std::span<const Vec3> desired) {
  if (trajectory.empty() || desired.empty()) throw DomainError("tracking_error: empty input");
  std::vector<double> d;
  d.reserve(trajectory.size());
  for (const auto& p : trajectory) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : desired) best = std::min(best, (p - q).squaredNorm());
    d.push_back(std::sqrt(best));
  }
  return series_stats(std::move(d));
}

double targeting_error(std::span<const Vec3> trajectory, const Vec3& target) {
  if (trajectory.empty()) throw DomainError("targeting_error: empty trajectory");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : trajectory) best = std::min(best, (p - target).norm());
  return best;
}

double targeting_error(std::span<const Vec3> trajectory, std::span<const Vec3> targets) {
  if (trajectory.empty()) throw DomainError("targeting_error: empty trajectory");
  if (targets.size() != trajectory.size()) throw DomainError("targeting_error: target samples do not match");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trajectory.size(); ++i) best = std::min(best, (trajectory[i] - targets[i]).norm());
  return best;
}

SeriesStats curvature(std::span<const Vec3> path) {
  const auto pts = collapse_duplicates(path);
  std::vector<double> k;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const Vec3 ab = pts[i] - pts[i - 1];
    const Vec3 bc = pts[i + 1] - pts[i];
    const Vec3 ac = pts[i + 1] - pts[i - 1];
    const double denom = ab.norm() * bc.norm() * ac.norm();
    if (denom <= 0.0) continue;
    k.push_back(2.0 * ab.cross(ac).norm() / denom);
  }
  return series_stats(std::move(k));
}

KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups, double alpha) {
  std::vector<std::pair<double, std::size_t>> all;
  int non_empty = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!groups[g].empty()) ++non_empty;
    for (double v : groups[g]) {
      if (!std::isfinite(v)) throw DomainError("kruskal_wallis: non-finite sample");
      all.emplace_back(v, g);
    }
  }
  if (non_empty < 2 || non_empty != static_cast<int>(groups.size())) {
    throw DomainError("kruskal_wallis: need at least two groups, each non-empty");
  }
  std::sort(all.begin(), all.end());
  const double n = static_cast<double>(all.size());
  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank_sum[all[k].second] += avg_rank;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  KruskalWallis res;
  res.dof = static_cast<int>(groups.size()) - 1;
  const double correction = 1.0 - tie_term / (n * n * n - n);
  if (correction <= 0.0) {
    res.h = 0.0;
    res.p_value = 1.0;
    return res;
  }
  double s = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) s += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
  res.h = std::max(0.0, (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction);
  res.p_value = res.h > 0.0 ? boost::math::gamma_q(0.5 * res.dof, 0.5 * res.h) : 1.0;
  res.significant = res.p_value < alpha;
  return res;
}

void MetricsReport::finalize() {
  n = static_cast<long>(success.size());
  n_s = std::count(success.begin(), success.end(), 1);
  delta = n > 0 ? success_rate(n_s, n) : 0.0;
  const auto tr = series_stats(T_r_series);
  T_r_mean_all = tr.mean;
  T_r_std_all = tr.stddev;
  const auto cv = series_stats(curvature_mean);
  curvature_mean_all = cv.mean;
  curvature_std_all = cv.stddev;
}

void add_episode(MetricsReport& report, bool success, long n0, long ng, double t0, double tg,
                 std::span<const Vec3> trajectory, std::span<const Vec3> targets, std::span<const Vec3> desired) {
  report.success.push_back(success ? 1 : 0);
  report.T_s.push_back(static_cast<double>(timesteps(n0, ng)));
  report.T.push_back(duration(t0, tg));
  report.T_a.push_back(targeting_error(trajectory, targets));
  const auto tr = tracking_error(trajectory, desired);
  report.T_r_mean.push_back(tr.mean);
  report.T_r_series.insert(report.T_r_series.end(), tr.values.begin(), tr.values.end());
  report.curvature_mean.push_back(trajectory.size() >= 3 ? curvature(trajectory).mean : 0.0);
  report.finalize();
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["format"] = "cathnav-report";
  j["version"] = 1;
  j["label"] = r.label;
  j["config_hash"] = r.config_hash;
  j["n"] = r.n;
  j["n_s"] = r.n_s;
  j["delta"] = r.delta;
  j["T_r_mean"] = r.T_r_mean_all;
  j["T_r_std"] = r.T_r_std_all;
  j["curvature_mean"] = r.curvature_mean_all;
  j["curvature_std"] = r.curvature_std_all;
  j["samples"] = {{"success", r.success},   {"T_s", r.T_s},
                  {"T", r.T},               {"T_a", r.T_a},
                  {"T_r_mean", r.T_r_mean}, {"curvature_mean", r.curvature_mean},
                  {"T_r_series", r.T_r_series}};
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what(), e.byte);
  }
  if (!j.is_object() || j.value("format", "") != "cathnav-report") throw SchemaError("report: not a metrics report");
  if (j.value("version", 0) != 1) throw SchemaError("report: unsupported version");
  if (!j.contains("samples")) throw SchemaError("report: missing raw samples");
  MetricsReport r;
  try {
    r.label = j.value("label", "");
    r.config_hash = j.value("config_hash", "");
    const auto& s = j.at("samples");
    r.success = s.at("success").get<std::vector<int>>();
    r.T_s = s.at("T_s").get<std::vector<double>>();
    r.T = s.at("T").get<std::vector<double>>();
    r.T_a = s.at("T_a").get<std::vector<double>>();
    r.T_r_mean = s.at("T_r_mean").get<std::vector<double>>();
    r.curvature_mean = s.at("curvature_mean").get<std::vector<double>>();
    r.T_r_series = s.value("T_r_series", std::vector<double>{});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("report: ") + e.what());
  }
  const std::size_t n = r.success.size();
  if (r.T_s.size() != n || r.T.size() != n || r.T_a.size() != n || r.T_r_mean.size() != n ||
      r.curvature_mean.size() != n) {
    throw SchemaError("report: raw sample arrays differ in length");
  }
  r.finalize();
  return r;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<MetricComparison> compare_reports(const MetricsReport& a, const MetricsReport& b, double alpha) {
  if (a.success.empty() || b.success.empty()) throw SchemaError("compare: report has no raw samples");
  auto as_double = [](const std::vector<int>& v) { return std::vector<double>(v.begin(), v.end()); };
  const std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>> metrics = {
      {"success", {as_double(a.success), as_double(b.success)}},
      {"T_s", {a.T_s, b.T_s}},
      {"T", {a.T, b.T}},
      {"T_a", {a.T_a, b.T_a}},
      {"T_r_mean", {a.T_r_mean, b.T_r_mean}},
      {"curvature_mean", {a.curvature_mean, b.curvature_mean}},
  };
  std::vector<MetricComparison> out;
  for (const auto& [name, groups] : metrics) {
    if (groups.first.empty() || groups.second.empty()) throw SchemaError("compare: missing raw samples for " + name);
    MetricComparison c;
    c.metric = name;
    c.test = kruskal_wallis({groups.first, groups.second}, alpha);
    c.median_a = median(groups.first);
    c.median_b = median(groups.second);
    out.push_back(c);
  }
  return out;
}

}  // namespace cathnav
