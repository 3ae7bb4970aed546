#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cathnav/common.hpp"

namespace cathnav {

/// n_s / n. Throws DomainError for n = 0 or n_s outside [0, n].
double success_rate(long successes, long trials);

/// Inclusive step count N_g - N_0 + 1, and t_g - t_0 in seconds. Both throw
/// DomainError when the end precedes the start.
long timesteps(long n0, long ng);
double duration(double t0, double tg);

/// Clamped cubic B-spline with the waypoints as control points, chord-length
/// knot spacing, sampled at `samples` points equally spaced in arc length.
/// Consecutive duplicates are collapsed first; fewer than four distinct
/// waypoints fall back to the polyline. Throws DomainError for an empty
/// input or samples < 2.
std::vector<Vec3> resample_path(std::span<const Vec3> waypoints, int samples = 500);

struct SeriesStats {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

SeriesStats series_stats(std::vector<double> values);

/// Distance from each trajectory point to the nearest sample of the
/// resampled desired path.
SeriesStats tracking_error(std::span<const Vec3> trajectory, std::span<const Vec3> desired);

/// Minimum distance between the trajectory and the target.
double targeting_error(std::span<const Vec3> trajectory, const Vec3& target);

/// Same, against a moving target sampled alongside the trajectory.
double targeting_error(std::span<const Vec3> trajectory, std::span<const Vec3> targets);

/// Discrete curvature of every interior point: inverse radius of the circle
/// through it and its neighbours (0 for collinear triples). Repeated points
/// are skipped.
SeriesStats curvature(std::span<const Vec3> path);

struct KruskalWallis {
  double h = 0.0;
  double p_value = 1.0;
  int dof = 0;
  bool significant = false;
};

/// Kruskal-Wallis H test with tie correction and the chi-square
/// approximation. Throws DomainError for fewer than two non-empty groups.
KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups, double alpha = 0.05);

/// Per-episode raw samples plus their summaries. Raw samples are kept so that
/// two reports can be compared with kruskal_wallis.
struct MetricsReport {
  std::string label;
  std::string config_hash;
  long n = 0;
  long n_s = 0;
  double delta = 0.0;
  std::vector<int> success;        // 0/1 per episode
  std::vector<double> T_s;         // steps
  std::vector<double> T;           // seconds
  std::vector<double> T_a;         // mm
  std::vector<double> T_r_mean;    // mm, per episode
  std::vector<double> curvature_mean;  // 1/mm, per episode
  std::vector<double> T_r_series;  // mm, pooled over all episodes
  double T_r_mean_all = 0.0;
  double T_r_std_all = 0.0;
  double curvature_mean_all = 0.0;
  double curvature_std_all = 0.0;

  /// Recomputes delta and the pooled summaries from the raw samples.
  void finalize();
};

/// Adds one episode. `trajectory` and `targets` are parallel samples;
/// `desired` is an already resampled guidance path.
void add_episode(MetricsReport& report, bool success, long n0, long ng, double t0, double tg,
                 std::span<const Vec3> trajectory, std::span<const Vec3> targets, std::span<const Vec3> desired);

std::string report_to_json(const MetricsReport& r);
/// Throws ParseError / SchemaError for malformed documents.
MetricsReport report_from_json(const std::string& text);

struct MetricComparison {
  std::string metric;
  KruskalWallis test;
  double median_a = 0.0;
  double median_b = 0.0;
};

/// Kruskal-Wallis per metric (T_s, T, T_a, T_r_mean, curvature_mean,
/// success). Throws SchemaError when a report lacks raw samples.
std::vector<MetricComparison> compare_reports(const MetricsReport& a, const MetricsReport& b, double alpha = 0.05);

}  // namespace cathnav
