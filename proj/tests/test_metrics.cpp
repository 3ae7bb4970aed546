#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cathnav/metrics.hpp"

using namespace cathnav;

namespace {

std::vector<Vec3> circle(double r, int n, double arc = 2.0 * kPi) {
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) {
    const double t = arc * i / n;
    out.emplace_back(r * std::cos(t), r * std::sin(t), 0.0);
  }
  return out;
}

// Plain rank-sum statistic without tie handling, for untied data only.
double h_oracle(const std::vector<std::vector<double>>& groups) {
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  std::sort(all.begin(), all.end());
  const double n = static_cast<double>(all.size());
  double s = 0.0;
  for (const auto& g : groups) {
    double r = 0.0;
    for (double v : g) r += static_cast<double>(std::lower_bound(all.begin(), all.end(), v) - all.begin()) + 1.0;
    s += r * r / static_cast<double>(g.size());
  }
  return 12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0);
}

}  // namespace

TEST(Scalars, Examples) {
  EXPECT_DOUBLE_EQ(success_rate(42, 100), 0.42);
  EXPECT_DOUBLE_EQ(success_rate(0, 3), 0.0);
  EXPECT_THROW(success_rate(0, 0), DomainError);
  EXPECT_THROW(success_rate(4, 3), DomainError);
  EXPECT_EQ(timesteps(100, 250), 151);
  EXPECT_EQ(timesteps(7, 7), 1);
  EXPECT_THROW(timesteps(5, 4), DomainError);
  EXPECT_DOUBLE_EQ(duration(10.5, 190.5), 180.0);
  EXPECT_THROW(duration(2.0, 1.0), DomainError);
}

TEST(Resample, CollinearStaysOnLine) {
  const std::vector<Vec3> w = {{0, 0, 0}, {1, 2, 3}, {2, 4, 6}, {5, 10, 15}, {6, 12, 18}};
  const Vec3 dir = Vec3(1, 2, 3).normalized();
  const auto out = resample_path(w, 500);
  ASSERT_EQ(out.size(), 500u);
  for (const auto& p : out) EXPECT_LT((p - p.dot(dir) * dir).norm(), 1e-9);
  EXPECT_LT((out.front() - w.front()).norm(), 1e-12);
  EXPECT_LT((out.back() - w.back()).norm(), 1e-12);
}

TEST(Resample, SquareCornersStayInBoundingBox) {
  const std::vector<Vec3> w = {{0, 0, 0}, {10, 0, 0}, {10, 10, 0}, {0, 10, 0}, {0, 0, 0}};
  for (const auto& p : resample_path(w, 300)) {
    EXPECT_GE(p.x(), -1e-9);
    EXPECT_LE(p.x(), 10 + 1e-9);
    EXPECT_GE(p.y(), -1e-9);
    EXPECT_LE(p.y(), 10 + 1e-9);
    EXPECT_NEAR(p.z(), 0.0, 1e-12);
  }
}

TEST(Resample, TwoSamplesAreEndpointsAndErrors) {
  const std::vector<Vec3> w = {{1, 1, 1}, {3, 0, 0}, {4, 5, 1}, {9, 9, 9}};
  const auto out = resample_path(w, 2);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], w.front());
  EXPECT_EQ(out[1], w.back());
  EXPECT_THROW(resample_path(std::vector<Vec3>{}, 10), DomainError);
  EXPECT_THROW(resample_path(w, 1), DomainError);
  // Duplicates collapse; a single distinct point repeats.
  const std::vector<Vec3> same = {{2, 2, 2}, {2, 2, 2}};
  for (const auto& p : resample_path(same, 5)) EXPECT_EQ(p, Vec3(2, 2, 2));
}

TEST(Resample, SpacingUniformWithinOnePercent) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> w;
    Vec3 p = Vec3::Zero();
    for (int i = 0; i < 8; ++i) {
      p += Vec3(10.0 + std::abs(u(rng)), u(rng), u(rng));
      w.push_back(p);
    }
    const auto out = resample_path(w, 500);
    std::vector<double> gaps;
    for (std::size_t i = 1; i < out.size(); ++i) gaps.push_back((out[i] - out[i - 1]).norm());
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / gaps.size();
    for (double g : gaps) EXPECT_NEAR(g, mean, 0.01 * mean);
  }
}

TEST(Tracking, OffsetLineAndHelix) {
  std::vector<Vec3> axis, traj;
  for (int i = 0; i <= 100; ++i) {
    axis.emplace_back(0, i, 0);
    traj.emplace_back(2.0, i, 0);
  }
  const auto desired = resample_path(axis, 501);
  const auto e = tracking_error(traj, desired);
  EXPECT_NEAR(e.mean, 2.0, 1e-9);
  EXPECT_NEAR(e.stddev, 0.0, 1e-9);
  EXPECT_EQ(e.values.size(), traj.size());

  std::vector<Vec3> helix;
  for (int i = 0; i <= 400; ++i) {
    const double t = 0.05 * i;
    helix.emplace_back(3.0 * std::cos(t), 0.5 * t, 3.0 * std::sin(t));
  }
  std::vector<Vec3> line;
  for (int i = 0; i <= 10; ++i) line.emplace_back(0, i, 0);
  const auto h = tracking_error(helix, resample_path(line, 2001));
  // Nearest axis sample is at most half a spacing away along y.
  EXPECT_NEAR(h.mean, 3.0, 1e-4);
  EXPECT_THROW(tracking_error(std::vector<Vec3>{}, desired), DomainError);
}

TEST(Tracking, InvariantUnderRigidTransforms) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  std::vector<Vec3> traj, desired;
  for (int i = 0; i < 60; ++i) {
    traj.emplace_back(n(rng), i, n(rng));
    desired.emplace_back(0.3 * n(rng), i, 0.3 * n(rng));
  }
  const auto base = tracking_error(traj, desired);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Quaterniond q(Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng)).normalized());
    const Vec3 t(10 * n(rng), 10 * n(rng), 10 * n(rng));
    std::vector<Vec3> a, b;
    for (const auto& p : traj) a.push_back(q * p + t);
    for (const auto& p : desired) b.push_back(q * p + t);
    const auto moved = tracking_error(a, b);
    EXPECT_NEAR(moved.mean, base.mean, 1e-9);
    EXPECT_NEAR(moved.stddev, base.stddev, 1e-9);
  }
}

TEST(Targeting, StaticAndMoving) {
  const std::vector<Vec3> traj = {{0, 0, 0}, {0, 5, 0}, {0, 10, 0}};
  EXPECT_DOUBLE_EQ(targeting_error(traj, Vec3(3, 9, 0)), std::hypot(3.0, 1.0));
  const std::vector<Vec3> targets = {{0, 4, 0}, {0, 20, 0}, {0, 10.5, 0}};
  EXPECT_DOUBLE_EQ(targeting_error(traj, targets), 0.5);
  EXPECT_THROW(targeting_error(traj, std::vector<Vec3>{{0, 0, 0}}), DomainError);
  EXPECT_THROW(targeting_error(std::vector<Vec3>{}, Vec3::Zero()), DomainError);
}

TEST(Curvature, CircleAndLine) {
  const auto k = curvature(circle(10.0, 50));
  ASSERT_EQ(k.values.size(), 48u);
  for (double v : k.values) EXPECT_NEAR(v, 0.1, 1e-12);
  std::vector<Vec3> line = {{0, 0, 0}, {1, 1, 1}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
  const auto z = curvature(line);
  EXPECT_EQ(z.values.size(), 2u);
  for (double v : z.values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Curvature, NoisyCircleWithinTenPercent) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.01);
  auto pts = circle(10.0, 60);
  for (auto& p : pts) p += Vec3(n(rng), n(rng), n(rng));
  EXPECT_NEAR(curvature(pts).mean, 0.1, 0.01);
}

TEST(KruskalWallis, TextbookExample) {
  const auto r = kruskal_wallis({{1, 2, 3}, {4, 5, 6}});
  const double h = h_oracle({{1, 2, 3}, {4, 5, 6}});
  EXPECT_NEAR(h, 27.0 / 7.0, 1e-12);
  EXPECT_NEAR(r.h, h, 1e-12);
  EXPECT_NEAR(r.h, 3.857, 5e-4);
  // Chi-square with one degree of freedom: survival is erfc(sqrt(h / 2)).
  EXPECT_NEAR(r.p_value, std::erfc(std::sqrt(h / 2.0)), 1e-12);
  EXPECT_NEAR(r.p_value, 0.0495, 5e-4);
  EXPECT_EQ(r.dof, 1);
  EXPECT_TRUE(r.significant);
  EXPECT_FALSE(kruskal_wallis({{1, 2, 3}, {4, 5, 6}}, 0.01).significant);
}

TEST(KruskalWallis, ThreeGroupsMatchOracle) {
  const std::vector<std::vector<double>> g = {{2.9, 3.0, 2.5, 2.6, 3.2}, {3.8, 2.7, 4.0, 2.4}, {2.8, 3.4, 3.7, 2.2, 2.0}};
  const auto r = kruskal_wallis(g);
  EXPECT_NEAR(r.h, h_oracle(g), 1e-12);
  EXPECT_EQ(r.dof, 2);
  // Two degrees of freedom: survival is exp(-h / 2).
  EXPECT_NEAR(r.p_value, std::exp(-r.h / 2.0), 1e-12);
}

TEST(KruskalWallis, IdenticalGroupsAndTies) {
  const auto r = kruskal_wallis({{1, 2, 3}, {1, 2, 3}});
  EXPECT_NEAR(r.h, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
  EXPECT_FALSE(r.significant);
  const auto c = kruskal_wallis({{5, 5}, {5, 5, 5}});
  EXPECT_DOUBLE_EQ(c.h, 0.0);
  EXPECT_DOUBLE_EQ(c.p_value, 1.0);
  // Tie correction: {0,0,1} vs {1,1,2}. Ranks 1.5,1.5,4 | 4,4,6; sum of t^3 - t = 6 + 24.
  const auto t = kruskal_wallis({{0, 0, 1}, {1, 1, 2}});
  const double raw = 12.0 / 42.0 * (49.0 / 3.0 + 196.0 / 3.0) - 21.0;
  EXPECT_NEAR(t.h, raw / (1.0 - 30.0 / 210.0), 1e-12);
  EXPECT_THROW(kruskal_wallis({{1, 2}}), DomainError);
  EXPECT_THROW(kruskal_wallis({{1, 2}, {}}), DomainError);
  EXPECT_THROW(kruskal_wallis({{1, NAN}, {2}}), DomainError);
}

TEST(KruskalWallis, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> g(3);
    for (auto& v : g)
      for (int i = 0; i < 7; ++i) v.push_back(n(rng) + 0.3 * (trial % 2));
    auto h = g;
    for (auto& v : h)
      for (auto& x : v) x = std::exp(2.0 * x) + 5.0;
    EXPECT_NEAR(kruskal_wallis(g).h, kruskal_wallis(h).h, 1e-9);
  }
}

TEST(KruskalWallis, NullRejectionRateNearAlpha) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  const int trials = 2000;
  int rejections = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> g(2, std::vector<double>(15));
    for (auto& v : g)
      for (auto& x : v) x = n(rng);
    rejections += kruskal_wallis(g).significant;
  }
  const double rate = static_cast<double>(rejections) / trials;
  EXPECT_GT(rate, 0.035);
  EXPECT_LT(rate, 0.065);
}

TEST(Report, AddEpisodeAndFinalize) {
  MetricsReport r;
  std::vector<Vec3> traj, targets, line;
  for (int i = 0; i <= 20; ++i) {
    traj.emplace_back(1.0, i, 0);
    targets.emplace_back(0, 25, 0);
    line.emplace_back(0, i, 0);
  }
  const auto desired = resample_path(line, 201);
  add_episode(r, true, 0, 20, 0.0, 2.0, traj, targets, desired);
  add_episode(r, false, 0, 9, 0.0, 0.9, std::span(traj).first(10), std::span(targets).first(10), desired);
  EXPECT_EQ(r.n, 2);
  EXPECT_EQ(r.n_s, 1);
  EXPECT_DOUBLE_EQ(r.delta, 0.5);
  EXPECT_EQ(r.T_s, (std::vector<double>{21, 10}));
  EXPECT_NEAR(r.T[1], 0.9, 1e-12);
  EXPECT_NEAR(r.T_a[0], std::hypot(1.0, 5.0), 1e-12);
  EXPECT_NEAR(r.T_a[1], std::hypot(1.0, 16.0), 1e-12);
  EXPECT_NEAR(r.T_r_mean_all, 1.0, 1e-9);
  EXPECT_EQ(r.T_r_series.size(), 31u);
  EXPECT_NEAR(r.curvature_mean_all, 0.0, 1e-12);
}

TEST(Report, JsonRoundTripAndErrors) {
  MetricsReport r;
  r.label = "run \"a\"";
  r.config_hash = "abc123";
  r.success = {1, 0, 1};
  r.T_s = {10, 20, 30};
  r.T = {1.0, 2.0, 3.0};
  r.T_a = {0.5, 7.25, 1.0 / 3.0};
  r.T_r_mean = {1, 2, 3};
  r.curvature_mean = {0.1, 0.2, 0.3};
  r.T_r_series = {1, 2, 3, 4};
  r.finalize();
  const auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.label, r.label);
  EXPECT_EQ(back.config_hash, r.config_hash);
  EXPECT_EQ(back.success, r.success);
  EXPECT_EQ(back.T_a, r.T_a);
  EXPECT_EQ(back.T_r_series, r.T_r_series);
  EXPECT_EQ(back.n_s, 2);
  EXPECT_DOUBLE_EQ(back.delta, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(back.T_r_mean_all, 2.5);

  try {
    report_from_json("{\"format\": ");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.byte_offset(), 0u);
  }
  EXPECT_THROW(report_from_json("{\"format\": \"other\"}"), SchemaError);
  EXPECT_THROW(report_from_json("{\"format\": \"cathnav-report\", \"version\": 1}"), SchemaError);
  EXPECT_THROW(report_from_json(
                   "{\"format\": \"cathnav-report\", \"version\": 1, \"samples\": {\"success\": [1], \"T_s\": [], "
                   "\"T\": [1], \"T_a\": [1], \"T_r_mean\": [1], \"curvature_mean\": [1]}}"),
               SchemaError);
}

TEST(Report, CompareSelfIsNotSignificant) {
  MetricsReport a;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(10.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    a.success.push_back(i % 3 == 0);
    a.T_s.push_back(std::round(n(rng) * 10));
    a.T.push_back(n(rng));
    a.T_a.push_back(n(rng));
    a.T_r_mean.push_back(n(rng));
    a.curvature_mean.push_back(n(rng));
  }
  a.finalize();
  const auto same = compare_reports(a, a);
  ASSERT_EQ(same.size(), 6u);
  for (const auto& c : same) {
    EXPECT_FALSE(c.test.significant) << c.metric;
    EXPECT_DOUBLE_EQ(c.median_a, c.median_b);
  }
  MetricsReport b = a;
  for (auto& x : b.T) x += 5.0;
  const auto diff = compare_reports(a, b);
  const auto it = std::find_if(diff.begin(), diff.end(), [](const auto& c) { return c.metric == "T"; });
  ASSERT_NE(it, diff.end());
  EXPECT_TRUE(it->test.significant);
  EXPECT_LT(it->test.p_value, 1e-6);
  EXPECT_THROW(compare_reports(a, MetricsReport{}), SchemaError);
}
