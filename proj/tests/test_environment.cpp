#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cathnav/environment.hpp"
#include "cathnav/scenario.hpp"

using namespace cathnav;

namespace {

class ConstantPolicy : public Policy {
 public:
  explicit ConstantPolicy(Action a) : a_(a) {}
  Action act(const Observation&, std::mt19937_64&) override { return a_; }

 private:
  Action a_;
};

SoftBodyWorld tube_world(double radius = 10.0, double length = 100.0) {
  return SoftBodyWorld::from_mesh(make_straight_tube(radius, length, 32, 40), SoftBodyParams{});
}

Spaces tube_spaces() {
  Spaces s;
  for (int i = 0; i <= 20; ++i) s.centerline.emplace_back(0.0, 5.0 * i, 0.0);
  s.start_poses = {TipPose{}};
  s.d_max = 100.0;
  return s;
}

}  // namespace

TEST(Reward, TableCompositionsExact) {
  const RewardConfig cfg;
  EXPECT_EQ(step_reward(cfg, StepEvent{}), -1e-5);

  StepEvent collision;
  collision.collided_non_minor = true;
  EXPECT_EQ(step_reward(cfg, collision), -1.0 + (-1e-5));
  EXPECT_NEAR(step_reward(cfg, collision), -1.00001, 1e-15);

  StepEvent target;
  target.reached_target = true;
  target.waypoint_hit = true;
  EXPECT_EQ(step_reward(cfg, target), 1.0 + (-1e-5 + 0.05));
  EXPECT_NEAR(step_reward(cfg, target), 1.04999, 1e-15);
}

TEST(Reward, EndRewardCases) {
  const RewardConfig cfg;
  StepEvent e;
  EXPECT_EQ(end_reward(cfg, e), 0.0);
  e.exited_lumen = true;
  EXPECT_EQ(end_reward(cfg, e), -1.0);
  e = {};
  e.bend_exceeds_threshold = true;
  EXPECT_EQ(step_reward(cfg, e), -1e-5 + 1e-5);
}

TEST(Reward, InconsistentEventsRejected) {
  StepEvent e;
  e.reached_target = true;
  e.exited_lumen = true;
  EXPECT_THROW(step_reward(RewardConfig{}, e), ContractViolation);
  e.exited_lumen = false;
  e.collided_non_minor = true;
  EXPECT_THROW(step_reward(RewardConfig{}, e), ContractViolation);
}

TEST(Reward, RangeOverAllConsistentEvents) {
  const RewardConfig cfg;
  const double lo = cfg.r_obst + cfg.r_step;
  const double hi = cfg.r_target + cfg.r_step + cfg.r_centerline + cfg.r_bending;
  for (int mask = 0; mask < 32; ++mask) {
    StepEvent e;
    e.collided_non_minor = mask & 1;
    e.exited_lumen = mask & 2;
    e.reached_target = mask & 4;
    e.waypoint_hit = mask & 8;
    e.bend_exceeds_threshold = mask & 16;
    if (int(e.collided_non_minor) + int(e.exited_lumen) + int(e.reached_target) > 1) continue;
    const double r = step_reward(cfg, e);
    EXPECT_GE(r, lo);
    EXPECT_LE(r, hi);
    EXPECT_GE(r, -1.0 - 1e-5);
    EXPECT_LE(r, 1.0 + 0.05);
  }
}

TEST(Reward, ConfigValidation) {
  RewardConfig c;
  EXPECT_NO_THROW(c.validate());
  c.r_step = 0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.r_target = 2.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Events, TargetThreshold) {
  const Spaces spaces = tube_spaces();
  const RewardConfig cfg;
  std::vector<bool> credited;
  EventInputs in;
  in.next.position = {0, 50, 0};
  in.target = {0, 59.9, 0};
  EXPECT_TRUE(detect_events(in, spaces, cfg, credited).reached_target);
  in.target = {0, 60.0, 0};
  credited.clear();
  EXPECT_FALSE(detect_events(in, spaces, cfg, credited).reached_target);
}

TEST(Events, ExitPlaneIsTerminalAndOutranksTarget) {
  const Spaces spaces = tube_spaces();
  std::vector<bool> credited;
  EventInputs in;
  in.next.position = {0, -0.1, 0};
  in.target = {0, 2, 0};
  const StepEvent ev = detect_events(in, spaces, RewardConfig{}, credited);
  EXPECT_TRUE(ev.exited_lumen);
  EXPECT_FALSE(ev.reached_target);
  EXPECT_TRUE(ev.terminal());
}

TEST(Events, WaypointsCreditedOnce) {
  const Spaces spaces = tube_spaces();
  std::vector<bool> credited;
  EventInputs in;
  in.target = {0, 1000, 0};
  in.next.position = {1, 50, 0};
  EXPECT_TRUE(detect_events(in, spaces, RewardConfig{}, credited).waypoint_hit);
  EXPECT_TRUE(credited[10]);
  // The neighbours at 45 and 55 are 5.1 mm away.
  EXPECT_FALSE(detect_events(in, spaces, RewardConfig{}, credited).waypoint_hit);
  // 52.5 reaches only the uncredited waypoint at 55.
  in.next.position = {0, 52.5, 0};
  EXPECT_TRUE(detect_events(in, spaces, RewardConfig{}, credited).waypoint_hit);
  EXPECT_TRUE(credited[11]);
  EXPECT_FALSE(detect_events(in, spaces, RewardConfig{}, credited).waypoint_hit);
}

TEST(Events, BendThreshold) {
  const Spaces spaces = tube_spaces();
  std::vector<bool> credited;
  EventInputs in;
  in.target = {0, 1000, 0};
  in.next.position = {0, 200, 0};
  in.step_bend_bound = 0.01;
  in.applied = {0.0081, 0.0, 0.5};
  EXPECT_TRUE(detect_events(in, spaces, RewardConfig{}, credited).bend_exceeds_threshold);
  in.applied = {0.0079, -0.0079, 0.5};
  EXPECT_FALSE(detect_events(in, spaces, RewardConfig{}, credited).bend_exceeds_threshold);
}

TEST(Events, NonMinorCollision) {
  const Spaces spaces = tube_spaces();
  std::vector<bool> credited;
  EventInputs in;
  in.target = {0, 1000, 0};
  in.next.position = {0, 200, 0};
  in.collision.classification = CollisionClass::minor;
  EXPECT_FALSE(detect_events(in, spaces, RewardConfig{}, credited).collided_non_minor);
  in.collision.classification = CollisionClass::non_minor;
  EXPECT_TRUE(detect_events(in, spaces, RewardConfig{}, credited).collided_non_minor);
}

TEST(Observation, TargetCoincidenceAndNormalization) {
  SoftBodyWorld w = tube_world();
  Spaces spaces = tube_spaces();
  w.target_particle = w.add_carrier(Vec3(0, 50, 0));
  TipPose at;
  at.position = {0, 50, 0};
  const Observation o = build_observation(at, w, spaces, RayFan{{}, 20.0});
  EXPECT_EQ(o.u, 0.0);
  EXPECT_EQ(o.v, Vec3::Zero());

  TipPose far;
  far.position = {0, 50 - spaces.d_max, 0};
  EXPECT_DOUBLE_EQ(build_observation(far, w, spaces, RayFan{{}, 20.0}).u, 1.0);
  far.position = {0, -500, 0};
  EXPECT_EQ(build_observation(far, w, spaces, RayFan{{}, 20.0}).u, 1.0);
}

TEST(Observation, PerpendicularRayHalfLength) {
  SoftBodyWorld w = tube_world();
  const Spaces spaces = tube_spaces();
  TipPose p;
  p.position = {0, 50, 0};
  const RayFan fan{{Vec3::UnitX(), Vec3::UnitY()}, 20.0};
  const Observation o = build_observation(p, w, spaces, fan);
  ASSERT_EQ(o.rays.size(), 2u);
  // Oracle: the softbody raycast divided by the ray length.
  const auto hit = raycast(w, p.position, Vec3::UnitX(), 20.0);
  ASSERT_TRUE(hit);
  EXPECT_DOUBLE_EQ(o.rays[0], *hit / 20.0);
  EXPECT_NEAR(o.rays[0], 0.5, 10.0 * (1 - std::cos(kPi / 32)) / 20.0);
  EXPECT_EQ(o.rays[1], 1.0);
}

TEST(Observation, RaysFollowTipFrame) {
  SoftBodyWorld w = tube_world();
  const Spaces spaces = tube_spaces();
  TipPose p;
  p.position = {0, 50, 0};
  p.gamma = kPi / 2;  // heading -x
  const RayFan fan{{Vec3::UnitY()}, 20.0};
  const auto hit = raycast(w, p.position, -Vec3::UnitX(), 20.0);
  EXPECT_DOUBLE_EQ(build_observation(p, w, spaces, fan).rays[0], *hit / 20.0);
}

TEST(Observation, StandardFan) {
  const RayFan fan = RayFan::standard();
  ASSERT_EQ(fan.directions.size(), 14u);
  EXPECT_EQ(fan.length, 30.0);
  for (std::size_t i = 6; i < 14; ++i) EXPECT_NEAR(fan.directions[i].y(), std::cos(kPi / 4), 1e-15);
  for (const auto& d : fan.directions) EXPECT_NEAR(d.norm(), 1.0, 1e-15);
  EXPECT_EQ(Observation::feature_size(14), 30u);
}

TEST(SampleTarget, DegenerateAndBounded) {
  SoftBodyWorld w = tube_world(40.0, 200.0);
  Spaces spaces = tube_spaces();
  for (int i = -4; i <= 4; ++i) {
    for (int j = -4; j <= 4; ++j) {
      for (int k = -4; k <= 4; ++k) {
        const Vec3 p(7.0 * i, 100.0 + 7.0 * j, 7.0 * k);
        if (p.x() * p.x() + p.z() * p.z() < 30.0 * 30.0) spaces.target_candidates.push_back(w.add_carrier(p));
      }
    }
  }
  spaces.target_region = {Vec3(0, 100, 0), 0.0};
  std::mt19937_64 rng(1);
  const auto first = sample_target(spaces, w, rng);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_target(spaces, w, rng), first);

  spaces.target_region.radius = 30.0;
  std::vector<Vec3> picks;
  for (int i = 0; i < 1000; ++i) picks.push_back(w.particles[sample_target(spaces, w, rng)].rest_position);
  double max_pair = 0.0;
  for (std::size_t a = 0; a < picks.size(); a += 7) {
    for (std::size_t b = 0; b < picks.size(); ++b) max_pair = std::max(max_pair, (picks[a] - picks[b]).norm());
  }
  // Snapping to the 7 mm lattice can add at most half a cell diagonal per end.
  EXPECT_LE(max_pair, 60.0 + std::sqrt(3.0) * 7.0);

  std::mt19937_64 r1(99), r2(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_target(spaces, w, r1), sample_target(spaces, w, r2));

  spaces.target_candidates.clear();
  EXPECT_THROW(sample_target(spaces, w, rng), ConfigError);
}

TEST(Centerline, StraightCylinderAxis) {
  const auto pts = extract_centerline(make_straight_tube(10.0, 100.0, 24, 20));
  ASSERT_GE(pts.size(), 20u);
  double dev = 0.0;
  for (const auto& p : pts) dev = std::max(dev, std::hypot(p.x(), p.z()));
  EXPECT_LT(dev, 1.0);
  EXPECT_LT(pts.front().y(), 1.0);
  EXPECT_GT(pts.back().y(), 99.0);
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LE((pts[i] - pts[i - 1]).norm(), 5.0 + 1e-9);
}

TEST(Centerline, TorusSectionArc) {
  const double R = 60.0;
  CenterlineOptions opts;
  opts.inlet_hint = Vec3::Zero();
  const auto pts = extract_centerline(make_curved_tube(10.0, R, deg2rad(120.0), 16, 32), opts);
  EXPECT_LT(pts.front().norm(), 1.0);
  for (const auto& p : pts) {
    const double r = std::hypot(p.x() - R, p.y());
    EXPECT_NEAR(r, R, 0.05 * R);
    EXPECT_LT(std::abs(p.z()), 1.0);
  }
}

TEST(Centerline, InletHintReversesOrder) {
  CenterlineOptions opts;
  opts.inlet_hint = Vec3(0, 100, 0);
  const auto pts = extract_centerline(make_straight_tube(10.0, 100.0, 24, 20), opts);
  EXPECT_GT(pts.front().y(), pts.back().y());
}

TEST(Centerline, RejectsWrongTopology) {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.triangles = {{0, 1, 2}};
  EXPECT_THROW(extract_centerline(m), ConfigError);
  EXPECT_THROW(extract_centerline(TriangleMesh{}), ConfigError);
}

TEST(Centerline, FileRoundTripVerbatim) {
  const std::vector<Vec3> pts = {{0.1, 0.2, 0.3}, {1.0 / 3.0, 2.0, -7.25}, {1e-9, 5, 6}};
  const auto path = std::filesystem::temp_directory_path() / "cathnav_centerline_test.txt";
  save_centerline(pts, path);
  EXPECT_EQ(load_centerline(path), pts);
  {
    std::ofstream out(path);
    out << "# header\n1 2 3\n4 5\n";
  }
  try {
    load_centerline(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), 15u);
  }
  std::filesystem::remove(path);
}

TEST(Episode, StraightAheadSucceedsWithHandComputedReward) {
  Environment env = build_environment(preset_scenario("straight_tube"));
  std::mt19937_64 rng(3);
  env.reset(0, env.spaces().target_candidates.front());
  ConstantPolicy forward({0.0, 0.0, 1.0});
  const EpisodeResult r = run_episode(forward, env, rng);
  ASSERT_TRUE(r.success);
  EXPECT_EQ(r.termination, Termination::target);
  EXPECT_LT((r.trajectory.back() - r.target_trajectory.back()).norm(), env.config().reward.epsilon);

  // Oracle: every waypoint within waypoint_radius of the straight path is credited.
  const double wr = env.config().reward.waypoint_radius;
  int credited = 0;
  for (const auto& w : env.spaces().centerline) {
    bool near = false;
    for (std::size_t i = 1; i < r.trajectory.size(); ++i) near = near || (r.trajectory[i] - w).norm() <= wr;
    credited += near;
  }
  const long ts = static_cast<long>(r.transitions.size());
  const double expected = 1.0 + ts * (-1e-5) + 0.05 * credited;
  EXPECT_NEAR(r.total_reward, expected, 1e-12);
  EXPECT_NEAR(r.total_reward, r.total_end_reward + r.total_in_reward, 1e-12);
  EXPECT_EQ(r.n0, 1);
  EXPECT_EQ(r.ng, ts);
  EXPECT_DOUBLE_EQ(r.tg, ts * env.config().catheter.dt);

  // Frozen world: success is raised at the first step inside epsilon.
  for (std::size_t i = 1; i + 1 < r.trajectory.size(); ++i) {
    EXPECT_GE((r.trajectory[i] - r.target_trajectory[i]).norm(), env.config().reward.epsilon);
  }
  for (std::size_t i = 0; i < r.transitions.size(); ++i) EXPECT_EQ(r.transitions[i].terminal, i + 1 == r.transitions.size());
}

TEST(Episode, RammingTheWallEndsInCollision) {
  Environment env = build_environment(preset_scenario("straight_tube"));
  std::mt19937_64 rng(3);
  env.reset(1, env.spaces().target_candidates.front());
  ConstantPolicy ram({0.0, 1.0, 1.0});
  const EpisodeResult r = run_episode(ram, env, rng);
  EXPECT_EQ(r.termination, Termination::collision);
  EXPECT_FALSE(r.success);
  EXPECT_LE(r.transitions.back().reward, -1.0 + 1e-9);
  EXPECT_GE(r.transitions.back().reward, -1.0 - 1e-5 - 1e-12);
  for (std::size_t i = 0; i + 1 < r.transitions.size(); ++i) EXPECT_GT(r.transitions[i].reward, -0.5);
}

TEST(Episode, ZeroActionStallsToStepLimit) {
  Environment env = build_environment(preset_scenario("straight_tube"));
  std::mt19937_64 rng(3);
  env.reset(rng);
  ConstantPolicy idle({0.0, 0.0, 0.0});
  const EpisodeResult r = run_episode(idle, env, rng, {50});
  EXPECT_EQ(r.termination, Termination::step_limit);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.transitions.size(), 50u);
  EXPECT_TRUE(r.transitions.back().terminal);
}

TEST(Episode, RandomPoliciesKeepInvariants) {
  Environment env = build_environment(preset_scenario("curved_tube"));
  class RandomPolicy : public Policy {
   public:
    Action act(const Observation&, std::mt19937_64& rng) override {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      return {0.05 * u(rng), 0.05 * u(rng), 0.5 * (u(rng) + 1.0)};
    }
  } policy;
  std::mt19937_64 rng(17);
  const double cap = env.config().reward.r_centerline * static_cast<double>(env.spaces().centerline.size());
  for (int ep = 0; ep < 10; ++ep) {
    env.reset(rng);
    const EpisodeResult r = run_episode(policy, env, rng, {400});
    double waypoint_sum = 0.0;
    for (const auto& t : r.transitions) {
      ASSERT_GE(t.obs.u, 0.0);
      ASSERT_LE(t.obs.u, 1.0);
      for (double ray : t.obs.rays) {
        ASSERT_GE(ray, 0.0);
        ASSERT_LE(ray, 1.0);
      }
      ASSERT_TRUE(is_clamped(env.config().catheter, t.action));
      const double in = t.reward - (t.terminal && r.termination != Termination::step_limit
                                        ? (r.termination == Termination::target ? 1.0 : -1.0)
                                        : 0.0);
      if (in > 0.01) waypoint_sum += env.config().reward.r_centerline;
    }
    EXPECT_LE(waypoint_sum, cap + 1e-12);
    EXPECT_NEAR(r.total_reward, r.total_end_reward + r.total_in_reward, 1e-12);
  }
}

TEST(Environment, DeterministicReplay) {
  Environment a = build_environment(preset_scenario("curved_tube"));
  Environment b = build_environment(preset_scenario("curved_tube"));
  std::mt19937_64 ra(5), rb(5);
  a.reset(ra);
  b.reset(rb);
  for (int i = 0; i < 200; ++i) {
    const Action act{0.01 * std::sin(i * 0.1), 0.01 * std::cos(i * 0.07), 0.5};
    const StepResult x = a.step(act);
    const StepResult y = b.step(act);
    ASSERT_EQ(x.observation, y.observation);
    ASSERT_EQ(x.reward, y.reward);
    if (x.done()) break;
  }
}

TEST(Environment, RetractPullsTipBack) {
  Environment env = build_environment(preset_scenario("straight_tube"));
  env.reset(0, env.spaces().target_candidates.front());
  for (int i = 0; i < 10; ++i) env.step({0, 0, 0.5});
  const Vec3 before = env.pose().position;
  const StepResult r = env.retract(0.5);
  EXPECT_EQ(r.applied, Action{});
  EXPECT_NEAR((before - env.pose().position).norm(), 0.5, 1e-12);
  EXPECT_NEAR(env.pose().position.y(), before.y() - 0.5, 1e-12);
  // Retraction is capped at one step's insertion.
  env.retract(10.0);
  EXPECT_NEAR(env.pose().position.y(), before.y() - 1.0, 1e-12);
  EXPECT_THROW(env.retract(-1.0), DomainError);
}

TEST(Environment, CurriculumThetaOverride) {
  Environment env = build_environment(preset_scenario("straight_tube"));
  env.reset(0, env.spaces().target_candidates.front());
  env.set_theta_max(kPi);
  const StepResult r = env.step({1.0, 0.0, 0.5});
  EXPECT_NEAR(r.applied.alpha, kPi * 0.5 / 50.0, 1e-15);
  EXPECT_EQ(env.config().catheter.theta_max, deg2rad(90.0));
}

TEST(Environment, DynamicWorldResetsToInitial) {
  BuildOptions o;
  o.heartbeat = true;
  o.contact_deformation = true;
  Environment env = build_environment(preset_scenario("curved_tube"), o);
  std::mt19937_64 rng(2);
  const Observation first = env.reset(0, env.spaces().target_candidates.front());
  const Vec3 t0 = env.target();
  for (int i = 0; i < 7; ++i) env.step({0, 0, 0.5});
  EXPECT_GT((env.target() - t0).norm(), 1e-6);
  const Observation again = env.reset(0, env.spaces().target_candidates.front());
  EXPECT_EQ(first, again);
}
