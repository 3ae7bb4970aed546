#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cathnav/common.hpp"
#include "cathnav/kinematics.hpp"
#include "cathnav/mesh.hpp"
#include "cathnav/softbody.hpp"

namespace cathnav {

/// Half-space boundary; `normal` points into the lumen.
struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();

  double signed_distance(const Vec3& p) const { return (p - point).dot(normal); }
};

struct TargetRegion {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

/// Free/centerline/target/start description of one anatomy.
struct Spaces {
  std::vector<Vec3> centerline;
  TargetRegion target_region;
  std::vector<TipPose> start_poses;
  Plane exit_plane;                   // open lumen the catheter enters through
  std::optional<Plane> outlet_plane;  // far open end, if any
  double d_max = 1.0;                 // normalizer of the target distance
  std::vector<std::size_t> target_candidates;  // carrier particles inside the target region
};

struct RewardConfig {
  double r_obst = -1.0;
  double r_exit = -1.0;
  double r_target = 1.0;
  double r_step = -1e-5;
  double r_centerline = 0.05;
  double r_bending = 1e-5;
  double epsilon = 10.0;                 // success radius, mm
  double bend_threshold_fraction = 0.8;  // of the per-step bend bound
  double waypoint_radius = 5.0;          // mm

  void validate() const;
};

struct StepEvent {
  bool collided_non_minor = false;
  bool exited_lumen = false;
  bool reached_target = false;
  bool waypoint_hit = false;
  bool bend_exceeds_threshold = false;

  bool terminal() const { return collided_non_minor || exited_lumen || reached_target; }
};

/// Rays in the tip frame (x_A, y_A, z_A components), all unit length.
struct RayFan {
  std::vector<Vec3> directions;
  double length = 30.0;

  /// Six axis-aligned rays plus eight rays on a 45-degree cone around +y_A.
  static RayFan standard(double length = 30.0);
};

struct Observation {
  TipPose pose;
  double u = 0.0;            // normalized target distance
  Vec3 v = Vec3::Zero();     // target minus tip, mm
  std::vector<double> rays;  // hit distance / ray length, 1 = no hit

  /// Flat network input: rotation (row-major), position / scale, u,
  /// v / scale, rays.
  std::vector<double> features(double scale) const;
  static std::size_t feature_size(std::size_t ray_count) { return 9 + 3 + 1 + 3 + ray_count; }

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Static reward composition of one step.
double step_reward(const RewardConfig& cfg, const StepEvent& ev);

/// Terminal part of the step reward (0 when no terminal case applies).
double end_reward(const RewardConfig& cfg, const StepEvent& ev);

struct EventInputs {
  TipPose prev;
  TipPose next;
  Action applied;
  double step_bend_bound = 0.0;  // bend bound of this step under the active theta_max
  CollisionReport collision;
  Vec3 target = Vec3::Zero();
};

/// Waypoints are credited once per episode, in any order, at most one per
/// step. `credited` is updated in place. Exit has priority over reaching the
/// target, which has priority over a collision.
StepEvent detect_events(const EventInputs& in, const Spaces& spaces, const RewardConfig& cfg,
                        std::vector<bool>& credited);

struct CenterlineOptions {
  double spacing = 5.0;                // maximum output waypoint spacing, mm
  double march_step = 1.0;             // internal marching step, mm
  std::optional<Vec3> inlet_hint;      // picks the inlet end; defaults to the first loop
};

/// Maximal-clearance polyline from the inlet to the outlet of a tube mesh
/// with exactly two open ends. Throws ConfigError for other topologies.
std::vector<Vec3> extract_centerline(const TriangleMesh& mesh, const CenterlineOptions& options = {});

/// Plain text, one `x y z` waypoint per line, `#` comments allowed.
std::vector<Vec3> load_centerline(const std::filesystem::path& path);
void save_centerline(const std::vector<Vec3>& points, const std::filesystem::path& path);

/// Uniform sample in the target sphere, snapped to the nearest candidate
/// carrier particle. Throws ConfigError when there are no candidates.
std::size_t sample_target(const Spaces& spaces, const SoftBodyWorld& world, std::mt19937_64& rng);

Observation build_observation(const TipPose& pose, const SoftBodyWorld& world, const Spaces& spaces,
                              const RayFan& rays);

struct EnvironmentConfig {
  CatheterSpec catheter;
  RewardConfig reward;
  RayFan rays = RayFan::standard();
  int max_steps = 2000;
  bool heartbeat = false;            // animate the heartbeat driver
  bool contact_deformation = false;  // tip contacts deform the wall
  std::size_t body_points = 400;
};

enum class Termination { none, target, collision, exit, step_limit };

const char* to_string(Termination t);

struct StepResult {
  Action applied;
  Observation observation;
  StepEvent events;
  CollisionReport collision;
  double reward = 0.0;
  double end_reward = 0.0;
  double in_reward = 0.0;
  Termination termination = Termination::none;

  bool done() const { return termination != Termination::none; }
};

/// One navigation task instance: owns its world and catheter state.
class Environment {
 public:
  Environment(SoftBodyWorld world, Spaces spaces, EnvironmentConfig config);

  /// Random start pose and target.
  Observation reset(std::mt19937_64& rng);
  Observation reset(std::size_t start_index, std::size_t target_particle);

  /// Clamps `action` under the active theta_max, advances the catheter and
  /// the world, and scores the step.
  StepResult step(const Action& action);

  /// Pulls the tip back along its own history by up to one step's insertion
  /// and advances the world like `step`. The reported action is zero.
  StepResult retract(double distance);

  /// Overrides the bend limit used for clamping (curriculum).
  void set_theta_max(double theta) { active_spec_.theta_max = theta; }
  double theta_max() const { return active_spec_.theta_max; }
  const CatheterSpec& active_spec() const { return active_spec_; }

  Observation observe() const;
  const TipPose& pose() const { return pose_; }
  const CatheterBody& body() const { return body_; }
  const SoftBodyWorld& world() const { return world_; }
  const Spaces& spaces() const { return spaces_; }
  const EnvironmentConfig& config() const { return config_; }
  Vec3 target() const { return target_position(world_); }
  int steps() const { return steps_; }
  double time() const { return steps_ * config_.catheter.dt; }
  const std::vector<bool>& credited() const { return credited_; }
  std::size_t start_index() const { return start_index_; }

  std::size_t feature_size() const { return Observation::feature_size(config_.rays.directions.size()); }
  double feature_scale() const { return spaces_.d_max; }

 private:
  bool dynamic() const { return config_.heartbeat || config_.contact_deformation; }
  StepResult advance(const TipPose& prev, StepResult res);

  SoftBodyWorld initial_world_;
  SoftBodyWorld world_;
  Spaces spaces_;
  EnvironmentConfig config_;
  CatheterSpec active_spec_;
  TipPose pose_;
  CatheterBody body_;
  std::vector<bool> credited_;
  std::size_t start_index_ = 0;
  int steps_ = 0;
  bool world_dirty_ = false;
};

/// Stateful action source driven by observations.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void reset() {}
  virtual Action act(const Observation& obs, std::mt19937_64& rng) = 0;
};

struct Transition {
  Observation obs;
  Action action;  // as applied, after clamping
  double reward = 0.0;
  Observation next_obs;
  bool terminal = false;
};

struct EpisodeResult {
  std::vector<Transition> transitions;
  bool success = false;
  Termination termination = Termination::none;
  long n0 = 0;   // index of the first step taken (1-based)
  long ng = 0;   // index of the last step taken
  double t0 = 0.0;
  double tg = 0.0;
  std::vector<Vec3> trajectory;         // tip positions, start included
  std::vector<Vec3> target_trajectory;  // target position at each trajectory point
  double total_reward = 0.0;
  double total_end_reward = 0.0;
  double total_in_reward = 0.0;
  double min_target_distance = 0.0;
};

struct EpisodeLimits {
  std::optional<int> max_steps;
};

/// Runs from the environment's current state (call reset first) until a
/// terminal event or the step limit.
EpisodeResult run_episode(Policy& policy, Environment& env, std::mt19937_64& rng, const EpisodeLimits& limits = {});

}  // namespace cathnav
