#include "cathnav/environment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cathnav {

void RewardConfig::validate() const {
  auto in_unit = [](double v) { return v >= -1.0 && v <= 1.0; };
  if (!(r_obst <= 0.0 && r_exit <= 0.0 && r_step <= 0.0)) throw ConfigError("r_obst, r_exit and r_step must be <= 0");
  if (!(r_target >= 0.0 && r_centerline >= 0.0 && r_bending >= 0.0)) {
    throw ConfigError("r_target, r_centerline and r_bending must be >= 0");
  }
  for (double v : {r_obst, r_exit, r_target, r_step, r_centerline, r_bending}) {
    if (!in_unit(v)) throw ConfigError("reward values must lie in [-1, 1]");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(bend_threshold_fraction >= 0.0)) throw ConfigError("bend_threshold_fraction must be >= 0");
  if (!(waypoint_radius > 0.0)) throw ConfigError("waypoint_radius must be > 0");
}

RayFan RayFan::standard(double length) {
  RayFan fan;
  fan.length = length;
  fan.directions = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
  const double c = std::cos(deg2rad(45.0));
  const double s = std::sin(deg2rad(45.0));
  for (int k = 0; k < 8; ++k) {
    const double phi = 2.0 * kPi * k / 8.0;
    fan.directions.push_back(Vec3(s * std::cos(phi), c, s * std::sin(phi)).normalized());
  }
  return fan;
}

std::vector<double> Observation::features(double scale) const {
  std::vector<double> f;
  f.reserve(feature_size(rays.size()));
  const Mat3 r = pose.rotation();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) f.push_back(r(i, j));
  }
  for (int i = 0; i < 3; ++i) f.push_back(pose.position[i] / scale);
  f.push_back(u);
  for (int i = 0; i < 3; ++i) f.push_back(v[i] / scale);
  f.insert(f.end(), rays.begin(), rays.end());
  return f;
}

namespace {

void check_consistent(const StepEvent& ev) {
  const int terminal = int(ev.collided_non_minor) + int(ev.exited_lumen) + int(ev.reached_target);
  if (terminal > 1) throw ContractViolation("step event carries more than one terminal case");
}

}  // namespace

double end_reward(const RewardConfig& cfg, const StepEvent& ev) {
  check_consistent(ev);
  if (ev.reached_target) return cfg.r_target;
  if (ev.exited_lumen) return cfg.r_exit;
  if (ev.collided_non_minor) return cfg.r_obst;
  return 0.0;
}

double step_reward(const RewardConfig& cfg, const StepEvent& ev) {
  double r_in = cfg.r_step;
  if (ev.waypoint_hit) r_in += cfg.r_centerline;
  if (ev.bend_exceeds_threshold) r_in += cfg.r_bending;
  return end_reward(cfg, ev) + r_in;
}

StepEvent detect_events(const EventInputs& in, const Spaces& spaces, const RewardConfig& cfg,
                        std::vector<bool>& credited) {
  StepEvent ev;
  const Vec3& p = in.next.position;

  const bool crossed_exit = spaces.exit_plane.signed_distance(p) < 0.0;
  const bool crossed_outlet = spaces.outlet_plane && spaces.outlet_plane->signed_distance(p) < 0.0;
  const bool at_target = (p - in.target).norm() < cfg.epsilon;
  const bool collided = in.collision.classification == CollisionClass::non_minor;

  if (crossed_exit || crossed_outlet) {
    ev.exited_lumen = true;
  } else if (at_target) {
    ev.reached_target = true;
  } else if (collided) {
    ev.collided_non_minor = true;
  }

  if (credited.size() != spaces.centerline.size()) credited.assign(spaces.centerline.size(), false);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = credited.size();
  for (std::size_t i = 0; i < spaces.centerline.size(); ++i) {
    if (credited[i]) continue;
    const double d = (spaces.centerline[i] - p).norm();
    if (d <= cfg.waypoint_radius && d < best) {
      best = d;
      best_idx = i;
    }
  }
  if (best_idx < credited.size()) {
    credited[best_idx] = true;
    ev.waypoint_hit = true;
  }

  const double threshold = cfg.bend_threshold_fraction * in.step_bend_bound;
  ev.bend_exceeds_threshold =
      in.step_bend_bound > 0.0 && std::max(std::abs(in.applied.alpha), std::abs(in.applied.gamma)) > threshold;
  return ev;
}

namespace {

struct Loop {
  Vec3 centroid;
  Vec3 inward;  // unit, into the tube
  double radius;
};

Loop describe_loop(const TriangleMesh& mesh, const std::vector<std::uint32_t>& loop) {
  Vec3 c = Vec3::Zero();
  for (auto v : loop) c += mesh.vertices[v];
  c /= static_cast<double>(loop.size());
  // Newell normal of a boundary loop ordered by the outward-facing winding
  // points into the tube.
  Vec3 n = Vec3::Zero();
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Vec3& a = mesh.vertices[loop[i]];
    const Vec3& b = mesh.vertices[loop[(i + 1) % loop.size()]];
    n += (a - c).cross(b - c);
  }
  if (n.norm() < 1e-12) throw ConfigError("centerline extraction: degenerate boundary loop");
  double r = 0.0;
  for (auto v : loop) r += (mesh.vertices[v] - c).norm();
  return {c, n.normalized(), r / static_cast<double>(loop.size())};
}

double clearance(const TriangleBvh& bvh, std::span<const Vec3> pos, const Vec3& p) {
  auto sp = bvh.closest_point(pos, p, std::numeric_limits<double>::infinity());
  return sp ? sp->distance : 0.0;
}

// Pattern search for the maximal-clearance point in the plane through `q`
// spanned by e1, e2.
Vec3 recenter(const TriangleBvh& bvh, std::span<const Vec3> pos, Vec3 q, const Vec3& e1, const Vec3& e2,
              double initial_step) {
  double best = clearance(bvh, pos, q);
  double h = initial_step;
  const std::array<Vec3, 8> dirs = {e1, -e1, e2, -e2, (e1 + e2).normalized(), (e1 - e2).normalized(),
                                    (-e1 + e2).normalized(), (-e1 - e2).normalized()};
  while (h > 1e-4) {
    bool improved = false;
    for (const auto& d : dirs) {
      const Vec3 cand = q + h * d;
      const double c = clearance(bvh, pos, cand);
      if (c > best + 1e-12) {
        best = c;
        q = cand;
        improved = true;
        break;
      }
    }
    if (!improved) h *= 0.5;
  }
  return q;
}

std::vector<Vec3> resample_polyline(const std::vector<Vec3>& pts, double max_spacing) {
  if (pts.size() < 2) return pts;
  std::vector<double> s(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) s[i] = s[i - 1] + (pts[i] - pts[i - 1]).norm();
  const double total = s.back();
  const int segments = std::max(1, static_cast<int>(std::ceil(total / max_spacing - 1e-9)));
  std::vector<Vec3> out;
  out.reserve(segments + 1);
  std::size_t j = 0;
  for (int k = 0; k <= segments; ++k) {
    const double target = total * k / segments;
    while (j + 2 < pts.size() && s[j + 1] < target) ++j;
    const double span = s[j + 1] - s[j];
    const double t = span > 0.0 ? std::clamp((target - s[j]) / span, 0.0, 1.0) : 0.0;
    out.push_back(pts[j] + t * (pts[j + 1] - pts[j]));
  }
  return out;
}

}  // namespace

std::vector<Vec3> extract_centerline(const TriangleMesh& mesh, const CenterlineOptions& options) {
  if (!(options.spacing > 0.0) || !(options.march_step > 0.0)) {
    throw ConfigError("centerline extraction: spacing and march_step must be > 0");
  }
  if (mesh.triangles.empty()) throw ConfigError("centerline extraction: mesh has no triangles");
  const auto loops = boundary_loops(mesh);
  if (loops.size() != 2) {
    throw ConfigError("centerline extraction needs a tube with exactly two open ends, found " +
                      std::to_string(loops.size()));
  }
  Loop inlet = describe_loop(mesh, loops[0]);
  Loop outlet = describe_loop(mesh, loops[1]);
  if (options.inlet_hint &&
      (outlet.centroid - *options.inlet_hint).norm() < (inlet.centroid - *options.inlet_hint).norm()) {
    std::swap(inlet, outlet);
  }

  const TriangleBvh bvh(mesh.vertices, mesh.triangles);
  const std::span<const Vec3> pos(mesh.vertices);

  Eigen::AlignedBox3d box;
  for (const auto& v : mesh.vertices) box.extend(v);
  const double diag = box.diagonal().norm();
  const int max_iters = static_cast<int>(std::ceil(20.0 * diag / options.march_step)) + 10;

  std::vector<Vec3> pts{inlet.centroid};
  Vec3 p = inlet.centroid;
  Vec3 dir = inlet.inward;
  for (int it = 0; it < max_iters; ++it) {
    Vec3 q = p + options.march_step * dir;
    if ((q - outlet.centroid).dot(outlet.inward) <= 0.0) break;
    const Vec3 e1 = dir.unitOrthogonal();
    const Vec3 e2 = dir.cross(e1).normalized();
    const double local_r = std::max(clearance(bvh, pos, q), options.march_step);
    q = recenter(bvh, pos, q, e1, e2, 0.25 * local_r);
    if ((q - outlet.centroid).dot(outlet.inward) <= 0.0) break;
    const Vec3 step = q - p;
    if (step.norm() < 1e-9) throw ConfigError("centerline extraction stalled");
    dir = (0.5 * dir + 0.5 * step.normalized()).normalized();
    p = q;
    pts.push_back(q);
    if (it + 1 == max_iters) throw ConfigError("centerline extraction did not reach the outlet");
  }
  pts.push_back(outlet.centroid);
  // The loop centroids lie on the rim plane; pull the ends slightly inside so
  // every waypoint has positive clearance.
  const double inset = std::min(0.5, 0.25 * options.march_step);
  pts.front() += inset * inlet.inward;
  pts.back() += inset * outlet.inward;
  return resample_polyline(pts, options.spacing);
}

std::vector<Vec3> load_centerline(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open centerline file " + path.string());
  std::vector<Vec3> pts;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto start = offset;
    offset += line.size() + 1;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Vec3 v;
    if (!(ls >> v.x())) continue;
    if (!(ls >> v.y() >> v.z())) throw ParseError("centerline: expected three coordinates", start);
    pts.push_back(v);
  }
  if (pts.empty()) throw ConfigError("centerline file " + path.string() + " has no waypoints");
  return pts;
}

void save_centerline(const std::vector<Vec3>& points, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write centerline file " + path.string());
  out << std::setprecision(17);
  for (const auto& p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

std::size_t sample_target(const Spaces& spaces, const SoftBodyWorld& world, std::mt19937_64& rng) {
  if (spaces.target_candidates.empty()) throw ConfigError("no particle within the target region");
  const auto& region = spaces.target_region;
  Vec3 sample = region.center;
  if (region.radius > 0.0) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec3 d;
    do {
      d = Vec3(unit(rng), unit(rng), unit(rng));
    } while (d.squaredNorm() > 1.0);
    sample += region.radius * d;
  }
  std::size_t best = spaces.target_candidates.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (auto k : spaces.target_candidates) {
    const double d = (world.particles[k].rest_position - sample).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

Observation build_observation(const TipPose& pose, const SoftBodyWorld& world, const Spaces& spaces,
                              const RayFan& rays) {
  Observation obs;
  obs.pose = pose;
  const Vec3 target = target_position(world);
  obs.v = target - pose.position;
  obs.u = std::clamp(obs.v.norm() / spaces.d_max, 0.0, 1.0);
  const Mat3 r = pose.rotation();
  obs.rays.reserve(rays.directions.size());
  for (const auto& local : rays.directions) {
    const Vec3 dir = (r * local).normalized();
    const auto hit = raycast(world, pose.position, dir, rays.length);
    obs.rays.push_back(hit ? std::min(*hit / rays.length, 1.0) : 1.0);
  }
  return obs;
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::none: return "none";
    case Termination::target: return "target";
    case Termination::collision: return "collision";
    case Termination::exit: return "exit";
    case Termination::step_limit: return "step_limit";
  }
  return "?";
}

Environment::Environment(SoftBodyWorld world, Spaces spaces, EnvironmentConfig config)
    : initial_world_(std::move(world)),
      spaces_(std::move(spaces)),
      config_(std::move(config)),
      active_spec_(config_.catheter) {
  config_.catheter.validate();
  config_.reward.validate();
  initial_world_.validate();
  if (config_.max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (spaces_.start_poses.empty()) throw ConfigError("scenario has no start poses");
  if (spaces_.target_candidates.empty()) throw ConfigError("no particle within the target region");
  if (!(spaces_.d_max > 0.0)) throw ConfigError("d_max must be > 0");
  if (config_.rays.directions.empty() || !(config_.rays.length > 0.0)) throw ConfigError("ray fan is empty");
  for (auto& d : config_.rays.directions) {
    if (d.norm() == 0.0) throw ConfigError("ray direction must be non-zero");
    d.normalize();
  }
  world_ = initial_world_;
  body_.max_points = config_.body_points;
  reset(0, spaces_.target_candidates.front());
}

Observation Environment::reset(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, spaces_.start_poses.size() - 1);
  const std::size_t start = pick(rng);
  const std::size_t target = sample_target(spaces_, initial_world_, rng);
  return reset(start, target);
}

Observation Environment::reset(std::size_t start_index, std::size_t target_particle) {
  if (start_index >= spaces_.start_poses.size()) throw ContractViolation("start index out of range");
  if (target_particle >= initial_world_.particles.size()) throw ContractViolation("target particle out of range");
  if (world_dirty_) {
    world_ = initial_world_;
    world_dirty_ = false;
  }
  world_.target_particle = target_particle;
  start_index_ = start_index;
  pose_ = spaces_.start_poses[start_index];
  body_.history.clear();
  body_.history.push_back(pose_);
  credited_.assign(spaces_.centerline.size(), false);
  steps_ = 0;
  return observe();
}

Observation Environment::observe() const { return build_observation(pose_, world_, spaces_, config_.rays); }

StepResult Environment::step(const Action& action) {
  StepResult res;
  res.applied = clamp_action(active_spec_, action);
  const TipPose prev = pose_;
  pose_ = apply_action(active_spec_, pose_, res.applied);
  body_ = propagate_body(std::move(body_), pose_);
  return advance(prev, std::move(res));
}

StepResult Environment::retract(double distance) {
  if (!(distance >= 0.0)) throw DomainError("retract: distance must be >= 0");
  StepResult res;
  const TipPose prev = pose_;
  body_ = retract_body(std::move(body_), std::min(distance, active_spec_.max_insertion()));
  pose_ = body_.history.back();
  return advance(prev, std::move(res));
}

StepResult Environment::advance(const TipPose& prev, StepResult res) {
  ++steps_;

  if (dynamic()) {
    world_dirty_ = true;
    if (config_.heartbeat) {
      pbd_step(world_, config_.catheter.dt);
    }
  }
  const double radius = config_.catheter.outer_radius();
  res.collision = apply_tip_contact(world_, pose_.position, radius, config_.contact_deformation);
  if (config_.contact_deformation && !config_.heartbeat && res.collision.hit) {
    // Let the wall relax toward its rest shape between contacts.
    pbd_step(world_, config_.catheter.dt);
  }

  EventInputs in;
  in.prev = prev;
  in.next = pose_;
  in.applied = res.applied;
  in.step_bend_bound = max_bend_at_step(active_spec_, res.applied.insertion);
  in.collision = res.collision;
  in.target = target_position(world_);
  res.events = detect_events(in, spaces_, config_.reward, credited_);
  res.end_reward = end_reward(config_.reward, res.events);
  res.reward = step_reward(config_.reward, res.events);
  res.in_reward = res.reward - res.end_reward;
  res.observation = observe();

  if (res.events.exited_lumen) {
    res.termination = Termination::exit;
  } else if (res.events.reached_target) {
    res.termination = Termination::target;
  } else if (res.events.collided_non_minor) {
    res.termination = Termination::collision;
  } else if (steps_ >= config_.max_steps) {
    res.termination = Termination::step_limit;
  }
  return res;
}

EpisodeResult run_episode(Policy& policy, Environment& env, std::mt19937_64& rng, const EpisodeLimits& limits) {
  const int max_steps = limits.max_steps.value_or(env.config().max_steps);
  if (max_steps < 1) throw ContractViolation("run_episode: max_steps must be >= 1");
  policy.reset();
  EpisodeResult result;
  Observation obs = env.observe();
  result.n0 = env.steps() + 1;
  result.t0 = env.time();
  result.trajectory.push_back(env.pose().position);
  result.target_trajectory.push_back(env.target());
  result.min_target_distance = (env.pose().position - env.target()).norm();
  for (int k = 0; k < max_steps; ++k) {
    const Action a = policy.act(obs, rng);
    StepResult sr = env.step(a);
    result.total_reward += sr.reward;
    result.total_end_reward += sr.end_reward;
    result.total_in_reward += sr.in_reward;
    result.trajectory.push_back(env.pose().position);
    result.target_trajectory.push_back(env.target());
    result.min_target_distance = std::min(result.min_target_distance, (env.pose().position - env.target()).norm());
    const bool last = sr.done() || k + 1 == max_steps;
    result.transitions.push_back({obs, sr.applied, sr.reward, sr.observation, last});
    obs = std::move(sr.observation);
    if (last) {
      result.termination = sr.done() ? sr.termination : Termination::step_limit;
      break;
    }
  }
  result.success = result.termination == Termination::target;
  result.ng = env.steps();
  result.tg = env.time();
  return result;
}

}  // namespace cathnav
