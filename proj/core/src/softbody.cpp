#include "cathnav/softbody.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace cathnav {

Vec3 heartbeat_displacement(const HeartbeatDriver& driver, double t) {
  if (!(driver.period > 0.0)) throw ConfigError("heartbeat period must be > 0");
  return driver.amplitude * std::sin(2.0 * kPi * t / driver.period);
}

Vec3 heartbeat_displacement(const HeartbeatDriver& driver, double t, std::size_t particle) {
  return driver.weight(particle) * heartbeat_displacement(driver, t);
}

void SoftBodyParams::validate() const {
  if (solver_iterations < 1) throw ConfigError("softbody solver_iterations must be >= 1");
  if (!(stiffness >= 0.0 && stiffness <= 1.0)) throw ConfigError("softbody stiffness must lie in [0, 1]");
  if (!(shape_stiffness >= 0.0 && shape_stiffness <= 1.0)) throw ConfigError("softbody shape_stiffness must lie in [0, 1]");
  if (!(velocity_damping >= 0.0 && velocity_damping <= 1.0)) throw ConfigError("softbody velocity_damping must lie in [0, 1]");
  if (!(contact_stiffness > 0.0)) throw ConfigError("softbody contact_stiffness must be > 0");
  if (!(force_cap > 0.0)) throw ConfigError("softbody force_cap must be > 0");
}

const char* to_string(CollisionClass c) {
  switch (c) {
    case CollisionClass::none: return "none";
    case CollisionClass::minor: return "minor";
    case CollisionClass::non_minor: return "non_minor";
  }
  return "?";
}

SoftBodyWorld SoftBodyWorld::from_mesh(const TriangleMesh& mesh, const SoftBodyParams& params) {
  params.validate();
  SoftBodyWorld world;
  world.params = params;
  world.triangles = mesh.triangles;
  world.surface_count = mesh.vertices.size();
  world.particles.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) world.particles.push_back({v, v, v, 1.0});

  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  for (const auto& [a, b] : edges) {
    const double len = (mesh.vertices[a] - mesh.vertices[b]).norm();
    if (len > 0.0) world.constraints.push_back({a, b, len, params.stiffness});
  }
  world.validate();
  world.refresh_surface();
  return world;
}

std::size_t SoftBodyWorld::add_carrier(const Vec3& position, int k, double stiffness) {
  if (surface_count == 0) throw ConfigError("add_carrier: world has no surface particles");
  std::vector<std::pair<double, std::uint32_t>> nearest;
  nearest.reserve(surface_count);
  for (std::uint32_t i = 0; i < surface_count; ++i) {
    nearest.emplace_back((particles[i].rest_position - position).squaredNorm(), i);
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), nearest.size());
  std::partial_sort(nearest.begin(), nearest.begin() + static_cast<long>(kk), nearest.end());

  const auto idx = static_cast<std::uint32_t>(particles.size());
  particles.push_back({position, position, position, 1.0});
  double weight_sum = 0.0;
  for (std::size_t n = 0; n < kk; ++n) {
    const auto j = nearest[n].second;
    constraints.push_back({idx, j, std::sqrt(nearest[n].first), stiffness});
    weight_sum += heartbeat.weight(j);
  }
  if (!heartbeat.weights.empty()) heartbeat.weights.push_back(weight_sum / static_cast<double>(kk));
  return idx;
}

void SoftBodyWorld::validate() const {
  params.validate();
  if (surface_count > particles.size()) throw ConfigError("surface_count exceeds particle count");
  for (const auto& t : triangles) {
    for (auto v : t) {
      if (v >= surface_count) throw ConfigError("triangle references a non-surface particle " + std::to_string(v));
    }
  }
  for (const auto& c : constraints) {
    if (c.i == c.j) throw ConfigError("distance constraint joins a particle to itself");
    if (c.i >= particles.size() || c.j >= particles.size()) throw ConfigError("constraint index out of range");
    if (!(c.rest_length > 0.0)) throw ConfigError("constraint rest_length must be > 0");
    if (!(c.stiffness >= 0.0 && c.stiffness <= 1.0)) throw ConfigError("constraint stiffness must lie in [0, 1]");
  }
  if (!particles.empty() && target_particle >= particles.size()) throw ConfigError("target_particle out of range");
  if (!heartbeat.weights.empty() && heartbeat.weights.size() != particles.size()) {
    throw ConfigError("heartbeat weights must match the particle count");
  }
  for (const auto& p : particles) {
    if (!(p.inverse_mass >= 0.0)) throw ConfigError("inverse_mass must be >= 0");
  }
  if (!(heartbeat.period > 0.0)) throw ConfigError("heartbeat period must be > 0");
}

void SoftBodyWorld::refresh_surface() {
  surface_positions_.resize(surface_count);
  for (std::size_t i = 0; i < surface_count; ++i) surface_positions_[i] = particles[i].position;

  normals_.assign(surface_count, Vec3::Zero());
  for (const auto& t : triangles) {
    // Cross product length is twice the area: area weighting for free.
    const Vec3 n = (surface_positions_[t[1]] - surface_positions_[t[0]])
                       .cross(surface_positions_[t[2]] - surface_positions_[t[0]]);
    for (auto v : t) normals_[v] += n;
  }
  for (auto& n : normals_) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }

  if (bvh_.empty() && !triangles.empty()) {
    bvh_ = TriangleBvh(surface_positions_, triangles);
  } else if (!triangles.empty()) {
    bvh_.refit(surface_positions_);
  }
}

Vec3 SoftBodyWorld::reference_position(std::size_t k) const {
  if (!heartbeat.active()) return particles[k].rest_position;
  return particles[k].rest_position + heartbeat_displacement(heartbeat, sim_time, k);
}

std::optional<std::pair<SurfacePoint, double>> SoftBodyWorld::signed_clearance(const Vec3& p) const {
  auto sp = bvh_.closest_point(surface_positions_, p, std::numeric_limits<double>::infinity());
  if (!sp) return std::nullopt;
  const auto& t = triangles[sp->triangle];
  Vec3 n = sp->barycentric[0] * normals_[t[0]] + sp->barycentric[1] * normals_[t[1]] +
           sp->barycentric[2] * normals_[t[2]];
  if (n.squaredNorm() == 0.0) {
    n = (surface_positions_[t[1]] - surface_positions_[t[0]]).cross(surface_positions_[t[2]] - surface_positions_[t[0]]);
  }
  const double side = (p - sp->point).dot(n);
  const double clearance = side <= 0.0 ? sp->distance : -sp->distance;
  return std::make_pair(*sp, clearance);
}

namespace {

inline void project_distance(std::vector<Particle>& ps, const DistanceConstraint& c) {
  Particle& a = ps[c.i];
  Particle& b = ps[c.j];
  const double w = a.inverse_mass + b.inverse_mass;
  if (w == 0.0) return;
  const Vec3 d = a.position - b.position;
  const double len = d.norm();
  if (len < 1e-12) return;
  const double violation = len - c.rest_length;
  const Vec3 corr = (c.stiffness * violation / (len * w)) * d;
  a.position -= a.inverse_mass * corr;
  b.position += b.inverse_mass * corr;
}

}  // namespace

void project_constraints_once(SoftBodyWorld& world) {
  for (const auto& c : world.constraints) project_distance(world.particles, c);
}

double max_constraint_residual(const SoftBodyWorld& world) {
  double worst = 0.0;
  for (const auto& c : world.constraints) {
    const double len = (world.particles[c.i].position - world.particles[c.j].position).norm();
    worst = std::max(worst, std::abs(len - c.rest_length));
  }
  return worst;
}

void pbd_step(SoftBodyWorld& world, double dt) {
  if (!(dt > 0.0)) throw DomainError("pbd_step: dt must be > 0");
  auto& ps = world.particles;
  const double t_old = world.sim_time;
  const double t_new = t_old + dt;

  if (world.heartbeat.active()) {
    const Vec3 shift = heartbeat_displacement(world.heartbeat, t_new) - heartbeat_displacement(world.heartbeat, t_old);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const Vec3 s = world.heartbeat.weight(k) * shift;
      ps[k].position += s;
      ps[k].prev_position += s;
    }
  }
  world.sim_time = t_new;

  const double damping = world.params.velocity_damping;
  for (auto& p : ps) {
    if (p.pinned()) {
      p.prev_position = p.position;
      continue;
    }
    const Vec3 velocity = p.position - p.prev_position;
    p.prev_position = p.position;
    p.position += damping * velocity;
  }

  const double shape_k = world.params.shape_stiffness;
  std::vector<Vec3> reference;
  if (shape_k > 0.0) {
    reference.resize(ps.size());
    for (std::size_t k = 0; k < ps.size(); ++k) reference[k] = world.reference_position(k);
  }
  for (int it = 0; it < world.params.solver_iterations; ++it) {
    project_constraints_once(world);
    if (shape_k > 0.0) {
      for (std::size_t k = 0; k < ps.size(); ++k) {
        if (!ps[k].pinned()) ps[k].position += shape_k * (reference[k] - ps[k].position);
      }
    }
  }

  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (!all_finite(ps[k].position)) {
      throw SimulationDiverged("pbd_step: non-finite position at particle " + std::to_string(k), k);
    }
  }
  world.refresh_surface();
}

CollisionReport classify_contact(const SoftBodyWorld& world, const Vec3& tip, double radius) {
  if (!(radius > 0.0)) throw ContractViolation("tip contact radius must be > 0");
  CollisionReport report;
  auto sc = world.signed_clearance(tip);
  if (!sc) return report;
  const auto& [sp, clearance] = *sc;
  report.clearance = clearance;
  const double penetration = radius - clearance;
  if (penetration <= 0.0) return report;
  report.hit = true;
  report.contact_point = sp.point;
  report.penetration_depth = penetration;
  report.estimated_force = world.params.contact_stiffness * penetration;
  const bool through_wall = clearance < 0.0;
  report.classification = (report.estimated_force > world.params.force_cap || through_wall)
                              ? CollisionClass::non_minor
                              : CollisionClass::minor;
  return report;
}

CollisionReport apply_tip_contact(SoftBodyWorld& world, const Vec3& tip, double radius, bool deform) {
  CollisionReport report = classify_contact(world, tip, radius);
  if (!report.hit || !deform) return report;

  auto sc = world.signed_clearance(tip);
  const auto& sp = sc->first;
  const auto& t = world.triangles[sp.triangle];
  const auto& normals = world.vertex_normals();
  Vec3 n = sp.barycentric[0] * normals[t[0]] + sp.barycentric[1] * normals[t[1]] + sp.barycentric[2] * normals[t[2]];
  if (n.norm() == 0.0) return report;
  n.normalize();

  const double push = std::min(report.penetration_depth, radius);
  double denom = 0.0;
  for (int k = 0; k < 3; ++k) denom += sp.barycentric[k] * sp.barycentric[k] * world.particles[t[k]].inverse_mass;
  if (denom <= 0.0) return report;
  for (int k = 0; k < 3; ++k) {
    Particle& p = world.particles[t[k]];
    if (p.pinned()) continue;
    const Vec3 delta = (sp.barycentric[k] * p.inverse_mass * push / denom) * n;
    p.position += delta;
    p.prev_position += delta;
  }
  world.refresh_surface();
  return report;
}

std::optional<double> raycast(const SoftBodyWorld& world, const Vec3& origin, const Vec3& direction,
                              double max_len) {
  if (std::abs(direction.norm() - 1.0) > 1e-9) throw ContractViolation("raycast: direction must be a unit vector");
  if (!(max_len > 0.0)) throw ContractViolation("raycast: max_len must be > 0");
  auto hit = world.bvh().raycast(world.surface_positions(), origin, direction, max_len);
  if (!hit || hit->distance > max_len) return std::nullopt;
  return hit->distance;
}

Vec3 target_position(const SoftBodyWorld& world) { return world.particles.at(world.target_particle).position; }

}  // namespace cathnav
