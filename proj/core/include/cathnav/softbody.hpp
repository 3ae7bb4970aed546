#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cathnav/common.hpp"
#include "cathnav/mesh.hpp"

namespace cathnav {

struct Particle {
  Vec3 position = Vec3::Zero();
  Vec3 prev_position = Vec3::Zero();
  Vec3 rest_position = Vec3::Zero();
  double inverse_mass = 1.0;  // 1/g, 0 = pinned

  bool pinned() const { return inverse_mass == 0.0; }
};

struct DistanceConstraint {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  double rest_length = 0.0;  // mm
  double stiffness = 1.0;    // [0, 1]
};

/// Periodic displacement field. Particle k is displaced by
/// weights[k] * amplitude * sin(2*pi*t/period); an empty weight list means
/// weight 1 everywhere.
struct HeartbeatDriver {
  Vec3 amplitude = Vec3::Zero();
  double period = 1.0;
  std::vector<double> weights;

  double weight(std::size_t particle) const { return weights.empty() ? 1.0 : weights[particle]; }
  bool active() const { return amplitude.squaredNorm() > 0.0; }
};

/// Unit-weight displacement at time t. Throws ConfigError for period <= 0.
Vec3 heartbeat_displacement(const HeartbeatDriver& driver, double t);
Vec3 heartbeat_displacement(const HeartbeatDriver& driver, double t, std::size_t particle);

struct SoftBodyParams {
  int solver_iterations = 10;
  double stiffness = 0.9;          // distance constraints generated from mesh edges
  double contact_stiffness = 2.0;  // N/mm, linear penalty used to estimate contact force
  double force_cap = 0.8;          // N, minor/non-minor boundary
  double shape_stiffness = 0.05;   // per-iteration pull toward the (heartbeat-shifted) rest shape
  double velocity_damping = 0.9;   // fraction of Verlet velocity kept by the prediction

  void validate() const;
};

enum class CollisionClass { none, minor, non_minor };

const char* to_string(CollisionClass c);

struct CollisionReport {
  bool hit = false;
  Vec3 contact_point = Vec3::Zero();
  double penetration_depth = 0.0;  // mm
  double estimated_force = 0.0;    // N
  CollisionClass classification = CollisionClass::none;
  double clearance = 0.0;  // signed tip-center distance to the wall, negative outside the lumen
};

/// Particle system bound to a vessel surface. Particles [0, surface_count)
/// are mesh vertices referenced by `triangles`; later particles are interior
/// carriers (e.g. target anchors) tied to the wall by constraints.
///
/// After editing particle positions directly, call `refresh_surface()` so
/// that normals and the ray/closest-point acceleration structure follow.
class SoftBodyWorld {
 public:
  std::vector<Particle> particles;
  std::vector<DistanceConstraint> constraints;
  std::vector<Triangle> triangles;
  HeartbeatDriver heartbeat;
  std::size_t target_particle = 0;
  double sim_time = 0.0;
  SoftBodyParams params;
  std::size_t surface_count = 0;

  /// One particle per vertex, one constraint per unique edge.
  static SoftBodyWorld from_mesh(const TriangleMesh& mesh, const SoftBodyParams& params);

  /// Adds an interior particle tied to its `k` nearest surface particles.
  std::size_t add_carrier(const Vec3& position, int k = 3, double stiffness = 1.0);

  void pin(std::size_t particle) { particles[particle].inverse_mass = 0.0; }

  /// Throws ConfigError when indices or parameters are invalid.
  void validate() const;

  void refresh_surface();

  /// Current reference position of particle k: rest shape plus heartbeat.
  Vec3 reference_position(std::size_t k) const;

  std::span<const Vec3> surface_positions() const { return surface_positions_; }
  const std::vector<Vec3>& vertex_normals() const { return normals_; }
  const TriangleBvh& bvh() const { return bvh_; }

  /// Closest wall point with the signed tip clearance (positive inside the
  /// lumen). Nullopt only for a world without triangles.
  std::optional<std::pair<SurfacePoint, double>> signed_clearance(const Vec3& p) const;

 private:
  std::vector<Vec3> surface_positions_;
  std::vector<Vec3> normals_;
  TriangleBvh bvh_;
};

/// Advances the world by dt: kinematic heartbeat shift, damped Verlet
/// prediction, then `solver_iterations` Gauss-Seidel sweeps over distance and
/// shape constraints. Throws SimulationDiverged on a non-finite position.
void pbd_step(SoftBodyWorld& world, double dt);

/// One Gauss-Seidel sweep over the distance constraints only.
void project_constraints_once(SoftBodyWorld& world);

double max_constraint_residual(const SoftBodyWorld& world);

/// Resolves the overlap between a spherical tip and the wall by pushing the
/// contacted triangle outward, and classifies the contact. With `deform`
/// false only the report is computed.
CollisionReport apply_tip_contact(SoftBodyWorld& world, const Vec3& tip, double radius, bool deform = true);

CollisionReport classify_contact(const SoftBodyWorld& world, const Vec3& tip, double radius);

/// Nearest hit distance along a unit direction against the current surface.
std::optional<double> raycast(const SoftBodyWorld& world, const Vec3& origin, const Vec3& direction,
                              double max_len);

Vec3 target_position(const SoftBodyWorld& world);

}  // namespace cathnav
