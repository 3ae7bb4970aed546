#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "cathnav/common.hpp"

namespace cathnav {

/// Tip pose in the global frame.
///
/// The tip frame carries no roll: its orientation is the rotation
/// Rz(gamma) * Rx(alpha), so `alpha` is the elevation of the insertion axis
/// y_A above the global x-y plane and `gamma` its heading about global z.
/// Per-step bend increments (see Action) are bounded; the absolute angles are
/// not, since navigating an arch turns the tip by more than the bend limit.
struct TipPose {
  Vec3 position = Vec3::Zero();
  double alpha = 0.0;
  double gamma = 0.0;

  /// Unit vector of the insertion axis y_A.
  Vec3 heading() const;
  Mat3 rotation() const;
  bool finite() const;

  friend bool operator==(const TipPose&, const TipPose&) = default;
};

struct HomogeneousConfig {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Eigen::Matrix4d matrix() const;
};

/// Bend increments about the tip axes x_A and z_A plus an insertion along y_A.
struct Action {
  double alpha = 0.0;      // radians
  double gamma = 0.0;      // radians
  double insertion = 0.0;  // millimeters, Δl = v·Δt

  friend bool operator==(const Action&, const Action&) = default;
};

struct CatheterSpec {
  double segment_length = 50.0;        // L, mm
  double theta_max = deg2rad(90.0);    // rad
  double outer_diameter = 7.0;         // mm
  double v_max = 5.0;                  // mm/s
  double dt = 0.1;                     // s

  double max_insertion() const { return v_max * dt; }
  double outer_radius() const { return 0.5 * outer_diameter; }
  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// R(alpha, 0, gamma) = Rz(gamma) * Rx(alpha).
Mat3 bend_rotation(double alpha, double gamma);

HomogeneousConfig pose_to_matrix(const TipPose& pose);

/// Largest bend magnitude allowed for a step that inserts `insertion` mm:
/// theta_max * insertion / L, saturated at theta_max.
double max_bend_at_step(const CatheterSpec& spec, double insertion);

/// Clamps the insertion into [0, v_max*dt], then both bends into the bound
/// computed at the clamped insertion. Non-finite components become zero.
Action clamp_action(const CatheterSpec& spec, const Action& action);

bool is_clamped(const CatheterSpec& spec, const Action& action, double tol = 1e-12);

/// Composes the bend increments in the current tip frame, drops the roll
/// component, and advances the tip by `insertion` along the new y_A.
/// Throws ContractViolation for an action that `clamp_action` would change.
TipPose apply_action(const CatheterSpec& spec, const TipPose& pose, const Action& action);

/// Follow-the-leader body: the most recent tip poses, oldest first.
struct CatheterBody {
  std::deque<TipPose> history;
  std::size_t max_points = 400;

  double arc_length() const;
  std::vector<Vec3> polyline() const;
};

CatheterBody propagate_body(CatheterBody body, const TipPose& new_tip);

/// Walks the tip back along its own history by `distance` mm, dropping the
/// poses it passes. The last remaining pose is the new tip. Never empties the
/// body.
CatheterBody retract_body(CatheterBody body, double distance);

}  // namespace cathnav
