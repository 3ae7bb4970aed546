#include "cathnav/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cathnav {

namespace {

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return r;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, -s, 0,
       s, c, 0,
       0, 0, 1;
  return r;
}

double clamp_sym(double v, double bound) { return std::clamp(v, -bound, bound); }

}  // namespace

Vec3 TipPose::heading() const {
  const double ca = std::cos(alpha);
  return {-std::sin(gamma) * ca, std::cos(gamma) * ca, std::sin(alpha)};
}

Mat3 TipPose::rotation() const { return bend_rotation(alpha, gamma); }

bool TipPose::finite() const {
  return all_finite(position) && std::isfinite(alpha) && std::isfinite(gamma);
}

Eigen::Matrix4d HomogeneousConfig::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

void CatheterSpec::validate() const {
  if (!(segment_length > 0.0)) throw ConfigError("catheter segment_length must be > 0");
  if (!(theta_max > 0.0 && theta_max <= kPi)) throw ConfigError("catheter theta_max must lie in (0, pi]");
  if (!(v_max > 0.0)) throw ConfigError("catheter v_max must be > 0");
  if (!(dt > 0.0)) throw ConfigError("catheter dt must be > 0");
  if (!(outer_diameter > 0.0)) throw ConfigError("catheter outer_diameter must be > 0");
}

Mat3 bend_rotation(double alpha, double gamma) { return rot_z(gamma) * rot_x(alpha); }

HomogeneousConfig pose_to_matrix(const TipPose& pose) {
  if (!pose.finite()) throw InvalidPoseError("pose_to_matrix: non-finite pose");
  return {bend_rotation(pose.alpha, pose.gamma), pose.position};
}

double max_bend_at_step(const CatheterSpec& spec, double insertion) {
  if (!(insertion >= 0.0)) {
    throw DomainError("max_bend_at_step: insertion must be >= 0, got " + std::to_string(insertion));
  }
  if (insertion >= spec.segment_length) return spec.theta_max;
  return spec.theta_max * insertion / spec.segment_length;
}

Action clamp_action(const CatheterSpec& spec, const Action& action) {
  auto finite_or_zero = [](double v) { return std::isfinite(v) ? v : 0.0; };
  Action out;
  out.insertion = std::clamp(finite_or_zero(action.insertion), 0.0, spec.max_insertion());
  const double bound = max_bend_at_step(spec, out.insertion);
  out.alpha = clamp_sym(finite_or_zero(action.alpha), bound);
  out.gamma = clamp_sym(finite_or_zero(action.gamma), bound);
  return out;
}

bool is_clamped(const CatheterSpec& spec, const Action& action, double tol) {
  if (!std::isfinite(action.alpha) || !std::isfinite(action.gamma) || !std::isfinite(action.insertion)) {
    return false;
  }
  if (action.insertion < -tol || action.insertion > spec.max_insertion() + tol) return false;
  const double bound = max_bend_at_step(spec, std::max(0.0, action.insertion));
  return std::abs(action.alpha) <= bound + tol && std::abs(action.gamma) <= bound + tol;
}

TipPose apply_action(const CatheterSpec& spec, const TipPose& pose, const Action& action) {
  if (!is_clamped(spec, action)) throw ContractViolation("apply_action: action is not clamped");
  if (!pose.finite()) throw InvalidPoseError("apply_action: non-finite pose");

  const Mat3 frame = pose.rotation() * rot_z(action.gamma) * rot_x(action.alpha);
  const Vec3 heading = frame.col(1);

  TipPose next;
  next.alpha = std::asin(std::clamp(heading.z(), -1.0, 1.0));
  next.gamma = std::atan2(-heading.x(), heading.y());
  next.position = pose.position + action.insertion * heading;
  return next;
}

double CatheterBody::arc_length() const {
  double len = 0.0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    len += (history[i].position - history[i - 1].position).norm();
  }
  return len;
}

std::vector<Vec3> CatheterBody::polyline() const {
  std::vector<Vec3> pts;
  pts.reserve(history.size());
  for (const auto& p : history) pts.push_back(p.position);
  return pts;
}

CatheterBody propagate_body(CatheterBody body, const TipPose& new_tip) {
  body.history.push_back(new_tip);
  while (body.max_points > 0 && body.history.size() > body.max_points) body.history.pop_front();
  return body;
}

CatheterBody retract_body(CatheterBody body, double distance) {
  double remaining = std::max(0.0, distance);
  while (body.history.size() > 1 && remaining > 0.0) {
    const auto& tip = body.history.back();
    const auto& prev = body.history[body.history.size() - 2];
    const double seg = (tip.position - prev.position).norm();
    if (seg > remaining) {
      // Partial step: slide the tip back along the segment.
      TipPose moved = tip;
      moved.position = tip.position + (prev.position - tip.position) * (remaining / seg);
      body.history.back() = moved;
      return body;
    }
    remaining -= seg;
    body.history.pop_back();
  }
  return body;
}

}  // namespace cathnav
