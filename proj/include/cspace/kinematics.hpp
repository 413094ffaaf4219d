#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cspace/angles.hpp"
#include "cspace/error.hpp"

namespace cspace {

/// Joint angles in radians. Dimension equals the arm's degree-of-freedom count.
using Configuration = Eigen::VectorXd;

/// Closed joint interval; infinite bounds mean the joint rotates freely.
struct JointLimit {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool bounded() const { return std::isfinite(lo) && std::isfinite(hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// How displacements along a joint are measured. Wrapped joints take the
/// representative nearest the start; literal joints never wrap.
enum class JointTopology { Wrapped, Literal };

inline bool all_finite(const Configuration& q) { return q.allFinite(); }

// ---------------------------------------------------------------------------
// Planar 3-link arm

/// Three-link arm in the plane. Shoulder angle is absolute from +x; elbow and
/// wrist are relative to their parent link.
struct PlanarArm {
  std::array<double, 3> link_lengths{1.0, 1.0, 1.0};
  std::array<JointLimit, 3> limits{JointLimit{}, JointLimit{-kPi, kPi}, JointLimit{-2.62, 2.62}};
  std::array<std::string, 3> joint_names{"shoulder", "elbow", "wrist"};

  static constexpr int kDof = 3;
  int dof() const { return kDof; }

  double reach() const { return link_lengths[0] + link_lengths[1] + link_lengths[2]; }

  void validate() const {
    for (double l : link_lengths) {
      if (!(l > 0.0) || !std::isfinite(l)) throw ContractViolation("planar arm: link lengths must be positive");
    }
    for (const auto& lim : limits) {
      if (!(lim.lo <= lim.hi)) throw ContractViolation("planar arm: empty joint limit interval");
    }
  }

  /// Shoulder and wrist wrap around the start; the elbow is literal so a
  /// displacement never passes through the folded pose.
  static constexpr std::array<JointTopology, 3> topology() {
    return {JointTopology::Wrapped, JointTopology::Literal, JointTopology::Wrapped};
  }
};

struct Pose2 {
  Eigen::Vector2d ee = Eigen::Vector2d::Zero();
  /// Base, elbow, wrist and end-effector positions (4 points).
  std::vector<Eigen::Vector2d> joints;
};

inline void require_dim(const Configuration& q, int dof, const char* who) {
  if (q.size() != dof) {
    throw ContractViolation(std::string(who) + ": expected " + std::to_string(dof) + " joint angles, got " +
                            std::to_string(q.size()));
  }
}

inline Pose2 fk_planar(const PlanarArm& arm, const Configuration& q) {
  require_dim(q, 3, "fk_planar");
  Pose2 pose;
  pose.joints.reserve(4);
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  pose.joints.push_back(p);
  double theta = 0.0;
  for (int k = 0; k < 3; ++k) {
    theta += q[k];
    p += arm.link_lengths[k] * Eigen::Vector2d(std::cos(theta), std::sin(theta));
    pose.joints.push_back(p);
  }
  pose.ee = p;
  return pose;
}

/// d(ee)/dq for the planar arm, 2x3.
inline Eigen::Matrix<double, 2, 3> jacobian_planar(const PlanarArm& arm, const Configuration& q) {
  require_dim(q, 3, "jacobian_planar");
  Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
  double theta = 0.0;
  for (int k = 0; k < 3; ++k) {
    theta += q[k];
    const Eigen::Vector2d d = arm.link_lengths[k] * Eigen::Vector2d(-std::sin(theta), std::cos(theta));
    for (int i = 0; i <= k; ++i) jac.col(i) += d;
  }
  return jac;
}

namespace detail {

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

inline bool on_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return std::min(a.x(), b.x()) - 1e-12 <= p.x() && p.x() <= std::max(a.x(), b.x()) + 1e-12 &&
         std::min(a.y(), b.y()) - 1e-12 <= p.y() && p.y() <= std::max(a.y(), b.y()) + 1e-12;
}

}  // namespace detail

/// Closed segment-segment intersection, collinear overlap included.
inline bool segments_intersect(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& p3,
                               const Eigen::Vector2d& p4) {
  constexpr double eps = 1e-12;
  const double d1 = detail::cross2(p4 - p3, p1 - p3);
  const double d2 = detail::cross2(p4 - p3, p2 - p3);
  const double d3 = detail::cross2(p2 - p1, p3 - p1);
  const double d4 = detail::cross2(p2 - p1, p4 - p1);
  if (((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps))) {
    return true;
  }
  if (std::abs(d1) <= eps && detail::on_segment(p1, p3, p4)) return true;
  if (std::abs(d2) <= eps && detail::on_segment(p2, p3, p4)) return true;
  if (std::abs(d3) <= eps && detail::on_segment(p3, p1, p2)) return true;
  if (std::abs(d4) <= eps && detail::on_segment(p4, p1, p2)) return true;
  return false;
}

/// True iff two non-adjacent links intersect. Adjacent links share a joint
/// and are exempt.
inline bool self_collides(const PlanarArm& arm, const Configuration& q) {
  const Pose2 pose = fk_planar(arm, q);
  const auto& j = pose.joints;
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 2; b < 3; ++b) {
      if (segments_intersect(j[a], j[a + 1], j[b], j[b + 1])) return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Generic serial chain

struct RevoluteJoint {
  std::string name;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  /// Fixed translation from this joint to the next one, in this joint's frame.
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  JointLimit limit;
  /// Sign of this joint under the sagittal mirror map (+1 or -1).
  int mirror_sign = 1;
};

/// Serial chain of revolute joints. Frame k+1 = frame k * Rot(axis_k, q_k) * Trans(offset_k).
struct ChainArm {
  std::vector<RevoluteJoint> joints;
  Eigen::Vector3d base_position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond base_orientation = Eigen::Quaterniond::Identity();

  static constexpr int kDof = 7;
  int dof() const { return static_cast<int>(joints.size()); }

  double reach() const {
    double r = 0.0;
    for (const auto& j : joints) r += j.offset.norm();
    return r;
  }

  void validate() const {
    if (joints.size() != static_cast<std::size_t>(kDof)) {
      throw ContractViolation("chain arm: exactly 7 joints required, got " + std::to_string(joints.size()));
    }
    for (const auto& j : joints) {
      if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw ContractViolation("chain arm: joint axis '" + j.name + "' is not unit");
      if (!j.offset.allFinite()) throw ContractViolation("chain arm: non-finite offset");
      if (!(j.limit.lo <= j.limit.hi)) throw ContractViolation("chain arm: empty joint limit interval");
      if (j.mirror_sign != 1 && j.mirror_sign != -1) throw ContractViolation("chain arm: mirror sign must be +-1");
    }
  }

  JointTopology topology(int i) const {
    return joints[i].limit.bounded() ? JointTopology::Literal : JointTopology::Wrapped;
  }

  /// Sagittal mirror of a configuration: joints flip sign per their mirror_sign.
  Configuration mirror(const Configuration& q) const {
    require_dim(q, dof(), "mirror");
    Configuration m = q;
    for (int i = 0; i < dof(); ++i) m[i] = joints[i].mirror_sign * q[i];
    return m;
  }
};

struct Pose3 {
  Eigen::Vector3d ee = Eigen::Vector3d::Zero();
  /// Frame of each joint (before its rotation) followed by the end-effector frame.
  std::vector<Eigen::Isometry3d> frames;
  std::vector<Eigen::Vector3d> joints;
};

inline Pose3 fk_chain(const ChainArm& arm, const Configuration& q) {
  require_dim(q, arm.dof(), "fk_chain");
  Pose3 pose;
  pose.frames.reserve(arm.joints.size() + 1);
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.translate(arm.base_position);
  t.rotate(arm.base_orientation);
  for (int i = 0; i < arm.dof(); ++i) {
    pose.frames.push_back(t);
    pose.joints.push_back(t.translation());
    t.rotate(Eigen::AngleAxisd(q[i], arm.joints[i].axis));
    t.translate(arm.joints[i].offset);
  }
  pose.frames.push_back(t);
  pose.joints.push_back(t.translation());
  pose.ee = t.translation();
  return pose;
}

/// Positional Jacobian d(ee)/dq, 3 x dof.
inline Eigen::Matrix3Xd jacobian_chain(const ChainArm& arm, const Configuration& q) {
  const Pose3 pose = fk_chain(arm, q);
  Eigen::Matrix3Xd jac(3, arm.dof());
  for (int i = 0; i < arm.dof(); ++i) {
    const Eigen::Vector3d axis_world = pose.frames[i].linear() * arm.joints[i].axis;
    jac.col(i) = axis_world.cross(pose.ee - pose.joints[i]);
  }
  return jac;
}

// ---------------------------------------------------------------------------

template <class Arm>
bool within_limits(const Arm& arm, const Configuration& q) {
  require_dim(q, arm.dof(), "within_limits");
  for (int i = 0; i < arm.dof(); ++i) {
    const JointLimit& lim = [&]() -> const JointLimit& {
      if constexpr (std::is_same_v<Arm, PlanarArm>) {
        return arm.limits[i];
      } else {
        return arm.joints[i].limit;
      }
    }();
    if (!lim.contains(q[i])) return false;
  }
  return true;
}

/// Displacement representative of `q` relative to `start`, honoring each
/// joint's topology. Literal joints are returned unchanged; planar elbow is
/// canonicalised into (-pi, pi].
inline Configuration representative(const PlanarArm&, const Configuration& start, const Configuration& q) {
  require_dim(q, 3, "representative");
  require_dim(start, 3, "representative");
  Configuration r(3);
  r[0] = wrap_near(q[0], start[0]);
  r[1] = wrap_pi(q[1]);
  r[2] = wrap_near(q[2], start[2]);
  return r;
}

inline Configuration representative(const ChainArm& arm, const Configuration& start, const Configuration& q) {
  require_dim(q, arm.dof(), "representative");
  require_dim(start, arm.dof(), "representative");
  Configuration r = q;
  for (int i = 0; i < arm.dof(); ++i) {
    if (arm.topology(i) == JointTopology::Wrapped) r[i] = wrap_near(q[i], start[i]);
  }
  return r;
}

/// Jaco-inspired 7-joint chain (alternating roll / pitch). Mirror signs
/// describe the reflection x -> -x of the world.
inline ChainArm default_chain() {
  ChainArm arm;
  auto joint = [](std::string name, Eigen::Vector3d axis, Eigen::Vector3d offset, JointLimit lim, int mirror) {
    RevoluteJoint j;
    j.name = std::move(name);
    j.axis = axis;
    j.offset = offset;
    j.limit = lim;
    j.mirror_sign = mirror;
    return j;
  };
  const JointLimit free{};
  arm.joints = {
      joint("shoulder_yaw", Eigen::Vector3d::UnitZ(), {0, 0, 0.2755}, free, -1),
      joint("shoulder_pitch", Eigen::Vector3d::UnitY(), {0, 0, 0.41}, {-2.2, 2.2}, -1),
      joint("shoulder_roll", Eigen::Vector3d::UnitZ(), {0, 0, 0.0}, free, -1),
      joint("elbow", Eigen::Vector3d::UnitX(), {0, 0, 0.2073}, {-2.6, 2.6}, 1),
      joint("forearm_roll", Eigen::Vector3d::UnitZ(), {0, 0, 0.1038}, free, -1),
      joint("wrist_pitch", Eigen::Vector3d::UnitX(), {0, 0, 0.1038}, {-2.0, 2.0}, 1),
      joint("wrist_roll", Eigen::Vector3d::UnitZ(), {0, 0, 0.16}, free, -1),
  };
  return arm;
}

}  // namespace cspace
