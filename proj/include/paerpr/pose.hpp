#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace paerpr {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

constexpr double kPi = 3.141592653589793238462643;

/// Unit quaternion, scalar-first (w, x, y, z), Hamilton product convention.
/// Every constructor normalizes; q and -q denote the same rotation.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Quat() = default;
  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) { normalize(); }

  static Quat identity() { return Quat(); }

  static Quat from_axis_angle(const Vec3& axis, double angle_rad) {
    double n = axis.norm();
    if (n < 1e-12) return Quat();
    double h = 0.5 * angle_rad;
    double s = std::sin(h) / n;
    return Quat(std::cos(h), axis.x() * s, axis.y() * s, axis.z() * s);
  }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  void normalize() {
    double n = norm();
    if (n < 1e-12) throw std::invalid_argument("quaternion: near-zero norm");
    if (std::abs(n - 1.0) < 1e-12) return;  // already unit; keep bits stable
    w /= n;
    x /= n;
    y /= n;
    z /= n;
  }

  /// Same rotation on the w >= 0 hemisphere; applied to every stored pose so
  /// the chordal loss never sees antipodal representations of one rotation.
  Quat canonicalized() const { return w < 0.0 ? Quat(-w, -x, -y, -z) : *this; }

  Vec4 vec() const { return Vec4(w, x, y, z); }

  Eigen::Matrix3d rotation_matrix() const {
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
  }

  /// Rotate a world-frame construction: v -> R(q) v.
  Vec3 rotate(const Vec3& v) const {
    // q (0,v) q*
    Vec3 u(x, y, z);
    return v + 2.0 * u.cross(u.cross(v) + w * v);
  }
};

inline double quat_dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

/// Hamilton product. R(a*b) = R(a) R(b): the result rotates by b first, then a.
inline Quat quat_multiply(const Quat& a, const Quat& b) {
  return Quat(a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
              a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
              a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
              a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w);
}

/// Inverse rotation for unit quaternions.
inline Quat quat_conjugate(const Quat& q) { return Quat(q.w, -q.x, -q.y, -q.z); }

/// Camera pose: position in scene units plus orientation. R(q) maps camera
/// frame to world frame.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation;
};

/// Motion from a reference pose to a query pose; dx is expressed in the
/// reference camera frame and dq is left-composed (q_query = q_ref * dq).
struct RelativePose {
  Vec3 dx = Vec3::Zero();
  Quat dq;
};

/// Learned log-variance weights of the homoscedastic pose loss.
struct UncertaintyParams {
  double s_x = 0.0;
  double s_q = 0.0;
};

struct PoseError {
  double position_error = 0.0;        // scene units
  double orientation_error_deg = 0.0; // degrees, in [0, 180]
};

inline RelativePose relative_pose(const Pose& ref, const Pose& query) {
  RelativePose d;
  d.dx = ref.orientation.rotation_matrix().transpose() * (query.position - ref.position);
  d.dq = quat_multiply(quat_conjugate(ref.orientation), query.orientation);
  return d;
}

inline Pose apply_relative(const Pose& ref, const RelativePose& delta) {
  Pose p;
  p.position = ref.position + ref.orientation.rotate(delta.dx);
  p.orientation = quat_multiply(ref.orientation, delta.dq);
  return p;
}

/// L2 position loss.
inline double position_loss(const Vec3& x, const Vec3& x0) { return (x - x0).norm(); }

/// Chordal orientation loss on the normalized raw regression 4-vector.
inline double orientation_loss(const Vec4& q_raw, const Quat& q0) {
  double n = q_raw.norm();
  if (n < 1e-12) throw std::invalid_argument("orientation_loss: degenerate quaternion output");
  return (q0.vec() - q_raw / n).norm();
}

/// Homoscedastic pose loss: L_x e^{-s_x} + s_x + L_q e^{-s_q} + s_q.
inline double pose_loss(double l_x, double l_q, const UncertaintyParams& s) {
  return l_x * std::exp(-s.s_x) + s.s_x + l_q * std::exp(-s.s_q) + s.s_q;
}

/// Geodesic angle between two rotations, in degrees; antipodal-invariant.
inline double angular_error_degrees(const Quat& q1, const Quat& q2) {
  double d = std::abs(quat_dot(q1, q2));
  d = std::min(d, 1.0);
  return 2.0 * std::acos(d) * (180.0 / kPi);
}

}  // namespace paerpr
