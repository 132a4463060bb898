#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pdr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Standard gravity [m/s^2].
inline constexpr double kGravity = 9.80665;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;

// Error hierarchy. InputError maps to CLI exit code 2, DivergenceError to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct DivergenceError : NumericalError {
  using NumericalError::NumericalError;
};

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

/// Gravity vector in the navigation frame (z axis pointing up).
inline Vec3 gravity_vector(double g = kGravity) { return {0.0, 0.0, -g}; }

// ---------------------------------------------------------------------------
// Quaternion, Hamilton convention, scalar first.
//
// A navigation-to-body attitude q_nb acts on navigation-frame vectors as
// v_b = q_nb (0, v_n) conj(q_nb), i.e. rot_matrix(q_nb) * v_n.
// ---------------------------------------------------------------------------
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion pure(const Vec3& v) { return {0.0, v.x(), v.y(), v.z()}; }

  Vec3 vec() const { return {x, y, z}; }
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quaternion conj() const { return {w, -x, -y, -z}; }
  bool finite() const {
    return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
  Eigen::Vector4d coeffs() const { return {w, x, y, z}; }
  static Quaternion from_coeffs(const Eigen::Vector4d& c) { return {c(0), c(1), c(2), c(3)}; }

  friend Quaternion operator*(double s, const Quaternion& q) {
    return {s * q.w, s * q.x, s * q.y, s * q.z};
  }
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Hamilton product a (.) b.
inline Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

/// exp of a pure quaternion (0, v): (cos|v|, sin|v| v/|v|). The rotation
/// angle of the result is 2|v|.
inline Quaternion quat_exp(const Vec3& v) {
  const double th2 = v.squaredNorm();
  if (th2 < 1e-16) {
    // second-order series; the truncation error is below 1e-16 here
    const double c = 1.0 - 0.5 * th2;
    const double s = 1.0 - th2 / 6.0;
    return {c, s * v.x(), s * v.y(), s * v.z()};
  }
  const double th = std::sqrt(th2);
  const double s = std::sin(th) / th;
  return {std::cos(th), s * v.x(), s * v.y(), s * v.z()};
}

/// Throws NumericalError on a degenerate norm, which in the filter means
/// the attitude estimate has diverged.
inline Quaternion quat_normalize(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    throw NumericalError("quaternion norm degenerate (" + std::to_string(n) +
                         "): attitude estimate diverged");
  }
  return (1.0 / n) * q;
}

/// Rotation matrix R(q) with R(q) v == vec(q (0,v) conj(q)) for unit q.
/// The homogeneous form is used and divided by |q|^2, so R is invariant to
/// the scale of q.
inline Mat3 rot_matrix(const Quaternion& q) {
  const double ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double n2 = ww + xx + yy + zz;
  const double s = 1.0 / n2;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  Mat3 r;
  r << (ww + xx - yy - zz) * s, 2.0 * (xy - wz) * s, 2.0 * (xz + wy) * s,
      2.0 * (xy + wz) * s, (ww - xx + yy - zz) * s, 2.0 * (yz - wx) * s,
      2.0 * (xz - wy) * s, 2.0 * (yz + wx) * s, (ww - xx - yy + zz) * s;
  return r;
}

/// Sandwich product q (0,v) conj(q), vector part.
inline Vec3 rotate(const Quaternion& q, const Vec3& v) {
  return quat_mul(quat_mul(q, Quaternion::pure(v)), q.conj()).vec();
}

/// Quaternion of a rotation by `angle` about unit `axis` (active, Hamilton).
inline Quaternion axis_angle(const Vec3& axis, double angle) {
  return quat_exp(0.5 * angle * axis.normalized());
}

/// Attitude q_nb of a body with yaw/pitch/roll (ZYX, body-to-nav
/// R = Rz(yaw) Ry(pitch) Rx(roll)).
inline Quaternion q_nb_from_euler(double roll, double pitch, double yaw) {
  const Quaternion q_bn =
      quat_mul(quat_mul(axis_angle(Vec3::UnitZ(), yaw), axis_angle(Vec3::UnitY(), pitch)),
               axis_angle(Vec3::UnitX(), roll));
  return q_bn.conj();
}

/// Inverse of q_nb_from_euler: returns (roll, pitch, yaw).
inline Vec3 euler_from_q_nb(const Quaternion& q_nb) {
  const Mat3 r_bn = rot_matrix(q_nb).transpose();
  const double pitch = std::asin(std::clamp(-r_bn(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r_bn(2, 1), r_bn(2, 2));
  const double yaw = std::atan2(r_bn(1, 0), r_bn(0, 0));
  return {roll, pitch, yaw};
}

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// ---------------------------------------------------------------------------
// Sensor samples
// ---------------------------------------------------------------------------
using RawTriple = std::array<std::int32_t, 3>;

inline Vec3 to_vec(const RawTriple& r) {
  return {static_cast<double>(r[0]), static_cast<double>(r[1]), static_cast<double>(r[2])};
}

/// One raw accelerometer/gyroscope reading in ADC counts.
struct ImuSample {
  double t = 0.0;  // s
  RawTriple accel_raw{};
  RawTriple gyro_raw{};
  friend bool operator==(const ImuSample&, const ImuSample&) = default;
};

/// Calibrated specific force [m/s^2] and body rate [rad/s].
struct CalibratedSample {
  double t = 0.0;
  Vec3 accel = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
};

}  // namespace pdr
