#pragma once

#include "pdrins/core.hpp"

#include <array>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pdr {

inline constexpr int kStateDim = 25;
inline constexpr int kMeasDim = 6;

using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using MeasVector = Eigen::Matrix<double, kMeasDim, 1>;

/// Offsets of each block inside the flattened state.
namespace idx {
inline constexpr int p = 0;
inline constexpr int v = 3;
inline constexpr int a = 6;
inline constexpr int q = 9;
inline constexpr int ab = 13;
inline constexpr int w = 16;
inline constexpr int ba = 19;
inline constexpr int bw = 22;
}  // namespace idx

inline std::string_view state_coordinate_name(int i) {
  static constexpr std::array<std::string_view, kStateDim> names = {
      "p.x",  "p.y",  "p.z",  "v.x",  "v.y",  "v.z",  "a.x",  "a.y",  "a.z",
      "q.w",  "q.x",  "q.y",  "q.z",  "ab.x", "ab.y", "ab.z", "w.x",  "w.y",
      "w.z",  "ba.x", "ba.y", "ba.z", "bw.x", "bw.y", "bw.z"};
  return names.at(static_cast<std::size_t>(i));
}

/// Navigation state: position, velocity and acceleration in the navigation
/// frame, attitude q_nb, body-frame specific force and angular rate, and
/// the fine accelerometer/gyroscope biases.
struct NavState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
  Quaternion q_nb{};
  Vec3 a_b = Vec3::Zero();
  Vec3 omega = Vec3::Zero();
  Vec3 bias_a = Vec3::Zero();
  Vec3 bias_w = Vec3::Zero();

  StateVector to_vector() const {
    StateVector x;
    x << p, v, a, q_nb.coeffs(), a_b, omega, bias_a, bias_w;
    return x;
  }

  static NavState from_vector(const StateVector& x) {
    NavState s;
    s.p = x.segment<3>(idx::p);
    s.v = x.segment<3>(idx::v);
    s.a = x.segment<3>(idx::a);
    s.q_nb = Quaternion::from_coeffs(x.segment<4>(idx::q));
    s.a_b = x.segment<3>(idx::ab);
    s.omega = x.segment<3>(idx::w);
    s.bias_a = x.segment<3>(idx::ba);
    s.bias_w = x.segment<3>(idx::bw);
    return s;
  }
};

struct StateEstimate {
  NavState mean;
  StateMatrix cov = StateMatrix::Zero();
};

/// Noise and timing parameters of the filter. Q has one variance per state
/// coordinate, R one per measurement row (accelerometer xyz, gyro xyz).
struct FilterConfig {
  double Ts = 0.01;
  StateVector Q = StateVector::Zero();
  MeasVector R = MeasVector::Zero();
  double g = kGravity;
  bool joseph = true;
  bool analytic_linear_blocks = true;
  // stillness thresholds used by init_state
  double init_max_gyro = 0.3;        // rad/s, per sample
  double init_max_accel_std = 0.3;   // m/s^2, std of |accel|
  double init_min_duration = 0.5;    // s

  Vec3 g_vec() const { return gravity_vector(g); }

  void validate() const {
    if (!(Ts > 0.0)) throw InputError("filter config: Ts must be > 0");
    if (!(Q.array() >= 0.0).all() || !Q.allFinite()) {
      throw InputError("filter config: Q variances must be finite and >= 0");
    }
    if (!(R.array() > 0.0).all() || !R.allFinite()) {
      throw InputError("filter config: R variances must be finite and > 0");
    }
    if (!(g > 0.0)) throw InputError("filter config: g must be > 0");
  }

  /// Default tuning. R follows from the random-walk coefficients N of a
  /// RazorIMU-class sensor as N^2 * fs; the bias random walks from the
  /// bias instability B spread over a 100 s correlation time, B^2 Ts / 100.
  /// The remaining entries are kinematic: the body force and rate follow
  /// the foot, which changes them by O(1) per sample.
  static FilterConfig defaults() {
    FilterConfig c;
    const double fs = 1.0 / c.Ts;
    const double n_acc = 6.07e-3;               // m/s^2/sqrt(Hz)
    const double n_gyr = 7.63e-3 * kDegToRad;   // rad/s/sqrt(Hz)
    const double b_acc = 6.44e-4;               // m/s^2
    const double b_gyr = 8.47e-3 * kDegToRad;   // rad/s
    const double tau_c = 100.0;
    c.Q.segment<3>(idx::p).setConstant(1e-8);
    c.Q.segment<3>(idx::v).setConstant(1e-6);
    c.Q.segment<3>(idx::a).setConstant(1e-2);
    c.Q.segment<4>(idx::q).setConstant(1e-8);
    c.Q.segment<3>(idx::ab).setConstant(4.0);
    c.Q.segment<3>(idx::w).setConstant(1.0);
    c.Q.segment<3>(idx::ba).setConstant(b_acc * b_acc * c.Ts / tau_c);
    c.Q.segment<3>(idx::bw).setConstant(b_gyr * b_gyr * c.Ts / tau_c);
    c.R.head<3>().setConstant(n_acc * n_acc * fs);
    c.R.tail<3>().setConstant(n_gyr * n_gyr * fs);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Noise-free state transition. The quaternion is normalized before use.
inline NavState dynamics(const NavState& x, const FilterConfig& cfg) {
  const double T = cfg.Ts;
  const Quaternion qn = quat_normalize(x.q_nb);
  NavState out = x;
  out.p = x.p + x.v * T + 0.5 * x.a * T * T;
  out.v = x.v + x.a * T;
  out.a = rot_matrix(qn).transpose() * x.a_b + cfg.g_vec();
  out.q_nb = quat_normalize(quat_mul(quat_exp(-0.5 * T * x.omega), qn));
  return out;
}

inline StateVector dynamics_vec(const StateVector& x, const FilterConfig& cfg) {
  return dynamics(NavState::from_vector(x), cfg).to_vector();
}

/// Body-frame measurement model [a_b + bias_a; omega + bias_w].
inline MeasVector measurement(const NavState& x) {
  MeasVector z;
  z << x.a_b + x.bias_a, x.omega + x.bias_w;
  return z;
}

inline MeasVector measurement_vec(const StateVector& x) {
  return measurement(NavState::from_vector(x));
}

/// Constant sensitivity of `measurement`.
inline Eigen::Matrix<double, kMeasDim, kStateDim> measurement_jacobian_analytic() {
  Eigen::Matrix<double, kMeasDim, kStateDim> H = Eigen::Matrix<double, kMeasDim, kStateDim>::Zero();
  H.block<3, 3>(0, idx::ab).setIdentity();
  H.block<3, 3>(0, idx::ba).setIdentity();
  H.block<3, 3>(3, idx::w).setIdentity();
  H.block<3, 3>(3, idx::bw).setIdentity();
  return H;
}

// ---------------------------------------------------------------------------
// Finite-difference Jacobians
// ---------------------------------------------------------------------------

inline double fd_step(double xi) { return std::max(1e-6, 1e-6 * std::abs(xi)); }

/// Central-difference Jacobian of f at x. `columns` restricts the
/// differentiated coordinates; the other columns are left at zero.
template <class F>
Eigen::MatrixXd jacobian(const F& f, const StateVector& x, Eigen::Index m,
                         std::span<const int> columns = {}) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, kStateDim);
  auto column = [&](int i) {
    const double h = fd_step(x(i));
    StateVector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const Eigen::VectorXd fp = f(xp);
    const Eigen::VectorXd fm = f(xm);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw NumericalError("jacobian: non-finite model output when perturbing " +
                           std::string(state_coordinate_name(i)));
    }
    J.col(i) = (fp - fm) / (2.0 * h);
  };
  if (columns.empty()) {
    for (int i = 0; i < kStateDim; ++i) column(i);
  } else {
    for (int i : columns) column(i);
  }
  return J;
}

/// Jacobian of `dynamics`: kinematic and random-walk blocks are filled in
/// closed form, the attitude and rate columns by finite differences.
inline StateMatrix dynamics_jacobian(const NavState& x, const FilterConfig& cfg) {
  const StateVector xv = x.to_vector();
  auto f = [&](const StateVector& s) -> Eigen::VectorXd { return dynamics_vec(s, cfg); };
  if (!cfg.analytic_linear_blocks) return jacobian(f, xv, kStateDim);

  static constexpr std::array<int, 7> nonlinear = {idx::q,     idx::q + 1, idx::q + 2, idx::q + 3,
                                                   idx::w,     idx::w + 1, idx::w + 2};
  StateMatrix J = jacobian(f, xv, kStateDim, nonlinear);
  const double T = cfg.Ts;
  const Mat3 I = Mat3::Identity();
  J.block<3, 3>(idx::p, idx::p) = I;
  J.block<3, 3>(idx::p, idx::v) = T * I;
  J.block<3, 3>(idx::p, idx::a) = 0.5 * T * T * I;
  J.block<3, 3>(idx::v, idx::v) = I;
  J.block<3, 3>(idx::v, idx::a) = T * I;
  J.block<3, 3>(idx::a, idx::ab) = rot_matrix(quat_normalize(x.q_nb)).transpose();
  J.block<3, 3>(idx::ab, idx::ab) = I;
  J.block<3, 3>(idx::ba, idx::ba) = I;
  J.block<3, 3>(idx::bw, idx::bw) = I;
  return J;
}

inline Eigen::Matrix<double, kMeasDim, kStateDim> measurement_jacobian(const NavState& x,
                                                                       const FilterConfig& cfg) {
  if (cfg.analytic_linear_blocks) return measurement_jacobian_analytic();
  auto f = [](const StateVector& s) -> Eigen::VectorXd { return measurement_vec(s); };
  return jacobian(f, x.to_vector(), kMeasDim);
}

// ---------------------------------------------------------------------------
// Covariance checks
// ---------------------------------------------------------------------------

inline void symmetrize(StateMatrix& P) { P = 0.5 * (P + P.transpose()).eval(); }

/// Throws DivergenceError unless P is finite and PSD within 1e-9 * trace.
inline void check_covariance(const StateMatrix& P, std::string_view where) {
  if (!P.allFinite()) throw DivergenceError(std::string(where) + ": non-finite covariance");
  const double tr = P.trace();
  const double tol = 1e-9 * std::max(tr, 1e-300);
  StateMatrix shifted = P;
  shifted.diagonal().array() += tol;
  if (Eigen::LLT<StateMatrix>(shifted).info() == Eigen::Success) return;
  const double min_eig = Eigen::SelfAdjointEigenSolver<StateMatrix>(P, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .minCoeff();
  if (min_eig < -tol) {
    throw DivergenceError(std::string(where) + ": covariance lost positive semidefiniteness (" +
                          "min eigenvalue " + std::to_string(min_eig) + ")");
  }
}

inline double condition_number(const StateMatrix& P) {
  const auto ev = Eigen::SelfAdjointEigenSolver<StateMatrix>(P, Eigen::EigenvaluesOnly).eigenvalues();
  const double lo = ev.cwiseAbs().minCoeff();
  return lo > 0.0 ? ev.cwiseAbs().maxCoeff() / lo : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Predict / update
// ---------------------------------------------------------------------------

inline StateEstimate predict(const StateEstimate& est, const FilterConfig& cfg) {
  const StateMatrix J = dynamics_jacobian(est.mean, cfg);
  StateEstimate out;
  out.mean = dynamics(est.mean, cfg);
  out.cov = J * est.cov * J.transpose();
  out.cov.diagonal() += cfg.Q;
  symmetrize(out.cov);
  check_covariance(out.cov, "predict");
  return out;
}

struct UpdateOutcome {
  StateEstimate est;
  double nis = 0.0;  // normalized innovation squared
};

/// Generic EKF correction for an innovation `s` with Jacobian H and
/// diagonal measurement variances. S is factorized, never inverted.
template <class Derived>
UpdateOutcome kalman_update(const StateEstimate& est, const Eigen::VectorXd& s,
                            const Eigen::MatrixBase<Derived>& H, const Eigen::VectorXd& r_diag,
                            bool joseph) {
  const Eigen::MatrixXd PHt = est.cov * H.transpose();
  Eigen::MatrixXd S = H * PHt;
  S.diagonal() += r_diag;
  S = 0.5 * (S + S.transpose()).eval();
  const Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success || !S.allFinite()) {
    throw DivergenceError("update: innovation covariance not positive definite");
  }
  // K = P H' S^-1  <=>  S K' = H P
  const Eigen::MatrixXd K = llt.solve(PHt.transpose()).transpose();

  UpdateOutcome out;
  out.nis = s.dot(llt.solve(s));
  StateVector x = est.mean.to_vector() + K * s;
  NavState mean = NavState::from_vector(x);
  mean.q_nb = quat_normalize(mean.q_nb);
  out.est.mean = mean;

  const StateMatrix IKH = StateMatrix::Identity() - K * H;
  if (joseph) {
    out.est.cov = IKH * est.cov * IKH.transpose() + K * r_diag.asDiagonal() * K.transpose();
  } else {
    out.est.cov = IKH * est.cov;
  }
  symmetrize(out.est.cov);
  check_covariance(out.est.cov, "update");
  return out;
}

/// Correction with the calibrated IMU sample z = [accel; gyro].
inline UpdateOutcome update_with_nis(const StateEstimate& est, const MeasVector& z,
                                     const FilterConfig& cfg) {
  if (!z.allFinite()) throw InputError("update: non-finite measurement");
  const auto H = measurement_jacobian(est.mean, cfg);
  const Eigen::VectorXd s = z - measurement(est.mean);
  return kalman_update(est, s, H, cfg.R, cfg.joseph);
}

inline StateEstimate update(const StateEstimate& est, const MeasVector& z, const FilterConfig& cfg) {
  return update_with_nis(est, z, cfg).est;
}

inline MeasVector stack_measurement(const CalibratedSample& s) {
  MeasVector z;
  z << s.accel, s.gyro;
  return z;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Roll and pitch of a still body from its mean specific force.
inline std::pair<double, double> tilt_from_gravity(const Vec3& f) {
  const double roll = std::atan2(f.y(), f.z());
  const double pitch = std::atan2(-f.x(), std::hypot(f.y(), f.z()));
  return {roll, pitch};
}

/// Starts the filter from a still foot at p0 with yaw heading0. Covariance
/// is initialized to Q.
inline StateEstimate init_state(const Vec3& p0, double heading0,
                                std::span<const CalibratedSample> first, const FilterConfig& cfg) {
  cfg.validate();
  const double duration = static_cast<double>(first.size()) * cfg.Ts;
  if (first.empty() || duration < cfg.init_min_duration - 1e-9) {
    throw InputError("init_state: still period of " + std::to_string(duration) +
                     " s is shorter than " + std::to_string(cfg.init_min_duration) + " s");
  }
  Vec3 mean = Vec3::Zero();
  double nsum = 0.0, nsq = 0.0;
  for (const auto& s : first) {
    if (!s.accel.allFinite() || !s.gyro.allFinite()) throw InputError("init_state: non-finite sample");
    if (s.gyro.norm() > cfg.init_max_gyro) {
      throw InputError("init_state: sensor not still (|w| = " + std::to_string(s.gyro.norm()) +
                       " rad/s at t = " + std::to_string(s.t) + ")");
    }
    mean += s.accel;
    const double n = s.accel.norm();
    nsum += n;
    nsq += n * n;
  }
  const double cnt = static_cast<double>(first.size());
  mean /= cnt;
  const double var = std::max(0.0, nsq / cnt - (nsum / cnt) * (nsum / cnt));
  if (std::sqrt(var) > cfg.init_max_accel_std) {
    throw InputError("init_state: sensor not still (accel magnitude std " +
                     std::to_string(std::sqrt(var)) + " m/s^2)");
  }
  const auto [roll, pitch] = tilt_from_gravity(mean);

  StateEstimate est;
  est.mean.p = p0;
  est.mean.q_nb = q_nb_from_euler(roll, pitch, heading0);
  est.mean.a_b = mean;
  est.cov = cfg.Q.asDiagonal();
  return est;
}

}  // namespace pdr
