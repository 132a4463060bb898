#pragma once

#include "pdrins/core.hpp"

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pdr {

/// Affine sensor error model: measured = gain * true + bias + noise.
/// gain maps physical units to counts, bias is in counts and noise_sigma is
/// the white-noise standard deviation in physical units.
struct SensorCalibration {
  Mat3 gain = Mat3::Identity();
  Vec3 bias = Vec3::Zero();
  double noise_sigma = 1.0;

  /// Nominal datasheet model: `lsb` physical units per count, no bias.
  static SensorCalibration ideal(double lsb, double noise_sigma = 1.0) {
    return {Mat3::Identity() / lsb, Vec3::Zero(), noise_sigma};
  }

  void validate() const {
    if (!gain.allFinite() || !bias.allFinite()) throw InputError("calibration: non-finite entries");
    if (!(noise_sigma > 0.0)) throw InputError("calibration: noise_sigma must be > 0");
    const Eigen::JacobiSVD<Mat3> svd(gain);
    const auto& s = svd.singularValues();
    if (!(s(2) > 0.0) || s(0) / s(2) >= 1e6) {
      throw InputError("calibration: gain matrix singular or ill-conditioned");
    }
  }

  friend bool operator==(const SensorCalibration& a, const SensorCalibration& b) {
    return a.gain == b.gain && a.bias == b.bias && a.noise_sigma == b.noise_sigma;
  }
};

/// a_hat = G^-1 (raw - b), in m/s^2 for an accelerometer model.
inline Vec3 apply_accel_calibration(const SensorCalibration& cal, const RawTriple& raw) {
  return cal.gain.partialPivLu().solve(to_vec(raw) - cal.bias);
}

/// w_hat = G^-1 (raw - b), in rad/s for a gyroscope model.
inline Vec3 apply_gyro_calibration(const SensorCalibration& cal, const RawTriple& raw) {
  return cal.gain.partialPivLu().solve(to_vec(raw) - cal.bias);
}

/// Precomputed inverse gains for converting whole logs.
class SampleCalibrator {
 public:
  SampleCalibrator(const SensorCalibration& accel, const SensorCalibration& gyro)
      : accel_inv_(accel.gain.inverse()),
        gyro_inv_(gyro.gain.inverse()),
        accel_bias_(accel.bias),
        gyro_bias_(gyro.bias) {
    accel.validate();
    gyro.validate();
  }

  CalibratedSample operator()(const ImuSample& s) const {
    return {s.t, accel_inv_ * (to_vec(s.accel_raw) - accel_bias_),
            gyro_inv_ * (to_vec(s.gyro_raw) - gyro_bias_)};
  }

  std::vector<CalibratedSample> operator()(std::span<const ImuSample> log) const {
    std::vector<CalibratedSample> out;
    out.reserve(log.size());
    for (const auto& s : log) out.push_back((*this)(s));
    return out;
  }

 private:
  Mat3 accel_inv_;
  Mat3 gyro_inv_;
  Vec3 accel_bias_;
  Vec3 gyro_bias_;
};

// ---------------------------------------------------------------------------
// Orientation batches
// ---------------------------------------------------------------------------

/// Per-orientation mean accelerometer readings [counts] of a still sensor.
struct OrientationBatch {
  std::vector<Vec3> means;
  std::size_t samples_per_orientation = 0;  // smallest segment length
};

/// A segment that failed the stillness check.
struct StillnessError : InputError {
  StillnessError(std::size_t index, const std::string& what)
      : InputError(what), segment(index) {}
  std::size_t segment;
};

/// Averages each still segment. Every gyro sample, converted with
/// `gyro_cal`, must stay below `max_rate` [rad/s].
inline OrientationBatch batch_means(std::span<const std::vector<ImuSample>> segments,
                                    const SensorCalibration& gyro_cal, double max_rate = 0.1) {
  OrientationBatch batch;
  batch.samples_per_orientation = segments.empty() ? 0 : segments.front().size();
  for (std::size_t p = 0; p < segments.size(); ++p) {
    const auto& seg = segments[p];
    if (seg.empty()) throw StillnessError(p, "segment " + std::to_string(p) + " is empty");
    Vec3 sum = Vec3::Zero();
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const double rate = apply_gyro_calibration(gyro_cal, seg[i].gyro_raw).norm();
      if (rate > max_rate) {
        throw StillnessError(p, "segment " + std::to_string(p) + " not still at sample " +
                                    std::to_string(i) + " (|w| = " + std::to_string(rate) +
                                    " rad/s)");
      }
      sum += to_vec(seg[i].accel_raw);
    }
    batch.means.push_back(sum / static_cast<double>(seg.size()));
    batch.samples_per_orientation = std::min(batch.samples_per_orientation, seg.size());
  }
  return batch;
}

/// Pooled per-axis standard deviation of the accelerometer about each
/// segment mean, converted to physical units with `gain`.
inline double pooled_noise_sigma(std::span<const std::vector<ImuSample>> segments,
                                 const Mat3& gain, bool gyro = false) {
  double ss = 0.0;
  std::size_t dof = 0;
  const Mat3 inv = gain.inverse();
  for (const auto& seg : segments) {
    if (seg.size() < 2) continue;
    std::vector<Vec3> v;
    v.reserve(seg.size());
    Vec3 mean = Vec3::Zero();
    for (const auto& s : seg) {
      v.push_back(inv * to_vec(gyro ? s.gyro_raw : s.accel_raw));
      mean += v.back();
    }
    mean /= static_cast<double>(seg.size());
    for (const auto& x : v) ss += (x - mean).squaredNorm();
    dof += 3 * (seg.size() - 1);
  }
  return dof == 0 ? 0.0 : std::sqrt(ss / static_cast<double>(dof));
}

// ---------------------------------------------------------------------------
// Gravity-sphere residual
// ---------------------------------------------------------------------------

struct SphereProjection {
  double residual = 0.0;  // min |G a + b - mean|^2 over |a| = g
  Vec3 point = Vec3::Zero();  // minimizing a
  double multiplier = 0.0;  // Lagrange multiplier of |a|^2 = g^2
};

/// Projects `mean - b` onto the ellipsoid {G a : |a| = g} by solving the
/// secular equation sum c_i^2 / (s_i^2 + mu)^2 = g^2 on mu > -s_min^2.
inline SphereProjection project_onto_gravity_sphere(const Mat3& G, const Vec3& b, const Vec3& mean,
                                                    double g = kGravity) {
  const Vec3 d = mean - b;
  const Eigen::JacobiSVD<Mat3> svd(G, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s(2) > 0.0)) throw NumericalError("gravity_sphere_residual: singular gain matrix");
  const Vec3 u = svd.matrixU().transpose() * d;
  const Vec3 c = s.cwiseProduct(u);
  const Vec3 s2 = s.cwiseProduct(s);
  const double smin2 = s2(2);

  auto phi = [&](double mu) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) acc += c(i) * c(i) / ((s2(i) + mu) * (s2(i) + mu));
    return acc;
  };
  auto finish = [&](const Vec3& y, double mu) {
    SphereProjection out;
    out.point = svd.matrixV() * y;
    out.residual = (G * out.point - d).squaredNorm();
    out.multiplier = mu;
    return out;
  };

  const double cn = c.norm();
  const double g2 = g * g;
  const double ctol = 1e-13 * (cn + s(0) * g);

  // Hard case: d has (almost) no component along the smallest singular
  // direction and the secular function stays below g^2 at the pole.
  if (std::abs(c(2)) <= ctol) {
    Vec3 y = Vec3::Zero();
    double rest = 0.0;
    bool degenerate = true;
    for (int i = 0; i < 2; ++i) {
      const double den = s2(i) - smin2;
      if (den <= 1e-14 * s2(0)) {
        if (std::abs(c(i)) > ctol) degenerate = false;
        continue;
      }
      y(i) = c(i) / den;
      rest += y(i) * y(i);
    }
    if (degenerate && rest <= g2) {
      y(2) = std::sqrt(g2 - rest);
      return finish(y, -smin2);
    }
  }

  double lo = -smin2;
  double hi = cn / g - smin2;
  if (hi <= lo) hi = lo + 1e-300;
  double mu = hi;
  for (int it = 0; it < 300; ++it) {
    const double f = phi(mu);
    const double sf = std::sqrt(f);
    if (std::abs(sf - g) <= 1e-13 * g) {
      const Vec3 y = c.cwiseQuotient(s2 + Vec3::Constant(mu));
      return finish(y, mu);
    }
    // h(mu) = 1/sqrt(phi) - 1/g is increasing and close to linear in mu
    const double h = 1.0 / sf - 1.0 / g;
    if (h > 0.0) hi = mu; else lo = mu;
    double dphi = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double den = s2(i) + mu;
      dphi -= 2.0 * c(i) * c(i) / (den * den * den);
    }
    const double dh = -0.5 * dphi / (f * sf);
    double next = mu - h / dh;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (hi - lo <= 1e-15 * std::max(std::abs(lo), std::abs(hi))) {
      const Vec3 y = c.cwiseQuotient(s2 + Vec3::Constant(next));
      return finish(y, next);
    }
    mu = next;
  }
  throw NumericalError("gravity_sphere_residual: secular equation did not converge");
}

/// min over |a| = g of |G a + b - mean|^2.
inline double gravity_sphere_residual(const Mat3& G, const Vec3& b, const Vec3& mean,
                                      double g = kGravity) {
  return project_onto_gravity_sphere(G, b, mean, g).residual;
}

// ---------------------------------------------------------------------------
// Accelerometer fit
// ---------------------------------------------------------------------------

enum class GainModel { kLowerTriangular, kDiagonal };

struct CalibrationFitOptions {
  GainModel gain_model = GainModel::kLowerTriangular;
  int max_iterations = 500;
  double relative_tolerance = 1e-12;
};

struct CalibrationFit {
  SensorCalibration calibration;
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;  // cost after the initializer and each accepted step
};

struct CalibrationFitError : NumericalError {
  CalibrationFitError(const std::string& what, SensorCalibration last, double last_cost)
      : NumericalError(what), last_iterate(std::move(last)), cost(last_cost) {}
  SensorCalibration last_iterate;
  double cost;
};

namespace detail {

/// Algebraic least-squares quadric fit x'Ax + 2 b'x + c = 0, converted to
/// (L, center) with the ellipsoid {center + L a : |a| = g}.
inline bool ellipsoid_init(std::span<const Vec3> pts, double g, Mat3& L, Vec3& center) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double scale = 0.0;
  for (const auto& p : pts) scale += (p - mean).squaredNorm();
  scale = std::sqrt(scale / static_cast<double>(pts.size()));
  if (!(scale > 0.0)) return false;

  Eigen::MatrixXd D(pts.size(), 10);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 q = (pts[i] - mean) / scale;
    D.row(static_cast<Eigen::Index>(i)) << q.x() * q.x(), q.y() * q.y(), q.z() * q.z(),
        2 * q.x() * q.y(), 2 * q.x() * q.z(), 2 * q.y() * q.z(), 2 * q.x(), 2 * q.y(), 2 * q.z(),
        1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(9);
  Mat3 A;
  A << v(0), v(3), v(4), v(3), v(1), v(5), v(4), v(5), v(2);
  const Vec3 bq(v(6), v(7), v(8));
  const double cq = v(9);
  const Eigen::FullPivLU<Mat3> lu(A);
  if (!lu.isInvertible()) return false;
  const Vec3 c0 = -lu.solve(bq);
  const double k = c0.dot(A * c0) - cq;
  Mat3 M = A / k;  // (x - c0)' M (x - c0) = 1
  const Eigen::LLT<Mat3> pd(M);
  if (pd.info() != Eigen::Success) return false;
  // G G' = (g^2 M)^-1 in scaled coordinates
  const Mat3 GGt = (g * g * M).inverse() * scale * scale;
  const Eigen::LLT<Mat3> chol(0.5 * (GGt + GGt.transpose()));
  if (chol.info() != Eigen::Success) return false;
  L = chol.matrixL();
  center = mean + scale * c0;
  return L.allFinite() && center.allFinite();
}

inline Eigen::VectorXd pack(const Mat3& L, const Vec3& b, GainModel m) {
  if (m == GainModel::kDiagonal) {
    Eigen::VectorXd th(6);
    th << L(0, 0), L(1, 1), L(2, 2), b;
    return th;
  }
  Eigen::VectorXd th(9);
  th << L(0, 0), L(1, 0), L(1, 1), L(2, 0), L(2, 1), L(2, 2), b;
  return th;
}

inline void unpack(const Eigen::VectorXd& th, GainModel m, Mat3& L, Vec3& b) {
  L.setZero();
  if (m == GainModel::kDiagonal) {
    L(0, 0) = th(0);
    L(1, 1) = th(1);
    L(2, 2) = th(2);
    b = th.segment<3>(3);
    return;
  }
  L(0, 0) = th(0);
  L(1, 0) = th(1);
  L(1, 1) = th(2);
  L(2, 0) = th(3);
  L(2, 1) = th(4);
  L(2, 2) = th(5);
  b = th.segment<3>(6);
}

}  // namespace detail

/// Fits gain (lower-triangular with positive diagonal, or diagonal) and bias
/// so that every per-orientation mean lies on the gravity ellipsoid.
///
/// The rotation ambiguity between a full gain matrix and the unknown
/// orientations is removed by the triangular form: the fitted L satisfies
/// L L' = G G' for the true G.
inline CalibrationFit fit_accel_calibration(const OrientationBatch& batch, double g = kGravity,
                                            const CalibrationFitOptions& opt = {}) {
  const std::size_t P = batch.means.size();
  if (P < 9) {
    throw InputError("fit_accel_calibration: " + std::to_string(P) +
                     " orientations, at least 9 required for identifiability");
  }
  if (!(g > 0.0)) throw InputError("fit_accel_calibration: g must be positive");
  const std::span<const Vec3> means(batch.means);

  Mat3 L;
  Vec3 b;
  if (!detail::ellipsoid_init(means, g, L, b)) {
    // sphere fallback: centroid and mean radius
    b = Vec3::Zero();
    for (const auto& m : means) b += m;
    b /= static_cast<double>(P);
    double r = 0.0;
    for (const auto& m : means) r += (m - b).norm();
    L = Mat3::Identity() * (r / static_cast<double>(P) / g);
  }
  if (opt.gain_model == GainModel::kDiagonal) L = Mat3(L * L.transpose()).diagonal().cwiseSqrt().asDiagonal();

  auto residuals = [&](const Eigen::VectorXd& th, Eigen::VectorXd& e) {
    Mat3 Lt;
    Vec3 bt;
    detail::unpack(th, opt.gain_model, Lt, bt);
    e.resize(static_cast<Eigen::Index>(3 * P));
    for (std::size_t p = 0; p < P; ++p) {
      const SphereProjection pr = project_onto_gravity_sphere(Lt, bt, means[p], g);
      e.segment<3>(static_cast<Eigen::Index>(3 * p)) = Lt * pr.point + bt - means[p];
    }
    return e.squaredNorm();
  };
  auto safe_cost = [&](const Eigen::VectorXd& th, Eigen::VectorXd& e) {
    try {
      const double c = residuals(th, e);
      return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Eigen::VectorXd th = detail::pack(L, b, opt.gain_model);
  const Eigen::Index n = th.size();
  Eigen::VectorXd e;
  double cost = residuals(th, e);

  CalibrationFit fit;
  fit.cost_history.push_back(cost);
  const double gain_scale = L.diagonal().cwiseAbs().mean();
  const double cost_floor = 1e-28 * std::pow(gain_scale * g, 2) * static_cast<double>(P);

  auto make_cal = [&](const Eigen::VectorXd& t) {
    Mat3 Lt;
    Vec3 bt;
    detail::unpack(t, opt.gain_model, Lt, bt);
    for (int j = 0; j < 3; ++j) {
      if (Lt(j, j) < 0.0) Lt.col(j) = -Lt.col(j);  // same ellipsoid
    }
    return SensorCalibration{Lt, bt, 1.0};
  };

  double lambda = 1e-3;
  bool converged = cost <= cost_floor;
  int it = 0;
  Eigen::MatrixXd J(3 * P, n);
  Eigen::VectorXd ep, em, trial_e;
  for (; it < opt.max_iterations && !converged; ++it) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool is_bias = j >= n - 3;
      const double ref = is_bias ? 1e-3 * gain_scale * g : gain_scale;
      const double h = 1e-6 * std::max(std::abs(th(j)), ref);
      Eigen::VectorXd tp = th, tm = th;
      tp(j) += h;
      tm(j) -= h;
      residuals(tp, ep);
      residuals(tm, em);
      J.col(j) = (ep - em) / (2.0 * h);
    }
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd grad = J.transpose() * e;

    bool accepted = false;
    while (!accepted && lambda < 1e12) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-300);
      const Eigen::VectorXd step = -A.ldlt().solve(grad);
      // step halving along the damped direction
      double alpha = 1.0;
      for (int half = 0; half < 30 && !accepted; ++half, alpha *= 0.5) {
        const Eigen::VectorXd cand = th + alpha * step;
        const double c = safe_cost(cand, trial_e);
        if (c < cost) {
          const double rel = (cost - c) / cost;
          th = cand;
          e = trial_e;
          cost = c;
          fit.cost_history.push_back(cost);
          accepted = true;
          if (rel < opt.relative_tolerance || cost <= cost_floor) converged = true;
        }
      }
      if (accepted) lambda = std::max(lambda / 10.0, 1e-12);
      else lambda *= 10.0;
    }
    // no descent at any damping: stationary to working precision
    if (!accepted) converged = true;
  }

  fit.calibration = make_cal(th);
  fit.cost = cost;
  fit.iterations = it;
  if (!converged) {
    throw CalibrationFitError("fit_accel_calibration: no convergence after " +
                                  std::to_string(it) + " iterations",
                              fit.calibration, cost);
  }
  return fit;
}

}  // namespace pdr
