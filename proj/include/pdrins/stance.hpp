#pragma once

#include "pdrins/core.hpp"
#include "pdrins/ekf.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pdr {

// ---------------------------------------------------------------------------
// Pseudo-measurement groups, in stacking order.
// ---------------------------------------------------------------------------
enum class ZuptGroup : int {
  kHorizontalPosition = 0,  // latched xy
  kHeight,                  // p_z = 0
  kVelocity,                // v = 0
  kAcceleration,            // a = 0
  kGravityDirection,        // R'(q) a_b = -g_vec
  kGravityNorm,             // |a_b| = g
  kRate,                    // omega = 0
  kAccelBias,               // bias_a - R(q) g_vec = accel sample
  kGyroBias,                // bias_w = gyro sample
};

inline constexpr int kZuptGroups = 9;
inline constexpr std::array<int, kZuptGroups> kZuptGroupRows = {2, 1, 3, 3, 3, 1, 3, 3, 3};
inline constexpr int kZuptRows = 22;
inline constexpr std::uint16_t kAllZuptGroups = (1u << kZuptGroups) - 1u;

inline constexpr std::uint16_t group_bit(ZuptGroup g) {
  return static_cast<std::uint16_t>(1u << static_cast<int>(g));
}

inline constexpr int group_offset(int g) {
  int off = 0;
  for (int i = 0; i < g; ++i) off += kZuptGroupRows[static_cast<std::size_t>(i)];
  return off;
}

/// Stance detector thresholds and ZUPT noise. F and S are window
/// half-widths in samples; Rp holds one variance per row of the full
/// 22-row pseudo-measurement stack.
struct StanceConfig {
  double gamma_a_min = 8.8;    // m/s^2
  double gamma_a_max = 10.8;   // m/s^2
  double sigma_a_max = 0.4;    // m/s^2
  double gamma_w_max = 0.6;    // rad/s
  double sigma_w_max = 0.2;    // rad/s
  int F = 2;
  int S = 1;
  double gamma_sfs = 0.6;
  double Kp = 10.0;
  Eigen::Matrix<double, kZuptRows, 1> Rp = default_rp();
  std::uint16_t groups = kAllZuptGroups;

  static Eigen::Matrix<double, kZuptRows, 1> default_rp() {
    Eigen::Matrix<double, kZuptRows, 1> r;
    r << 1e-4, 1e-4,        // xy
        1e-4,                // z
        1e-6, 1e-6, 1e-6,    // v
        1e-2, 1e-2, 1e-2,    // a
        1e-2, 1e-2, 1e-2,    // gravity direction
        1e-2,                // gravity norm
        1e-4, 1e-4, 1e-4,    // rate
        1e-2, 1e-2, 1e-2,    // accel bias
        1e-4, 1e-4, 1e-4;    // gyro bias
    return r;
  }

  void validate() const {
    if (!(gamma_a_min < gamma_a_max)) throw InputError("stance config: gamma_a_min >= gamma_a_max");
    if (!(gamma_sfs >= 0.0 && gamma_sfs <= 1.0)) throw InputError("stance config: gamma_sfs outside [0,1]");
    if (F < 1 || S < 1) throw InputError("stance config: F and S must be >= 1");
    if (!(Kp >= 0.0)) throw InputError("stance config: Kp must be >= 0");
    if (!(sigma_a_max > 0.0 && sigma_w_max > 0.0 && gamma_w_max > 0.0)) {
      throw InputError("stance config: thresholds must be positive");
    }
    if (!(Rp.array() > 0.0).all() || !Rp.allFinite()) throw InputError("stance config: Rp must be > 0");
    if (groups == 0 || groups > kAllZuptGroups) throw InputError("stance config: invalid group mask");
  }
};

// ---------------------------------------------------------------------------
// Condition signals and the still-foot score
// ---------------------------------------------------------------------------

struct ConditionSignals {
  bool c1 = false;  // accel magnitude inside [gamma_a_min, gamma_a_max]
  bool c2 = false;  // accel magnitude std below sigma_a_max
  bool c3 = false;  // rate magnitude below gamma_w_max
  bool c4 = false;  // rate magnitude std below sigma_w_max
  bool all() const { return c1 && c2 && c3 && c4; }
  bool first_three() const { return c1 && c2 && c3; }
  friend bool operator==(const ConditionSignals&, const ConditionSignals&) = default;
};

namespace detail {
/// Population standard deviation of magnitudes in [i-S, i+S], truncated.
template <class Get>
double window_std(std::size_t n, std::size_t i, int S, Get get) {
  const std::size_t lo = i >= static_cast<std::size_t>(S) ? i - static_cast<std::size_t>(S) : 0;
  const std::size_t hi = std::min(n - 1, i + static_cast<std::size_t>(S));
  const double cnt = static_cast<double>(hi - lo + 1);
  double mean = 0.0;
  for (std::size_t j = lo; j <= hi; ++j) mean += get(j);
  mean /= cnt;
  double ss = 0.0;
  for (std::size_t j = lo; j <= hi; ++j) ss += (get(j) - mean) * (get(j) - mean);
  return std::sqrt(ss / cnt);
}
}  // namespace detail

inline ConditionSignals condition_signals(std::span<const CalibratedSample> samples,
                                          const StanceConfig& cfg, std::size_t i) {
  const std::size_t n = samples.size();
  if (i >= n) throw InputError("condition_signals: index out of range");
  auto fa = [&](std::size_t j) { return samples[j].accel.norm(); };
  auto fw = [&](std::size_t j) { return samples[j].gyro.norm(); };
  ConditionSignals c;
  const double na = fa(i);
  c.c1 = cfg.gamma_a_min < na && na < cfg.gamma_a_max;
  c.c2 = detail::window_std(n, i, cfg.S, fa) < cfg.sigma_a_max;
  c.c3 = fw(i) < cfg.gamma_w_max;
  c.c4 = detail::window_std(n, i, cfg.S, fw) < cfg.sigma_w_max;
  return c;
}

/// Condition signals for a whole log.
inline std::vector<ConditionSignals> condition_track(std::span<const CalibratedSample> samples,
                                                     const StanceConfig& cfg) {
  const std::size_t n = samples.size();
  std::vector<double> ma(n), mw(n);
  for (std::size_t j = 0; j < n; ++j) {
    ma[j] = samples[j].accel.norm();
    mw[j] = samples[j].gyro.norm();
  }
  std::vector<ConditionSignals> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& c = out[i];
    c.c1 = cfg.gamma_a_min < ma[i] && ma[i] < cfg.gamma_a_max;
    c.c2 = detail::window_std(n, i, cfg.S, [&](std::size_t j) { return ma[j]; }) < cfg.sigma_a_max;
    c.c3 = mw[i] < cfg.gamma_w_max;
    c.c4 = detail::window_std(n, i, cfg.S, [&](std::size_t j) { return mw[j]; }) < cfg.sigma_w_max;
  }
  return out;
}

namespace detail {
inline std::pair<std::size_t, std::size_t> window(std::size_t n, std::size_t k, int F) {
  const std::size_t lo = k >= static_cast<std::size_t>(F) ? k - static_cast<std::size_t>(F) : 0;
  const std::size_t hi = std::min(n - 1, k + static_cast<std::size_t>(F));
  return {lo, hi};
}
}  // namespace detail

/// Soft still-foot score: fraction of the 2F+1 window around k where all
/// four conditions hold. Windows are truncated at the log edges and then
/// normalized by their actual length.
inline double sfs(std::span<const ConditionSignals> conditions, int F, std::size_t k) {
  const std::size_t n = conditions.size();
  if (k >= n) throw InputError("sfs: index out of range");
  const auto [lo, hi] = detail::window(n, k, F);
  int count = 0;
  for (std::size_t i = lo; i <= hi; ++i) count += conditions[i].all() ? 1 : 0;
  return std::clamp(static_cast<double>(count) / static_cast<double>(hi - lo + 1), 0.0, 1.0);
}

inline double sfs(std::span<const CalibratedSample> samples, const StanceConfig& cfg, std::size_t k) {
  const auto [lo, hi] = detail::window(samples.size(), k, cfg.F);
  std::vector<ConditionSignals> c;
  for (std::size_t i = lo; i <= hi; ++i) c.push_back(condition_signals(samples, cfg, i));
  // the window is already cut out, so evaluate at its centre with a full span
  int count = 0;
  for (const auto& ci : c) count += ci.all() ? 1 : 0;
  return std::clamp(static_cast<double>(count) / static_cast<double>(c.size()), 0.0, 1.0);
}

/// Hard detector: the foot is still when more than F/2 samples of the
/// window satisfy C1 C2 C3 (C4 is not used).
inline bool hard_detector(std::span<const ConditionSignals> conditions, int F, std::size_t k) {
  const std::size_t n = conditions.size();
  if (k >= n) throw InputError("hard_detector: index out of range");
  const auto [lo, hi] = detail::window(n, k, F);
  int count = 0;
  for (std::size_t i = lo; i <= hi; ++i) count += conditions[i].first_three() ? 1 : 0;
  return 2 * count > F;
}

inline bool hard_detector(std::span<const CalibratedSample> samples, const StanceConfig& cfg,
                          std::size_t k) {
  const auto [lo, hi] = detail::window(samples.size(), k, cfg.F);
  int count = 0;
  for (std::size_t i = lo; i <= hi; ++i) count += condition_signals(samples, cfg, i).first_three() ? 1 : 0;
  return 2 * count > cfg.F;
}

/// Per-sample score and hard decision over a whole log.
struct StanceTrack {
  std::vector<double> sfs;
  std::vector<bool> hard;
};

inline StanceTrack stance_track(std::span<const CalibratedSample> samples, const StanceConfig& cfg) {
  const auto cond = condition_track(samples, cfg);
  const std::size_t n = cond.size();
  StanceTrack out;
  out.sfs.resize(n);
  out.hard.resize(n);
  // prefix counts for O(n) windows
  std::vector<int> all(n + 1, 0), three(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    all[i + 1] = all[i] + (cond[i].all() ? 1 : 0);
    three[i + 1] = three[i] + (cond[i].first_three() ? 1 : 0);
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto [lo, hi] = detail::window(n, k, cfg.F);
    const int ca = all[hi + 1] - all[lo];
    const int c3 = three[hi + 1] - three[lo];
    out.sfs[k] = std::clamp(static_cast<double>(ca) / static_cast<double>(hi - lo + 1), 0.0, 1.0);
    out.hard[k] = 2 * c3 > cfg.F;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stance events
// ---------------------------------------------------------------------------

struct StanceEvent {
  std::size_t start_index = 0;
  Eigen::Vector2d latched_xy = Eigen::Vector2d::Zero();
};

/// Event lifecycle: starts on the first sample with score above the
/// threshold, ends on the first sample below it. The horizontal position
/// is latched once, when the event starts.
class StanceLatch {
 public:
  /// Returns the active event for sample k, or nullopt.
  const std::optional<StanceEvent>& step(std::size_t k, bool starts, bool continues,
                                         const Vec3& position) {
    if (active_) {
      if (!continues) active_.reset();
    }
    if (!active_ && starts) active_ = StanceEvent{k, position.head<2>()};
    return active_;
  }

  /// Soft-score form of `step`.
  const std::optional<StanceEvent>& step_soft(std::size_t k, double score, double gamma,
                                              const Vec3& position) {
    return step(k, score > gamma, score >= gamma, position);
  }

  const std::optional<StanceEvent>& active() const { return active_; }

 private:
  std::optional<StanceEvent> active_;
};

/// Extracts [start, end) index intervals where `mask` is true.
inline std::vector<std::pair<std::size_t, std::size_t>> intervals(const std::vector<bool>& mask) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < mask.size()) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < mask.size() && mask[j]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-measurements
// ---------------------------------------------------------------------------

/// The stacked pseudo-measurement z_p and its model r_p(x), restricted to the
/// enabled groups.
struct PseudoMeasurement {
  Eigen::VectorXd z;
  std::vector<int> rows;         // row index into the full 22-row stack
  Eigen::VectorXd inflation;     // per-row variance multiplier
  std::uint16_t groups = kAllZuptGroups;
  double g = kGravity;

  /// Full 22-row model evaluated at x.
  static Eigen::Matrix<double, kZuptRows, 1> model_full(const NavState& x, double g) {
    const Mat3 R = rot_matrix(quat_normalize(x.q_nb));
    const Vec3 gv = gravity_vector(g);
    Eigen::Matrix<double, kZuptRows, 1> r;
    r << x.p.head<2>(), x.p.z(), x.v, x.a, R.transpose() * x.a_b, x.a_b.norm(), x.omega,
        x.bias_a - R * gv, x.bias_w;
    return r;
  }

  Eigen::VectorXd model(const NavState& x) const {
    const auto full = model_full(x, g);
    Eigen::VectorXd r(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) r(static_cast<Eigen::Index>(i)) = full(rows[i]);
    return r;
  }

  Eigen::VectorXd residual(const NavState& x) const { return z - model(x); }

  /// Selects and inflates the enabled rows of a full 22-row variance vector.
  Eigen::VectorXd select_variances(const Eigen::Matrix<double, kZuptRows, 1>& full) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      v(static_cast<Eigen::Index>(i)) = full(rows[i]) * inflation(static_cast<Eigen::Index>(i));
    }
    return v;
  }
};

inline PseudoMeasurement build_pseudo_measurements(const NavState& x_pred, const StanceEvent& event,
                                                   const CalibratedSample& z_cal, double g = kGravity,
                                                   std::uint16_t groups = kAllZuptGroups) {
  Eigen::Matrix<double, kZuptRows, 1> full;
  full << event.latched_xy, 0.0, Vec3::Zero(), Vec3::Zero(), -gravity_vector(g), g, Vec3::Zero(),
      z_cal.accel, z_cal.gyro;

  PseudoMeasurement pm;
  pm.groups = groups;
  pm.g = g;
  for (int grp = 0; grp < kZuptGroups; ++grp) {
    if (!(groups & (1u << grp))) continue;
    for (int r = 0; r < kZuptGroupRows[static_cast<std::size_t>(grp)]; ++r) {
      pm.rows.push_back(group_offset(grp) + r);
    }
  }
  const auto m = static_cast<Eigen::Index>(pm.rows.size());
  pm.z.resize(m);
  pm.inflation = Eigen::VectorXd::Ones(m);
  const int norm_row = group_offset(static_cast<int>(ZuptGroup::kGravityNorm));
  for (Eigen::Index i = 0; i < m; ++i) {
    pm.z(i) = full(pm.rows[static_cast<std::size_t>(i)]);
    // |a_b| has no usable gradient at a_b = 0
    if (pm.rows[static_cast<std::size_t>(i)] == norm_row && x_pred.a_b.norm() < 1e-9) {
      pm.inflation(i) = 1e6;
    }
  }
  return pm;
}

/// [1 + Kp (1 - sfs)] Rp.
inline Eigen::Matrix<double, kZuptRows, 1> soft_covariance(const StanceConfig& cfg, double sfs_k) {
  const double s = std::clamp(sfs_k, 0.0, 1.0);
  return (1.0 + cfg.Kp * (1.0 - s)) * cfg.Rp;
}

inline UpdateOutcome zupt_update_with_nis(const StateEstimate& est, const PseudoMeasurement& pm,
                                          const Eigen::Matrix<double, kZuptRows, 1>& variances,
                                          bool joseph = true) {
  auto f = [&](const StateVector& s) -> Eigen::VectorXd { return pm.model(NavState::from_vector(s)); };
  const Eigen::MatrixXd H = jacobian(f, est.mean.to_vector(), static_cast<Eigen::Index>(pm.rows.size()));
  return kalman_update(est, pm.residual(est.mean), H, pm.select_variances(variances), joseph);
}

inline StateEstimate zupt_update(const StateEstimate& est, const PseudoMeasurement& pm,
                                 const Eigen::Matrix<double, kZuptRows, 1>& variances,
                                 bool joseph = true) {
  return zupt_update_with_nis(est, pm, variances, joseph).est;
}

}  // namespace pdr
