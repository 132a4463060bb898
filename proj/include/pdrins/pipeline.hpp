#pragma once

#include "pdrins/calibration.hpp"
#include "pdrins/ekf.hpp"
#include "pdrins/stance.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pdr {

enum class ZuptMode { kSoft, kHard, kNone };

inline std::string_view to_string(ZuptMode m) {
  switch (m) {
    case ZuptMode::kSoft: return "soft";
    case ZuptMode::kHard: return "hard";
    case ZuptMode::kNone: return "none";
  }
  return "soft";
}

inline ZuptMode zupt_mode_from_string(std::string_view s) {
  if (s == "soft") return ZuptMode::kSoft;
  if (s == "hard") return ZuptMode::kHard;
  if (s == "none") return ZuptMode::kNone;
  throw InputError("unknown zupt mode '" + std::string(s) + "' (expected soft, hard or none)");
}

struct TrackerConfig {
  FilterConfig filter = FilterConfig::defaults();
  StanceConfig stance;
  ZuptMode mode = ZuptMode::kSoft;
  bool bias_states = true;
  Vec3 p0 = Vec3::Zero();
  double heading0 = 0.0;      // rad
  double init_duration = 1.0; // s of leading still data used for initialization

  void validate() const {
    filter.validate();
    stance.validate();
    if (!(init_duration > 0.0)) throw InputError("tracker config: init_duration must be > 0");
    if (!p0.allFinite() || !std::isfinite(heading0)) throw InputError("tracker config: non-finite p0 or heading0");
  }
};

struct TrajectoryRow {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Quaternion q_nb{};
  double sfs = 0.0;
  bool stance = false;
};

using Trajectory = std::vector<TrajectoryRow>;

struct Divergence {
  std::size_t sample = 0;
  double condition = 0.0;
  std::string message;
};

struct TrackResult {
  Trajectory trajectory;
  std::optional<Divergence> divergence;
};

struct ImuLog {
  double fs = 100.0;
  double lsb_a = 0.0;
  double lsb_w = 0.0;
  int adc_bits = 16;
  std::vector<ImuSample> samples;
};

inline TrackResult run_tracker(const ImuLog& log, const SensorCalibration& accel_cal,
                               const SensorCalibration& gyro_cal, const TrackerConfig& config) {
  config.validate();
  accel_cal.validate();
  gyro_cal.validate();
  if (!(log.fs > 0.0)) throw InputError("run_tracker: log fs must be > 0");
  TrackResult out;
  if (log.samples.empty()) return out;
  for (std::size_t i = 1; i < log.samples.size(); ++i) {
    if (!(log.samples[i].t > log.samples[i - 1].t)) {
      throw InputError("run_tracker: timestamps not strictly increasing at sample " + std::to_string(i));
    }
  }

  FilterConfig fc = config.filter;
  fc.Ts = 1.0 / log.fs;
  if (!config.bias_states) {
    fc.Q.segment<3>(idx::ba).setZero();
    fc.Q.segment<3>(idx::bw).setZero();
  }
  const StanceConfig& sc = config.stance;

  const SampleCalibrator cal(accel_cal, gyro_cal);
  const std::vector<CalibratedSample> z = cal(std::span<const ImuSample>(log.samples));
  const StanceTrack track = stance_track(z, sc);

  const auto n_init = std::min(z.size(), static_cast<std::size_t>(std::llround(config.init_duration * log.fs)));
  StateEstimate est = init_state(config.p0, config.heading0, std::span(z).first(std::max<std::size_t>(n_init, 1)), fc);

  StanceLatch latch;
  out.trajectory.reserve(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    try {
      if (k > 0) est = predict(est, fc);
      est = update(est, stack_measurement(z[k]), fc);

      const double s = track.sfs[k];
      const std::optional<StanceEvent>* ev = nullptr;
      if (config.mode == ZuptMode::kHard) {
        ev = &latch.step(k, track.hard[k], track.hard[k], est.mean.p);
      } else {
        ev = &latch.step_soft(k, s, sc.gamma_sfs, est.mean.p);
      }
      const bool stance = ev->has_value();
      if (stance && config.mode != ZuptMode::kNone) {
        const PseudoMeasurement pm = build_pseudo_measurements(est.mean, **ev, z[k], fc.g, sc.groups);
        const auto var = config.mode == ZuptMode::kSoft ? soft_covariance(sc, s) : sc.Rp;
        est = zupt_update(est, pm, var, fc.joseph);
      }
      if (!est.mean.to_vector().allFinite()) throw DivergenceError("non-finite state");

      TrajectoryRow row;
      row.t = z[k].t;
      row.p = est.mean.p;
      row.q_nb = est.mean.q_nb;
      row.sfs = s;
      row.stance = stance;
      out.trajectory.push_back(row);
    } catch (const NumericalError& e) {
      double cond = std::numeric_limits<double>::infinity();
      if (est.cov.allFinite()) cond = condition_number(est.cov);
      out.divergence = Divergence{k, cond, e.what()};
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double epsilon_ttd(const Trajectory& traj, double ttd) {
  if (traj.empty()) throw InputError("epsilon_ttd: empty trajectory");
  if (!(ttd > 0.0)) throw InputError("epsilon_ttd: ttd must be > 0");
  return (traj.front().p - traj.back().p).norm() / ttd;
}

struct Checkpoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
};

/// Index of the trajectory row closest in time to t.
inline std::size_t nearest_row(const Trajectory& traj, double t) {
  auto it = std::lower_bound(traj.begin(), traj.end(), t,
                             [](const TrajectoryRow& r, double tv) { return r.t < tv; });
  if (it == traj.end()) return traj.size() - 1;
  const auto i = static_cast<std::size_t>(it - traj.begin());
  if (i > 0 && t - traj[i - 1].t <= it->t - t) return i - 1;
  return i;
}

inline std::vector<double> checkpoint_errors(const Trajectory& traj, std::span<const Checkpoint> checkpoints) {
  if (traj.empty()) throw InputError("checkpoint_errors: empty trajectory");
  const double t0 = traj.front().t, t1 = traj.back().t;
  std::string bad;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const double t = checkpoints[i].t;
    if (!(t >= t0 && t <= t1)) bad += (bad.empty() ? "" : ", ") + std::to_string(i) + " (t=" + std::to_string(t) + ")";
  }
  if (!bad.empty()) {
    throw InputError("checkpoint_errors: checkpoints outside [" + std::to_string(t0) + ", " + std::to_string(t1) +
                     "]: " + bad);
  }
  std::vector<double> err;
  err.reserve(checkpoints.size());
  for (const auto& c : checkpoints) err.push_back((traj[nearest_row(traj, c.t)].p - c.p).norm());
  return err;
}

struct EvalReport {
  double epsilon_ttd = 0.0;
  double ttd = 0.0;
  double closure_error = 0.0;
  std::vector<double> checkpoint_errors;
};

inline EvalReport evaluate(const Trajectory& traj, double ttd, std::span<const Checkpoint> checkpoints = {}) {
  EvalReport r;
  r.epsilon_ttd = epsilon_ttd(traj, ttd);
  r.ttd = ttd;
  r.closure_error = (traj.front().p - traj.back().p).norm();
  r.checkpoint_errors = checkpoint_errors(traj, checkpoints);
  return r;
}

}  // namespace pdr
