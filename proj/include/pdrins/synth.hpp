#pragma once

#include "pdrins/calibration.hpp"
#include "pdrins/core.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pdr {

using Vec2 = Eigen::Vector2d;

/// Foot-mounted gait description. One step is one stride of the
/// instrumented foot: a swing followed by a stance.
struct GaitParams {
  double step_length = 1.0;        // m, upper bound; segments are split evenly
  double cadence = 1.0;            // steps/s
  double stance_duration = 0.15;   // s
  double swing_peak_height = 0.12; // m
  double pitch_amplitude = 0.8;    // rad, toe-off/heel-strike swing profile gain
  double initial_rest = 2.0;       // s
  double final_rest = 2.0;         // s
  double timing_jitter = 0.05;     // relative, per step, drawn from seed
  std::vector<Vec2> path;          // waypoints, navigation frame
  std::uint64_t seed = 1;

  void validate() const {
    if (!(step_length > 0.0)) throw InputError("gait: step_length must be > 0");
    if (!(cadence > 0.0)) throw InputError("gait: cadence must be > 0");
    if (!(stance_duration > 0.0) || !(stance_duration < 1.0 / cadence)) {
      throw InputError("gait: stance_duration must be in (0, 1/cadence)");
    }
    if (!(timing_jitter >= 0.0 && timing_jitter < 0.5)) throw InputError("gait: timing_jitter outside [0, 0.5)");
    if (!(initial_rest >= 0.0 && final_rest >= 0.0)) throw InputError("gait: rests must be >= 0");
    if (path.size() < 2) throw InputError("gait: path needs at least two waypoints");
  }
};

struct TruthSample {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
  Quaternion q_nb{};
  Vec3 omega = Vec3::Zero();  // body rate, body frame
  bool stance = true;
};

struct GroundTruth {
  double fs = 100.0;
  std::vector<TruthSample> samples;
  std::size_t steps = 0;
  double travelled = 0.0;  // horizontal footfall-to-footfall distance, m

  std::vector<bool> stance_mask() const {
    std::vector<bool> m(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) m[i] = samples[i].stance;
    return m;
  }
};

inline double polyline_length(std::span<const Vec2> path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += (path[i] - path[i - 1]).norm();
  return len;
}

/// Closed rectangle starting at the origin heading along +x, walked `loops`
/// times counter-clockwise.
inline std::vector<Vec2> rectangle_path(double width, double height, int loops = 1) {
  std::vector<Vec2> p{{0.0, 0.0}};
  for (int l = 0; l < loops; ++l) {
    p.emplace_back(width, 0.0);
    p.emplace_back(width, height);
    p.emplace_back(0.0, height);
    p.emplace_back(0.0, 0.0);
  }
  return p;
}

namespace detail {
// quintic blend with zero velocity and acceleration at both ends
inline double blend(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }
inline double blend_d(double s) { return 30.0 * s * s * (1.0 - s) * (1.0 - s); }
inline double blend_dd(double s) { return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s); }
// bump 64 s^3 (1-s)^3, peak 1 at s = 1/2
inline double bump(double s) { const double u = s * (1.0 - s); return 64.0 * u * u * u; }
inline double bump_d(double s) { const double u = s * (1.0 - s); return 192.0 * u * u * (1.0 - 2.0 * s); }
inline double bump_dd(double s) {
  const double u = s * (1.0 - s);
  return 384.0 * u * ((1.0 - 2.0 * s) * (1.0 - 2.0 * s) - u);
}
}  // namespace detail

/// Analytic foot trajectory: footfalls along the polyline, quintic swings
/// in between. Position, velocity and acceleration are exact derivatives.
class GaitModel {
 public:
  explicit GaitModel(const GaitParams& params) : params_(params) {
    params_.validate();
    std::mt19937_64 rng(params_.seed);
    std::uniform_real_distribution<double> jitter(-params_.timing_jitter, params_.timing_jitter);

    const auto& path = params_.path;
    footfalls_.push_back(path.front());
    for (std::size_t i = 1; i < path.size(); ++i) {
      const Vec2 d = path[i] - path[i - 1];
      const double len = d.norm();
      if (len < params_.step_length) {
        throw InputError("gait: waypoints " + std::to_string(i - 1) + " and " + std::to_string(i) +
                         " are closer than one step");
      }
      const int n = static_cast<int>(std::ceil(len / params_.step_length - 1e-9));
      for (int k = 1; k < n; ++k) footfalls_.push_back(path[i - 1] + d * (static_cast<double>(k) / n));
      footfalls_.push_back(path[i]);
    }
    yaw_.resize(footfalls_.size());
    for (std::size_t i = 1; i < footfalls_.size(); ++i) {
      const Vec2 d = footfalls_[i] - footfalls_[i - 1];
      yaw_[i] = std::atan2(d.y(), d.x());
    }
    yaw_[0] = yaw_.size() > 1 ? yaw_[1] : 0.0;
    // unwrap so consecutive yaws differ by less than pi
    for (std::size_t i = 1; i < yaw_.size(); ++i) yaw_[i] = yaw_[i - 1] + wrap_angle(yaw_[i] - yaw_[i - 1]);

    const double period = 1.0 / params_.cadence;
    double t = params_.initial_rest;
    for (std::size_t i = 0; i + 1 < footfalls_.size(); ++i) {
      const double scale = 1.0 + jitter(rng);
      const double swing = (period - params_.stance_duration) * scale;
      const double stance = params_.stance_duration * scale;
      swings_.push_back({t, swing, i});
      t += swing + stance;
    }
    end_time_ = t + params_.final_rest;
  }

  double duration() const { return end_time_; }
  std::size_t steps() const { return swings_.size(); }
  const std::vector<Vec2>& footfalls() const { return footfalls_; }

  TruthSample at(double t) const {
    TruthSample s;
    s.t = t;
    // find the last swing starting at or before t
    auto it = std::upper_bound(swings_.begin(), swings_.end(), t,
                               [](double tv, const Swing& sw) { return tv < sw.start; });
    if (it == swings_.begin()) return rest(t, 0);
    const Swing& sw = *(it - 1);
    if (t >= sw.start + sw.duration) return rest(t, sw.from + 1);

    const double T = sw.duration;
    const double s_ = (t - sw.start) / T;
    const Vec2 p0 = footfalls_[sw.from], p1 = footfalls_[sw.from + 1];
    const Vec2 dp = p1 - p0;
    const double y0 = yaw_[sw.from], dy = yaw_[sw.from + 1] - yaw_[sw.from];
    const double H = params_.swing_peak_height;
    const double A = params_.pitch_amplitude;

    const double b = detail::blend(s_), bd = detail::blend_d(s_) / T, bdd = detail::blend_dd(s_) / (T * T);
    const double u = detail::bump(s_), ud = detail::bump_d(s_) / T, udd = detail::bump_dd(s_) / (T * T);
    s.p << p0 + dp * b, H * u;
    s.v << dp * bd, H * ud;
    s.a << dp * bdd, H * udd;

    const double yaw = y0 + dy * b, yaw_d = dy * bd;
    const double w = 2.0 * kPi * s_;
    const double pitch = A * std::sin(w) * detail::bump(s_);
    const double pitch_d = A * (2.0 * kPi / T * std::cos(w) * detail::bump(s_) + std::sin(w) * ud);
    s.q_nb = q_nb_from_euler(0.0, pitch, yaw);
    // body rate of R_bn = Rz(yaw) Ry(pitch): Ry' (0,0,yaw') + (0,pitch',0)
    s.omega << -std::sin(pitch) * yaw_d, pitch_d, std::cos(pitch) * yaw_d;
    s.stance = false;
    return s;
  }

 private:
  struct Swing {
    double start;
    double duration;
    std::size_t from;
  };

  TruthSample rest(double t, std::size_t footfall) const {
    TruthSample s;
    s.t = t;
    s.p << footfalls_[footfall], 0.0;
    s.q_nb = q_nb_from_euler(0.0, 0.0, yaw_[footfall]);
    s.stance = true;
    return s;
  }

  GaitParams params_;
  std::vector<Vec2> footfalls_;
  std::vector<double> yaw_;
  std::vector<Swing> swings_;
  double end_time_ = 0.0;
};

inline GroundTruth generate_gait(const GaitParams& params, double fs) {
  if (!(fs >= 50.0)) throw InputError("generate_gait: fs must be >= 50 Hz");
  const GaitModel model(params);
  GroundTruth truth;
  truth.fs = fs;
  truth.steps = model.steps();
  const auto& ff = model.footfalls();
  for (std::size_t i = 1; i < ff.size(); ++i) truth.travelled += (ff[i] - ff[i - 1]).norm();
  const auto n = static_cast<std::size_t>(std::floor(model.duration() * fs)) + 1;
  truth.samples.reserve(n);
  for (std::size_t j = 0; j < n; ++j) truth.samples.push_back(model.at(static_cast<double>(j) / fs));
  return truth;
}

// ---------------------------------------------------------------------------
// Inverse IMU model
// ---------------------------------------------------------------------------

/// Sensor noise: white noise sigma per sample and bias random-walk
/// increment sigma per sample (physical units), plus turn-on biases.
struct NoiseModel {
  double accel_sigma = 0.0;
  double accel_bias_walk = 0.0;
  double gyro_sigma = 0.0;
  double gyro_bias_walk = 0.0;
  Vec3 accel_bias0 = Vec3::Zero();
  Vec3 gyro_bias0 = Vec3::Zero();
};

/// Nominal quantization: 16-bit, +-4 g accelerometer and +-500 deg/s gyro.
inline constexpr double kDefaultLsbAccel = 8.0 * kGravity / 65536.0;
inline constexpr double kDefaultLsbGyro = 1000.0 * kDegToRad / 65536.0;

/// White noise and bias walk matching a RazorIMU-class sensor at 100 Hz:
/// random walk N of 5.5e-3 m/s^2/sqrt(Hz) and 5.2e-3 deg/s/sqrt(Hz), and a
/// bias walk placing the Allan minimum at B of about 6e-4 m/s^2 and
/// 3e-3 deg/s.
inline NoiseModel razor_like_noise(double fs = 100.0) {
  NoiseModel n;
  const double ts = 1.0 / fs;
  n.accel_sigma = 5.5e-3 * std::sqrt(fs);
  n.gyro_sigma = 5.2e-3 * kDegToRad * std::sqrt(fs);
  // min adev^2 = 2 N K / sqrt(3) for white noise N plus rate random walk K
  const double ka = std::pow(0.664 * 6.09e-4, 2) * std::sqrt(3.0) / (2.0 * 5.5e-3);
  const double kg = std::pow(0.664 * 3.0e-3, 2) * std::sqrt(3.0) / (2.0 * 5.2e-3) * kDegToRad;
  n.accel_bias_walk = ka * std::sqrt(ts);
  n.gyro_bias_walk = kg * std::sqrt(ts);
  return n;
}

/// Accelerometer model with mild cross-coupling and bias, gyroscope at its
/// datasheet gain.
inline std::pair<SensorCalibration, SensorCalibration> razor_like_sensors() {
  Mat3 e;
  e << 1.012, 0.004, -0.006, -0.003, 0.991, 0.005, 0.007, -0.002, 1.021;
  SensorCalibration accel{e / kDefaultLsbAccel, Vec3(41.0, -63.0, 95.0), 5.5e-2};
  SensorCalibration gyro = SensorCalibration::ideal(kDefaultLsbGyro, 9.1e-4);
  return {accel, gyro};
}

/// Specific force sensed by a body with nav-frame acceleration a and
/// attitude q_nb: R(q_nb) (a - g_vec). A resting sensor reads +g upward.
inline Vec3 specific_force(const Vec3& a_nav, const Quaternion& q_nb, double g = kGravity) {
  return rot_matrix(q_nb) * (a_nav - gravity_vector(g));
}

/// Raw samples measured = G (true + bias + noise) + b, rounded and
/// saturated to a signed `adc_bits` range.
inline std::vector<ImuSample> inverse_imu(const GroundTruth& truth, const SensorCalibration& accel_cal,
                                          const SensorCalibration& gyro_cal, const NoiseModel& noise,
                                          std::uint64_t seed, int adc_bits = 16) {
  if (adc_bits < 2 || adc_bits > 32) throw InputError("inverse_imu: adc_bits outside [2, 32]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double hi = std::ldexp(1.0, adc_bits - 1) - 1.0;
  const double lo = -std::ldexp(1.0, adc_bits - 1);
  auto quantize = [&](const Vec3& c) {
    RawTriple r;
    for (int i = 0; i < 3; ++i) r[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(std::clamp(std::round(c(i)), lo, hi));
    return r;
  };
  auto draw = [&](double sigma) {
    Vec3 v;
    v << unit(rng), unit(rng), unit(rng);
    return (sigma * v).eval();
  };

  Vec3 ba = noise.accel_bias0, bw = noise.gyro_bias0;
  std::vector<ImuSample> out;
  out.reserve(truth.samples.size());
  for (const auto& s : truth.samples) {
    const Vec3 f = specific_force(s.a, s.q_nb);
    const Vec3 na = draw(noise.accel_sigma);
    const Vec3 nw = draw(noise.gyro_sigma);
    ImuSample m;
    m.t = s.t;
    m.accel_raw = quantize(accel_cal.gain * (f + ba + na) + accel_cal.bias);
    m.gyro_raw = quantize(gyro_cal.gain * (s.omega + bw + nw) + gyro_cal.bias);
    out.push_back(m);
    ba += draw(noise.accel_bias_walk);
    bw += draw(noise.gyro_bias_walk);
  }
  return out;
}

/// Still segments in P orientations spread over the sphere, for
/// exercising the accelerometer calibration.
inline std::vector<std::vector<ImuSample>> still_segments(const SensorCalibration& accel_cal,
                                                          const SensorCalibration& gyro_cal,
                                                          const NoiseModel& noise, int P, int N,
                                                          double fs, std::uint64_t seed) {
  std::vector<std::vector<ImuSample>> segs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  for (int p = 0; p < P; ++p) {
    // golden-spiral directions for the sensed gravity reaction, jittered
    const double zc = 1.0 - 2.0 * (p + 0.5) / P;
    const double phi = p * kPi * (3.0 - std::sqrt(5.0)) + jitter(rng);
    const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    const Vec3 up_b(r * std::cos(phi), r * std::sin(phi), zc);
    // attitude whose body frame sees the nav up axis along up_b
    const Quaternion q_nb = quat_normalize(
        Quaternion{1.0 + up_b.z(), up_b.y(), -up_b.x(), 0.0}.norm() > 1e-9
            ? Quaternion{1.0 + up_b.z(), up_b.y(), -up_b.x(), 0.0}
            : Quaternion{0.0, 1.0, 0.0, 0.0});
    GroundTruth truth;
    truth.fs = fs;
    for (int i = 0; i < N; ++i) {
      TruthSample s;
      s.t = i / fs;
      s.q_nb = q_nb;
      truth.samples.push_back(s);
    }
    segs.push_back(inverse_imu(truth, accel_cal, gyro_cal, noise, seed * 1000003ULL + static_cast<std::uint64_t>(p)));
  }
  return segs;
}

}  // namespace pdr
