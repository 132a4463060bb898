#include "pdrins/synth.hpp"

#include "pdrins/allan.hpp"
#include "pdrins/stance.hpp"

#include <gtest/gtest.h>

using namespace pdr;

namespace {

GaitParams straight(double length, double step) {
  GaitParams gp;
  gp.path = {Vec2(0, 0), Vec2(length, 0)};
  gp.step_length = step;
  return gp;
}

std::size_t rising_edges(const std::vector<bool>& m) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < m.size(); ++i) n += m[i] && !m[i - 1];
  return n;
}

// Composite Simpson rule for a vector-valued integrand on [t0, t1].
template <class F>
Vec3 simpson(const F& f, double t0, double t1, int intervals) {
  const double h = (t1 - t0) / intervals;
  Vec3 acc = f(t0) + f(t1);
  for (int i = 1; i < intervals; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(t0 + i * h);
  return acc * h / 3.0;
}

SensorCalibration exact_cal(double lsb) { return SensorCalibration::ideal(lsb, 1.0); }

}  // namespace

TEST(Path, RectangleIsClosedAndCounterClockwise) {
  const auto p = rectangle_path(4.0, 2.0, 2);
  ASSERT_EQ(p.size(), 9u);
  EXPECT_EQ(p.front(), p.back());
  EXPECT_EQ(p[1], Vec2(4, 0));
  EXPECT_EQ(p[2], Vec2(4, 2));
  EXPECT_DOUBLE_EQ(polyline_length(p), 24.0);
}

TEST(Gait, TenMetresInOneMetreSteps) {
  const GroundTruth truth = generate_gait(straight(10.0, 1.0), 100.0);
  EXPECT_EQ(truth.steps, 10u);
  EXPECT_DOUBLE_EQ(truth.travelled, 10.0);
  // every swing ends in a stance; the leading rest is not an event
  EXPECT_EQ(rising_edges(truth.stance_mask()), 10u);
  EXPECT_TRUE(truth.samples.front().stance);
  EXPECT_LT((truth.samples.back().p - Vec3(10, 0, 0)).norm(), 1e-12);
}

TEST(Gait, SegmentsSplitEvenly) {
  GaitParams gp = straight(10.0, 1.3);
  const GaitModel m(gp);
  EXPECT_EQ(m.steps(), 8u);
  for (std::size_t i = 1; i < m.footfalls().size(); ++i) {
    EXPECT_NEAR((m.footfalls()[i] - m.footfalls()[i - 1]).norm(), 1.25, 1e-12);
  }
}

TEST(Gait, ClosedSquareReturnsToStart) {
  GaitParams gp;
  gp.path = rectangle_path(5.0, 5.0, 1);
  const GroundTruth truth = generate_gait(gp, 100.0);
  EXPECT_EQ(truth.samples.back().p, Vec3::Zero());
  EXPECT_DOUBLE_EQ(truth.travelled, 20.0);
  // the foot starts facing the first leg and ends facing along the last one
  EXPECT_NEAR(euler_from_q_nb(truth.samples.front().q_nb).z(), 0.0, 1e-12);
  EXPECT_NEAR(wrap_angle(euler_from_q_nb(truth.samples.back().q_nb).z()), -kPi / 2, 1e-12);
}

TEST(Gait, AccelerationIntegratesToVelocity) {
  GaitParams gp;
  gp.path = rectangle_path(4.0, 3.0, 1);
  gp.seed = 7;
  const GaitModel m(gp);
  const double T = m.duration();
  const int pieces = 200;
  for (int i = 0; i < pieces; ++i) {
    const double t0 = T * i / pieces, t1 = T * (i + 1) / pieces;
    // jerk is discontinuous at swing boundaries, so the grid is fine
    const Vec3 dv = simpson([&](double t) { return m.at(t).a; }, t0, t1, 2000);
    const Vec3 dp = simpson([&](double t) { return m.at(t).v; }, t0, t1, 2000);
    EXPECT_LT((dv - (m.at(t1).v - m.at(t0).v)).norm(), 1e-6) << "t " << t0;
    EXPECT_LT((dp - (m.at(t1).p - m.at(t0).p)).norm(), 1e-6) << "t " << t0;
  }
}

TEST(Gait, BodyRateMatchesAttitudeDerivative) {
  GaitParams gp;
  gp.path = rectangle_path(4.0, 3.0, 1);
  const GaitModel m(gp);
  const double h = 1e-6;
  for (double t = 0.0; t < m.duration(); t += 0.0137) {
    const TruthSample s = m.at(t);
    const Quaternion qp = m.at(t + h).q_nb, qm = m.at(t - h).q_nb;
    // q_nb' = -1/2 (0, omega) q_nb
    Eigen::Vector4d dq = (qp.coeffs() - qm.coeffs()) / (2 * h);
    const Quaternion model = (-0.5) * quat_mul(Quaternion::pure(s.omega), s.q_nb);
    EXPECT_LT((dq - model.coeffs()).norm(), 1e-6) << "t " << t;
  }
}

TEST(Gait, StanceIsStill) {
  GaitParams gp;
  gp.path = rectangle_path(6.0, 3.0, 1);
  const GroundTruth truth = generate_gait(gp, 100.0);
  for (const auto& [a, b] : intervals(truth.stance_mask())) {
    for (std::size_t k = a; k < b; ++k) {
      const auto& s = truth.samples[k];
      EXPECT_LE(s.v.norm(), 1e-9);
      EXPECT_LE(s.a.norm(), 1e-9);
      EXPECT_LE(s.omega.norm(), 1e-9);
      EXPECT_EQ(s.p, truth.samples[a].p);
      EXPECT_EQ(s.p.z(), 0.0);
    }
  }
}

TEST(Gait, SwingsReachPeakHeight) {
  const GaitParams gp = straight(6.0, 1.0);
  const GroundTruth truth = generate_gait(gp, 1000.0);
  double peak = 0.0;
  for (const auto& s : truth.samples) peak = std::max(peak, s.p.z());
  EXPECT_NEAR(peak, gp.swing_peak_height, 1e-6);
}

TEST(Gait, InvalidInputsThrow) {
  GaitParams gp;
  gp.path = {Vec2(0, 0), Vec2(0.5, 0), Vec2(5, 0)};
  try {
    GaitModel m(gp);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("waypoints 0 and 1 are closer than one step"), std::string::npos);
  }
  gp = straight(5.0, 1.0);
  gp.stance_duration = 1.5;
  EXPECT_THROW(GaitModel{gp}, InputError);
  gp = straight(5.0, 1.0);
  gp.path.pop_back();
  EXPECT_THROW(GaitModel{gp}, InputError);
  EXPECT_THROW(generate_gait(straight(5.0, 1.0), 40.0), InputError);
}

TEST(Gait, DeterministicPerSeed) {
  GaitParams a = straight(8.0, 1.0), b = a;
  const GroundTruth ta = generate_gait(a, 100.0), tb = generate_gait(b, 100.0);
  ASSERT_EQ(ta.samples.size(), tb.samples.size());
  for (std::size_t i = 0; i < ta.samples.size(); ++i) EXPECT_EQ(ta.samples[i].p, tb.samples[i].p);
  b.seed = 2;
  EXPECT_NE(generate_gait(b, 100.0).samples.size() == ta.samples.size() &&
                generate_gait(b, 100.0).samples[300].p == ta.samples[300].p,
            true);
}

// ---------------------------------------------------------------------------
// Inverse IMU
// ---------------------------------------------------------------------------

TEST(InverseImu, SpecificForceConvention) {
  EXPECT_EQ(specific_force(Vec3::Zero(), Quaternion::identity()), Vec3(0, 0, kGravity));
  // the filter's resting state carries the same body-frame reading
  const Quaternion q = q_nb_from_euler(0.2, -0.4, 1.0);
  EXPECT_LT((specific_force(Vec3::Zero(), q) - rot_matrix(q) * (-gravity_vector())).norm(), 1e-15);
  // free fall reads zero
  EXPECT_LT(specific_force(gravity_vector(), q).norm(), 1e-15);
}

TEST(InverseImu, StillLevelReadsGravityCounts) {
  GroundTruth truth;
  truth.samples.resize(10);
  const double lsb = kDefaultLsbAccel;
  const auto raw = inverse_imu(truth, exact_cal(lsb), exact_cal(kDefaultLsbGyro), NoiseModel{}, 1);
  for (const auto& s : raw) {
    EXPECT_EQ(s.accel_raw[0], 0);
    EXPECT_EQ(s.accel_raw[1], 0);
    EXPECT_EQ(s.accel_raw[2], static_cast<std::int32_t>(std::round(kGravity / lsb)));
    EXPECT_EQ(s.gyro_raw, (RawTriple{0, 0, 0}));
  }
}

TEST(InverseImu, SaturatesAtAdcRange) {
  GroundTruth truth;
  TruthSample s;
  s.a = Vec3(100.0, -100.0, 0.0);
  truth.samples.push_back(s);
  const auto raw = inverse_imu(truth, exact_cal(kDefaultLsbAccel), exact_cal(kDefaultLsbGyro), NoiseModel{}, 1);
  EXPECT_EQ(raw[0].accel_raw[0], 32767);
  EXPECT_EQ(raw[0].accel_raw[1], -32768);
  const auto raw12 = inverse_imu(truth, exact_cal(kDefaultLsbAccel), exact_cal(kDefaultLsbGyro), NoiseModel{}, 1, 12);
  EXPECT_EQ(raw12[0].accel_raw[0], 2047);
  EXPECT_THROW(inverse_imu(truth, exact_cal(1.0), exact_cal(1.0), NoiseModel{}, 1, 40), InputError);
}

TEST(InverseImu, StrapdownRoundTrip) {
  GaitParams gp = straight(8.0, 1.0);
  gp.initial_rest = 0.5;
  gp.final_rest = 1.0;
  const double fs = 1000.0;
  const GroundTruth truth = generate_gait(gp, fs);
  ASSERT_GE(truth.samples.back().t, 9.0);
  const SensorCalibration ac = exact_cal(1e-7), gc = exact_cal(1e-8);
  const auto raw = inverse_imu(truth, ac, gc, NoiseModel{}, 1, 32);
  const SampleCalibrator cal(ac, gc);

  const double Ts = 1.0 / fs;
  Quaternion q = truth.samples.front().q_nb;
  Vec3 p = truth.samples.front().p, v = Vec3::Zero();
  auto nav_accel = [&](const Quaternion& qq, std::size_t k) {
    return (rot_matrix(qq).transpose() * cal(raw[k]).accel + gravity_vector()).eval();
  };
  Vec3 a = nav_accel(q, 0);
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < raw.size(); ++k) {
    const Vec3 w = 0.5 * (cal(raw[k]).gyro + cal(raw[k + 1]).gyro);
    const Quaternion qn = quat_normalize(quat_mul(quat_exp(-0.5 * Ts * w), q));
    const Vec3 an = nav_accel(qn, k + 1);
    p += v * Ts + (2.0 * a + an) * (Ts * Ts / 6.0);
    v += 0.5 * (a + an) * Ts;
    q = qn;
    a = an;
    worst = std::max(worst, (p - truth.samples[k + 1].p).norm());
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(InverseImu, GyroBiasGivesLinearHeadingDrift) {
  GroundTruth truth;
  const double fs = 100.0;
  for (int i = 0; i <= 1000; ++i) {
    TruthSample s;
    s.t = i / fs;
    truth.samples.push_back(s);
  }
  NoiseModel nm;
  nm.gyro_bias0 = Vec3(0, 0, 0.01);
  const SensorCalibration gc = exact_cal(1e-9);
  const auto raw = inverse_imu(truth, exact_cal(1e-6), gc, nm, 1, 32);
  Quaternion q = Quaternion::identity();
  for (std::size_t k = 1; k < raw.size(); ++k) {
    q = quat_mul(quat_exp(-0.5 / fs * apply_gyro_calibration(gc, raw[k - 1].gyro_raw)), q);
    EXPECT_NEAR(euler_from_q_nb(q).z(), 0.01 * truth.samples[k].t, 1e-8);
  }
}

TEST(InverseImu, DeterministicPerSeed) {
  const GroundTruth truth = generate_gait(straight(5.0, 1.0), 100.0);
  const auto [ac, gc] = razor_like_sensors();
  const auto a = inverse_imu(truth, ac, gc, razor_like_noise(), 3);
  const auto b = inverse_imu(truth, ac, gc, razor_like_noise(), 3);
  const auto c = inverse_imu(truth, ac, gc, razor_like_noise(), 4);
  ASSERT_EQ(a.size(), b.size());
  std::size_t same_as_c = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].accel_raw, b[i].accel_raw);
    EXPECT_EQ(a[i].gyro_raw, b[i].gyro_raw);
    same_as_c += a[i].accel_raw == c[i].accel_raw;
  }
  EXPECT_LT(same_as_c, a.size() / 2);
}

TEST(InverseImu, WhiteNoiseLevel) {
  GroundTruth truth;
  for (int i = 0; i < 200000; ++i) truth.samples.push_back({});
  NoiseModel nm = razor_like_noise();
  nm.accel_bias_walk = nm.gyro_bias_walk = 0.0;
  const SensorCalibration ac = exact_cal(1e-6), gc = exact_cal(1e-8);
  const auto raw = inverse_imu(truth, ac, gc, nm, 5, 32);
  double sa = 0.0, sw = 0.0;
  for (const auto& s : raw) {
    sa += std::pow(apply_accel_calibration(ac, s.accel_raw).x(), 2);
    sw += std::pow(apply_gyro_calibration(gc, s.gyro_raw).y(), 2);
  }
  EXPECT_NEAR(std::sqrt(sa / raw.size()), nm.accel_sigma, 0.01 * nm.accel_sigma);
  EXPECT_NEAR(std::sqrt(sw / raw.size()), nm.gyro_sigma, 0.01 * nm.gyro_sigma);
}

TEST(InverseImu, RazorNoiseAllanCoefficients) {
  GroundTruth truth;
  const double fs = 100.0;
  for (int i = 0; i < 1000000; ++i) truth.samples.push_back({});
  const auto [ac, gc] = razor_like_sensors();
  const auto raw = inverse_imu(truth, ac, gc, razor_like_noise(fs), 11);
  std::vector<double> wx;
  wx.reserve(raw.size());
  for (const auto& s : raw) wx.push_back(apply_gyro_calibration(gc, s.gyro_raw).x() / kDegToRad);
  const NoiseCoefficients c = extract_coefficients(allan_deviation(wx, fs));
  EXPECT_NEAR(c.N, 5.2e-3, 0.1 * 5.2e-3);
  EXPECT_NEAR(c.B, 3e-3, 0.25 * 3e-3);
}

TEST(StillSegments, OrientationsSpreadOverSphere) {
  const auto [ac, gc] = razor_like_sensors();
  const auto segs = still_segments(ac, gc, NoiseModel{}, 16, 50, 100.0, 1);
  ASSERT_EQ(segs.size(), 16u);
  const SampleCalibrator cal(ac, gc);
  Vec3 mean_dir = Vec3::Zero();
  for (const auto& seg : segs) {
    ASSERT_EQ(seg.size(), 50u);
    const Vec3 f = cal(seg.front()).accel;
    EXPECT_NEAR(f.norm(), kGravity, 0.01);
    mean_dir += f.normalized();
  }
  EXPECT_LT(mean_dir.norm() / 16.0, 0.2);
}
