#include "pdrins/pipeline.hpp"

#include "walk_fixture.hpp"

#include <gtest/gtest.h>

using namespace pdr;
using pdr::testing::make_walk;

namespace {

ImuLog still_log(double seconds, double fs, std::uint64_t seed, const Quaternion& q = Quaternion::identity()) {
  GroundTruth truth;
  truth.fs = fs;
  const auto n = static_cast<std::size_t>(seconds * fs);
  for (std::size_t i = 0; i < n; ++i) {
    TruthSample s;
    s.t = static_cast<double>(i) / fs;
    s.q_nb = q;
    truth.samples.push_back(s);
  }
  const auto [ac, gc] = razor_like_sensors();
  ImuLog log;
  log.fs = fs;
  log.lsb_a = kDefaultLsbAccel;
  log.lsb_w = kDefaultLsbGyro;
  log.samples = inverse_imu(truth, ac, gc, razor_like_noise(fs), seed);
  return log;
}

Trajectory line_trajectory(std::size_t n, double dt, const Vec3& velocity) {
  Trajectory t(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i].t = static_cast<double>(i) * dt;
    t[i].p = velocity * t[i].t;
  }
  return t;
}

}  // namespace

TEST(ZuptModeNames, RoundTrip) {
  for (ZuptMode m : {ZuptMode::kSoft, ZuptMode::kHard, ZuptMode::kNone}) EXPECT_EQ(zupt_mode_from_string(to_string(m)), m);
  EXPECT_THROW(zupt_mode_from_string("medium"), InputError);
}

TEST(Tracker, EmptyLogGivesEmptyTrajectory) {
  const auto [ac, gc] = razor_like_sensors();
  const TrackResult r = run_tracker(ImuLog{}, ac, gc, TrackerConfig{});
  EXPECT_TRUE(r.trajectory.empty());
  EXPECT_FALSE(r.divergence.has_value());
}

TEST(Tracker, StillLogStaysPut) {
  const auto [ac, gc] = razor_like_sensors();
  TrackerConfig cfg;
  cfg.p0 = Vec3(2.0, -1.0, 0.0);
  cfg.heading0 = 0.4;
  const ImuLog log = still_log(60.0, 100.0, 3, q_nb_from_euler(0.05, -0.03, 0.0));
  const TrackResult r = run_tracker(log, ac, gc, cfg);
  ASSERT_FALSE(r.divergence.has_value());
  ASSERT_EQ(r.trajectory.size(), log.samples.size());
  double drift = 0.0;
  for (const auto& row : r.trajectory) drift = std::max(drift, (row.p - cfg.p0).norm());
  EXPECT_LT(drift, 0.05);
  EXPECT_NEAR(euler_from_q_nb(r.trajectory.front().q_nb).z(), 0.4, 1e-3);
  std::size_t stance = 0;
  for (const auto& row : r.trajectory) stance += row.stance;
  EXPECT_GT(stance, r.trajectory.size() * 99 / 100);
}

TEST(Tracker, SampleRateTakenFromLog) {
  const auto [ac, gc] = razor_like_sensors();
  TrackerConfig cfg;
  cfg.filter.Ts = 0.01;
  const ImuLog log = still_log(20.0, 200.0, 4);
  const TrackResult r = run_tracker(log, ac, gc, cfg);
  ASSERT_FALSE(r.divergence.has_value());
  EXPECT_DOUBLE_EQ(r.trajectory.back().t, log.samples.back().t);
  EXPECT_LT((r.trajectory.back().p - r.trajectory.front().p).norm(), 0.05);
}

TEST(Tracker, RejectsNonIncreasingTimestamps) {
  const auto [ac, gc] = razor_like_sensors();
  ImuLog log = still_log(3.0, 100.0, 5);
  log.samples[150].t = log.samples[149].t;
  try {
    run_tracker(log, ac, gc, TrackerConfig{});
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 150"), std::string::npos);
  }
}

TEST(Tracker, RequiresStillStart) {
  const auto [ac, gc] = razor_like_sensors();
  const auto w = make_walk(pdr::testing::walk_short(1), 1);
  ImuLog log = w.log;
  log.samples.erase(log.samples.begin(), log.samples.begin() + 250);
  EXPECT_THROW(run_tracker(log, ac, gc, TrackerConfig{}), InputError);
}

TEST(Tracker, DeterministicAcrossRuns) {
  const auto w = make_walk(pdr::testing::walk_short(2), 2);
  for (ZuptMode m : {ZuptMode::kSoft, ZuptMode::kHard}) {
    TrackerConfig cfg;
    cfg.mode = m;
    const TrackResult a = run_tracker(w.log, w.accel_cal, w.gyro_cal, cfg);
    const TrackResult b = run_tracker(w.log, w.accel_cal, w.gyro_cal, cfg);
    ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
    for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
      EXPECT_EQ(a.trajectory[i].p, b.trajectory[i].p);
      EXPECT_EQ(a.trajectory[i].q_nb, b.trajectory[i].q_nb);
      EXPECT_EQ(a.trajectory[i].sfs, b.trajectory[i].sfs);
    }
  }
}

TEST(Tracker, FollowsShortWalk) {
  const auto w = make_walk(pdr::testing::walk_short(3), 3);
  const TrackResult r = run_tracker(w.log, w.accel_cal, w.gyro_cal, TrackerConfig{});
  ASSERT_FALSE(r.divergence.has_value());
  double worst = 0.0;
  for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
    worst = std::max(worst, (r.trajectory[k].p - w.truth.samples[k].p).norm());
  }
  EXPECT_LT(worst, 0.5);
  EXPECT_LT(epsilon_ttd(r.trajectory, w.truth.travelled), 0.02);
}

TEST(Tracker, BiasStatesHelpUnderBiasDrift) {
  // bias walks well above the nominal sensor, with the filter told their size
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    NoiseModel nm = razor_like_noise();
    nm.accel_bias_walk *= 30.0;
    nm.gyro_bias_walk *= 30.0;
    const auto w = make_walk(pdr::testing::walk_300m(seed), seed, nm);
    double err[2];
    for (bool with : {true, false}) {
      TrackerConfig cfg;
      cfg.bias_states = with;
      cfg.filter.Q.segment<3>(idx::ba).setConstant(nm.accel_bias_walk * nm.accel_bias_walk);
      cfg.filter.Q.segment<3>(idx::bw).setConstant(nm.gyro_bias_walk * nm.gyro_bias_walk);
      const TrackResult r = run_tracker(w.log, w.accel_cal, w.gyro_cal, cfg);
      ASSERT_FALSE(r.divergence.has_value());
      err[with ? 0 : 1] = epsilon_ttd(r.trajectory, w.truth.travelled);
    }
    EXPECT_LT(err[0], err[1]) << "seed " << seed;
  }
}

TEST(Tracker, DivergenceReportedWithPartialTrajectory) {
  const auto [ac, gc] = razor_like_sensors();
  // without ZUPTs the position variance grows until it overflows
  TrackerConfig cfg;
  cfg.mode = ZuptMode::kNone;
  cfg.filter.Q.segment<3>(idx::p).setConstant(1e307);
  const ImuLog log = still_log(5.0, 100.0, 6);
  const TrackResult r = run_tracker(log, ac, gc, cfg);
  ASSERT_TRUE(r.divergence.has_value());
  EXPECT_GT(r.divergence->sample, 0u);
  EXPECT_EQ(r.trajectory.size(), r.divergence->sample);
  EXPECT_FALSE(r.divergence->message.empty());
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST(EpsilonTtd, ClosedLoopIsZero) {
  Trajectory t(3);
  t[0].p = t[2].p = Vec3(1, 2, 3);
  t[1].p = Vec3(10, 0, 0);
  EXPECT_EQ(epsilon_ttd(t, 50.0), 0.0);
}

TEST(EpsilonTtd, OneMetreOverHundred) {
  Trajectory t(2);
  t[1].p = Vec3(0.6, 0.8, 0.0);
  EXPECT_DOUBLE_EQ(epsilon_ttd(t, 100.0), 0.01);
  EXPECT_THROW(epsilon_ttd(t, 0.0), InputError);
  EXPECT_THROW(epsilon_ttd(Trajectory{}, 1.0), InputError);
}

TEST(EpsilonTtd, TruthDistanceMatchesRequestedPath) {
  const GroundTruth truth = generate_gait(pdr::testing::walk_300m(1), 100.0);
  EXPECT_NEAR(truth.travelled, 300.0, 3.0);
  EXPECT_EQ(truth.steps, 240u);
}

TEST(Checkpoints, SelfGivesZeros) {
  const Trajectory t = line_trajectory(100, 0.01, Vec3(1, 0, 0));
  std::vector<Checkpoint> cps;
  for (std::size_t i = 0; i < t.size(); i += 7) cps.push_back({t[i].t, t[i].p});
  for (double e : checkpoint_errors(t, cps)) EXPECT_EQ(e, 0.0);
}

TEST(Checkpoints, OffsetOfOneMetre) {
  const Trajectory t = line_trajectory(100, 0.01, Vec3::Zero());
  const std::vector<Checkpoint> cps = {{0.5, Vec3(0, 1, 0)}};
  EXPECT_EQ(checkpoint_errors(t, cps), std::vector<double>{1.0});
}

TEST(Checkpoints, OutOfSpanListsOffenders) {
  const Trajectory t = line_trajectory(100, 0.01, Vec3::Zero());
  const std::vector<Checkpoint> cps = {{-0.5, {}}, {0.3, {}}, {2.0, {}}};
  try {
    checkpoint_errors(t, cps);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0 (t=-0.5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2 (t=2.0"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("1 (t="), std::string::npos) << msg;
  }
}

TEST(Checkpoints, NearestSampleCloseToInterpolation) {
  const double dt = 0.01;
  const Vec3 vel(1.2, -0.5, 0.1);
  const Trajectory t = line_trajectory(200, dt, vel);
  for (double tc = 0.0; tc <= t.back().t; tc += 0.00731) {
    // linear interpolation between the bracketing rows is exact on a line
    const Vec3 interp = vel * tc;
    const Vec3 nearest = t[nearest_row(t, tc)].p;
    EXPECT_LE((nearest - interp).norm(), vel.norm() * dt + 1e-12);
    EXPECT_LE(std::abs(t[nearest_row(t, tc)].t - tc), dt / 2 + 1e-12);
  }
}

TEST(Evaluate, CombinesMetrics) {
  const Trajectory t = line_trajectory(101, 0.01, Vec3(1, 0, 0));
  const std::vector<Checkpoint> cps = {{0.5, Vec3(0.5, 0, 0)}};
  const EvalReport r = evaluate(t, 2.0, cps);
  EXPECT_DOUBLE_EQ(r.closure_error, 1.0);
  EXPECT_DOUBLE_EQ(r.epsilon_ttd, 0.5);
  EXPECT_EQ(r.ttd, 2.0);
  ASSERT_EQ(r.checkpoint_errors.size(), 1u);
  EXPECT_NEAR(r.checkpoint_errors[0], 0.0, 1e-12);
}
