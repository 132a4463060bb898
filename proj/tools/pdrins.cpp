#include "pdrins/io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace pdr;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitDivergence = 3;

int cmd_calibrate(const fs::path& stills, const fs::path& out, double g, bool diagonal, double max_rate,
                  bool gyro_bias) {
  const auto logs = io::read_log_dir(stills);
  if (logs.empty()) throw InputError("no .csv still logs in '" + stills.string() + "'");
  std::vector<std::vector<ImuSample>> segs;
  Vec3 gyro_sum = Vec3::Zero();
  std::size_t count = 0;
  for (const auto& l : logs) {
    if (l.lsb_w != logs.front().lsb_w) throw InputError("still logs disagree on lsb_w");
    segs.push_back(l.samples);
    for (const auto& s : l.samples) gyro_sum += to_vec(s.gyro_raw);
    count += l.samples.size();
  }
  if (count == 0) throw InputError("still logs contain no samples");

  SensorCalibration gyro = SensorCalibration::ideal(logs.front().lsb_w);
  if (gyro_bias) gyro.bias = gyro_sum / static_cast<double>(count);
  const auto batch = batch_means(std::span<const std::vector<ImuSample>>(segs), gyro, max_rate);

  CalibrationFitOptions opt;
  if (diagonal) opt.gain_model = GainModel::kDiagonal;
  auto fit = fit_accel_calibration(batch, g, opt);
  fit.calibration.noise_sigma = pooled_noise_sigma(segs, fit.calibration.gain);
  gyro.noise_sigma = pooled_noise_sigma(segs, gyro.gain, true);
  if (!(fit.calibration.noise_sigma > 0.0)) fit.calibration.noise_sigma = logs.front().lsb_a;
  if (!(gyro.noise_sigma > 0.0)) gyro.noise_sigma = logs.front().lsb_w;

  io::write_json(out, io::to_json(io::ImuCalibration{fit.calibration, gyro}));
  std::cerr << "calibrate: " << logs.size() << " orientations, cost " << fit.cost << " after " << fit.iterations
            << " iterations\n";
  return 0;
}

int cmd_track(const fs::path& log_path, const std::string& cal_path, const std::string& cfg_path,
              const fs::path& out, const std::string& mode) {
  io::PipelineConfig cfg;
  if (!cfg_path.empty()) cfg = io::pipeline_config_from_json(io::read_json(cfg_path));
  if (!mode.empty()) cfg.tracker.mode = zupt_mode_from_string(mode);
  fs::path cal_file = cal_path;
  if (cal_file.empty()) {
    if (cfg.calibration_path.empty()) throw InputError("no calibration: pass --cal or set calibration_paths");
    cal_file = fs::path(cfg.calibration_path);
    if (cal_file.is_relative()) cal_file = fs::path(cfg_path).parent_path() / cal_file;
  }
  const auto cal = io::imu_calibration_from_json(io::read_json(cal_file));
  const ImuLog log = io::read_log(log_path);

  const TrackResult res = run_tracker(log, cal.accel, cal.gyro, cfg.tracker);
  io::write_trajectory(out, res.trajectory);
  if (res.divergence) {
    std::cerr << "track: filter diverged at sample " << res.divergence->sample << " (covariance condition "
              << res.divergence->condition << "): " << res.divergence->message << '\n';
    return kExitDivergence;
  }
  return 0;
}

int cmd_allan(const fs::path& log_path, const std::string& axis, const std::string& cal_path, const fs::path& out,
              const std::string& coeffs_out) {
  const ImuLog log = io::read_log(log_path);
  SensorCalibration accel = SensorCalibration::ideal(log.lsb_a > 0 ? log.lsb_a : 1.0);
  SensorCalibration gyro = SensorCalibration::ideal(log.lsb_w > 0 ? log.lsb_w : 1.0);
  if (!cal_path.empty()) {
    const auto c = io::imu_calibration_from_json(io::read_json(cal_path));
    accel = c.accel;
    gyro = c.gyro;
  }
  const auto z = SampleCalibrator(accel, gyro)(std::span<const ImuSample>(log.samples));

  std::vector<int> axes;
  if (axis == "all") {
    axes = {0, 1, 2, 3, 4, 5};
  } else {
    const int a = io::parse_int(axis, "--axis");
    if (a < 0 || a > 5) throw InputError("--axis must be 0-5 or 'all'");
    axes = {a};
  }

  io::json coeffs = io::json::object();
  std::ofstream os = io::open_out(out);
  if (axes.size() == 1) {
    std::vector<double> y;
    for (const auto& s : z) y.push_back(axes[0] < 3 ? s.accel(axes[0]) : s.gyro(axes[0] - 3));
    const AllanCurve c = allan_deviation(y, log.fs);
    io::write_allan(os, c);
    if (!coeffs_out.empty()) coeffs[std::to_string(axes[0])] = io::to_json(extract_coefficients(c));
  } else {
    os << "axis,tau,adev,clusters\n";
    for (int a : axes) {
      std::vector<double> y;
      for (const auto& s : z) y.push_back(a < 3 ? s.accel(a) : s.gyro(a - 3));
      const AllanCurve c = allan_deviation(y, log.fs);
      for (std::size_t i = 0; i < c.taus.size(); ++i) {
        os << a << ',' << io::fmt(c.taus[i]) << ',' << io::fmt(c.adev[i]) << ',' << io::fmt(c.clusters[i]) << '\n';
      }
      if (!coeffs_out.empty()) coeffs[std::to_string(a)] = io::to_json(extract_coefficients(c));
    }
  }
  if (!coeffs_out.empty()) io::write_json(coeffs_out, coeffs);
  return 0;
}

int cmd_simulate(const fs::path& params_path, const fs::path& out, const std::string& truth_out,
                 const std::string& stills_dir, const std::string& cal_out, int orientations, double still_seconds) {
  const auto p = io::simulation_params_from_json(io::read_json(params_path));
  const GroundTruth truth = generate_gait(p.gait, p.fs);
  ImuLog log;
  log.fs = p.fs;
  log.lsb_a = 1.0 / p.sensors.accel.gain.diagonal().mean();
  log.lsb_w = 1.0 / p.sensors.gyro.gain.diagonal().mean();
  log.adc_bits = p.adc_bits;
  log.samples = inverse_imu(truth, p.sensors.accel, p.sensors.gyro, p.noise, p.noise_seed, p.adc_bits);
  io::write_log(out, log);
  if (!truth_out.empty()) io::write_truth(truth_out, truth);
  if (!cal_out.empty()) io::write_json(cal_out, io::to_json(p.sensors));
  if (!stills_dir.empty()) {
    if (orientations < 9) throw InputError("--orientations must be >= 9");
    fs::create_directories(stills_dir);
    NoiseModel still_noise = p.noise;
    const auto n = static_cast<int>(std::llround(still_seconds * p.fs));
    const auto segs = still_segments(p.sensors.accel, p.sensors.gyro, still_noise, orientations, n, p.fs,
                                     p.noise_seed + 7919);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      ImuLog s = log;
      s.samples = segs[i];
      char name[32];
      std::snprintf(name, sizeof name, "still_%02zu.csv", i);
      io::write_log(fs::path(stills_dir) / name, s);
    }
  }
  std::cerr << "simulate: " << truth.samples.size() << " samples, " << truth.steps << " steps, "
            << truth.travelled << " m\n";
  return 0;
}

int cmd_eval(const fs::path& traj_path, const fs::path& truth_path, double ttd, const fs::path& out,
             const std::string& plot_out) {
  const Trajectory traj = io::read_trajectory(traj_path);
  const GroundTruth truth = io::read_truth(truth_path);
  if (!(ttd > 0.0)) ttd = truth.travelled;
  if (!(ttd > 0.0)) throw InputError("--ttd not given and truth file has no ttd");
  if (traj.empty()) throw InputError("empty trajectory");

  // one checkpoint per true stance interval, at its midpoint
  std::vector<Checkpoint> cps;
  for (const auto& [a, b] : intervals(truth.stance_mask())) {
    const auto& s = truth.samples[(a + b - 1) / 2];
    if (s.t >= traj.front().t && s.t <= traj.back().t) cps.push_back({s.t, s.p});
  }
  const EvalReport r = evaluate(traj, ttd, cps);
  io::write_json(out, io::to_json(r));

  if (!plot_out.empty()) {
    std::ofstream os = io::open_out(plot_out);
    os << "t,px,py,pz,true_px,true_py,true_pz\n";
    std::size_t j = 0;
    for (const auto& row : traj) {
      while (j + 1 < truth.samples.size() &&
             std::abs(truth.samples[j + 1].t - row.t) <= std::abs(truth.samples[j].t - row.t)) {
        ++j;
      }
      const Vec3& tp = truth.samples.empty() ? Vec3::Zero().eval() : truth.samples[j].p;
      os << io::fmt(row.t) << ',' << io::fmt(row.p.x()) << ',' << io::fmt(row.p.y()) << ',' << io::fmt(row.p.z())
         << ',' << io::fmt(tp.x()) << ',' << io::fmt(tp.y()) << ',' << io::fmt(tp.z()) << '\n';
    }
  }
  std::cout << "epsilon_ttd " << r.epsilon_ttd << " (closure " << r.closure_error << " m over " << r.ttd
            << " m)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foot-mounted pedestrian inertial navigation"};
  app.require_subcommand(1);

  fs::path stills, cal_out_path;
  double g = kGravity, max_rate = 0.1;
  bool diagonal = false, gyro_bias = false;
  auto* calibrate = app.add_subcommand("calibrate", "Fit accelerometer and gyroscope calibration from still logs");
  calibrate->add_option("--stills", stills, "Directory of still-orientation logs (*.csv)")->required();
  calibrate->add_option("--out", cal_out_path, "Output calibration JSON")->required();
  calibrate->add_option("--g", g, "Local gravity magnitude [m/s^2]");
  calibrate->add_option("--max-rate", max_rate, "Stillness threshold on |w| [rad/s]");
  calibrate->add_flag("--diagonal", diagonal, "Fit a diagonal gain instead of lower-triangular");
  calibrate->add_flag("--gyro-bias", gyro_bias, "Set the gyro bias to the mean still reading instead of zero");

  fs::path log_path, out_path;
  std::string cal_path, cfg_path, mode;
  auto* track = app.add_subcommand("track", "Run the filter over a walk log");
  track->add_option("--log", log_path, "IMU log CSV")->required();
  track->add_option("--cal", cal_path, "Calibration JSON");
  track->add_option("--config", cfg_path, "Pipeline configuration JSON");
  track->add_option("--mode", mode, "Override ZUPT mode")->check(CLI::IsMember({"soft", "hard", "none"}));
  track->add_option("--out", out_path, "Output trajectory CSV")->required();

  std::string axis = "all", coeffs_out;
  auto* allan = app.add_subcommand("allan", "Allan deviation of a still log");
  allan->add_option("--log", log_path, "IMU log CSV")->required();
  allan->add_option("--axis", axis, "0-2 accelerometer, 3-5 gyroscope, or 'all'");
  allan->add_option("--cal", cal_path, "Calibration JSON (default: header LSBs)");
  allan->add_option("--out", out_path, "Output CSV")->required();
  allan->add_option("--coeffs", coeffs_out, "Also write N and B per axis as JSON");

  fs::path params_path;
  std::string truth_out, stills_dir, sim_cal_out;
  int orientations = 16;
  double still_seconds = 5.0;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic walk log");
  simulate->add_option("--params", params_path, "Gait and sensor parameters JSON")->required();
  simulate->add_option("--out", out_path, "Output IMU log CSV")->required();
  simulate->add_option("--truth", truth_out, "Output ground-truth CSV");
  simulate->add_option("--stills", stills_dir, "Also write still-orientation logs to this directory");
  simulate->add_option("--orientations", orientations, "Number of still orientations");
  simulate->add_option("--still-seconds", still_seconds, "Duration of each still log [s]");
  simulate->add_option("--cal-out", sim_cal_out, "Write the true sensor calibration JSON");

  fs::path traj_path, truth_path;
  double ttd = 0.0;
  std::string plot_out;
  auto* eval = app.add_subcommand("eval", "Score a trajectory against ground truth");
  eval->add_option("--traj", traj_path, "Trajectory CSV")->required();
  eval->add_option("--truth", truth_path, "Ground-truth CSV")->required();
  eval->add_option("--ttd", ttd, "Total travelled distance [m] (default: from truth)");
  eval->add_option("--out", out_path, "Output report JSON")->required();
  eval->add_option("--plot-out", plot_out, "Write estimated and true positions as CSV");

  std::string template_out;
  auto* tmpl = app.add_subcommand("config-template", "Write the default pipeline configuration");
  tmpl->add_option("--out", template_out, "Output JSON (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    if (*calibrate) return cmd_calibrate(stills, cal_out_path, g, diagonal, max_rate, gyro_bias);
    if (*track) return cmd_track(log_path, cal_path, cfg_path, out_path, mode);
    if (*allan) return cmd_allan(log_path, axis, cal_path, out_path, coeffs_out);
    if (*simulate) {
      return cmd_simulate(params_path, out_path, truth_out, stills_dir, sim_cal_out, orientations, still_seconds);
    }
    if (*eval) return cmd_eval(traj_path, truth_path, ttd, out_path, plot_out);
    if (*tmpl) {
      const auto j = io::to_json(io::PipelineConfig{});
      if (template_out.empty()) std::cout << j.dump(2) << '\n';
      else io::write_json(template_out, j);
      return 0;
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
