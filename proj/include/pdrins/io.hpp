#pragma once

#include "pdrins/allan.hpp"
#include "pdrins/pipeline.hpp"
#include "pdrins/synth.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace pdr::io {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Number formatting and parsing
// ---------------------------------------------------------------------------

/// Shortest representation that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw InputError(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline std::int32_t parse_int(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  std::int32_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw InputError(where + ": cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  return out;
}

// ---------------------------------------------------------------------------
// IMU log CSV
// ---------------------------------------------------------------------------

inline void write_log(std::ostream& out, const ImuLog& log) {
  out << "# fs=" << fmt(log.fs) << " lsb_a=" << fmt(log.lsb_a) << " lsb_w=" << fmt(log.lsb_w)
      << " adc_bits=" << log.adc_bits << '\n';
  out << "t,ax,ay,az,gx,gy,gz\n";
  for (const auto& s : log.samples) {
    out << fmt(s.t);
    for (auto v : s.accel_raw) out << ',' << v;
    for (auto v : s.gyro_raw) out << ',' << v;
    out << '\n';
  }
}

inline ImuLog read_log(std::istream& in, const std::string& name = "log") {
  ImuLog log;
  std::string line;
  if (!std::getline(in, line) || line.rfind('#', 0) != 0) {
    throw InputError(name + ": missing '# fs=... lsb_a=... lsb_w=...' header");
  }
  bool have_fs = false, have_a = false, have_w = false;
  std::istringstream hs(line.substr(1));
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw InputError(name + ": malformed header token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "fs") { log.fs = parse_double(val, name + " header"); have_fs = true; }
    else if (key == "lsb_a") { log.lsb_a = parse_double(val, name + " header"); have_a = true; }
    else if (key == "lsb_w") { log.lsb_w = parse_double(val, name + " header"); have_w = true; }
    else if (key == "adc_bits") log.adc_bits = parse_int(val, name + " header");
    else throw InputError(name + ": unknown header key '" + key + "'");
  }
  if (!have_fs || !have_a || !have_w) throw InputError(name + ": header must define fs, lsb_a and lsb_w");
  if (!(log.fs > 0.0)) throw InputError(name + ": fs must be > 0");

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line.rfind('#', 0) == 0) continue;
    if (line.rfind("t,", 0) == 0) continue;
    const auto f = split(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != 7) throw InputError(where + ": expected 7 columns, got " + std::to_string(f.size()));
    ImuSample s;
    s.t = parse_double(f[0], where);
    for (std::size_t i = 0; i < 3; ++i) {
      s.accel_raw[i] = parse_int(f[1 + i], where);
      s.gyro_raw[i] = parse_int(f[4 + i], where);
    }
    if (!log.samples.empty() && !(s.t > log.samples.back().t)) {
      throw InputError(where + ": timestamps must be strictly increasing");
    }
    log.samples.push_back(s);
  }
  return log;
}

inline ImuLog read_log(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_log(in, path.string());
}

inline void write_log(const std::filesystem::path& path, const ImuLog& log) {
  auto out = open_out(path);
  write_log(out, log);
}

/// All regular files in `dir`, sorted by name, each read as a log.
inline std::vector<ImuLog> read_log_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ImuLog> logs;
  for (const auto& f : files) logs.push_back(read_log(f));
  return logs;
}

// ---------------------------------------------------------------------------
// Truth and trajectory CSV
// ---------------------------------------------------------------------------

inline void write_truth(std::ostream& out, const GroundTruth& truth) {
  out << "# fs=" << fmt(truth.fs) << " ttd=" << fmt(truth.travelled) << '\n';
  out << "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,stance\n";
  for (const auto& s : truth.samples) {
    out << fmt(s.t) << ',' << fmt(s.p.x()) << ',' << fmt(s.p.y()) << ',' << fmt(s.p.z()) << ','
        << fmt(s.v.x()) << ',' << fmt(s.v.y()) << ',' << fmt(s.v.z()) << ',' << fmt(s.q_nb.w) << ','
        << fmt(s.q_nb.x) << ',' << fmt(s.q_nb.y) << ',' << fmt(s.q_nb.z) << ',' << (s.stance ? 1 : 0)
        << '\n';
  }
}

inline GroundTruth read_truth(std::istream& in, const std::string& name = "truth") {
  GroundTruth truth;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind('#', 0) == 0) {
      std::istringstream hs(line.substr(1));
      std::string tok;
      while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        if (tok.substr(0, eq) == "fs") truth.fs = parse_double(tok.substr(eq + 1), name + " header");
        if (tok.substr(0, eq) == "ttd") truth.travelled = parse_double(tok.substr(eq + 1), name + " header");
      }
      continue;
    }
    if (line.empty() || line.rfind("t,", 0) == 0) continue;
    const auto f = split(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != 12) throw InputError(where + ": expected 12 columns, got " + std::to_string(f.size()));
    TruthSample s;
    s.t = parse_double(f[0], where);
    s.p << parse_double(f[1], where), parse_double(f[2], where), parse_double(f[3], where);
    s.v << parse_double(f[4], where), parse_double(f[5], where), parse_double(f[6], where);
    s.q_nb = {parse_double(f[7], where), parse_double(f[8], where), parse_double(f[9], where),
              parse_double(f[10], where)};
    s.stance = parse_int(f[11], where) != 0;
    truth.samples.push_back(s);
  }
  return truth;
}

inline GroundTruth read_truth(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_truth(in, path.string());
}

inline void write_truth(const std::filesystem::path& path, const GroundTruth& truth) {
  auto out = open_out(path);
  write_truth(out, truth);
}

inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
  out << "t,px,py,pz,qw,qx,qy,qz,sfs,stance\n";
  for (const auto& r : traj) {
    out << fmt(r.t) << ',' << fmt(r.p.x()) << ',' << fmt(r.p.y()) << ',' << fmt(r.p.z()) << ','
        << fmt(r.q_nb.w) << ',' << fmt(r.q_nb.x) << ',' << fmt(r.q_nb.y) << ',' << fmt(r.q_nb.z) << ','
        << fmt(r.sfs) << ',' << (r.stance ? 1 : 0) << '\n';
  }
}

inline Trajectory read_trajectory(std::istream& in, const std::string& name = "trajectory") {
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.rfind('#', 0) == 0 || line.rfind("t,", 0) == 0) continue;
    const auto f = split(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != 10) throw InputError(where + ": expected 10 columns, got " + std::to_string(f.size()));
    TrajectoryRow r;
    r.t = parse_double(f[0], where);
    r.p << parse_double(f[1], where), parse_double(f[2], where), parse_double(f[3], where);
    r.q_nb = {parse_double(f[4], where), parse_double(f[5], where), parse_double(f[6], where),
              parse_double(f[7], where)};
    r.sfs = parse_double(f[8], where);
    r.stance = parse_int(f[9], where) != 0;
    if (!traj.empty() && !(r.t > traj.back().t)) throw InputError(where + ": t must be strictly increasing");
    traj.push_back(r);
  }
  return traj;
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_trajectory(in, path.string());
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = open_out(path);
  write_trajectory(out, traj);
}

inline void write_allan(std::ostream& out, const AllanCurve& c) {
  out << "tau,adev,clusters\n";
  for (std::size_t i = 0; i < c.taus.size(); ++i) {
    out << fmt(c.taus[i]) << ',' << fmt(c.adev[i]) << ',' << fmt(c.clusters[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Strict JSON helpers
// ---------------------------------------------------------------------------

inline json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

/// Rejects missing and unknown keys of an object.
inline void expect_keys(const json& j, const std::string& where, std::initializer_list<const char*> required,
                        std::initializer_list<const char*> optional = {}) {
  if (!j.is_object()) throw InputError(where + ": expected an object");
  std::set<std::string> known;
  for (const char* k : required) {
    known.insert(k);
    if (!j.contains(k)) throw InputError(where + ": missing key '" + k + "'");
  }
  for (const char* k : optional) known.insert(k);
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw InputError(where + ": unknown key '" + k + "'");
  }
}

inline double num(const json& j, const std::string& where) {
  if (!j.is_number()) throw InputError(where + ": expected a number");
  return j.get<double>();
}

inline bool boolean(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw InputError(where + ": expected true or false");
  return j.get<bool>();
}

inline int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw InputError(where + ": expected an integer");
  return j.get<int>();
}

inline Eigen::VectorXd vec(const json& j, const std::string& where, Eigen::Index n) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
    throw InputError(where + ": expected an array of " + std::to_string(n) + " numbers");
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = num(j[static_cast<std::size_t>(i)], where);
  return v;
}

template <class Derived>
json to_json_array(const Eigen::MatrixBase<Derived>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

// ---------------------------------------------------------------------------
// Calibration JSON
// ---------------------------------------------------------------------------

inline json to_json(const SensorCalibration& c) {
  json g = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) g.push_back(c.gain(r, k));
  return json{{"gain", g}, {"bias", to_json_array(c.bias)}, {"noise_sigma", c.noise_sigma}};
}

inline SensorCalibration sensor_calibration_from_json(const json& j, const std::string& where) {
  expect_keys(j, where, {"gain", "bias", "noise_sigma"});
  SensorCalibration c;
  const Eigen::VectorXd g = vec(j["gain"], where + ".gain", 9);
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.gain(r, k) = g(3 * r + k);
  c.bias = vec(j["bias"], where + ".bias", 3);
  c.noise_sigma = num(j["noise_sigma"], where + ".noise_sigma");
  c.validate();
  return c;
}

struct ImuCalibration {
  SensorCalibration accel;
  SensorCalibration gyro;
};

inline json to_json(const ImuCalibration& c) { return json{{"accel", to_json(c.accel)}, {"gyro", to_json(c.gyro)}}; }

inline ImuCalibration imu_calibration_from_json(const json& j, const std::string& where = "calibration") {
  expect_keys(j, where, {"accel", "gyro"});
  return {sensor_calibration_from_json(j["accel"], where + ".accel"),
          sensor_calibration_from_json(j["gyro"], where + ".gyro")};
}

// ---------------------------------------------------------------------------
// Tracker configuration JSON
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, kZuptGroups> kZuptGroupNames = {
    "xy", "z", "velocity", "acceleration", "gravity_direction", "gravity_norm", "rate", "accel_bias", "gyro_bias"};

inline json filter_to_json(const FilterConfig& f) {
  json q{{"p", to_json_array(f.Q.segment<3>(idx::p))},       {"v", to_json_array(f.Q.segment<3>(idx::v))},
         {"a", to_json_array(f.Q.segment<3>(idx::a))},       {"q", to_json_array(f.Q.segment<4>(idx::q))},
         {"a_b", to_json_array(f.Q.segment<3>(idx::ab))},    {"omega", to_json_array(f.Q.segment<3>(idx::w))},
         {"bias_a", to_json_array(f.Q.segment<3>(idx::ba))}, {"bias_w", to_json_array(f.Q.segment<3>(idx::bw))}};
  json r{{"accel", to_json_array(f.R.head<3>())}, {"gyro", to_json_array(f.R.tail<3>())}};
  return json{{"Ts", f.Ts},
              {"g", f.g},
              {"joseph", f.joseph},
              {"analytic_linear_blocks", f.analytic_linear_blocks},
              {"init_max_gyro", f.init_max_gyro},
              {"init_max_accel_std", f.init_max_accel_std},
              {"init_min_duration", f.init_min_duration},
              {"Q", q},
              {"R", r}};
}

inline FilterConfig filter_from_json(const json& j) {
  const std::string w = "filter";
  expect_keys(j, w, {"Ts", "g", "joseph", "analytic_linear_blocks", "init_max_gyro", "init_max_accel_std",
                     "init_min_duration", "Q", "R"});
  FilterConfig f;
  f.Ts = num(j["Ts"], w + ".Ts");
  f.g = num(j["g"], w + ".g");
  f.joseph = boolean(j["joseph"], w + ".joseph");
  f.analytic_linear_blocks = boolean(j["analytic_linear_blocks"], w + ".analytic_linear_blocks");
  f.init_max_gyro = num(j["init_max_gyro"], w + ".init_max_gyro");
  f.init_max_accel_std = num(j["init_max_accel_std"], w + ".init_max_accel_std");
  f.init_min_duration = num(j["init_min_duration"], w + ".init_min_duration");
  const json& q = j["Q"];
  expect_keys(q, w + ".Q", {"p", "v", "a", "q", "a_b", "omega", "bias_a", "bias_w"});
  f.Q << vec(q["p"], w + ".Q.p", 3), vec(q["v"], w + ".Q.v", 3), vec(q["a"], w + ".Q.a", 3),
      vec(q["q"], w + ".Q.q", 4), vec(q["a_b"], w + ".Q.a_b", 3), vec(q["omega"], w + ".Q.omega", 3),
      vec(q["bias_a"], w + ".Q.bias_a", 3), vec(q["bias_w"], w + ".Q.bias_w", 3);
  const json& r = j["R"];
  expect_keys(r, w + ".R", {"accel", "gyro"});
  f.R << vec(r["accel"], w + ".R.accel", 3), vec(r["gyro"], w + ".R.gyro", 3);
  f.validate();
  return f;
}

inline json stance_to_json(const StanceConfig& s) {
  json rp = json::object();
  for (int g = 0; g < kZuptGroups; ++g) {
    rp[kZuptGroupNames[static_cast<std::size_t>(g)]] =
        to_json_array(s.Rp.segment(group_offset(g), kZuptGroupRows[static_cast<std::size_t>(g)]));
  }
  json groups = json::array();
  for (int g = 0; g < kZuptGroups; ++g) {
    if (s.groups & (1u << g)) groups.push_back(kZuptGroupNames[static_cast<std::size_t>(g)]);
  }
  return json{{"gamma_a_min", s.gamma_a_min}, {"gamma_a_max", s.gamma_a_max}, {"sigma_a_max", s.sigma_a_max},
              {"gamma_w_max", s.gamma_w_max}, {"sigma_w_max", s.sigma_w_max}, {"F", s.F},
              {"S", s.S},                     {"gamma_sfs", s.gamma_sfs},     {"Kp", s.Kp},
              {"Rp", rp},                     {"groups", groups}};
}

inline StanceConfig stance_from_json(const json& j) {
  const std::string w = "stance";
  expect_keys(j, w, {"gamma_a_min", "gamma_a_max", "sigma_a_max", "gamma_w_max", "sigma_w_max", "F", "S",
                     "gamma_sfs", "Kp", "Rp", "groups"});
  StanceConfig s;
  s.gamma_a_min = num(j["gamma_a_min"], w + ".gamma_a_min");
  s.gamma_a_max = num(j["gamma_a_max"], w + ".gamma_a_max");
  s.sigma_a_max = num(j["sigma_a_max"], w + ".sigma_a_max");
  s.gamma_w_max = num(j["gamma_w_max"], w + ".gamma_w_max");
  s.sigma_w_max = num(j["sigma_w_max"], w + ".sigma_w_max");
  s.F = integer(j["F"], w + ".F");
  s.S = integer(j["S"], w + ".S");
  s.gamma_sfs = num(j["gamma_sfs"], w + ".gamma_sfs");
  s.Kp = num(j["Kp"], w + ".Kp");
  const json& rp = j["Rp"];
  expect_keys(rp, w + ".Rp", {"xy", "z", "velocity", "acceleration", "gravity_direction", "gravity_norm", "rate",
                              "accel_bias", "gyro_bias"});
  for (int g = 0; g < kZuptGroups; ++g) {
    const char* name = kZuptGroupNames[static_cast<std::size_t>(g)];
    const int rows = kZuptGroupRows[static_cast<std::size_t>(g)];
    s.Rp.segment(group_offset(g), rows) = vec(rp[name], w + ".Rp." + name, rows);
  }
  if (!j["groups"].is_array()) throw InputError(w + ".groups: expected an array of group names");
  s.groups = 0;
  for (const auto& e : j["groups"]) {
    if (!e.is_string()) throw InputError(w + ".groups: expected group names");
    const auto name = e.get<std::string>();
    const auto it = std::find(kZuptGroupNames.begin(), kZuptGroupNames.end(), name);
    if (it == kZuptGroupNames.end()) throw InputError(w + ".groups: unknown group '" + name + "'");
    s.groups |= static_cast<std::uint16_t>(1u << (it - kZuptGroupNames.begin()));
  }
  s.validate();
  return s;
}

struct PipelineConfig {
  TrackerConfig tracker;
  std::string calibration_path;  // may be empty
};

inline json to_json(const PipelineConfig& c) {
  const TrackerConfig& t = c.tracker;
  return json{{"filter", filter_to_json(t.filter)},
              {"stance", stance_to_json(t.stance)},
              {"calibration_paths", json{{"calibration", c.calibration_path}}},
              {"tracker", json{{"mode", std::string(to_string(t.mode))},
                               {"bias_states", t.bias_states},
                               {"p0", to_json_array(t.p0)},
                               {"heading0", t.heading0},
                               {"init_duration", t.init_duration}}}};
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
  expect_keys(j, "config", {"filter", "stance", "calibration_paths", "tracker"});
  PipelineConfig c;
  c.tracker.filter = filter_from_json(j["filter"]);
  c.tracker.stance = stance_from_json(j["stance"]);
  const json& cp = j["calibration_paths"];
  expect_keys(cp, "calibration_paths", {"calibration"});
  if (!cp["calibration"].is_string()) throw InputError("calibration_paths.calibration: expected a string");
  c.calibration_path = cp["calibration"].get<std::string>();
  const json& t = j["tracker"];
  expect_keys(t, "tracker", {"mode", "bias_states", "p0", "heading0", "init_duration"});
  if (!t["mode"].is_string()) throw InputError("tracker.mode: expected a string");
  c.tracker.mode = zupt_mode_from_string(t["mode"].get<std::string>());
  c.tracker.bias_states = boolean(t["bias_states"], "tracker.bias_states");
  c.tracker.p0 = vec(t["p0"], "tracker.p0", 3);
  c.tracker.heading0 = num(t["heading0"], "tracker.heading0");
  c.tracker.init_duration = num(t["init_duration"], "tracker.init_duration");
  c.tracker.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Simulation parameters JSON
// ---------------------------------------------------------------------------

struct SimulationParams {
  GaitParams gait;
  double fs = 100.0;
  NoiseModel noise = razor_like_noise();
  std::uint64_t noise_seed = 1;
  ImuCalibration sensors{razor_like_sensors().first, razor_like_sensors().second};
  int adc_bits = 16;
};

inline json noise_to_json(const NoiseModel& n) {
  return json{{"accel_sigma", n.accel_sigma},          {"accel_bias_walk", n.accel_bias_walk},
              {"gyro_sigma", n.gyro_sigma},            {"gyro_bias_walk", n.gyro_bias_walk},
              {"accel_bias0", to_json_array(n.accel_bias0)}, {"gyro_bias0", to_json_array(n.gyro_bias0)}};
}

inline json to_json(const SimulationParams& p) {
  json path = json::array();
  for (const auto& w : p.gait.path) path.push_back(json::array({w.x(), w.y()}));
  const GaitParams& g = p.gait;
  return json{{"step_length", g.step_length},
              {"cadence", g.cadence},
              {"stance_duration", g.stance_duration},
              {"swing_peak_height", g.swing_peak_height},
              {"pitch_amplitude", g.pitch_amplitude},
              {"initial_rest", g.initial_rest},
              {"final_rest", g.final_rest},
              {"timing_jitter", g.timing_jitter},
              {"path", path},
              {"seed", g.seed},
              {"fs", p.fs},
              {"noise", noise_to_json(p.noise)},
              {"noise_seed", p.noise_seed},
              {"adc_bits", p.adc_bits},
              {"sensors", to_json(p.sensors)}};
}

/// Gait keys are optional and fall back to GaitParams defaults. The path is
/// either an explicit list of [x, y] waypoints or
/// {"rectangle": [width, height], "loops": n}. `noise` is "razor", "none"
/// or an explicit object.
inline SimulationParams simulation_params_from_json(const json& j) {
  const std::string w = "params";
  expect_keys(j, w, {"path"},
              {"step_length", "cadence", "stance_duration", "swing_peak_height", "pitch_amplitude", "initial_rest",
               "final_rest", "timing_jitter", "seed", "fs", "noise", "noise_seed", "adc_bits", "sensors"});
  SimulationParams p;
  GaitParams& g = p.gait;
  auto opt_num = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = num(j[k], w + "." + k);
  };
  opt_num("step_length", g.step_length);
  opt_num("cadence", g.cadence);
  opt_num("stance_duration", g.stance_duration);
  opt_num("swing_peak_height", g.swing_peak_height);
  opt_num("pitch_amplitude", g.pitch_amplitude);
  opt_num("initial_rest", g.initial_rest);
  opt_num("final_rest", g.final_rest);
  opt_num("timing_jitter", g.timing_jitter);
  opt_num("fs", p.fs);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw InputError(w + ".seed: expected a non-negative integer");
    g.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("noise_seed")) {
    if (!j["noise_seed"].is_number_unsigned()) throw InputError(w + ".noise_seed: expected a non-negative integer");
    p.noise_seed = j["noise_seed"].get<std::uint64_t>();
  }
  if (j.contains("adc_bits")) p.adc_bits = integer(j["adc_bits"], w + ".adc_bits");

  const json& path = j["path"];
  if (path.is_object()) {
    expect_keys(path, w + ".path", {"rectangle"}, {"loops"});
    const Eigen::VectorXd wh = vec(path["rectangle"], w + ".path.rectangle", 2);
    const int loops = path.contains("loops") ? integer(path["loops"], w + ".path.loops") : 1;
    if (loops < 1) throw InputError(w + ".path.loops: must be >= 1");
    g.path = rectangle_path(wh(0), wh(1), loops);
  } else if (path.is_array()) {
    for (const auto& pt : path) {
      const Eigen::VectorXd v = vec(pt, w + ".path[]", 2);
      g.path.emplace_back(v(0), v(1));
    }
  } else {
    throw InputError(w + ".path: expected waypoint list or rectangle object");
  }

  if (j.contains("noise")) {
    const json& n = j["noise"];
    if (n.is_string()) {
      const auto s = n.get<std::string>();
      if (s == "razor") p.noise = razor_like_noise(p.fs);
      else if (s == "none") p.noise = NoiseModel{};
      else throw InputError(w + ".noise: expected \"razor\", \"none\" or an object");
    } else {
      expect_keys(n, w + ".noise", {"accel_sigma", "accel_bias_walk", "gyro_sigma", "gyro_bias_walk"},
                  {"accel_bias0", "gyro_bias0"});
      p.noise.accel_sigma = num(n["accel_sigma"], w + ".noise.accel_sigma");
      p.noise.accel_bias_walk = num(n["accel_bias_walk"], w + ".noise.accel_bias_walk");
      p.noise.gyro_sigma = num(n["gyro_sigma"], w + ".noise.gyro_sigma");
      p.noise.gyro_bias_walk = num(n["gyro_bias_walk"], w + ".noise.gyro_bias_walk");
      if (n.contains("accel_bias0")) p.noise.accel_bias0 = vec(n["accel_bias0"], w + ".noise.accel_bias0", 3);
      if (n.contains("gyro_bias0")) p.noise.gyro_bias0 = vec(n["gyro_bias0"], w + ".noise.gyro_bias0", 3);
    }
  } else {
    p.noise = razor_like_noise(p.fs);
  }
  if (j.contains("sensors")) p.sensors = imu_calibration_from_json(j["sensors"], w + ".sensors");
  p.gait.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json to_json(const EvalReport& r) {
  return json{{"epsilon_ttd", r.epsilon_ttd},
              {"ttd", r.ttd},
              {"closure_error", r.closure_error},
              {"checkpoint_errors", r.checkpoint_errors}};
}

inline json to_json(const NoiseCoefficients& c) { return json{{"N", c.N}, {"B", c.B}}; }

}  // namespace pdr::io
