#pragma once

// CSV and JSON input/output. CSV files have a header row, comma separators
// and a fixed column order. Floats are written with nine digits after the
// decimal point so pseudoranges near 2e7 m keep millimetre-and-below detail.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnssfuse/canyon_sim.hpp"
#include "gnssfuse/errors.hpp"
#include "gnssfuse/pipeline.hpp"

namespace gnssfuse::io {

using nlohmann::json;
namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

// --- generic CSV ---------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw IoError("CSV has no column '" + name + "'");
  }
};

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                    " fields, got " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double to_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw IoError("bad number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw IoError("bad number '" + s + "'");
  } catch (const std::out_of_range&) {
    throw IoError("number out of range '" + s + "'");
  }
}

inline int to_int(const std::string& s) {
  const double v = to_double(s);
  if (v != std::floor(v)) throw IoError("expected an integer, got '" + s + "'");
  return static_cast<int>(v);
}

inline std::vector<double> read_column(const fs::path& path, const std::string& name) {
  const CsvTable t = read_csv(path);
  const std::size_t c = t.column(name);
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back(to_double(r[c]));
  return out;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

// --- dataset -------------------------------------------------------------------

inline const std::vector<std::string> kTruthHeader = {
    "epoch", "t", "x", "y", "z", "vx", "vy", "vz", "bias_x", "bias_y", "bias_z", "clock_gps", "clock_bds"};
inline const std::vector<std::string> kImuHeader = {"t", "ax", "ay", "az", "yaw", "pitch", "roll"};
inline const std::vector<std::string> kGnssHeader = {"epoch", "t",   "sat_id",    "constellation", "sat_x",
                                                     "sat_y", "sat_z", "pseudorange", "snr",       "elevation",
                                                     "azimuth", "nlos"};

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  {
    CsvWriter w(dir / "truth.csv", kTruthHeader);
    for (std::size_t k = 0; k < ds.truth.size(); ++k) {
      const auto& s = ds.truth[k];
      w.row({std::to_string(k), fmt(s.time), fmt(s.pos.x()), fmt(s.pos.y()), fmt(s.pos.z()), fmt(s.vel.x()),
             fmt(s.vel.y()), fmt(s.vel.z()), fmt(s.accel_bias.x()), fmt(s.accel_bias.y()), fmt(s.accel_bias.z()),
             fmt(s.clock[0]), fmt(s.clock[1])});
    }
  }
  {
    CsvWriter w(dir / "imu.csv", kImuHeader);
    for (const auto& s : ds.imu) {
      w.row({fmt(s.time), fmt(s.accel.x()), fmt(s.accel.y()), fmt(s.accel.z()), fmt(s.attitude.yaw),
             fmt(s.attitude.pitch), fmt(s.attitude.roll)});
    }
  }
  {
    CsvWriter w(dir / "gnss.csv", kGnssHeader);
    for (std::size_t k = 0; k < ds.observations.size(); ++k) {
      for (const auto& o : ds.observations[k]) {
        w.row({std::to_string(k), fmt(ds.truth[k].time), std::to_string(o.sat_id), std::string(to_string(o.constellation)),
               fmt(o.sat_pos.x()), fmt(o.sat_pos.y()), fmt(o.sat_pos.z()), fmt(o.pseudorange), fmt(o.snr),
               fmt(o.elevation), fmt(o.azimuth), o.nlos_truth.value_or(false) ? "1" : "0"});
      }
    }
  }
}

inline void require_header(const CsvTable& t, const std::vector<std::string>& expected, const std::string& name) {
  if (t.header != expected) throw IoError(name + ": unexpected header");
}

/// Reads a dataset directory. The local frame reference is the first truth
/// position.
inline Dataset read_dataset(const fs::path& dir) {
  Dataset ds;
  const CsvTable truth = read_csv(dir / "truth.csv");
  require_header(truth, kTruthHeader, "truth.csv");
  if (truth.rows.empty()) throw IoError("truth.csv: no epochs");
  for (const auto& r : truth.rows) {
    TruthState s;
    s.time = to_double(r[1]);
    s.pos = Vec3(to_double(r[2]), to_double(r[3]), to_double(r[4]));
    s.vel = Vec3(to_double(r[5]), to_double(r[6]), to_double(r[7]));
    s.accel_bias = Vec3(to_double(r[8]), to_double(r[9]), to_double(r[10]));
    s.clock = {to_double(r[11]), to_double(r[12])};
    if (!ds.truth.empty() && !(s.time > ds.truth.back().time)) throw IoError("truth.csv: timestamps not increasing");
    ds.truth.push_back(s);
  }
  ds.reference = ecef_to_geodetic(ds.truth.front().pos);
  ds.gnss_rate = ds.truth.size() > 1 ? 1.0 / (ds.truth[1].time - ds.truth[0].time) : 1.0;

  const CsvTable imu = read_csv(dir / "imu.csv");
  require_header(imu, kImuHeader, "imu.csv");
  for (const auto& r : imu.rows) {
    ImuSample s;
    s.time = to_double(r[0]);
    s.accel = Vec3(to_double(r[1]), to_double(r[2]), to_double(r[3]));
    s.attitude = {to_double(r[4]), to_double(r[5]), to_double(r[6])};
    if (!ds.imu.empty() && !(s.time > ds.imu.back().time)) throw IoError("imu.csv: timestamps not increasing");
    ds.imu.push_back(s);
  }

  const CsvTable gnss = read_csv(dir / "gnss.csv");
  require_header(gnss, kGnssHeader, "gnss.csv");
  ds.observations.assign(ds.truth.size(), {});
  for (const auto& r : gnss.rows) {
    const int k = to_int(r[0]);
    if (k < 0 || static_cast<std::size_t>(k) >= ds.truth.size()) throw IoError("gnss.csv: epoch out of range");
    SatObservation o;
    o.sat_id = to_int(r[2]);
    o.constellation = constellation_from_string(r[3]);
    o.sat_pos = Vec3(to_double(r[4]), to_double(r[5]), to_double(r[6]));
    o.pseudorange = to_double(r[7]);
    o.snr = to_double(r[8]);
    o.elevation = to_double(r[9]);
    o.azimuth = to_double(r[10]);
    o.nlos_truth = to_int(r[11]) != 0;
    ds.observations[static_cast<std::size_t>(k)].push_back(o);
  }
  return ds;
}

// --- JSON configs ----------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw DomainError(what + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw DomainError(what + ": unknown key '" + key + "'");
  }
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline constexpr double kDeg = M_PI / 180.0;

}  // namespace detail

/// Keys not present keep the values of default_sim_config().
inline SimConfig sim_config_from_json(const json& j) {
  using detail::get_if;
  detail::check_keys(j,
                     {"duration", "imu_rate", "gnss_rate", "waypoints", "turn_radius", "los_sigma", "nlos_bias",
                      "nlos_correlation_time", "canyon_mask", "open_sky_elevation_deg", "accel_bias_true",
                      "accel_noise_sigma", "attitude_noise_deg", "clock", "min_satellites", "max_satellites",
                      "noise_free", "seed"},
                     "simulation config");
  try {
    SimConfig cfg = default_sim_config();
    get_if(j, "duration", cfg.duration);
    get_if(j, "imu_rate", cfg.imu_rate);
    get_if(j, "gnss_rate", cfg.gnss_rate);
    get_if(j, "turn_radius", cfg.turn_radius);
    get_if(j, "los_sigma", cfg.los_sigma);
    get_if(j, "nlos_correlation_time", cfg.nlos_correlation_time);
    get_if(j, "accel_noise_sigma", cfg.accel_noise_sigma);
    get_if(j, "min_satellites", cfg.min_satellites);
    get_if(j, "max_satellites", cfg.max_satellites);
    get_if(j, "noise_free", cfg.noise_free);
    get_if(j, "seed", cfg.seed);
    if (j.contains("open_sky_elevation_deg")) cfg.open_sky_elevation = j.at("open_sky_elevation_deg").get<double>() * detail::kDeg;
    if (j.contains("attitude_noise_deg")) cfg.attitude_noise_sigma = j.at("attitude_noise_deg").get<double>() * detail::kDeg;
    if (j.contains("accel_bias_true")) {
      const auto v = j.at("accel_bias_true").get<std::vector<double>>();
      if (v.size() != 3) throw DomainError("accel_bias_true must have 3 elements");
      cfg.accel_bias_true = Vec3(v[0], v[1], v[2]);
    }
    if (j.contains("waypoints")) {
      cfg.waypoints.clear();
      for (const auto& w : j.at("waypoints")) {
        detail::check_keys(w, {"lat_deg", "lon_deg", "height", "speed"}, "waypoint");
        cfg.waypoints.push_back({{w.at("lat_deg").get<double>() * detail::kDeg, w.at("lon_deg").get<double>() * detail::kDeg,
                                  w.value("height", 0.0)},
                                 w.at("speed").get<double>()});
      }
    }
    if (j.contains("canyon_mask")) {
      cfg.canyon_mask.clear();
      for (const auto& s : j.at("canyon_mask")) {
        detail::check_keys(s, {"az_from_deg", "az_to_deg", "min_elevation_deg"}, "canyon_mask sector");
        cfg.canyon_mask.push_back({s.at("az_from_deg").get<double>() * detail::kDeg, s.at("az_to_deg").get<double>() * detail::kDeg,
                                   s.at("min_elevation_deg").get<double>() * detail::kDeg});
      }
    }
    for (const auto c : {Constellation::kGps, Constellation::kBeiDou}) {
      const std::string name(to_string(c));
      const auto i = static_cast<std::size_t>(c);
      if (j.contains("nlos_bias") && j.at("nlos_bias").contains(name)) {
        const auto& b = j.at("nlos_bias").at(name);
        detail::check_keys(b, {"mean", "std"}, "nlos_bias");
        get_if(b, "mean", cfg.nlos_bias[i].mean);
        get_if(b, "std", cfg.nlos_bias[i].std);
      }
      if (j.contains("clock") && j.at("clock").contains(name)) {
        const auto& b = j.at("clock").at(name);
        detail::check_keys(b, {"bias0", "drift"}, "clock");
        get_if(b, "bias0", cfg.clock[i].bias0);
        get_if(b, "drift", cfg.clock[i].drift);
      }
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw DomainError(std::string("simulation config: ") + e.what());
  }
}

inline SimConfig load_sim_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
  return sim_config_from_json(j);
}

/// Run settings plus the optional paths given in the config file.
struct RunSettings {
  RunConfig run;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline int window_from_json(const json& w) {
  if (w.is_string()) {
    if (w.get<std::string>() == "batch") return kBatchWindow;
    throw DomainError("window must be a positive integer or \"batch\"");
  }
  const int v = w.get<int>();
  if (v < 1) throw DomainError("window must be >= 1");
  return v;
}

inline RunSettings run_settings_from_json(const json& j) {
  using detail::get_if;
  detail::check_keys(j, {"estimator", "window", "weighting", "noise", "prior", "covariance_scale", "lm", "dataset", "out", "seed"},
                     "run config");
  try {
    RunSettings s;
    if (j.contains("estimator")) s.run.estimator = estimator_from_string(j.at("estimator").get<std::string>());
    if (j.contains("window")) s.run.window = window_from_json(j.at("window"));
    get_if(j, "covariance_scale", s.run.covariance_scale);
    get_if(j, "dataset", s.dataset);
    get_if(j, "out", s.out);
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("weighting")) {
      const auto& w = j.at("weighting");
      detail::check_keys(w, {"snr_threshold", "a", "A", "F", "user_range_error"}, "weighting");
      get_if(w, "snr_threshold", s.run.weighting.snr_threshold);
      get_if(w, "a", s.run.weighting.a);
      get_if(w, "A", s.run.weighting.A);
      get_if(w, "F", s.run.weighting.F);
      get_if(w, "user_range_error", s.run.weighting.user_range_error);
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      detail::check_keys(n, {"position_sigma", "velocity_sigma", "bias_sigma", "clock_sigma"}, "noise");
      get_if(n, "position_sigma", s.run.noise.position_sigma);
      get_if(n, "velocity_sigma", s.run.noise.velocity_sigma);
      get_if(n, "bias_sigma", s.run.noise.bias_sigma);
      get_if(n, "clock_sigma", s.run.noise.clock_sigma);
    }
    if (j.contains("prior")) {
      const auto& p = j.at("prior");
      detail::check_keys(p, {"position_var", "velocity_var", "bias_var", "clock_var"}, "prior");
      get_if(p, "position_var", s.run.prior.position_var);
      get_if(p, "velocity_var", s.run.prior.velocity_var);
      get_if(p, "bias_var", s.run.prior.bias_var);
      get_if(p, "clock_var", s.run.prior.clock_var);
    }
    if (j.contains("lm")) {
      const auto& l = j.at("lm");
      detail::check_keys(l, {"lambda_init", "lambda_max", "tol", "gtol", "max_iters", "refine_steps", "refine_bound"}, "lm");
      get_if(l, "lambda_init", s.run.lm.lambda_init);
      get_if(l, "lambda_max", s.run.lm.lambda_max);
      get_if(l, "tol", s.run.lm.tol);
      get_if(l, "gtol", s.run.lm.gtol);
      get_if(l, "max_iters", s.run.lm.max_iters);
      get_if(l, "refine_steps", s.run.lm.refine_steps);
      get_if(l, "refine_bound", s.run.lm.refine_bound);
    }
    s.run.validate();
    return s;
  } catch (const json::exception& e) {
    throw DomainError(std::string("run config: ") + e.what());
  }
}

inline RunSettings load_run_settings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
  return run_settings_from_json(j);
}

// --- run outputs -----------------------------------------------------------------

inline const std::vector<std::string> kEpochHeader = {"epoch", "t", "est_x", "est_y", "est_z", "truth_x", "truth_y", "truth_z",
                                                      "east_err", "north_err", "err_2d", "residual", "solve_time"};
inline const std::vector<std::string> kResidualHeader = {"epoch", "sat_id", "constellation", "residual", "truth_error", "nlos"};

inline void write_epochs_csv(const fs::path& path, std::span<const EpochRecord> records) {
  CsvWriter w(path, kEpochHeader);
  for (const auto& r : records) {
    w.row({std::to_string(r.epoch), fmt(r.time), fmt(r.est_pos.x()), fmt(r.est_pos.y()), fmt(r.est_pos.z()),
           fmt(r.truth_pos.x()), fmt(r.truth_pos.y()), fmt(r.truth_pos.z()), fmt(r.east_err), fmt(r.north_err),
           fmt(r.err_2d), fmt(r.residual), fmt(r.solve_time)});
  }
}

inline std::vector<EpochRecord> read_epochs_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require_header(t, kEpochHeader, path.filename().string());
  std::vector<EpochRecord> out;
  for (const auto& r : t.rows) {
    EpochRecord e;
    e.epoch = to_int(r[0]);
    e.time = to_double(r[1]);
    e.est_pos = Vec3(to_double(r[2]), to_double(r[3]), to_double(r[4]));
    e.truth_pos = Vec3(to_double(r[5]), to_double(r[6]), to_double(r[7]));
    e.east_err = to_double(r[8]);
    e.north_err = to_double(r[9]);
    e.err_2d = to_double(r[10]);
    e.residual = to_double(r[11]);
    e.solve_time = to_double(r[12]);
    out.push_back(e);
  }
  return out;
}

inline void write_residuals_csv(const fs::path& path, std::span<const ObservationResidual> rows) {
  CsvWriter w(path, kResidualHeader);
  for (const auto& r : rows) {
    w.row({std::to_string(r.epoch), std::to_string(r.sat_id), std::string(to_string(r.constellation)), fmt(r.residual),
           fmt(r.truth_error), r.nlos ? "1" : "0"});
  }
}

inline json summary_json(const Summary& s) {
  return {{"mean_err", s.mean_err}, {"std_err", s.std_err}, {"total_time", s.total_time}, {"epochs", s.epochs}};
}

inline std::string window_label(int w) { return w == kBatchWindow ? "batch" : std::to_string(w); }

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Summary recomputed from the CSV so the JSON carries exactly what the file shows.
inline Summary summary_from_written(const fs::path& epochs_csv) {
  const auto records = read_epochs_csv(epochs_csv);
  return summarize(records);
}

inline json gmm_json(const GmmFit& fit) {
  json comps = json::array();
  for (const auto& c : fit.model.components) comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"std", c.std}});
  return {{"components", comps},
          {"iterations", fit.iterations},
          {"converged", fit.converged},
          {"log_likelihood", fit.log_likelihood_trace.empty() ? 0.0 : fit.log_likelihood_trace.back()}};
}

}  // namespace gnssfuse::io
