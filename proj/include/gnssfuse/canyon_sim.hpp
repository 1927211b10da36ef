#pragma once

// Synthetic urban-canyon dataset: a ground-truth drive along a waypoint route,
// a GPS + BeiDou constellation on slowly drifting tracks, pseudoranges with
// line-of-sight noise plus a positive, time-correlated bias for satellites
// hidden behind the street walls, a 100 Hz IMU with accelerometer bias and an
// AHRS attitude.
//
// The route lives in the local tangent plane of the first waypoint. Corners
// are rounded with circular fillets; speed changes between waypoints with
// constant tangential acceleration (v^2 linear in arc length).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"
#include "gnssfuse/frames.hpp"
#include "gnssfuse/noise_models.hpp"
#include "gnssfuse/positioning.hpp"
#include "gnssfuse/residual_analysis.hpp"
#include "gnssfuse/types.hpp"

namespace gnssfuse {

struct Waypoint {
  Geodetic geo;
  double speed = 0.0;  // m/s
};

/// Minimum elevation for relative azimuths in [az_from, az_to) (radians,
/// clockwise, relative to the vehicle heading).
struct MaskSector {
  double az_from = 0.0;
  double az_to = 0.0;
  double min_elevation = 0.0;
};

struct ClockModel {
  double bias0 = 0.0;  // m
  double drift = 0.0;  // m/s
};

struct SimConfig {
  double duration = 300.0;  // s
  double imu_rate = 100.0;  // Hz
  double gnss_rate = 1.0;   // Hz
  std::vector<Waypoint> waypoints;
  double turn_radius = 15.0;  // m

  double los_sigma = 2.0;  // m
  /// Bias of hidden satellites, per constellation (mean, std; truncated at 0).
  std::array<GmmComponent, kNumConstellations> nlos_bias{{{1.0, 38.76, 15.0}, {1.0, 32.62, 15.0}}};
  double nlos_correlation_time = 20.0;  // s; 0 draws independently every epoch
  /// Sectors not covered fall back to `open_sky_elevation`.
  std::vector<MaskSector> canyon_mask;
  double open_sky_elevation = 10.0 * M_PI / 180.0;

  Vec3 accel_bias_true = Vec3(0.05, -0.03, 0.02);  // m/s^2, body frame
  double accel_noise_sigma = 0.02;                  // m/s^2
  double attitude_noise_sigma = 0.1 * M_PI / 180.0; // rad
  std::array<ClockModel, kNumConstellations> clock{{{150.0, 0.4}, {-80.0, 0.4}}};

  int min_satellites = 8;
  int max_satellites = 14;
  double snr_los_base = 38.0;   // dB-Hz at the horizon
  double snr_los_gain = 12.0;   // extra dB-Hz at zenith
  double snr_los_sigma = 1.5;
  double snr_nlos_mean = 30.0;
  double snr_nlos_sigma = 3.0;

  /// Disables every random perturbation (LOS noise, NLOS bias, IMU and
  /// attitude noise). Visibility labels are still computed.
  bool noise_free = false;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(duration > 0.0)) throw DomainError("SimConfig: duration must be positive");
    if (!(imu_rate > 0.0) || !(gnss_rate > 0.0)) throw DomainError("SimConfig: rates must be positive");
    if (!(los_sigma > 0.0)) throw DomainError("SimConfig: los_sigma must be positive");
    if (waypoints.size() < 2) throw DomainError("SimConfig: need at least 2 waypoints");
    if (min_satellites < 4 || max_satellites < min_satellites) throw DomainError("SimConfig: bad satellite count range");
    for (const auto& s : canyon_mask) {
      if (s.min_elevation < 0.0 || s.min_elevation >= M_PI / 2) {
        throw DomainError("SimConfig: mask elevation outside [0, pi/2)");
      }
    }
    const double ratio = imu_rate / gnss_rate;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) throw DomainError("SimConfig: imu_rate must be a multiple of gnss_rate");
  }

  [[nodiscard]] int num_epochs() const { return static_cast<int>(std::floor(duration * gnss_rate + 1e-9)); }
};

/// Two walls along the street (60 deg mask) with open street ends (10 deg).
inline std::vector<MaskSector> default_canyon_mask() {
  const double d = M_PI / 180.0;
  return {{30 * d, 150 * d, 60 * d}, {210 * d, 330 * d, 60 * d}};
}

/// A loop through a dense downtown grid near Hong Kong (about 2.4 km at 8 m/s).
inline SimConfig default_sim_config() {
  SimConfig cfg;
  const Geodetic ref{22.3193 * M_PI / 180.0, 114.1694 * M_PI / 180.0, 10.0};
  const std::vector<std::array<double, 3>> route = {
      {0, 0, 8}, {450, 0, 8}, {450, 350, 8}, {-50, 350, 8}, {-50, -100, 8}, {400, -100, 8}};
  for (const auto& [e, n, v] : route) {
    cfg.waypoints.push_back({ecef_to_geodetic(enu_to_ecef(ref, {e, n, 0.0})), v});
  }
  cfg.canyon_mask = default_canyon_mask();
  return cfg;
}

// --- trajectory ----------------------------------------------------------------

struct TruthState {
  double time = 0.0;
  Vec3 pos = Vec3::Zero();    // ECEF
  Vec3 vel = Vec3::Zero();    // ECEF
  Vec3 accel = Vec3::Zero();  // ECEF, kinematic
  EulerAngles attitude;       // body -> local
  Vec3 accel_bias = Vec3::Zero();
  std::array<double, kNumConstellations> clock{};
};

class Trajectory {
 public:
  explicit Trajectory(const SimConfig& cfg) {
    if (cfg.waypoints.size() < 2) throw DomainError("generate_trajectory: need at least 2 waypoints");
    ref_ = cfg.waypoints.front().geo;
    r_gl_ = rotation_global_from_local(ref_);
    origin_ = geodetic_to_ecef(ref_);

    std::vector<Eigen::Vector2d> pts;
    for (const auto& w : cfg.waypoints) {
      const Enu e = ecef_to_enu(ref_, geodetic_to_ecef(w.geo));
      pts.emplace_back(e.east, e.north);
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if ((pts[i] - pts[i - 1]).norm() < 1e-6) throw DomainError("generate_trajectory: coincident waypoints");
    }
    build_geometry(pts, cfg.turn_radius);
    build_speed_profile(cfg.waypoints);
  }

  [[nodiscard]] const Geodetic& reference() const { return ref_; }
  [[nodiscard]] double path_length() const { return length_; }
  [[nodiscard]] double path_duration() const { return knots_.back().t; }

  struct Kinematics {
    Eigen::Vector2d pos, vel, acc;  // local east/north
    double heading = 0.0;           // yaw, counter-clockwise from east
  };

  [[nodiscard]] Kinematics local_at(double t) const {
    double s = 0.0, v = 0.0, a_t = 0.0;
    arc_length_at(t, s, v, a_t);
    Eigen::Vector2d p, tan;
    double curvature = 0.0;
    geometry_at(s, p, tan, curvature);
    const Eigen::Vector2d normal(-tan.y(), tan.x());
    Kinematics k;
    k.pos = p;
    k.vel = v * tan;
    k.acc = a_t * tan + v * v * curvature * normal;
    k.heading = std::atan2(tan.y(), tan.x());
    return k;
  }

  [[nodiscard]] TruthState state_at(double t) const {
    const Kinematics k = local_at(t);
    TruthState st;
    st.time = t;
    st.pos = origin_ + r_gl_ * Vec3(k.pos.x(), k.pos.y(), 0.0);
    st.vel = r_gl_ * Vec3(k.vel.x(), k.vel.y(), 0.0);
    st.accel = r_gl_ * Vec3(k.acc.x(), k.acc.y(), 0.0);
    st.attitude = {k.heading, 0.0, 0.0};
    return st;
  }

 private:
  struct Primitive {
    bool arc = false;
    double s0 = 0.0, length = 0.0;
    Eigen::Vector2d start, dir;  // line
    Eigen::Vector2d center;      // arc
    double radius = 0.0, angle0 = 0.0, turn = 1.0;  // turn: +1 left, -1 right
  };

  struct Knot {
    double s = 0.0, v = 0.0, t = 0.0, a = 0.0;  // a: tangential accel to the next knot
  };

  void build_geometry(const std::vector<Eigen::Vector2d>& pts, double radius) {
    const std::size_t n = pts.size();
    std::vector<Eigen::Vector2d> dirs;
    std::vector<double> lens;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const Eigen::Vector2d d = pts[i + 1] - pts[i];
      lens.push_back(d.norm());
      dirs.push_back(d / d.norm());
    }
    // Tangent cut-back at each interior vertex.
    std::vector<double> cut(n, 0.0), rad(n, 0.0), theta(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double c = std::clamp(dirs[i - 1].dot(dirs[i]), -1.0, 1.0);
      theta[i] = std::acos(c);
      if (theta[i] < 1e-9 || theta[i] > M_PI - 1e-6) continue;
      double r = radius;
      const double max_cut = 0.5 * std::min(lens[i - 1], lens[i]);
      if (r * std::tan(theta[i] / 2) > max_cut) r = max_cut / std::tan(theta[i] / 2);
      rad[i] = r;
      cut[i] = r * std::tan(theta[i] / 2);
    }

    double s = 0.0;
    vertex_s_.assign(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      Primitive line;
      line.start = pts[i] + dirs[i] * cut[i];
      line.dir = dirs[i];
      line.length = lens[i] - cut[i] - cut[i + 1];
      line.s0 = s;
      s += line.length;
      prims_.push_back(line);
      const std::size_t v = i + 1;
      if (v + 1 < n && rad[v] > 0.0) {
        Primitive arc;
        arc.arc = true;
        const double cross = dirs[i].x() * dirs[v].y() - dirs[i].y() * dirs[v].x();
        arc.turn = cross >= 0.0 ? 1.0 : -1.0;
        const Eigen::Vector2d p1 = pts[v] - dirs[i] * cut[v];
        const Eigen::Vector2d left(-dirs[i].y(), dirs[i].x());
        arc.radius = rad[v];
        arc.center = p1 + left * arc.turn * rad[v];
        const Eigen::Vector2d rel = p1 - arc.center;
        arc.angle0 = std::atan2(rel.y(), rel.x());
        arc.length = rad[v] * theta[v];
        arc.s0 = s;
        vertex_s_[v] = s + 0.5 * arc.length;
        s += arc.length;
        prims_.push_back(arc);
      } else if (v + 1 < n) {
        vertex_s_[v] = s;
      }
    }
    vertex_s_.back() = s;
    length_ = s;
    end_point_ = pts.back();
    end_dir_ = dirs.back();
  }

  void build_speed_profile(const std::vector<Waypoint>& wps) {
    for (std::size_t i = 0; i < wps.size(); ++i) {
      if (wps[i].speed < 0.0) throw DomainError("generate_trajectory: negative speed");
      knots_.push_back({vertex_s_[i], wps[i].speed, 0.0, 0.0});
    }
    for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
      Knot& k = knots_[i];
      const Knot& nx = knots_[i + 1];
      const double ds = nx.s - k.s;
      if (k.v + nx.v <= 0.0) throw DomainError("generate_trajectory: vehicle never moves between waypoints");
      k.a = (nx.v * nx.v - k.v * k.v) / (2.0 * ds);
      const double dt = std::abs(k.a) < 1e-12 ? ds / k.v : (nx.v - k.v) / k.a;
      knots_[i + 1].t = k.t + dt;
    }
  }

  void arc_length_at(double t, double& s, double& v, double& a) const {
    if (t >= knots_.back().t) {
      v = knots_.back().v;
      s = length_ + v * (t - knots_.back().t);
      a = 0.0;
      return;
    }
    std::size_t i = 0;
    while (i + 2 < knots_.size() && t >= knots_[i + 1].t) ++i;
    const Knot& k = knots_[i];
    const double tau = std::max(0.0, t - k.t);
    s = k.s + k.v * tau + 0.5 * k.a * tau * tau;
    v = k.v + k.a * tau;
    a = k.a;
  }

  void geometry_at(double s, Eigen::Vector2d& p, Eigen::Vector2d& tan, double& curvature) const {
    if (s >= length_) {
      tan = end_dir_;
      p = end_point_ + end_dir_ * (s - length_);
      curvature = 0.0;
      return;
    }
    std::size_t i = 0;
    while (i + 1 < prims_.size() && s >= prims_[i + 1].s0) ++i;
    const Primitive& pr = prims_[i];
    const double u = std::max(0.0, s - pr.s0);
    if (!pr.arc) {
      p = pr.start + pr.dir * u;
      tan = pr.dir;
      curvature = 0.0;
      return;
    }
    const double ang = pr.angle0 + pr.turn * u / pr.radius;
    p = pr.center + pr.radius * Eigen::Vector2d(std::cos(ang), std::sin(ang));
    tan = pr.turn * Eigen::Vector2d(-std::sin(ang), std::cos(ang));
    curvature = pr.turn / pr.radius;
  }

  Geodetic ref_;
  Rotation3 r_gl_;
  Vec3 origin_;
  std::vector<Primitive> prims_;
  std::vector<double> vertex_s_;
  std::vector<Knot> knots_;
  double length_ = 0.0;
  Eigen::Vector2d end_point_, end_dir_;
};

/// Truth states at the GNSS epochs t_k = k / gnss_rate.
inline std::vector<TruthState> generate_trajectory(const SimConfig& cfg) {
  cfg.validate();
  const Trajectory traj(cfg);
  std::vector<TruthState> out;
  for (int k = 0; k < cfg.num_epochs(); ++k) {
    TruthState st = traj.state_at(k / cfg.gnss_rate);
    st.accel_bias = cfg.accel_bias_true;
    for (std::size_t c = 0; c < kNumConstellations; ++c) st.clock[c] = cfg.clock[c].bias0 + cfg.clock[c].drift * st.time;
    out.push_back(st);
  }
  return out;
}

// --- constellation ---------------------------------------------------------------

struct SatTrack {
  int sat_id = 0;
  Constellation constellation = Constellation::kGps;
  double az0 = 0.0, el0 = 0.0;          // rad
  double az_rate = 0.0, el_rate = 0.0;  // rad/s
  double orbit_radius = 0.0;            // m
};

struct SatGeometry {
  int sat_id = 0;
  Constellation constellation = Constellation::kGps;
  double azimuth = 0.0;
  double elevation = 0.0;
  Vec3 pos = Vec3::Zero();
};

namespace detail {
inline constexpr std::uint64_t kConstellationStream = 0x9e3779b97f4a7c15ULL;
inline constexpr std::uint64_t kMeasurementStream = 0xc2b2ae3d27d4eb4fULL;
inline constexpr std::uint64_t kImuStream = 0x165667b19e3779f9ULL;
inline constexpr double kGpsOrbitRadius = 26'559'700.0;
inline constexpr double kBdsOrbitRadius = 27'906'100.0;
}  // namespace detail

inline std::vector<SatTrack> constellation_tracks(const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ detail::kConstellationStream);
  std::uniform_int_distribution<int> count(cfg.min_satellites, cfg.max_satellites);
  const int n = count(rng);
  std::uniform_real_distribution<double> az(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> sin_el(std::sin(5.0 * M_PI / 180.0), std::sin(85.0 * M_PI / 180.0));
  // Roughly 0.5 deg/min, typical for MEO satellites seen from the ground.
  std::uniform_real_distribution<double> rate(-1.5e-4, 1.5e-4);

  std::vector<SatTrack> tracks;
  int gps_id = 1, bds_id = 1;
  for (int i = 0; i < n; ++i) {
    SatTrack t;
    t.constellation = (i % 2 == 0) ? Constellation::kGps : Constellation::kBeiDou;
    t.sat_id = t.constellation == Constellation::kGps ? gps_id++ : 100 + bds_id++;
    t.az0 = az(rng);
    t.el0 = std::asin(sin_el(rng));
    t.az_rate = rate(rng);
    t.el_rate = 0.5 * rate(rng);
    t.orbit_radius = t.constellation == Constellation::kGps ? detail::kGpsOrbitRadius : detail::kBdsOrbitRadius;
    tracks.push_back(t);
  }
  return tracks;
}

/// Satellite azimuth/elevation at the dataset reference point at time t, and
/// the ECEF position on the orbit sphere along that line of sight.
inline std::vector<SatGeometry> generate_constellation(const SimConfig& cfg, double t) {
  const Geodetic ref = cfg.waypoints.at(0).geo;
  const Vec3 origin = geodetic_to_ecef(ref);
  const Rotation3 r_gl = rotation_global_from_local(ref);
  std::vector<SatGeometry> out;
  for (const auto& tr : constellation_tracks(cfg)) {
    SatGeometry g;
    g.sat_id = tr.sat_id;
    g.constellation = tr.constellation;
    g.azimuth = std::fmod(tr.az0 + tr.az_rate * t + 4.0 * M_PI, 2.0 * M_PI);
    g.elevation = std::clamp(tr.el0 + tr.el_rate * t, 3.0 * M_PI / 180.0, 89.0 * M_PI / 180.0);
    const Vec3 u = r_gl * Vec3(std::sin(g.azimuth) * std::cos(g.elevation),
                               std::cos(g.azimuth) * std::cos(g.elevation), std::sin(g.elevation));
    const double b = origin.dot(u);
    const double range = -b + std::sqrt(b * b - origin.squaredNorm() + tr.orbit_radius * tr.orbit_radius);
    g.pos = origin + range * u;
    out.push_back(g);
  }
  return out;
}

/// Mask elevation for an azimuth relative to the vehicle heading.
inline double mask_elevation(const SimConfig& cfg, double relative_azimuth) {
  double a = std::fmod(relative_azimuth, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  for (const auto& s : cfg.canyon_mask) {
    if (a >= s.az_from && a < s.az_to) return s.min_elevation;
  }
  return cfg.open_sky_elevation;
}

// --- measurements ----------------------------------------------------------------

/// Draw from N(mean, std^2) truncated to [0, inf).
inline double draw_nlos_bias(std::mt19937_64& rng, const GmmComponent& c) {
  std::normal_distribution<double> nd(c.mean, c.std);
  for (int i = 0; i < 1000; ++i) {
    const double v = nd(rng);
    if (v >= 0.0) return v;
  }
  return 0.0;
}

/// Per-satellite NLOS bias with exponential time correlation. A satellite that
/// becomes hidden starts from a fresh draw; while hidden the bias follows an
/// AR(1) process with the same stationary law, kept non-negative by redrawing.
class NlosBiasProcess {
 public:
  NlosBiasProcess(const SimConfig& cfg) : cfg_(cfg) {}

  double next(std::mt19937_64& rng, int sat_id, Constellation c, bool hidden, double dt) {
    auto& st = state_[sat_id];
    if (!hidden) {
      st.active = false;
      return 0.0;
    }
    const GmmComponent& comp = cfg_.nlos_bias[static_cast<std::size_t>(c)];
    if (!st.active || cfg_.nlos_correlation_time <= 0.0) {
      st.active = true;
      st.value = draw_nlos_bias(rng, comp);
      return st.value;
    }
    const double phi = std::exp(-dt / cfg_.nlos_correlation_time);
    std::normal_distribution<double> nd(0.0, comp.std * std::sqrt(1.0 - phi * phi));
    double v = -1.0;
    for (int i = 0; i < 1000 && v < 0.0; ++i) v = comp.mean + phi * (st.value - comp.mean) + nd(rng);
    st.value = std::max(v, 0.0);
    return st.value;
  }

 private:
  struct State {
    bool active = false;
    double value = 0.0;
  };
  const SimConfig& cfg_;
  std::map<int, State> state_;
};

/// Observations of one epoch. `hidden` decides NLOS from the canyon mask
/// around the vehicle heading; the caller owns the RNG and bias process.
inline std::vector<SatObservation> generate_pseudoranges(const TruthState& truth, double heading_azimuth,
                                                         const std::vector<SatGeometry>& sats,
                                                         const SimConfig& cfg, std::mt19937_64& rng,
                                                         NlosBiasProcess& nlos, double dt) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<SatObservation> out;
  for (const auto& g : sats) {
    const AzEl ae = azimuth_elevation(truth.pos, g.pos);
    const bool hidden = ae.elevation < mask_elevation(cfg, ae.azimuth - heading_azimuth);
    SatObservation o;
    o.sat_id = g.sat_id;
    o.constellation = g.constellation;
    o.sat_pos = g.pos;
    o.elevation = ae.elevation;
    o.azimuth = ae.azimuth;
    o.nlos_truth = hidden;

    const double noise = unit(rng);
    const double snr_noise = unit(rng);
    double bias = nlos.next(rng, g.sat_id, g.constellation, hidden, dt);
    o.pseudorange = (g.pos - truth.pos).norm() + truth.clock[static_cast<std::size_t>(g.constellation)];
    if (hidden) {
      o.snr = cfg.snr_nlos_mean + cfg.snr_nlos_sigma * snr_noise;
    } else {
      o.snr = cfg.snr_los_base + cfg.snr_los_gain * std::sin(ae.elevation) + cfg.snr_los_sigma * snr_noise;
    }
    if (!cfg.noise_free) {
      o.pseudorange += cfg.los_sigma * noise + bias;
    }
    o.snr = std::clamp(o.snr, 15.0, 55.0);
    out.push_back(o);
  }
  return out;
}

struct ImuSample {
  double time = 0.0;
  Vec3 accel = Vec3::Zero();  // body-frame specific force, gravity removed
  EulerAngles attitude;       // AHRS output
};

struct Dataset {
  Geodetic reference;
  double gnss_rate = 1.0;
  std::vector<TruthState> truth;                     // per GNSS epoch
  std::vector<ImuSample> imu;
  std::vector<std::vector<SatObservation>> observations;  // per GNSS epoch
};

/// Body-frame IMU samples from the truth trajectory: gravity-free specific
/// force plus the configured bias and white noise; attitude plus small noise.
inline std::vector<ImuSample> generate_imu(const Trajectory& traj, const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ detail::kImuStream);
  std::normal_distribution<double> unit(0.0, 1.0);
  const int per_epoch = static_cast<int>(std::round(cfg.imu_rate / cfg.gnss_rate));
  const int count = (cfg.num_epochs() - 1) * per_epoch + 1;
  std::vector<ImuSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    const double t = j / cfg.imu_rate;
    const Trajectory::Kinematics k = traj.local_at(t);
    const EulerAngles att{k.heading, 0.0, 0.0};
    const Vec3 a_local(k.acc.x(), k.acc.y(), 0.0);
    ImuSample s;
    s.time = t;
    s.accel = rotation_local_from_body(att).transpose() * a_local + cfg.accel_bias_true;
    s.attitude = att;
    const Vec3 an(unit(rng), unit(rng), unit(rng));
    const Vec3 tn(unit(rng), unit(rng), unit(rng));
    if (!cfg.noise_free) {
      s.accel += cfg.accel_noise_sigma * an;
      s.attitude.yaw += cfg.attitude_noise_sigma * tn.x();
      s.attitude.pitch += cfg.attitude_noise_sigma * tn.y();
      s.attitude.roll += cfg.attitude_noise_sigma * tn.z();
    }
    out.push_back(s);
  }
  return out;
}

inline Dataset simulate(const SimConfig& cfg) {
  cfg.validate();
  const Trajectory traj(cfg);
  Dataset ds;
  ds.gnss_rate = cfg.gnss_rate;
  ds.truth = generate_trajectory(cfg);
  ds.reference = ecef_to_geodetic(ds.truth.front().pos);
  ds.imu = generate_imu(traj, cfg);

  std::mt19937_64 rng(cfg.seed ^ detail::kMeasurementStream);
  NlosBiasProcess nlos(cfg);
  const double dt = 1.0 / cfg.gnss_rate;
  for (const auto& truth : ds.truth) {
    const Trajectory::Kinematics k = traj.local_at(truth.time);
    // Heading as an azimuth: clockwise from north.
    const double heading_az = M_PI / 2 - k.heading;
    ds.observations.push_back(
        generate_pseudoranges(truth, heading_az, generate_constellation(cfg, truth.time), cfg, rng, nlos, dt));
  }
  return ds;
}

// --- estimator input ---------------------------------------------------------------

/// Trapezoidal average of R_LB * raw and R_LB over the samples in [t0, t1].
inline InertialSummary reduce_imu(const std::vector<ImuSample>& imu, double t0, double t1) {
  InertialSummary s;
  double wsum = 0.0;
  const double eps = 1e-9;
  auto lo = std::lower_bound(imu.begin(), imu.end(), t0 - eps,
                             [](const ImuSample& a, double t) { return a.time < t; });
  std::vector<const ImuSample*> in;
  for (auto it = lo; it != imu.end() && it->time <= t1 + eps; ++it) in.push_back(&*it);
  if (in.empty()) return s;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double w = (in.size() > 1 && (i == 0 || i + 1 == in.size())) ? 0.5 : 1.0;
    const Rotation3 r = rotation_local_from_body(in[i]->attitude);
    s.accel_local += w * (r * in[i]->accel);
    s.body_to_local += w * r;
    wsum += w;
  }
  s.accel_local /= wsum;
  s.body_to_local /= wsum;
  return s;
}

/// Receiver fixes by single-epoch weighted least squares on the same
/// pseudoranges. Epochs with too few satellites get no fix.
inline void generate_lc_fixes(std::vector<EpochMeasurements>& epochs, const WeightingParams& weighting) {
  Vec3 guess = Vec3::Zero();
  for (auto& e : epochs) {
    e.fix.reset();
    const auto sol = solve_snapshot(e.sats, weighting, guess);
    if (!sol) continue;
    e.fix = PositionFix{sol->position, sol->hdop};
    guess = sol->position;
  }
}

/// Estimator-facing epochs: reduced IMU, AHRS attitude, observations and fixes.
inline std::vector<EpochMeasurements> make_epochs(const Dataset& ds, const WeightingParams& weighting) {
  std::vector<EpochMeasurements> epochs;
  for (std::size_t k = 0; k < ds.truth.size(); ++k) {
    EpochMeasurements e;
    e.index = static_cast<int>(k);
    e.time = ds.truth[k].time;
    e.dt = k == 0 ? 0.0 : ds.truth[k].time - ds.truth[k - 1].time;
    if (k > 0) e.inertial = reduce_imu(ds.imu, ds.truth[k - 1].time, e.time);
    auto it = std::lower_bound(ds.imu.begin(), ds.imu.end(), e.time - 1e-9,
                               [](const ImuSample& a, double t) { return a.time < t; });
    if (it != ds.imu.end()) e.attitude = it->attitude;
    e.sats = ds.observations[k];
    epochs.push_back(std::move(e));
  }
  generate_lc_fixes(epochs, weighting);
  return epochs;
}

}  // namespace gnssfuse
