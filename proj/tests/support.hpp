#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "gnssfuse/canyon_sim.hpp"
#include "gnssfuse/pipeline.hpp"

namespace testsupport {

using namespace gnssfuse;

inline constexpr double kDeg = M_PI / 180.0;

inline Geodetic hong_kong() { return {22.3193 * kDeg, 114.1694 * kDeg, 10.0}; }

/// Straight constant-speed drive with every random perturbation disabled.
inline SimConfig noise_free_config(double duration = 60.0) {
  SimConfig cfg = default_sim_config();
  const Geodetic ref = hong_kong();
  cfg.waypoints = {{ref, 10.0}, {ecef_to_geodetic(enu_to_ecef(ref, {800.0, 600.0, 0.0})), 10.0}};
  cfg.duration = duration;
  cfg.noise_free = true;
  cfg.accel_bias_true = Vec3::Zero();
  return cfg;
}

struct Scenario {
  Dataset ds;
  std::vector<EpochMeasurements> epochs;
};

inline Scenario make_scenario(const SimConfig& cfg, const WeightingParams& w = {}) {
  Scenario s;
  s.ds = simulate(cfg);
  s.epochs = make_epochs(s.ds, w);
  return s;
}

/// A satellite at the given azimuth/elevation seen from `receiver`, on a 20,000 km line of sight.
inline SatObservation satellite_at(const Vec3& receiver, double az, double el, Constellation c, int id,
                                   double clock = 0.0, double snr = 45.0) {
  const Geodetic geo = ecef_to_geodetic(receiver);
  const Vec3 u_enu(std::sin(az) * std::cos(el), std::cos(az) * std::cos(el), std::sin(el));
  SatObservation o;
  o.sat_id = id;
  o.constellation = c;
  o.sat_pos = receiver + rotation_global_from_local(geo) * u_enu * 2.0e7;
  o.pseudorange = 2.0e7 + clock;
  o.snr = snr;
  o.elevation = el;
  o.azimuth = az;
  o.nlos_truth = false;
  return o;
}

/// Eight satellites, four per constellation, spread in azimuth and elevation.
inline std::vector<SatObservation> good_geometry(const Vec3& receiver, double clock_gps = 0.0,
                                                 double clock_bds = 0.0) {
  std::vector<SatObservation> sats;
  const double az[8] = {10, 95, 180, 270, 45, 135, 225, 315};
  const double el[8] = {70, 35, 50, 20, 25, 60, 40, 80};
  for (int i = 0; i < 8; ++i) {
    const auto c = i < 4 ? Constellation::kGps : Constellation::kBeiDou;
    sats.push_back(satellite_at(receiver, az[i] * kDeg, el[i] * kDeg, c, i + 1, i < 4 ? clock_gps : clock_bds));
  }
  return sats;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

}  // namespace testsupport
