#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"
#include "gnssfuse/frames.hpp"

namespace gnssfuse {

enum class Constellation { kGps = 0, kBeiDou = 1 };

inline constexpr std::size_t kNumConstellations = 2;

inline std::string_view to_string(Constellation c) {
  return c == Constellation::kGps ? "GPS" : "BDS";
}

inline Constellation constellation_from_string(std::string_view s) {
  if (s == "GPS" || s == "G") return Constellation::kGps;
  if (s == "BDS" || s == "C" || s == "BeiDou") return Constellation::kBeiDou;
  throw DomainError("unknown constellation '" + std::string(s) + "'");
}

/// One pseudorange observation.
struct SatObservation {
  int sat_id = 0;
  Constellation constellation = Constellation::kGps;
  Vec3 sat_pos = Vec3::Zero();
  double pseudorange = 0.0;  // m
  double snr = 0.0;          // dB-Hz
  double elevation = 0.0;    // rad
  double azimuth = 0.0;      // rad, clockwise from north
  std::optional<bool> nlos_truth;
};

/// IMU samples between two GNSS epochs reduced to their time average, still
/// in the local (ENU) frame so the bias can be applied later:
///   mean A_local(b) = accel_local - body_to_local * b
struct InertialSummary {
  Vec3 accel_local = Vec3::Zero();
  Mat3 body_to_local = Mat3::Zero();
};

/// Per-epoch inertial input resolved in ECEF:
///   A_ecef(b) = accel - bias_to_accel * b
struct EpochInertial {
  Vec3 accel = Vec3::Zero();
  Mat3 bias_to_accel = Mat3::Zero();

  [[nodiscard]] Vec3 accel_for_bias(const Vec3& bias) const { return accel - bias_to_accel * bias; }

  /// Resolve with R_GL evaluated at `position`.
  static EpochInertial resolve(const InertialSummary& s, const Vec3& position) {
    const Rotation3 r_gl = rotation_global_from_local(ecef_to_geodetic(position));
    return {r_gl * s.accel_local, r_gl * s.body_to_local};
  }
};

/// Receiver position fix used by the loosely coupled estimators.
struct PositionFix {
  Vec3 position = Vec3::Zero();
  double hdop = 0.0;
};

/// Everything observed at one GNSS epoch.
struct EpochMeasurements {
  int index = 0;
  double time = 0.0;
  double dt = 0.0;  // time since the previous epoch, 0 for the first
  InertialSummary inertial;
  EulerAngles attitude;  // AHRS attitude at the epoch
  std::vector<SatObservation> sats;
  std::optional<PositionFix> fix;
};

enum class Coupling { kLoose, kTight };

/// Index layout of a stacked navigation state:
///   [0,3) position ECEF, [3,6) velocity ECEF, [6,9) accelerometer bias (body),
///   [9, 9 + clocks) receiver clock bias per constellation (tight coupling only).
struct StateLayout {
  static constexpr Eigen::Index kPos = 0;
  static constexpr Eigen::Index kVel = 3;
  static constexpr Eigen::Index kBias = 6;
  static constexpr Eigen::Index kClock = 9;

  Eigen::Index clocks = 0;

  static StateLayout for_coupling(Coupling c) {
    return {c == Coupling::kTight ? static_cast<Eigen::Index>(kNumConstellations) : 0};
  }

  [[nodiscard]] Eigen::Index dim() const { return 9 + clocks; }
  [[nodiscard]] Eigen::Index clock_index(Constellation c) const {
    return kClock + static_cast<Eigen::Index>(c);
  }
};


/// Estimator output for one epoch.
struct StateEstimate {
  int epoch = 0;
  double time = 0.0;
  StateLayout layout;
  Eigen::VectorXd state;
  double solve_time = 0.0;  // s, wall clock spent on this epoch
  int iterations = 0;

  [[nodiscard]] Vec3 position() const { return state.segment<3>(StateLayout::kPos); }
  [[nodiscard]] Vec3 velocity() const { return state.segment<3>(StateLayout::kVel); }
  [[nodiscard]] Vec3 accel_bias() const { return state.segment<3>(StateLayout::kBias); }
  [[nodiscard]] double clock(Constellation c) const {
    return layout.clocks > 0 ? state[layout.clock_index(c)] : 0.0;
  }
};

}  // namespace gnssfuse
