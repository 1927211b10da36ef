#pragma once

// Coordinate frames used throughout the toolkit.
//
//   body  : vehicle frame (x forward, y left, z up), IMU measurements live here
//   local : east-north-up tangent frame at a geodetic point
//   ECEF  : WGS84 earth-centred earth-fixed frame, the estimation frame
//
// Attitude is intrinsic Z-Y-X (yaw about up, then pitch, then roll).

#include <cmath>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"

namespace gnssfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// A 3x3 rotation matrix. Kept as an alias so Eigen expressions compose freely.
using Rotation3 = Eigen::Matrix3d;

namespace wgs84 {
inline constexpr double kSemiMajorAxis = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kEccentricitySq = kFlattening * (2.0 - kFlattening);
}  // namespace wgs84

/// Geodetic coordinates on the WGS84 ellipsoid; angles in radians, height in meters.
struct Geodetic {
  double lat = 0.0;
  double lon = 0.0;
  double height = 0.0;
};

/// Yaw, pitch and roll in radians.
struct EulerAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

struct Enu {
  double east = 0.0;
  double north = 0.0;
  double up = 0.0;

  [[nodiscard]] Vec3 vec() const { return {east, north, up}; }
};

inline Rotation3 rotation_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Rotation3 r;
  r << c, -s, 0.0,
       s, c, 0.0,
       0.0, 0.0, 1.0;
  return r;
}

inline Rotation3 rotation_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Rotation3 r;
  r << c, 0.0, s,
       0.0, 1.0, 0.0,
       -s, 0.0, c;
  return r;
}

inline Rotation3 rotation_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Rotation3 r;
  r << 1.0, 0.0, 0.0,
       0.0, c, -s,
       0.0, s, c;
  return r;
}

/// Body -> local (ENU) rotation, Rz(yaw) * Ry(pitch) * Rx(roll).
inline Rotation3 rotation_local_from_body(const EulerAngles& euler) {
  return rotation_z(euler.yaw) * rotation_y(euler.pitch) * rotation_x(euler.roll);
}

/// Local ENU -> ECEF rotation at a geodetic point. Columns are the east, north
/// and up unit vectors expressed in ECEF.
inline Rotation3 rotation_global_from_local(const Geodetic& geo) {
  const double sl = std::sin(geo.lat), cl = std::cos(geo.lat);
  const double so = std::sin(geo.lon), co = std::cos(geo.lon);
  Rotation3 r;
  r << -so, -sl * co, cl * co,
       co, -sl * so, cl * so,
       0.0, cl, sl;
  return r;
}

inline Vec3 geodetic_to_ecef(const Geodetic& geo) {
  using namespace wgs84;
  const double sl = std::sin(geo.lat), cl = std::cos(geo.lat);
  const double n = kSemiMajorAxis / std::sqrt(1.0 - kEccentricitySq * sl * sl);
  return {(n + geo.height) * cl * std::cos(geo.lon),
          (n + geo.height) * cl * std::sin(geo.lon),
          (n * (1.0 - kEccentricitySq) + geo.height) * sl};
}

/// Fixed-point iteration on latitude (at most 10 rounds, 1e-12 rad tolerance).
inline Geodetic ecef_to_geodetic(const Vec3& p) {
  using namespace wgs84;
  if (!(p.norm() > 0.0)) throw DomainError("ecef_to_geodetic: zero-norm position");

  const double rho = std::hypot(p.x(), p.y());
  double lat = std::atan2(p.z(), rho * (1.0 - kEccentricitySq));
  double n = kSemiMajorAxis;
  double h = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double sl = std::sin(lat);
    n = kSemiMajorAxis / std::sqrt(1.0 - kEccentricitySq * sl * sl);
    // Stable at the poles, unlike rho / cos(lat) - n.
    h = rho * std::cos(lat) + p.z() * sl - n * (1.0 - kEccentricitySq * sl * sl);
    const double next = std::atan2(p.z(), rho * (1.0 - kEccentricitySq * n / (n + h)));
    const bool done = std::abs(next - lat) < 1e-12;
    lat = next;
    if (done) break;
  }
  const double sl = std::sin(lat);
  n = kSemiMajorAxis / std::sqrt(1.0 - kEccentricitySq * sl * sl);
  h = rho * std::cos(lat) + p.z() * sl - n * (1.0 - kEccentricitySq * sl * sl);
  return {lat, std::atan2(p.y(), p.x()), h};
}

inline Enu ecef_to_enu(const Geodetic& ref, const Vec3& p) {
  const Vec3 d = rotation_global_from_local(ref).transpose() * (p - geodetic_to_ecef(ref));
  return {d.x(), d.y(), d.z()};
}

inline Vec3 enu_to_ecef(const Geodetic& ref, const Enu& enu) {
  return geodetic_to_ecef(ref) + rotation_global_from_local(ref) * enu.vec();
}

/// A_ecef = R_GL * R_LB * (raw - bias). Bias is removed in the body frame.
inline Vec3 body_accel_to_ecef(const Vec3& raw, const Vec3& bias, const EulerAngles& att,
                               const Geodetic& geo) {
  return rotation_global_from_local(geo) * (rotation_local_from_body(att) * (raw - bias));
}

/// Azimuth (clockwise from north) and elevation of `target` seen from `from`.
struct AzEl {
  double azimuth = 0.0;
  double elevation = 0.0;
};

inline AzEl azimuth_elevation(const Vec3& from, const Vec3& target) {
  const Geodetic geo = ecef_to_geodetic(from);
  const Vec3 d = rotation_global_from_local(geo).transpose() * (target - from);
  const double horiz = std::hypot(d.x(), d.y());
  double az = std::atan2(d.x(), d.y());
  if (az < 0.0) az += 2.0 * M_PI;
  return {az, std::atan2(d.z(), horiz)};
}

}  // namespace gnssfuse
