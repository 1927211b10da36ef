#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"
#include "gnssfuse/frames.hpp"
#include "gnssfuse/types.hpp"

namespace gnssfuse {

/// Parameters of the SNR/elevation pseudorange weighting and the LC user range error.
struct WeightingParams {
  double snr_threshold = 45.0;  // T, dB-Hz
  double a = 32.0;
  double A = 30.0;
  double F = 10.0;              // dB-Hz
  double user_range_error = 10.0;  // m

  void validate() const {
    if (F == snr_threshold) throw DomainError("WeightingParams: F must differ from T");
    if (!(a > 0.0)) throw DomainError("WeightingParams: a must be positive");
    if (!(user_range_error > 0.0)) throw DomainError("WeightingParams: s_user must be positive");
  }
};

/// Diagonal covariance: one strictly positive variance per channel.
class CovDiag {
 public:
  CovDiag() = default;
  explicit CovDiag(Eigen::VectorXd variances) : var_(std::move(variances)) {
    for (Eigen::Index i = 0; i < var_.size(); ++i) {
      if (!(var_[i] > 0.0) || !std::isfinite(var_[i])) {
        throw DomainError("CovDiag: variance " + std::to_string(i) + " is not positive");
      }
    }
  }

  [[nodiscard]] Eigen::Index size() const { return var_.size(); }
  [[nodiscard]] const Eigen::VectorXd& variances() const { return var_; }
  [[nodiscard]] double operator[](Eigen::Index i) const { return var_[i]; }
  [[nodiscard]] Eigen::MatrixXd matrix() const { return var_.asDiagonal(); }

  /// Whitening matrix W with W^T W = Sigma^-1.
  [[nodiscard]] Eigen::MatrixXd sqrt_info() const {
    return var_.cwiseSqrt().cwiseInverse().asDiagonal();
  }

  [[nodiscard]] CovDiag scaled(double c) const { return CovDiag(var_ * c); }

 private:
  Eigen::VectorXd var_;
};

/// R = (hdop * s_user)^2 I3.
inline CovDiag lc_fix_covariance(double hdop, double user_range_error) {
  if (!(hdop > 0.0)) throw DomainError("lc_fix_covariance: hdop must be positive");
  const double s = hdop * user_range_error;
  return CovDiag(Eigen::Vector3d::Constant(s * s));
}

/// HDOP from the ENU line-of-sight geometry at `receiver`, one clock column per
/// constellation present.
inline double compute_hdop(std::span<const SatObservation> sats, const Vec3& receiver) {
  if (sats.size() < 4) throw GeometryError("compute_hdop: need at least 4 satellites");

  std::array<int, kNumConstellations> column{};
  column.fill(-1);
  int clocks = 0;
  for (const auto& s : sats) {
    auto& c = column[static_cast<std::size_t>(s.constellation)];
    if (c < 0) c = clocks++;
  }

  const Rotation3 r_lg = rotation_global_from_local(ecef_to_geodetic(receiver)).transpose();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sats.size()), 3 + clocks);
  for (std::size_t i = 0; i < sats.size(); ++i) {
    const Vec3 los = sats[i].sat_pos - receiver;
    const double range = los.norm();
    if (!(range > 0.0)) throw GeometryError("compute_hdop: satellite coincides with receiver");
    const auto row = static_cast<Eigen::Index>(i);
    g.block<1, 3>(row, 0) = -(r_lg * los / range).transpose();
    g(row, 3 + column[static_cast<std::size_t>(sats[i].constellation)]) = 1.0;
  }

  const Eigen::MatrixXd normal = g.transpose() * g;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  lu.setThreshold(1e-10);
  if (lu.rank() < normal.cols()) throw GeometryError("compute_hdop: singular geometry");
  const Eigen::MatrixXd q = lu.inverse();
  return std::sqrt(q(0, 0) + q(1, 1));
}

/// Variance 1/W(el, snr) of a pseudorange. Below the SNR threshold the SNR
/// bracket uses a negative exponent; at or above it the bracket is 1, so the
/// variance is sin^2(el).
inline double pseudorange_weight(double elevation, double snr, const WeightingParams& p) {
  if (!(elevation > 0.0)) throw DomainError("pseudorange_weight: elevation must be positive");
  const double s2 = std::sin(elevation) * std::sin(elevation);
  double bracket = 1.0;
  if (snr < p.snr_threshold) {
    const double d = snr - p.snr_threshold;
    const double f = p.F - p.snr_threshold;
    bracket = std::pow(10.0, -d / p.a) * ((p.A / std::pow(10.0, -f / p.a) - 1.0) * d / f + 1.0);
  }
  const double w = bracket / s2;
  return 1.0 / w;
}

inline CovDiag tc_covariance(std::span<const SatObservation> sats, const WeightingParams& p) {
  if (sats.empty()) throw DomainError("tc_covariance: no satellites");
  Eigen::VectorXd v(static_cast<Eigen::Index>(sats.size()));
  for (std::size_t i = 0; i < sats.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = pseudorange_weight(sats[i].elevation, sats[i].snr, p);
  }
  return CovDiag(std::move(v));
}

/// Fixed process / factor noise shared by the filters and the factor graphs.
struct ProcessNoise {
  double position_sigma = 0.3;    // m per epoch
  double bias_sigma = 0.01;       // m/s^2 per epoch
  double velocity_sigma = 0.15;   // m/s per epoch
  double clock_sigma = 5.0;       // m per epoch, random walk
};

/// Motion-model covariance: position (3) then accelerometer bias (3).
inline CovDiag motion_model_cov(const ProcessNoise& n = {}) {
  Eigen::VectorXd v(6);
  v << Eigen::Vector3d::Constant(n.position_sigma * n.position_sigma),
      Eigen::Vector3d::Constant(n.bias_sigma * n.bias_sigma);
  return CovDiag(std::move(v));
}

/// INS (velocity) factor covariance.
inline CovDiag ins_cov(const ProcessNoise& n = {}) {
  return CovDiag(Eigen::Vector3d::Constant(n.velocity_sigma * n.velocity_sigma));
}

}  // namespace gnssfuse
