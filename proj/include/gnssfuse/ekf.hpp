#pragma once

// Extended Kalman filters for loosely (position fix) and tightly (pseudorange)
// coupled GNSS/INS integration. Both share the constant-velocity prediction
//
//   p_k = p_{k-1} + v_{k-1} dt
//   v_k = v_{k-1} + A_ecef(b_{k-1}) dt,   A_ecef(b) = a - M b
//   b_k = b_{k-1},  clock_k = clock_{k-1}
//
// with the per-epoch inertial input resolved in ECEF once per epoch.

#include <chrono>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"
#include "gnssfuse/noise_models.hpp"
#include "gnssfuse/positioning.hpp"
#include "gnssfuse/types.hpp"

namespace gnssfuse {

struct BeliefState {
  StateLayout layout;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline void symmetrize(Eigen::MatrixXd& p) { p = 0.5 * (p + p.transpose()).eval(); }

/// Process noise per epoch: position and bias from the motion model, velocity
/// from the INS model, clock as a random walk.
inline Eigen::MatrixXd process_noise(const StateLayout& layout, const ProcessNoise& n) {
  Eigen::VectorXd q(layout.dim());
  q.segment<3>(StateLayout::kPos).setConstant(n.position_sigma * n.position_sigma);
  q.segment<3>(StateLayout::kVel).setConstant(n.velocity_sigma * n.velocity_sigma);
  q.segment<3>(StateLayout::kBias).setConstant(n.bias_sigma * n.bias_sigma);
  if (layout.clocks > 0) q.tail(layout.clocks).setConstant(n.clock_sigma * n.clock_sigma);
  return q.asDiagonal();
}

/// Jacobian of the prediction with respect to the previous state.
inline Eigen::MatrixXd transition_jacobian(const StateLayout& layout, const EpochInertial& in,
                                           double dt) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(layout.dim(), layout.dim());
  f.block<3, 3>(StateLayout::kPos, StateLayout::kVel) = Mat3::Identity() * dt;
  f.block<3, 3>(StateLayout::kVel, StateLayout::kBias) = -in.bias_to_accel * dt;
  return f;
}

inline BeliefState predict(const BeliefState& b, const EpochInertial& in, double dt,
                           const ProcessNoise& noise = {}) {
  if (!(dt > 0.0)) throw DomainError("predict: dt must be positive");
  BeliefState out = b;
  const Vec3 pos = b.mean.segment<3>(StateLayout::kPos);
  const Vec3 vel = b.mean.segment<3>(StateLayout::kVel);
  const Vec3 bias = b.mean.segment<3>(StateLayout::kBias);
  out.mean.segment<3>(StateLayout::kPos) = pos + vel * dt;
  out.mean.segment<3>(StateLayout::kVel) = vel + in.accel_for_bias(bias) * dt;

  const Eigen::MatrixXd f = transition_jacobian(b.layout, in, dt);
  out.cov = f * b.cov * f.transpose() + process_noise(b.layout, noise);
  symmetrize(out.cov);
  return out;
}

namespace detail {

inline BeliefState kalman_update(const BeliefState& b, const Eigen::VectorXd& innovation,
                                 const Eigen::MatrixXd& h, const Eigen::MatrixXd& r) {
  const Eigen::MatrixXd s = h * b.cov * h.transpose() + r;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError("EKF update: innovation covariance not PD");
  // K = P H^T S^-1
  const Eigen::MatrixXd k = llt.solve(h * b.cov).transpose();
  BeliefState out = b;
  out.mean = b.mean + k * innovation;
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(b.cov.rows(), b.cov.cols()) - k * h;
  out.cov = ikh * b.cov * ikh.transpose() + k * r * k.transpose();
  symmetrize(out.cov);
  return out;
}

}  // namespace detail

/// Position-fix update, H = [I3 | 0].
inline BeliefState update_lc(const BeliefState& b, const Vec3& fix, const CovDiag& r) {
  if (r.size() != 3) throw DomainError("update_lc: expected a 3x3 covariance");
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, b.layout.dim());
  h.block<3, 3>(0, StateLayout::kPos).setIdentity();
  const Eigen::VectorXd innovation = fix - b.mean.segment<3>(StateLayout::kPos);
  return detail::kalman_update(b, innovation, h, r.matrix());
}

/// Pseudorange update linearised once at the prior mean.
inline BeliefState update_tc(const BeliefState& b, std::span<const SatObservation> sats,
                             const CovDiag& r) {
  if (b.layout.clocks == 0) throw DomainError("update_tc: state has no clock bias");
  if (sats.empty()) throw DomainError("update_tc: no satellites");
  if (r.size() != static_cast<Eigen::Index>(sats.size())) {
    throw DomainError("update_tc: covariance size does not match satellite count");
  }
  const auto n = static_cast<Eigen::Index>(sats.size());
  Eigen::MatrixXd h(n, b.layout.dim());
  Eigen::VectorXd innovation(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& sat = sats[static_cast<std::size_t>(i)];
    h.row(i) = pseudorange_row(b.layout, b.mean, sat);
    innovation[i] = pseudorange_residual(b.layout, b.mean, sat);
  }
  return detail::kalman_update(b, innovation, h, r.matrix());
}

struct EkfConfig {
  Coupling coupling = Coupling::kTight;
  WeightingParams weighting;
  ProcessNoise noise;
  // Initial standard deviations.
  double init_position_var = 100.0;   // m^2
  double init_velocity_var = 10.0;    // (m/s)^2
  double init_bias_var = 1e-2;        // (m/s^2)^2
  double init_clock_var = 100.0 * 100.0;  // m^2
};

/// Runs one filter over a stream of epochs.
class EkfEstimator {
 public:
  explicit EkfEstimator(EkfConfig cfg) : cfg_(std::move(cfg)), layout_(StateLayout::for_coupling(cfg_.coupling)) {
    cfg_.weighting.validate();
  }

  [[nodiscard]] const std::optional<BeliefState>& belief() const { return belief_; }

  /// Returns nullopt until the filter could be initialised.
  std::optional<StateEstimate> step(const EpochMeasurements& epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (!belief_) {
      if (!initialize(epoch)) return std::nullopt;
    } else {
      const EpochInertial in =
          EpochInertial::resolve(epoch.inertial, belief_->mean.segment<3>(StateLayout::kPos));
      BeliefState b = predict(*belief_, in, epoch.dt, cfg_.noise);
      if (cfg_.coupling == Coupling::kLoose) {
        if (epoch.fix) b = update_lc(b, epoch.fix->position, lc_fix_covariance(epoch.fix->hdop, cfg_.weighting.user_range_error));
      } else if (!epoch.sats.empty()) {
        b = update_tc(b, epoch.sats, tc_covariance(epoch.sats, cfg_.weighting));
      }
      belief_ = std::move(b);
    }
    const auto stop = std::chrono::steady_clock::now();

    StateEstimate est;
    est.epoch = epoch.index;
    est.time = epoch.time;
    est.layout = layout_;
    est.state = belief_->mean;
    est.solve_time = std::chrono::duration<double>(stop - start).count();
    est.iterations = 1;
    return est;
  }

 private:
  bool initialize(const EpochMeasurements& epoch) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(layout_.dim());
    if (cfg_.coupling == Coupling::kLoose) {
      if (!epoch.fix) return false;
      x.segment<3>(StateLayout::kPos) = epoch.fix->position;
    } else {
      const auto sol = solve_snapshot(epoch.sats, cfg_.weighting);
      if (!sol) return false;
      x.segment<3>(StateLayout::kPos) = sol->position;
      for (std::size_t c = 0; c < kNumConstellations; ++c) x[layout_.kClock + static_cast<Eigen::Index>(c)] = sol->clock[c];
    }
    Eigen::VectorXd p0(layout_.dim());
    p0.segment<3>(StateLayout::kPos).setConstant(cfg_.init_position_var);
    p0.segment<3>(StateLayout::kVel).setConstant(cfg_.init_velocity_var);
    p0.segment<3>(StateLayout::kBias).setConstant(cfg_.init_bias_var);
    if (layout_.clocks > 0) p0.tail(layout_.clocks).setConstant(cfg_.init_clock_var);
    belief_ = BeliefState{layout_, x, p0.asDiagonal()};
    return true;
  }

  EkfConfig cfg_;
  StateLayout layout_;
  std::optional<BeliefState> belief_;
};

}  // namespace gnssfuse
