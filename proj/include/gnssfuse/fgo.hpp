#pragma once

// Sliding-window factor graphs for loosely and tightly coupled GNSS/INS.
//
// A window of size W holds the newest W+1 epoch states. Consecutive states are
// tied by one motion factor (position, bias and clock continuity) and one INS
// factor (velocity integrates the epoch acceleration). The oldest state is
// anchored by a prior at its last optimised value; its own GNSS factors are
// dropped since that value already reflects them. The very first epoch of the
// trajectory is the exception: it keeps its GNSS factors and is anchored at its
// initialisation value with the broad initial spread, so window = batch is the
// full smoother.
//
// Window size 1 is the two-state "EKF like" configuration; it differs from the
// filter only in that it iterates and re-linearises.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"
#include "gnssfuse/nls_solver.hpp"
#include "gnssfuse/noise_models.hpp"
#include "gnssfuse/positioning.hpp"
#include "gnssfuse/types.hpp"

namespace gnssfuse {

/// Window size meaning "use every epoch so far".
inline constexpr int kBatchWindow = std::numeric_limits<int>::max();

struct PriorNoise {
  double position_var = 1.0;  // m^2
  double velocity_var = 0.1;  // (m/s)^2
  double bias_var = 1e-4;     // (m/s^2)^2
  double clock_var = 25.0;    // m^2
};

struct FgoConfig {
  Coupling coupling = Coupling::kTight;
  int window_size = kBatchWindow;
  WeightingParams weighting;
  ProcessNoise noise;
  PriorNoise prior;
  /// Anchor of the very first state, which is only an initialisation. Its
  /// zero velocity is a placeholder, so it gets next to no weight; the other
  /// entries match the filter's initial covariance.
  PriorNoise initial{100.0, 1e6, 1e-2, 100.0 * 100.0};
  /// Multiplies every factor covariance; the optimum does not depend on it.
  double covariance_scale = 1.0;
  LmConfig lm;
};

// --- factor residuals --------------------------------------------------------

/// x_k - h_MM(x_{k-1}) over position, bias and (if present) clocks.
inline Eigen::VectorXd motion_residual(const StateLayout& layout, const Eigen::VectorXd& prev,
                                       const Eigen::VectorXd& cur, double dt) {
  Eigen::VectorXd r(6 + layout.clocks);
  // Differencing the ECEF positions first keeps the result exact to the last bit.
  r.head<3>() = (cur.segment<3>(StateLayout::kPos) - prev.segment<3>(StateLayout::kPos)) -
                prev.segment<3>(StateLayout::kVel) * dt;
  r.segment<3>(3) = cur.segment<3>(StateLayout::kBias) - prev.segment<3>(StateLayout::kBias);
  if (layout.clocks > 0) r.tail(layout.clocks) = cur.tail(layout.clocks) - prev.tail(layout.clocks);
  return r;
}

/// v_k - (v_{k-1} + A_ecef(b_{k-1}) dt).
inline Eigen::Vector3d ins_residual(const Eigen::VectorXd& prev, const Eigen::VectorXd& cur,
                                    const EpochInertial& in, double dt) {
  const Vec3 bias = prev.segment<3>(StateLayout::kBias);
  return cur.segment<3>(StateLayout::kVel) -
         (prev.segment<3>(StateLayout::kVel) + in.accel_for_bias(bias) * dt);
}

/// fix - p_k.
inline Eigen::Vector3d gnss_fix_residual(const Eigen::VectorXd& x, const Vec3& fix) {
  return fix - x.segment<3>(StateLayout::kPos);
}

// --- factors ------------------------------------------------------------------

inline CovDiag motion_factor_cov(const StateLayout& layout, const ProcessNoise& n) {
  Eigen::VectorXd v(6 + layout.clocks);
  v.head<6>() = motion_model_cov(n).variances();
  if (layout.clocks > 0) v.tail(layout.clocks).setConstant(n.clock_sigma * n.clock_sigma);
  return CovDiag(std::move(v));
}

inline CovDiag prior_cov(const StateLayout& layout, const PriorNoise& p) {
  Eigen::VectorXd v(layout.dim());
  v.segment<3>(StateLayout::kPos).setConstant(p.position_var);
  v.segment<3>(StateLayout::kVel).setConstant(p.velocity_var);
  v.segment<3>(StateLayout::kBias).setConstant(p.bias_var);
  if (layout.clocks > 0) v.tail(layout.clocks).setConstant(p.clock_var);
  return CovDiag(std::move(v));
}

inline ResidualBlock make_prior_factor(std::size_t slot, const Eigen::VectorXd& anchor,
                                       const CovDiag& cov) {
  ResidualBlock b;
  b.tag = "prior";
  b.slots = {slot};
  b.dim = anchor.size();
  b.sqrt_info = cov.sqrt_info();
  b.residual = [anchor](SlotRefs x) -> Eigen::VectorXd { return *x[0] - anchor; };
  b.jacobian = [n = anchor.size()](SlotRefs) {
    return std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Identity(n, n)};
  };
  return b;
}

inline ResidualBlock make_motion_factor(std::size_t prev, std::size_t cur, const StateLayout& layout,
                                        double dt, const CovDiag& cov) {
  if (!(dt > 0.0)) throw DomainError("motion factor: dt must be positive");
  const Eigen::Index n = layout.dim();
  const Eigen::Index m = 6 + layout.clocks;
  ResidualBlock b;
  b.tag = "motion";
  b.slots = {prev, cur};
  b.dim = m;
  b.sqrt_info = cov.sqrt_info();
  b.residual = [layout, dt](SlotRefs x) { return motion_residual(layout, *x[0], *x[1], dt); };
  b.jacobian = [layout, dt, n, m](SlotRefs) {
    Eigen::MatrixXd jp = Eigen::MatrixXd::Zero(m, n);
    Eigen::MatrixXd jc = Eigen::MatrixXd::Zero(m, n);
    jp.block<3, 3>(0, StateLayout::kPos) = -Mat3::Identity();
    jp.block<3, 3>(0, StateLayout::kVel) = -Mat3::Identity() * dt;
    jp.block<3, 3>(3, StateLayout::kBias) = -Mat3::Identity();
    jc.block<3, 3>(0, StateLayout::kPos).setIdentity();
    jc.block<3, 3>(3, StateLayout::kBias).setIdentity();
    if (layout.clocks > 0) {
      jp.bottomRightCorner(layout.clocks, layout.clocks) = -Eigen::MatrixXd::Identity(layout.clocks, layout.clocks);
      jc.bottomRightCorner(layout.clocks, layout.clocks).setIdentity();
    }
    return std::vector<Eigen::MatrixXd>{jp, jc};
  };
  return b;
}

inline ResidualBlock make_ins_factor(std::size_t prev, std::size_t cur, const StateLayout& layout,
                                     const EpochInertial& in, double dt, const CovDiag& cov) {
  if (!(dt > 0.0)) throw DomainError("INS factor: dt must be positive");
  const Eigen::Index n = layout.dim();
  ResidualBlock b;
  b.tag = "ins";
  b.slots = {prev, cur};
  b.dim = 3;
  b.sqrt_info = cov.sqrt_info();
  b.residual = [in, dt](SlotRefs x) -> Eigen::VectorXd { return ins_residual(*x[0], *x[1], in, dt); };
  b.jacobian = [in, dt, n](SlotRefs) {
    Eigen::MatrixXd jp = Eigen::MatrixXd::Zero(3, n);
    Eigen::MatrixXd jc = Eigen::MatrixXd::Zero(3, n);
    jp.block<3, 3>(0, StateLayout::kVel) = -Mat3::Identity();
    jp.block<3, 3>(0, StateLayout::kBias) = in.bias_to_accel * dt;
    jc.block<3, 3>(0, StateLayout::kVel).setIdentity();
    return std::vector<Eigen::MatrixXd>{jp, jc};
  };
  return b;
}

inline ResidualBlock make_gnss_fix_factor(std::size_t slot, const StateLayout& layout, const Vec3& fix,
                                          const CovDiag& cov) {
  const Eigen::Index n = layout.dim();
  ResidualBlock b;
  b.tag = "gnss_fix";
  b.slots = {slot};
  b.dim = 3;
  b.sqrt_info = cov.sqrt_info();
  b.residual = [fix](SlotRefs x) -> Eigen::VectorXd { return gnss_fix_residual(*x[0], fix); };
  b.jacobian = [n](SlotRefs) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, n);
    j.block<3, 3>(0, StateLayout::kPos) = -Mat3::Identity();
    return std::vector<Eigen::MatrixXd>{j};
  };
  return b;
}

inline ResidualBlock make_pseudorange_factor(std::size_t slot, const StateLayout& layout,
                                             const SatObservation& sat, double variance) {
  if (layout.clocks == 0) throw DomainError("pseudorange factor: state has no clock bias");
  if (!(variance > 0.0)) throw DomainError("pseudorange factor: variance must be positive");
  ResidualBlock b;
  b.tag = "pseudorange";
  b.slots = {slot};
  b.dim = 1;
  b.sqrt_info = Eigen::MatrixXd::Constant(1, 1, 1.0 / std::sqrt(variance));
  b.residual = [layout, sat](SlotRefs x) {
    const Vec3 p = x[0]->segment<3>(StateLayout::kPos);
    if (!((sat.sat_pos - p).norm() > 0.0)) throw GeometryError("pseudorange factor: zero range");
    return Eigen::VectorXd::Constant(1, pseudorange_residual(layout, *x[0], sat));
  };
  b.jacobian = [layout, sat](SlotRefs x) {
    return std::vector<Eigen::MatrixXd>{-Eigen::MatrixXd(pseudorange_row(layout, *x[0], sat))};
  };
  return b;
}

// --- window assembly -----------------------------------------------------------

/// Everything the estimator has seen, plus its current per-epoch solution.
struct FgoHistory {
  StateLayout layout;
  std::vector<EpochMeasurements> epochs;
  std::vector<EpochInertial> inertial;  // resolved per epoch (entry 0 unused)
  Values estimates;                     // latest optimised value per epoch
  Eigen::VectorXd initial_state;        // initialisation of epochs[0]
};

struct WindowProblem {
  NlsProblem problem;
  std::size_t first_epoch = 0;  // history index of slot 0
};

/// Propagates a state through the constant-velocity model.
inline Eigen::VectorXd propagate_state(const Eigen::VectorXd& prev, const EpochInertial& in, double dt) {
  Eigen::VectorXd next = prev;
  next.segment<3>(StateLayout::kPos) += prev.segment<3>(StateLayout::kVel) * dt;
  next.segment<3>(StateLayout::kVel) += in.accel_for_bias(prev.segment<3>(StateLayout::kBias)) * dt;
  return next;
}

/// Assembles the window ending at the newest epoch of `history`. Initial values
/// come from `history.estimates`, which must already hold a guess for the
/// newest epoch.
inline WindowProblem build_window(const FgoHistory& history, const FgoConfig& cfg) {
  if (history.epochs.empty()) throw DomainError("build_window: empty history");
  if (cfg.window_size < 1) throw DomainError("build_window: window size must be >= 1");
  if (history.estimates.size() != history.epochs.size()) {
    throw DomainError("build_window: estimates do not cover the history");
  }
  const StateLayout& layout = history.layout;
  const std::size_t last = history.epochs.size() - 1;
  const std::size_t span = std::min<std::size_t>(last, static_cast<std::size_t>(cfg.window_size));
  const std::size_t first = last - span;
  const double scale = cfg.covariance_scale;

  WindowProblem w;
  w.first_epoch = first;
  NlsProblem& p = w.problem;
  for (std::size_t e = first; e <= last; ++e) {
    p.slot_dims.push_back(layout.dim());
    p.initial_values.push_back(history.estimates[e]);
  }

  const bool from_start = first == 0;
  const Eigen::VectorXd& anchor = from_start ? history.initial_state : history.estimates[first];
  p.blocks.push_back(
      make_prior_factor(0, anchor, prior_cov(layout, from_start ? cfg.initial : cfg.prior).scaled(scale)));

  const CovDiag mm_cov = motion_factor_cov(layout, cfg.noise).scaled(scale);
  const CovDiag ins_cov_s = ins_cov(cfg.noise).scaled(scale);
  for (std::size_t e = first + 1; e <= last; ++e) {
    const std::size_t s = e - first;
    const double dt = history.epochs[e].dt;
    p.blocks.push_back(make_motion_factor(s - 1, s, layout, dt, mm_cov));
    p.blocks.push_back(make_ins_factor(s - 1, s, layout, history.inertial[e], dt, ins_cov_s));
  }

  const std::size_t gnss_from = first == 0 ? 0 : first + 1;
  for (std::size_t e = gnss_from; e <= last; ++e) {
    const std::size_t s = e - first;
    const EpochMeasurements& m = history.epochs[e];
    if (cfg.coupling == Coupling::kLoose) {
      if (m.fix) {
        p.blocks.push_back(make_gnss_fix_factor(
            s, layout, m.fix->position,
            lc_fix_covariance(m.fix->hdop, cfg.weighting.user_range_error).scaled(scale)));
      }
    } else {
      for (const auto& sat : m.sats) {
        const double var = pseudorange_weight(sat.elevation, sat.snr, cfg.weighting) * scale;
        p.blocks.push_back(make_pseudorange_factor(s, layout, sat, var));
      }
    }
  }
  return w;
}

/// Counts blocks by tag.
inline std::size_t count_factors(const NlsProblem& p, const std::string& tag) {
  return static_cast<std::size_t>(
      std::count_if(p.blocks.begin(), p.blocks.end(), [&](const ResidualBlock& b) { return b.tag == tag; }));
}

/// Sliding-window (or batch) factor-graph estimator, stepped once per epoch.
class FgoEstimator {
 public:
  explicit FgoEstimator(FgoConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.window_size < 1) throw DomainError("FgoEstimator: window size must be >= 1");
    cfg_.weighting.validate();
    history_.layout = StateLayout::for_coupling(cfg_.coupling);
  }

  [[nodiscard]] const FgoConfig& config() const { return cfg_; }
  [[nodiscard]] const FgoHistory& history() const { return history_; }
  [[nodiscard]] const std::optional<WindowProblem>& last_window() const { return last_window_; }
  [[nodiscard]] const std::optional<SolveReport>& last_report() const { return last_report_; }

  /// Returns nullopt until a first state could be initialised.
  std::optional<StateEstimate> step(const EpochMeasurements& epoch) {
    const auto start = std::chrono::steady_clock::now();
    const StateLayout& layout = history_.layout;

    if (history_.epochs.empty()) {
      auto init = initial_state(epoch);
      if (!init) return std::nullopt;
      history_.initial_state = *init;
      history_.epochs.push_back(epoch);
      history_.inertial.emplace_back();
      history_.estimates.push_back(*init);
    } else {
      if (!(epoch.dt > 0.0)) throw DomainError("FgoEstimator: epochs must be strictly increasing in time");
      const Eigen::VectorXd& prev = history_.estimates.back();
      const EpochInertial in = EpochInertial::resolve(epoch.inertial, prev.segment<3>(StateLayout::kPos));
      history_.estimates.push_back(propagate_state(prev, in, epoch.dt));
      history_.epochs.push_back(epoch);
      history_.inertial.push_back(in);
    }

    WindowProblem w = build_window(history_, cfg_);
    SolveReport rep;
    try {
      rep = solve_lm(w.problem, cfg_.lm);
    } catch (const std::exception& e) {
      throw SolverError("epoch " + std::to_string(epoch.index) + ": " + e.what());
    }
    for (std::size_t s = 0; s < rep.values.size(); ++s) history_.estimates[w.first_epoch + s] = rep.values[s];
    const auto stop = std::chrono::steady_clock::now();

    StateEstimate est;
    est.epoch = epoch.index;
    est.time = epoch.time;
    est.layout = layout;
    est.state = history_.estimates.back();
    est.solve_time = std::chrono::duration<double>(stop - start).count();
    est.iterations = rep.iterations;
    last_window_ = std::move(w);
    last_report_ = std::move(rep);
    return est;
  }

 private:
  std::optional<Eigen::VectorXd> initial_state(const EpochMeasurements& epoch) const {
    const StateLayout& layout = history_.layout;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.dim());
    if (cfg_.coupling == Coupling::kLoose) {
      if (!epoch.fix) return std::nullopt;
      x.segment<3>(StateLayout::kPos) = epoch.fix->position;
    } else {
      const auto sol = solve_snapshot(epoch.sats, cfg_.weighting);
      if (!sol) return std::nullopt;
      x.segment<3>(StateLayout::kPos) = sol->position;
      for (std::size_t c = 0; c < kNumConstellations; ++c) {
        x[StateLayout::kClock + static_cast<Eigen::Index>(c)] = sol->clock[c];
      }
    }
    return x;
  }

  FgoConfig cfg_;
  FgoHistory history_;
  std::optional<WindowProblem> last_window_;
  std::optional<SolveReport> last_report_;
};

}  // namespace gnssfuse
