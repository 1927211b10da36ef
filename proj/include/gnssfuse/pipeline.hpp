#pragma once

// Running an estimator over a dataset and collecting per-epoch records.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gnssfuse/canyon_sim.hpp"
#include "gnssfuse/ekf.hpp"
#include "gnssfuse/errors.hpp"
#include "gnssfuse/fgo.hpp"
#include "gnssfuse/residual_analysis.hpp"

namespace gnssfuse {

enum class EstimatorKind { kEkfLc, kEkfTc, kFgoLc, kFgoTc };

inline constexpr std::array<EstimatorKind, 4> kAllEstimators = {EstimatorKind::kEkfLc, EstimatorKind::kEkfTc,
                                                                 EstimatorKind::kFgoLc, EstimatorKind::kFgoTc};

inline std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kEkfLc: return "ekf-lc";
    case EstimatorKind::kEkfTc: return "ekf-tc";
    case EstimatorKind::kFgoLc: return "fgo-lc";
    case EstimatorKind::kFgoTc: return "fgo-tc";
  }
  return "?";
}

inline EstimatorKind estimator_from_string(std::string_view s) {
  for (auto k : kAllEstimators) {
    if (to_string(k) == s) return k;
  }
  throw DomainError("unknown estimator '" + std::string(s) + "'");
}

inline Coupling coupling_of(EstimatorKind k) {
  return (k == EstimatorKind::kEkfLc || k == EstimatorKind::kFgoLc) ? Coupling::kLoose : Coupling::kTight;
}

inline bool is_fgo(EstimatorKind k) { return k == EstimatorKind::kFgoLc || k == EstimatorKind::kFgoTc; }

struct RunConfig {
  EstimatorKind estimator = EstimatorKind::kFgoTc;
  int window = 30;  // epochs; kBatchWindow for the full history
  WeightingParams weighting;
  ProcessNoise noise;
  PriorNoise prior;
  double covariance_scale = 1.0;
  LmConfig lm;

  void validate() const {
    if (window < 1) throw DomainError("RunConfig: window must be >= 1");
    if (!(covariance_scale > 0.0)) throw DomainError("RunConfig: covariance_scale must be positive");
    weighting.validate();
  }
};

/// Raw residual of one pseudorange at the epoch's output state, and its true
/// error against the simulated truth.
struct ObservationResidual {
  int epoch = 0;
  int sat_id = 0;
  Constellation constellation = Constellation::kGps;
  double residual = 0.0;
  double truth_error = 0.0;
  bool nlos = false;
};

struct RunResult {
  EstimatorKind estimator = EstimatorKind::kFgoTc;
  int window = 0;
  std::vector<EpochRecord> records;
  std::vector<StateEstimate> estimates;
  std::vector<ObservationResidual> residuals;  // tight coupling only
  std::optional<std::string> error;            // set when the run stopped early
};

namespace detail {

class AnyEstimator {
 public:
  AnyEstimator(const RunConfig& cfg) {
    if (is_fgo(cfg.estimator)) {
      FgoConfig f;
      f.coupling = coupling_of(cfg.estimator);
      f.window_size = cfg.window;
      f.weighting = cfg.weighting;
      f.noise = cfg.noise;
      f.prior = cfg.prior;
      f.covariance_scale = cfg.covariance_scale;
      f.lm = cfg.lm;
      impl_.emplace<FgoEstimator>(f);
    } else {
      EkfConfig e;
      e.coupling = coupling_of(cfg.estimator);
      e.weighting = cfg.weighting;
      e.noise = cfg.noise;
      impl_.emplace<EkfEstimator>(e);
    }
  }

  std::optional<StateEstimate> step(const EpochMeasurements& e) {
    return std::visit([&](auto& est) -> std::optional<StateEstimate> {
      if constexpr (std::is_same_v<std::decay_t<decltype(est)>, std::monostate>) {
        return std::nullopt;
      } else {
        return est.step(e);
      }
    }, impl_);
  }

 private:
  std::variant<std::monostate, EkfEstimator, FgoEstimator> impl_;
};

}  // namespace detail

/// Steps one estimator over all epochs. Epochs before the estimator could
/// initialise produce no record. Estimator exceptions stop the run and are
/// reported in `error`; everything up to that epoch is kept.
inline RunResult run_estimator(const std::vector<EpochMeasurements>& epochs, const std::vector<TruthState>& truth,
                               const Geodetic& ref, const RunConfig& cfg) {
  cfg.validate();
  if (truth.size() != epochs.size()) throw DomainError("run_estimator: truth/epoch count mismatch");
  RunResult out;
  out.estimator = cfg.estimator;
  out.window = cfg.window;
  detail::AnyEstimator est(cfg);
  const Rotation3 r_lg = rotation_global_from_local(ref).transpose();
  const bool tight = coupling_of(cfg.estimator) == Coupling::kTight;

  for (std::size_t k = 0; k < epochs.size(); ++k) {
    const auto& e = epochs[k];
    std::optional<StateEstimate> s;
    try {
      s = est.step(e);
    } catch (const std::exception& ex) {
      out.error = std::string(to_string(cfg.estimator)) + " failed at epoch " + std::to_string(e.index) + ": " + ex.what();
      break;
    }
    if (!s) continue;

    EpochRecord r;
    r.epoch = e.index;
    r.time = e.time;
    r.est_pos = s->position();
    r.truth_pos = truth[k].pos;
    const Vec3 d = r_lg * (r.est_pos - r.truth_pos);
    r.east_err = d.x();
    r.north_err = d.y();
    r.err_2d = error_2d(r.est_pos, r.truth_pos, ref);
    r.solve_time = s->solve_time;
    if (tight) {
      r.residual = e.sats.empty() ? 0.0 : tc_residual(e.sats, s->layout, s->state);
      for (const auto& sat : e.sats) {
        ObservationResidual o;
        o.epoch = e.index;
        o.sat_id = sat.sat_id;
        o.constellation = sat.constellation;
        o.residual = pseudorange_residual(s->layout, s->state, sat);
        o.truth_error = pseudorange_residual(sat.pseudorange, sat.sat_pos, truth[k].pos,
                                             truth[k].clock[static_cast<std::size_t>(sat.constellation)]);
        o.nlos = sat.nlos_truth.value_or(false);
        out.residuals.push_back(o);
      }
    } else {
      r.residual = e.fix ? lc_residual(e.fix->position, r.est_pos) : 0.0;
    }
    out.records.push_back(r);
    out.estimates.push_back(std::move(*s));
  }
  return out;
}

/// Residual samples of the epochs in [epoch - window + 1, epoch].
inline std::vector<double> window_residuals(std::span<const ObservationResidual> rows, int epoch, int window,
                                            bool truth_errors = false) {
  if (window < 1) throw DomainError("window_residuals: window must be >= 1");
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.epoch <= epoch && r.epoch > epoch - window) out.push_back(truth_errors ? r.truth_error : r.residual);
  }
  return out;
}

struct SweepRow {
  int window = 0;
  Summary summary;
  RunResult run;
};

/// One full tight-coupled FGO run per window size over the same epochs.
inline std::vector<SweepRow> window_sweep(const std::vector<EpochMeasurements>& epochs,
                                          const std::vector<TruthState>& truth, const Geodetic& ref,
                                          const std::vector<int>& sizes, RunConfig base = {}) {
  if (sizes.empty()) throw DomainError("window_sweep: no window sizes");
  base.estimator = EstimatorKind::kFgoTc;
  std::vector<SweepRow> rows;
  for (int w : sizes) {
    base.window = w;
    SweepRow row;
    row.window = w;
    row.run = run_estimator(epochs, truth, ref, base);
    if (row.run.error) throw SolverError(*row.run.error);
    row.summary = summarize(row.run.records);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace gnssfuse
