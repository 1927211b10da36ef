#pragma once

// Single-epoch weighted least-squares positioning from pseudoranges. Used for
// the receiver fixes consumed by the loosely coupled estimators and to
// initialise the tightly coupled ones.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/frames.hpp"
#include "gnssfuse/nls_solver.hpp"
#include "gnssfuse/noise_models.hpp"
#include "gnssfuse/types.hpp"

namespace gnssfuse {

/// Geometric range plus receiver clock bias.
inline double predicted_pseudorange(const Vec3& sat_pos, const Vec3& receiver, double clock) {
  return (sat_pos - receiver).norm() + clock;
}

/// Measured minus predicted pseudorange, evaluated in extended precision. Ranges
/// are ~2e7 m, so double rounding (a few nm) would otherwise swamp cost changes
/// near a solver optimum.
inline double pseudorange_residual(double measured, const Vec3& sat_pos, const Vec3& receiver, double clock) {
  long double sq = 0.0L;
  for (int i = 0; i < 3; ++i) {
    const long double d = static_cast<long double>(sat_pos[i]) - static_cast<long double>(receiver[i]);
    sq += d * d;
  }
  return static_cast<double>(static_cast<long double>(measured) - std::sqrt(sq) - static_cast<long double>(clock));
}

/// d(range)/d(receiver) = -u, u the unit line of sight receiver -> satellite.
inline Eigen::RowVector3d range_gradient(const Vec3& sat_pos, const Vec3& receiver) {
  const Vec3 los = sat_pos - receiver;
  const double r = los.norm();
  if (!(r > 0.0)) throw GeometryError("satellite coincides with receiver");
  return -(los / r).transpose();
}

/// Measurement Jacobian row of one pseudorange: [-u^T | 0 | 0 | e_c].
inline Eigen::RowVectorXd pseudorange_row(const StateLayout& layout, const Eigen::VectorXd& x,
                                          const SatObservation& sat) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(layout.dim());
  row.segment<3>(StateLayout::kPos) = range_gradient(sat.sat_pos, x.segment<3>(StateLayout::kPos));
  row[layout.clock_index(sat.constellation)] = 1.0;
  return row;
}

inline double predicted_pseudorange(const StateLayout& layout, const Eigen::VectorXd& x,
                                    const SatObservation& sat) {
  return predicted_pseudorange(sat.sat_pos, x.segment<3>(StateLayout::kPos),
                               x[layout.clock_index(sat.constellation)]);
}

/// rho - (|sv - p_k| + clock_c).
inline double pseudorange_residual(const StateLayout& layout, const Eigen::VectorXd& x, const SatObservation& sat) {
  return pseudorange_residual(sat.pseudorange, sat.sat_pos, x.segment<3>(StateLayout::kPos),
                              x[layout.clock_index(sat.constellation)]);
}

struct SnapshotSolution {
  Vec3 position = Vec3::Zero();
  std::array<double, kNumConstellations> clock{};
  std::array<bool, kNumConstellations> clock_observed{};
  double hdop = 0.0;
  int iterations = 0;
};

/// Weighted least squares for position and one clock per constellation present.
/// Returns nullopt when the epoch has too few satellites or degenerate geometry.
inline std::optional<SnapshotSolution> solve_snapshot(std::span<const SatObservation> sats,
                                                      const WeightingParams& weighting,
                                                      const Vec3& initial_position = Vec3::Zero()) {
  std::array<int, kNumConstellations> column{};
  column.fill(-1);
  int clocks = 0;
  for (const auto& s : sats) {
    auto& c = column[static_cast<std::size_t>(s.constellation)];
    if (c < 0) c = clocks++;
  }
  const auto n = static_cast<int>(sats.size());
  if (n < 4 || n < 3 + clocks) return std::nullopt;

  NlsProblem problem;
  problem.slot_dims = {3 + clocks};
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3 + clocks);
  x0.head<3>() = initial_position;
  problem.initial_values = {x0};

  for (const auto& sat : sats) {
    const double var = pseudorange_weight(sat.elevation, sat.snr, weighting);
    const int col = 3 + column[static_cast<std::size_t>(sat.constellation)];
    ResidualBlock b;
    b.tag = "pseudorange";
    b.slots = {0};
    b.dim = 1;
    b.sqrt_info = Eigen::MatrixXd::Constant(1, 1, 1.0 / std::sqrt(var));
    b.residual = [sat, col](SlotRefs x) {
      const Eigen::VectorXd& v = *x[0];
      return Eigen::VectorXd::Constant(
          1, pseudorange_residual(sat.pseudorange, sat.sat_pos, v.head<3>(), v[col]));
    };
    b.jacobian = [sat, col, clocks](SlotRefs x) {
      const Eigen::VectorXd& v = *x[0];
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, 3 + clocks);
      j.block<1, 3>(0, 0) = -range_gradient(sat.sat_pos, v.head<3>());
      j(0, col) = -1.0;
      return std::vector<Eigen::MatrixXd>{j};
    };
    problem.blocks.push_back(std::move(b));
  }

  SolveReport rep;
  try {
    rep = solve_lm(problem);
  } catch (const SolverError&) {
    return std::nullopt;
  } catch (const GeometryError&) {
    return std::nullopt;
  }

  SnapshotSolution sol;
  sol.position = rep.values[0].head<3>();
  sol.iterations = rep.iterations;
  for (std::size_t c = 0; c < kNumConstellations; ++c) {
    if (column[c] >= 0) {
      sol.clock[c] = rep.values[0][3 + column[c]];
      sol.clock_observed[c] = true;
    }
  }
  try {
    sol.hdop = compute_hdop(sats, sol.position);
  } catch (const GeometryError&) {
    return std::nullopt;
  }
  return sol;
}

}  // namespace gnssfuse
