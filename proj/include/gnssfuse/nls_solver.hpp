#pragma once

// Levenberg-Marquardt over a generic set of residual blocks.
//
// Each block reads a subset of state slots, returns an unwhitened residual r
// and (optionally) its analytic Jacobian. The solver minimises
//
//     sum_j || sqrt_info_j * r_j(x) ||^2
//
// solving (H + lambda * diag(H)) delta = -g with H = J^T J, g = J^T r on the
// whitened system. The normal matrix is assembled block-sparse and factorised
// with a sparse Cholesky, so long windows stay cheap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "gnssfuse/errors.hpp"

namespace gnssfuse {

using Values = std::vector<Eigen::VectorXd>;
using SlotRefs = std::span<const Eigen::VectorXd* const>;

using ResidualFn = std::function<Eigen::VectorXd(SlotRefs)>;
/// One (dim x slot_dim) matrix per slot, in slot order.
using JacobianFn = std::function<std::vector<Eigen::MatrixXd>(SlotRefs)>;

struct ResidualBlock {
  std::string tag;
  std::vector<std::size_t> slots;
  Eigen::Index dim = 0;
  ResidualFn residual;
  JacobianFn jacobian;  // empty -> central differences
  Eigen::MatrixXd sqrt_info;
};

struct NlsProblem {
  std::vector<Eigen::Index> slot_dims;
  std::vector<ResidualBlock> blocks;
  Values initial_values;

  [[nodiscard]] Eigen::Index total_dim() const {
    Eigen::Index n = 0;
    for (auto d : slot_dims) n += d;
    return n;
  }

  void validate() const {
    if (initial_values.size() != slot_dims.size()) {
      throw DomainError("NlsProblem: initial value count does not match slot count");
    }
    for (std::size_t i = 0; i < slot_dims.size(); ++i) {
      if (initial_values[i].size() != slot_dims[i]) {
        throw DomainError("NlsProblem: slot " + std::to_string(i) + " has wrong dimension");
      }
    }
    for (const auto& b : blocks) {
      if (b.dim < 1) throw DomainError("NlsProblem: block '" + b.tag + "' has no rows");
      if (b.sqrt_info.rows() != b.dim || b.sqrt_info.cols() != b.dim) {
        throw DomainError("NlsProblem: block '" + b.tag + "' whitening has wrong shape");
      }
      for (auto s : b.slots) {
        if (s >= slot_dims.size()) {
          throw DomainError("NlsProblem: block '" + b.tag + "' references slot out of range");
        }
      }
    }
  }
};

struct LmConfig {
  // Small enough that a linear problem is solved to ~1e-10 in two steps;
  // larger values leave damping bias that cost comparisons cannot resolve.
  double lambda_init = 1e-8;
  double lambda_max = 1e10;
  double tol = 1e-8;   // relative cost change
  double gtol = 1e-8;  // infinity norm of the whitened gradient
  int max_iters = 100;
  // Undamped Gauss-Newton steps taken after convergence, while they keep
  // contracting and stay below refine_bound. Cost comparisons stop resolving
  // steps near 1e-6 m once the total cost is large; the gradient still does.
  int refine_steps = 5;
  double refine_bound = 1e-3;
};

struct SolveReport {
  Values values;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_trace;  // initial cost, then one entry per accepted step
  std::vector<double> decreases;   // per accepted step, summed residual by residual
  int jacobian_evaluations = 0;
  int refinement_steps = 0;
  std::string message;
};

namespace detail {

inline std::vector<const Eigen::VectorXd*> gather(const ResidualBlock& b, const Values& values) {
  std::vector<const Eigen::VectorXd*> refs;
  refs.reserve(b.slots.size());
  for (auto s : b.slots) refs.push_back(&values[s]);
  return refs;
}

inline Eigen::VectorXd whitened_residual(const ResidualBlock& b, const Values& values) {
  const auto refs = gather(b, values);
  Eigen::VectorXd r = b.residual(refs);
  if (r.size() != b.dim) throw EvaluationError("block '" + b.tag + "' returned wrong residual size");
  if (!r.allFinite()) throw EvaluationError("block '" + b.tag + "' produced a non-finite residual");
  return b.sqrt_info * r;
}

inline std::vector<Eigen::VectorXd> whitened_residuals(const NlsProblem& p, const Values& values) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(p.blocks.size());
  for (const auto& b : p.blocks) out.push_back(whitened_residual(b, values));
  return out;
}

/// cost(before) - cost(after), summed per residual as (a - b)(a + b). Near the
/// optimum the change is far below the rounding error of the total cost, so
/// differencing two totals cannot tell a good final step from a bad one.
inline double cost_decrease(const std::vector<Eigen::VectorXd>& before, const std::vector<Eigen::VectorXd>& after) {
  double d = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) d += (before[i] - after[i]).dot(before[i] + after[i]);
  return d;
}

}  // namespace detail

/// Sum over blocks of ||sqrt_info * residual||^2.
inline double total_cost(const NlsProblem& p, const Values& values) {
  double cost = 0.0;
  for (const auto& b : p.blocks) cost += detail::whitened_residual(b, values).squaredNorm();
  if (!std::isfinite(cost)) throw EvaluationError("total_cost: non-finite cost");
  return cost;
}

/// Central-difference Jacobian of the unwhitened residual, slots stacked column-wise.
/// The default step balances truncation against rounding for states of order 1-100.
inline Eigen::MatrixXd numeric_jacobian(const ResidualBlock& block, const Values& values,
                                        double h = 1e-5) {
  if (!(h > 0.0)) throw DomainError("numeric_jacobian: step must be positive");
  Eigen::Index cols = 0;
  for (auto s : block.slots) cols += values[s].size();
  Eigen::MatrixXd jac(block.dim, cols);

  Values work = values;
  Eigen::Index col = 0;
  for (auto s : block.slots) {
    for (Eigen::Index k = 0; k < values[s].size(); ++k, ++col) {
      const double x0 = work[s][k];
      const double hi = x0 + h, lo = x0 - h;  // divide by the step actually taken
      work[s][k] = hi;
      const Eigen::VectorXd rp = block.residual(detail::gather(block, work));
      work[s][k] = lo;
      const Eigen::VectorXd rm = block.residual(detail::gather(block, work));
      work[s][k] = x0;
      jac.col(col) = (rp - rm) / (hi - lo);
    }
  }
  return jac;
}

/// Analytic Jacobian when the block provides one, otherwise central differences.
inline std::vector<Eigen::MatrixXd> block_jacobians(const ResidualBlock& b, const Values& values) {
  if (b.jacobian) return b.jacobian(detail::gather(b, values));
  const Eigen::MatrixXd stacked = numeric_jacobian(b, values);
  std::vector<Eigen::MatrixXd> out;
  Eigen::Index col = 0;
  for (auto s : b.slots) {
    out.push_back(stacked.middleCols(col, values[s].size()));
    col += values[s].size();
  }
  return out;
}

namespace detail {

struct Linearization {
  Eigen::SparseMatrix<double> hessian;  // J^T J, upper and lower
  Eigen::VectorXd gradient;             // J^T r
  double cost = 0.0;
};

inline Linearization linearize(const NlsProblem& p, const Values& values,
                               const std::vector<Eigen::Index>& offsets) {
  const Eigen::Index n = p.total_dim();
  Linearization lin;
  lin.gradient = Eigen::VectorXd::Zero(n);

  std::map<std::pair<std::size_t, std::size_t>, Eigen::MatrixXd> blocks;
  for (const auto& b : p.blocks) {
    const Eigen::VectorXd r = whitened_residual(b, values);
    lin.cost += r.squaredNorm();
    std::vector<Eigen::MatrixXd> jac = block_jacobians(b, values);
    for (auto& j : jac) j = b.sqrt_info * j;
    for (std::size_t u = 0; u < b.slots.size(); ++u) {
      const std::size_t su = b.slots[u];
      lin.gradient.segment(offsets[su], p.slot_dims[su]) += jac[u].transpose() * r;
      for (std::size_t v = 0; v < b.slots.size(); ++v) {
        const std::size_t sv = b.slots[v];
        auto [it, inserted] = blocks.try_emplace({su, sv});
        if (inserted) it->second = Eigen::MatrixXd::Zero(p.slot_dims[su], p.slot_dims[sv]);
        it->second += jac[u].transpose() * jac[v];
      }
    }
  }

  // Dense slot blocks and an explicit diagonal keep the sparsity pattern fixed
  // across iterations, so the symbolic factorisation can be reused.
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < n; ++i) triplets.emplace_back(i, i, 0.0);
  for (const auto& [key, m] : blocks) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        triplets.emplace_back(offsets[key.first] + r, offsets[key.second] + c, m(r, c));
      }
    }
  }
  lin.hessian.resize(n, n);
  lin.hessian.setFromTriplets(triplets.begin(), triplets.end());
  return lin;
}

template <class Llt>
void refine(const NlsProblem& p, const std::vector<Eigen::Index>& offsets, Llt& llt, bool& pattern_ready,
            const LmConfig& cfg, SolveReport& rep) {
  double previous = cfg.refine_bound;
  for (int k = 0; k < cfg.refine_steps; ++k) {
    Linearization lin = linearize(p, rep.values, offsets);
    ++rep.jacobian_evaluations;
    if (lin.gradient.size() == 0) return;
    if (!pattern_ready) {
      llt.analyzePattern(lin.hessian);
      pattern_ready = true;
    }
    llt.factorize(lin.hessian);
    if (llt.info() != Eigen::Success) return;
    const Eigen::VectorXd delta = llt.solve(-lin.gradient);
    const double step = delta.lpNorm<Eigen::Infinity>();
    if (!(step < previous)) return;
    Values next = rep.values;
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += delta.segment(offsets[i], p.slot_dims[i]);
    try {
      rep.final_cost = total_cost(p, next);
    } catch (const EvaluationError&) {
      return;
    }
    rep.values = std::move(next);
    ++rep.refinement_steps;
    previous = step;
    if (step < 1e-12) return;
  }
}

}  // namespace detail

/// Levenberg-Marquardt with multiplicative damping: a step is accepted iff it
/// lowers the cost (lambda /= 10), otherwise lambda *= 10. The problem is
/// re-linearised after every accepted step. The cost trace is carried forward
/// by the per-residual decrease.
inline SolveReport solve_lm(const NlsProblem& p, const LmConfig& cfg = {}) {
  p.validate();

  std::vector<Eigen::Index> offsets(p.slot_dims.size());
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < p.slot_dims.size(); ++i) {
    offsets[i] = n;
    n += p.slot_dims[i];
  }

  SolveReport rep;
  rep.values = p.initial_values;
  rep.initial_cost = total_cost(p, rep.values);
  rep.final_cost = rep.initial_cost;
  rep.cost_trace.push_back(rep.initial_cost);

  std::vector<Eigen::VectorXd> residuals = detail::whitened_residuals(p, rep.values);
  double cost = rep.initial_cost;
  double lambda = cfg.lambda_init;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;
  bool pattern_ready = false;

  while (true) {
    detail::Linearization lin = detail::linearize(p, rep.values, offsets);
    ++rep.jacobian_evaluations;

    if (lin.gradient.size() == 0 || lin.gradient.lpNorm<Eigen::Infinity>() < cfg.gtol) {
      rep.converged = true;
      rep.message = "gradient below tolerance";
      break;
    }
    if (rep.iterations >= cfg.max_iters) {
      rep.message = "iteration limit reached";
      break;
    }

    const Eigen::VectorXd diag = lin.hessian.diagonal();
    bool accepted = false;
    bool any_factorized = false;
    double decrease = 0.0;
    Values trial;
    std::vector<Eigen::VectorXd> trial_residuals;
    while (lambda <= cfg.lambda_max) {
      Eigen::SparseMatrix<double> damped = lin.hessian;
      for (Eigen::Index i = 0; i < n; ++i) damped.coeffRef(i, i) += lambda * diag[i];
      if (!pattern_ready) {
        llt.analyzePattern(damped);
        pattern_ready = true;
      }
      llt.factorize(damped);
      if (llt.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      any_factorized = true;
      const Eigen::VectorXd delta = llt.solve(-lin.gradient);

      trial = rep.values;
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] += delta.segment(offsets[i], p.slot_dims[i]);

      bool evaluated = true;
      try {
        trial_residuals = detail::whitened_residuals(p, trial);
      } catch (const EvaluationError&) {
        evaluated = false;
      }
      if (evaluated) {
        decrease = detail::cost_decrease(residuals, trial_residuals);
        if (decrease > 0.0 && std::isfinite(decrease)) {
          accepted = true;
          lambda = std::max(lambda / 10.0, 1e-15);
          break;
        }
      }
      lambda *= 10.0;
    }

    if (!accepted) {
      if (!any_factorized) {
        throw SolverError("solve_lm: normal equations singular up to lambda_max (" +
                          std::to_string(n) + " unknowns)");
      }
      // No descent direction left at working precision.
      rep.converged = true;
      rep.message = "no further decrease";
      break;
    }

    const double previous = cost;
    cost = std::max(cost - decrease, 0.0);
    rep.values = std::move(trial);
    residuals = std::move(trial_residuals);
    rep.final_cost = cost;
    rep.cost_trace.push_back(cost);
    rep.decreases.push_back(decrease);
    ++rep.iterations;

    if (decrease <= cfg.tol * previous) {
      rep.converged = true;
      rep.message = "relative cost change below tolerance";
      break;
    }
  }
  if (rep.converged) detail::refine(p, offsets, llt, pattern_ready, cfg, rep);
  return rep;
}

}  // namespace gnssfuse
