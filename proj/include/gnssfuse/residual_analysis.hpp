#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gnssfuse/errors.hpp"
#include "gnssfuse/frames.hpp"
#include "gnssfuse/types.hpp"

namespace gnssfuse {

/// One row of a run's per-epoch output.
struct EpochRecord {
  int epoch = 0;
  double time = 0.0;
  Vec3 est_pos = Vec3::Zero();
  Vec3 truth_pos = Vec3::Zero();
  double east_err = 0.0;
  double north_err = 0.0;
  double err_2d = 0.0;
  double residual = 0.0;
  double solve_time = 0.0;
};

/// Horizontal (east/north) error in the ENU frame at `ref`.
inline double error_2d(const Vec3& est, const Vec3& truth, const Geodetic& ref) {
  const Vec3 d = rotation_global_from_local(ref).transpose() * (est - truth);
  return std::hypot(d.x(), d.y());
}

/// |fix - p*|.
inline double lc_residual(const Vec3& fix, const Vec3& optimized_pos) {
  return (fix - optimized_pos).norm();
}

/// Signed mean of raw pseudorange residuals rho_i - h(x*).
inline double tc_residual(std::span<const SatObservation> sats, const StateLayout& layout,
                          const Eigen::VectorXd& state) {
  if (sats.empty()) throw DomainError("tc_residual: no satellites");
  double sum = 0.0;
  for (const auto& s : sats) {
    sum += s.pseudorange - ((s.sat_pos - state.segment<3>(StateLayout::kPos)).norm() +
                            state[layout.clock_index(s.constellation)]);
  }
  return sum / static_cast<double>(sats.size());
}

struct Summary {
  double mean_err = 0.0;
  double std_err = 0.0;  // population
  double total_time = 0.0;
  std::size_t epochs = 0;
};

inline Summary summarize(std::span<const EpochRecord> records) {
  if (records.empty()) throw DomainError("summarize: no records");
  Summary s;
  s.epochs = records.size();
  const double n = static_cast<double>(records.size());
  for (const auto& r : records) {
    s.mean_err += r.err_2d;
    s.total_time += r.solve_time;
  }
  s.mean_err /= n;
  double var = 0.0;
  for (const auto& r : records) var += (r.err_2d - s.mean_err) * (r.err_2d - s.mean_err);
  s.std_err = std::sqrt(var / n);
  return s;
}

// --- Gaussian mixtures -------------------------------------------------------

struct GmmComponent {
  double weight = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

struct GmmModel {
  std::vector<GmmComponent> components;  // sorted by mean

  [[nodiscard]] double log_likelihood(std::span<const double> samples) const;
};

struct GmmConfig {
  double tol = 1e-6;
  int max_iters = 200;
  double std_floor = 1e-3;
};

struct GmmFit {
  GmmModel model;
  std::vector<double> log_likelihood_trace;  // after initialisation, then per iteration
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double log_normal_pdf(double x, double mean, double std) {
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - kLogSqrt2Pi;
}

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

inline double GmmModel::log_likelihood(std::span<const double> samples) const {
  std::vector<double> terms(components.size());
  double ll = 0.0;
  for (double x : samples) {
    for (std::size_t j = 0; j < components.size(); ++j) {
      terms[j] = std::log(components[j].weight) + detail::log_normal_pdf(x, components[j].mean, components[j].std);
    }
    ll += detail::log_sum_exp(terms);
  }
  return ll;
}

/// Expectation-maximisation for a 1-D mixture of k Gaussians.
///
/// Initialisation is deterministic: means at the k quantiles (j + 1/2)/k of the
/// sorted samples, the global standard deviation for every component, and
/// uniform weights. Samples are sorted first, so input order has no effect.
inline GmmFit fit_gmm_trace(std::span<const double> samples, int k, const GmmConfig& cfg = {}) {
  if (k < 1) throw DomainError("fit_gmm: k must be >= 1");
  std::vector<double> x(samples.begin(), samples.end());
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("fit_gmm: non-finite sample");
  }
  std::sort(x.begin(), x.end());
  std::size_t n_distinct = x.empty() ? 0 : 1;
  for (std::size_t i = 1; i < x.size(); ++i) n_distinct += x[i] != x[i - 1];
  if (static_cast<int>(n_distinct) < k) throw DomainError("fit_gmm: fewer distinct samples than components");

  const std::size_t n = x.size();
  const auto kk = static_cast<std::size_t>(k);
  const double mean_all = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double var_all = 0.0;
  for (double v : x) var_all += (v - mean_all) * (v - mean_all);
  const double std_all = std::max(std::sqrt(var_all / static_cast<double>(n)), cfg.std_floor);

  GmmFit fit;
  auto& comps = fit.model.components;
  comps.resize(kk);
  for (std::size_t j = 0; j < kk; ++j) {
    const double q = (static_cast<double>(j) + 0.5) / static_cast<double>(k);
    const auto idx = std::min(n - 1, static_cast<std::size_t>(q * static_cast<double>(n)));
    comps[j] = {1.0 / static_cast<double>(k), x[idx], std_all};
  }

  std::vector<double> resp(n * kk);
  std::vector<double> terms(kk);
  auto e_step = [&]() {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < kk; ++j) {
        terms[j] = std::log(comps[j].weight) + detail::log_normal_pdf(x[i], comps[j].mean, comps[j].std);
      }
      const double lse = detail::log_sum_exp(terms);
      ll += lse;
      for (std::size_t j = 0; j < kk; ++j) resp[i * kk + j] = std::exp(terms[j] - lse);
    }
    return ll;
  };

  double ll = e_step();
  fit.log_likelihood_trace.push_back(ll);
  for (int it = 0; it < cfg.max_iters; ++it) {
    for (std::size_t j = 0; j < kk; ++j) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * kk + j];
        sx += resp[i * kk + j] * x[i];
      }
      if (nk <= 0.0) continue;  // empty component keeps its parameters
      const double mu = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) sv += resp[i * kk + j] * (x[i] - mu) * (x[i] - mu);
      comps[j].weight = nk / static_cast<double>(n);
      comps[j].mean = mu;
      comps[j].std = std::max(std::sqrt(sv / nk), cfg.std_floor);
    }
    double wsum = 0.0;
    for (const auto& c : comps) wsum += c.weight;
    for (auto& c : comps) c.weight /= wsum;

    const double next = e_step();
    fit.log_likelihood_trace.push_back(next);
    ++fit.iterations;
    const bool done = std::abs(next - ll) < cfg.tol;
    ll = next;
    if (done) {
      fit.converged = true;
      break;
    }
  }

  std::sort(comps.begin(), comps.end(), [](const GmmComponent& a, const GmmComponent& b) { return a.mean < b.mean; });
  return fit;
}

inline GmmModel fit_gmm(std::span<const double> samples, int k, const GmmConfig& cfg = {}) {
  return fit_gmm_trace(samples, k, cfg).model;
}

/// Minimum total |delta mean| assignment of fitted to reference components by
/// exhaustive search over permutations (k is small). result[i] is the fitted
/// index matched to reference component i.
inline std::vector<std::size_t> match_components(std::span<const GmmComponent> reference,
                                                 std::span<const GmmComponent> fitted) {
  if (reference.size() != fitted.size()) throw DomainError("match_components: size mismatch");
  std::vector<std::size_t> perm(fitted.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += std::abs(reference[i].mean - fitted[perm[i]].mean);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace gnssfuse
