#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "gnssfuse/residual_analysis.hpp"
#include "support.hpp"

using namespace gnssfuse;

TEST(Error2d, ThreeFourFive) {
  const Geodetic ref = testsupport::hong_kong();
  const Vec3 truth = geodetic_to_ecef(ref);
  const Vec3 est = enu_to_ecef(ref, {3.0, 4.0, 0.0});
  EXPECT_NEAR(error_2d(est, truth, ref), 5.0, 1e-9);
}

TEST(Error2d, IgnoresVertical) {
  const Geodetic ref = testsupport::hong_kong();
  const Vec3 truth = geodetic_to_ecef(ref);
  EXPECT_NEAR(error_2d(enu_to_ecef(ref, {0.0, 0.0, 25.0}), truth, ref), 0.0, 1e-9);
  EXPECT_NEAR(error_2d(enu_to_ecef(ref, {-6.0, 8.0, -40.0}), truth, ref), 10.0, 1e-9);
}

TEST(LcResidual, Euclidean) {
  EXPECT_DOUBLE_EQ(lc_residual(Vec3(1, 2, 2), Vec3::Zero()), 3.0);
  EXPECT_DOUBLE_EQ(lc_residual(Vec3(5, 5, 5), Vec3(5, 5, 5)), 0.0);
}

TEST(TcResidual, MeanOfSignedResiduals) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  auto sats = testsupport::good_geometry(rx, 10.0, -3.0);
  const StateLayout layout = StateLayout::for_coupling(Coupling::kTight);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.dim());
  x.head<3>() = rx;
  x[9] = 10.0;
  x[10] = -3.0;
  EXPECT_NEAR(tc_residual(sats, layout, x), 0.0, 1e-6);
  // Offsets of +2 and -1 alternate, mean is (2 - 1) / 2 over an even count.
  for (std::size_t i = 0; i < sats.size(); ++i) sats[i].pseudorange += i % 2 == 0 ? 2.0 : -1.0;
  EXPECT_NEAR(tc_residual(sats, layout, x), 0.5, 1e-6);
  EXPECT_THROW(tc_residual(std::vector<SatObservation>{}, layout, x), DomainError);
}

TEST(Summarize, SmallExample) {
  std::vector<EpochRecord> r(4);
  const double errs[] = {1.0, 2.0, 3.0, 4.0};
  for (int i = 0; i < 4; ++i) {
    r[static_cast<std::size_t>(i)].err_2d = errs[i];
    r[static_cast<std::size_t>(i)].solve_time = 0.25;
  }
  const Summary s = summarize(r);
  EXPECT_DOUBLE_EQ(s.mean_err, 2.5);
  EXPECT_DOUBLE_EQ(s.std_err, std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(s.total_time, 1.0);
  EXPECT_EQ(s.epochs, 4u);
}

TEST(Summarize, MatchesTwoPassOracle) {
  std::mt19937_64 rng(41);
  std::exponential_distribution<double> d(0.1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EpochRecord> r(57 + trial);
    std::vector<double> e;
    for (auto& rec : r) {
      rec.err_2d = d(rng);
      e.push_back(rec.err_2d);
    }
    long double m = 0;
    for (double v : e) m += v;
    m /= e.size();
    long double v2 = 0;
    for (double v : e) v2 += (v - m) * (v - m);
    const Summary s = summarize(r);
    EXPECT_NEAR(s.mean_err, static_cast<double>(m), 1e-12);
    EXPECT_NEAR(s.std_err, static_cast<double>(std::sqrt(v2 / e.size())), 1e-12);
  }
}

TEST(Summarize, EmptyIsError) {
  EXPECT_THROW(summarize(std::vector<EpochRecord>{}), DomainError);
}

namespace {

std::vector<double> normal_samples(std::mt19937_64& rng, std::size_t n, double mean, double std) {
  std::normal_distribution<double> d(mean, std);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

std::vector<double> mixture_samples(std::mt19937_64& rng, std::size_t n, const std::vector<GmmComponent>& comps) {
  std::vector<double> w;
  for (const auto& c : comps) w.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<double> x(n);
  for (auto& v : x) {
    const auto& c = comps[pick(rng)];
    v = std::normal_distribution<double>(c.mean, c.std)(rng);
  }
  return x;
}

}  // namespace

TEST(Gmm, SingleComponentStandardNormal) {
  std::mt19937_64 rng(42);
  const auto x = normal_samples(rng, 20000, 0.0, 1.0);
  const GmmModel m = fit_gmm(x, 1);
  ASSERT_EQ(m.components.size(), 1u);
  EXPECT_NEAR(m.components[0].mean, 0.0, 0.05);
  EXPECT_NEAR(m.components[0].std, 1.0, 0.05);
  EXPECT_DOUBLE_EQ(m.components[0].weight, 1.0);
}

TEST(Gmm, SingleComponentEqualsSampleMoments) {
  std::mt19937_64 rng(43);
  const auto x = normal_samples(rng, 777, 12.0, 4.0);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const GmmModel m = fit_gmm(x, 1);
  EXPECT_NEAR(m.components[0].mean, mean, 1e-9);
  EXPECT_NEAR(m.components[0].std, std::sqrt(var), 1e-9);
}

TEST(Gmm, RecoversThreeComponents) {
  const std::vector<GmmComponent> truth = {{0.2, -5.0, 2.0}, {0.5, 0.0, 3.0}, {0.3, 40.0, 15.0}};
  std::mt19937_64 rng(44);
  const auto x = mixture_samples(rng, 20000, truth);
  const GmmModel m = fit_gmm(x, 3);
  ASSERT_EQ(m.components.size(), 3u);
  const auto match = match_components(truth, m.components);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    EXPECT_NEAR(m.components[match[i]].mean, truth[i].mean, 1.0) << "component " << i;
  }

  // The two overlapping components share mass slowly; the default iteration
  // cap stops early, so weights are only checked once EM has converged.
  GmmConfig cfg;
  cfg.max_iters = 10000;
  const GmmFit full = fit_gmm_trace(x, 3, cfg);
  ASSERT_TRUE(full.converged);
  const auto fm = match_components(truth, full.model.components);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& f = full.model.components[fm[i]];
    EXPECT_NEAR(f.mean, truth[i].mean, 0.5) << "component " << i;
    EXPECT_NEAR(f.weight, truth[i].weight, 0.02) << "component " << i;
    EXPECT_NEAR(f.std, truth[i].std, 0.5) << "component " << i;
  }
  EXPECT_GT(full.log_likelihood_trace.back(), GmmModel{truth}.log_likelihood(x));
}

TEST(Gmm, LogLikelihoodNonDecreasing) {
  std::mt19937_64 rng(45);
  const auto x = mixture_samples(rng, 3000, {{0.6, 0.0, 2.0}, {0.4, 25.0, 10.0}});
  for (int k = 1; k <= 4; ++k) {
    const GmmFit fit = fit_gmm_trace(x, k);
    for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i) {
      EXPECT_GE(fit.log_likelihood_trace[i], fit.log_likelihood_trace[i - 1] - 1e-12 * std::abs(fit.log_likelihood_trace[i - 1]))
          << "k=" << k << " iter " << i;
    }
  }
}

TEST(Gmm, InvariantToSampleOrder) {
  std::mt19937_64 rng(46);
  auto x = mixture_samples(rng, 2000, {{0.5, -3.0, 1.0}, {0.5, 10.0, 4.0}});
  const GmmModel a = fit_gmm(x, 2);
  std::shuffle(x.begin(), x.end(), rng);
  const GmmModel b = fit_gmm(x, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(a.components[j].mean, b.components[j].mean, 1e-12);
    EXPECT_NEAR(a.components[j].std, b.components[j].std, 1e-12);
    EXPECT_NEAR(a.components[j].weight, b.components[j].weight, 1e-12);
  }
}

TEST(Gmm, WeightsOnSimplexAndSortedMeans) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = normal_samples(rng, 500, 0.0, 5.0);
    for (int k = 1; k <= 5; ++k) {
      const GmmModel m = fit_gmm(x, k);
      double sum = 0.0;
      for (const auto& c : m.components) {
        EXPECT_GE(c.weight, 0.0);
        EXPECT_GT(c.std, 0.0);
        sum += c.weight;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      for (std::size_t j = 1; j < m.components.size(); ++j) {
        EXPECT_LE(m.components[j - 1].mean, m.components[j].mean);
      }
    }
  }
}

TEST(Gmm, Errors) {
  const std::vector<double> two = {1.0, 1.0, 2.0, 2.0};
  EXPECT_THROW(fit_gmm(two, 3), DomainError);
  EXPECT_THROW(fit_gmm(two, 0), DomainError);
  EXPECT_THROW(fit_gmm(std::vector<double>{}, 1), DomainError);
  EXPECT_THROW(fit_gmm(std::vector<double>{1.0, std::nan("")}, 1), DomainError);
  EXPECT_NO_THROW(fit_gmm(two, 2));
}

TEST(MatchComponents, PicksMinimumMeanDistance) {
  const std::vector<GmmComponent> ref = {{0.3, 0.0, 1.0}, {0.3, 10.0, 1.0}, {0.4, 40.0, 1.0}};
  const std::vector<GmmComponent> fit = {{0.4, 38.0, 1.0}, {0.3, 1.0, 1.0}, {0.3, 9.0, 1.0}};
  const auto m = match_components(ref, fit);
  EXPECT_EQ(m, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_THROW(match_components(ref, std::vector<GmmComponent>(2)), DomainError);
}
