#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "gnssfuse/noise_models.hpp"
#include "support.hpp"

using namespace gnssfuse;
using testsupport::kDeg;

TEST(LcFixCovariance, UnitHdopTenMetre) {
  const CovDiag c = lc_fix_covariance(1.0, 10.0);
  ASSERT_EQ(c.size(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(c[i], 100.0);
}

TEST(LcFixCovariance, ScalesQuadratically) {
  const CovDiag c = lc_fix_covariance(2.0, 10.0);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(c[i], 400.0);
  EXPECT_DOUBLE_EQ(lc_fix_covariance(1.0, 1.0)[0], 1.0);
  for (double h : {0.3, 1.7, 4.2}) EXPECT_NEAR(lc_fix_covariance(2 * h, 10.0)[1], 4 * lc_fix_covariance(h, 10.0)[1], 1e-9);
}

TEST(LcFixCovariance, RejectsNonPositiveHdop) {
  EXPECT_THROW(lc_fix_covariance(0.0, 10.0), DomainError);
  EXPECT_THROW(lc_fix_covariance(-1.0, 10.0), DomainError);
}

TEST(CovDiagTest, RejectsNonPositiveVariance) {
  EXPECT_THROW(CovDiag(Eigen::Vector2d(1.0, 0.0)), DomainError);
  EXPECT_THROW(CovDiag(Eigen::Vector2d(1.0, -2.0)), DomainError);
}

TEST(CovDiagTest, SqrtInfoWhitens) {
  const CovDiag c(Eigen::Vector3d(4.0, 0.25, 9.0));
  const Eigen::MatrixXd w = c.sqrt_info();
  EXPECT_LT((w.transpose() * w - c.matrix().inverse()).cwiseAbs().maxCoeff(), 1e-15);
}

namespace {

// Brute-force HDOP for one constellation from azimuth/elevation directly.
double hdop_oracle(const std::vector<std::pair<double, double>>& azel) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(azel.size()), 4);
  for (std::size_t i = 0; i < azel.size(); ++i) {
    const auto [az, el] = azel[i];
    g.row(static_cast<Eigen::Index>(i)) << -std::sin(az) * std::cos(el), -std::cos(az) * std::cos(el), -std::sin(el), 1.0;
  }
  const Eigen::MatrixXd q = (g.transpose() * g).inverse();
  return std::sqrt(q(0, 0) + q(1, 1));
}

}  // namespace

TEST(Hdop, SymmetricFiveSatelliteGeometry) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  std::vector<std::pair<double, double>> azel = {{0, 90 * kDeg}, {0, 45 * kDeg}, {90 * kDeg, 45 * kDeg},
                                                 {180 * kDeg, 45 * kDeg}, {270 * kDeg, 45 * kDeg}};
  std::vector<SatObservation> sats;
  for (std::size_t i = 0; i < azel.size(); ++i) {
    sats.push_back(testsupport::satellite_at(rx, azel[i].first, azel[i].second, Constellation::kGps, static_cast<int>(i)));
  }
  // Ranges of 20,000 km make the ENU and ECEF frames differ only by the rotation.
  EXPECT_NEAR(compute_hdop(sats, rx), hdop_oracle(azel), 1e-9);
  // Closed form for this geometry: each horizontal axis sees two satellites at cos(45 deg).
  EXPECT_NEAR(compute_hdop(sats, rx), std::sqrt(2.0), 1e-9);
}

TEST(Hdop, CoincidentSatellitesAreSingular) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  std::vector<SatObservation> sats(4, testsupport::satellite_at(rx, 1.0, 0.7, Constellation::kGps, 1));
  EXPECT_THROW(compute_hdop(sats, rx), GeometryError);
}

TEST(Hdop, TooFewSatellites) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  auto sats = testsupport::good_geometry(rx);
  sats.resize(3);
  EXPECT_THROW(compute_hdop(sats, rx), GeometryError);
}

TEST(Hdop, AddingSatelliteNeverIncreases) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> az(0, 2 * M_PI), el(5 * kDeg, 89 * kDeg);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SatObservation> sats;
    for (int i = 0; i < 6; ++i) {
      sats.push_back(testsupport::satellite_at(rx, az(rng), el(rng), i % 2 ? Constellation::kBeiDou : Constellation::kGps, i));
    }
    double before;
    try {
      before = compute_hdop(sats, rx);
    } catch (const GeometryError&) {
      continue;
    }
    sats.push_back(testsupport::satellite_at(rx, az(rng), el(rng), Constellation::kGps, 99));
    EXPECT_LE(compute_hdop(sats, rx), before + 1e-12);
  }
}

TEST(PseudorangeWeight, ZenithAboveThreshold) {
  EXPECT_NEAR(pseudorange_weight(M_PI / 2, 50.0, {}), 1.0, 1e-15);
}

TEST(PseudorangeWeight, ThirtyDegreesAboveThreshold) {
  EXPECT_NEAR(pseudorange_weight(30 * kDeg, 50.0, {}), 0.25, 1e-15);
}

TEST(PseudorangeWeight, ThirtyDegreesBelowThreshold) {
  // Independent evaluation with T=45, a=32, A=30, F=10:
  //   bracket = 10^(5/32) * ((30 / 10^(35/32) - 1) * (-5) / (-35) + 1), W = bracket / sin^2(30 deg)
  const double bracket = std::pow(10.0, 5.0 / 32.0) * ((30.0 / std::pow(10.0, 35.0 / 32.0) - 1.0) * (5.0 / 35.0) + 1.0);
  const double w = bracket / 0.25;
  EXPECT_NEAR(w, 6.892812214565803, 1e-12);
  EXPECT_NEAR(pseudorange_weight(30 * kDeg, 40.0, {}), 1.0 / w, 1e-14);
  EXPECT_NEAR(pseudorange_weight(30 * kDeg, 40.0, {}), 0.14507866584364693, 1e-14);
}

TEST(PseudorangeWeight, RejectsNonPositiveElevation) {
  EXPECT_THROW(pseudorange_weight(0.0, 45.0, {}), DomainError);
  EXPECT_THROW(pseudorange_weight(-0.1, 45.0, {}), DomainError);
}

TEST(PseudorangeWeight, WeightNonIncreasingInElevation) {
  for (double snr : {20.0, 35.0, 44.9, 45.0, 52.0}) {
    double prev_w = std::numeric_limits<double>::infinity();
    for (double el = 1.0; el <= 90.0; el += 0.5) {
      const double w = 1.0 / pseudorange_weight(el * kDeg, snr, {});
      EXPECT_LE(w, prev_w * (1 + 1e-12)) << "snr=" << snr << " el=" << el;
      prev_w = w;
    }
  }
}

TEST(PseudorangeWeight, BelowThresholdBracketExceedsOne) {
  for (double snr = 0.0; snr < 45.0; snr += 0.25) {
    for (double el : {5.0, 30.0, 60.0, 90.0}) {
      const double s2 = std::pow(std::sin(el * kDeg), 2);
      EXPECT_LT(pseudorange_weight(el * kDeg, snr, {}), s2) << "snr=" << snr << " el=" << el;
    }
  }
}

TEST(TcCovariance, SingleZenithSatellite) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  std::vector<SatObservation> sats = {testsupport::satellite_at(rx, 0, M_PI / 2, Constellation::kGps, 1, 0.0, 48.0)};
  const CovDiag c = tc_covariance(sats, {});
  ASSERT_EQ(c.size(), 1);
  EXPECT_NEAR(c[0], 1.0, 1e-15);
}

TEST(TcCovariance, EmptyIsError) {
  EXPECT_THROW(tc_covariance(std::vector<SatObservation>{}, {}), DomainError);
}

TEST(TcCovariance, PermutationEquivariant) {
  const Vec3 rx = geodetic_to_ecef(testsupport::hong_kong());
  auto sats = testsupport::good_geometry(rx);
  for (std::size_t i = 0; i < sats.size(); ++i) sats[i].snr = 30.0 + 3.0 * static_cast<double>(i);
  const CovDiag a = tc_covariance(sats, {});
  std::vector<std::size_t> perm = {3, 0, 7, 1, 6, 2, 5, 4};
  std::vector<SatObservation> shuffled;
  for (auto i : perm) shuffled.push_back(sats[i]);
  const CovDiag b = tc_covariance(shuffled, {});
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b[static_cast<Eigen::Index>(i)], a[static_cast<Eigen::Index>(perm[i])]);
}

TEST(FixedCovariances, MotionAndIns) {
  const CovDiag mm = motion_model_cov();
  ASSERT_EQ(mm.size(), 6);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(mm[i], 0.09, 1e-15);
  for (int i = 3; i < 6; ++i) EXPECT_NEAR(mm[i], 1e-4, 1e-18);
  const CovDiag ins = ins_cov();
  ASSERT_EQ(ins.size(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(ins[i], 0.0225, 1e-15);
  EXPECT_EQ(motion_model_cov().variances(), mm.variances());
}

TEST(WeightingParamsTest, Validation) {
  WeightingParams p;
  EXPECT_NO_THROW(p.validate());
  p.F = p.snr_threshold;
  EXPECT_THROW(p.validate(), DomainError);
  p = {};
  p.a = 0.0;
  EXPECT_THROW(p.validate(), DomainError);
  p = {};
  p.user_range_error = -1.0;
  EXPECT_THROW(p.validate(), DomainError);
}
