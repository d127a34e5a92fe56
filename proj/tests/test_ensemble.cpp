#include <gtest/gtest.h>

#include <random>

#include "nvmem/ensemble.hpp"

using namespace nvmem;
using namespace nvmem::ensemble;

namespace {

const double gamma_e = angular(-28e9);
const Vec3 ax = Vec3(1, 1, 1).normalized();

double sum_g2(const DiscretizedEnsemble& e) {
  double s = 0;
  for (std::size_t j = 0; j < e.size(); ++j) s += e.coupling(j) * e.coupling(j);
  return s;
}

FieldMap uniform_map(const Vec3& b, std::size_t n, std::size_t in_sample) {
  FieldMap m;
  for (std::size_t k = 0; k < n; ++k) {
    m.positions.emplace_back(double(k), 0, 0);
    m.delta_b0.push_back(b);
    m.in_sample.push_back(k < in_sample);
  }
  m.crystal_axes = {Vec3(0, 0, 1)};
  return m;
}

}  // namespace

TEST(SingleSpinCoupling, PerpendicularVacuumField) {
  const Vec3 perp = ax.unitOrthogonal();
  const double g = single_spin_coupling(0.4e-9 * perp, ax, gamma_e);
  // 28e9 * 0.4e-9 / sqrt(2) Hz
  EXPECT_NEAR(hertz(g), 7.91959594928933, 1e-9);
}

TEST(SingleSpinCoupling, ParallelZeroAndLinear) {
  EXPECT_NEAR(single_spin_coupling(1e-9 * ax, ax, gamma_e), 0.0, 1e-12);
  EXPECT_EQ(single_spin_coupling(Vec3::Zero(), ax, gamma_e), 0.0);
  const Vec3 b(1e-9, -2e-9, 0.5e-9);
  EXPECT_DOUBLE_EQ(single_spin_coupling(2 * b, ax, gamma_e), 2 * single_spin_coupling(b, ax, gamma_e));
  EXPECT_THROW(single_spin_coupling(b, Vec3(1, 1, 0), gamma_e), InvalidInput);
}

TEST(FillingFactors, FullOverlapAndHalfSample) {
  auto m = uniform_map(Vec3(1e-9, 0, 0), 10, 10);
  auto f = filling_factors(m);
  EXPECT_DOUBLE_EQ(f.alpha, 1.0);
  EXPECT_DOUBLE_EQ(f.eta, 1.0);
  m = uniform_map(Vec3(1e-9, 0, 0), 10, 5);
  f = filling_factors(m);
  EXPECT_DOUBLE_EQ(f.eta, 0.5);
}

TEST(FillingFactors, FortyFiveDegreesGivesHalfAndScaleInvariance) {
  auto m = uniform_map(Vec3(1e-9, 0, 1e-9), 8, 4);
  auto f = filling_factors(m);
  EXPECT_NEAR(f.alpha, 0.5, 1e-15);

  std::mt19937 rng(3);
  std::normal_distribution<double> n(0, 1);
  FieldMap r;
  for (int k = 0; k < 50; ++k) {
    r.positions.emplace_back(k, 0, 0);
    r.delta_b0.emplace_back(n(rng), n(rng), n(rng));
    r.in_sample.push_back(k % 3 != 0);
  }
  r.crystal_axes = {Vec3(1, 1, 1).normalized(), Vec3(1, -1, -1).normalized()};
  const auto a = filling_factors(r);
  for (auto& b : r.delta_b0) b *= 37.5;
  const auto c = filling_factors(r);
  EXPECT_NEAR(a.alpha, c.alpha, 1e-14);
  EXPECT_NEAR(a.eta, c.eta, 1e-14);
  EXPECT_GT(a.alpha, 0.0);
  EXPECT_LE(a.alpha, 1.0);
  EXPECT_GT(a.eta, 0.0);
  EXPECT_LE(a.eta, 1.0);
}

TEST(FillingFactors, RejectsEmptySample) {
  auto m = uniform_map(Vec3(1e-9, 0, 0), 4, 0);
  EXPECT_THROW(filling_factors(m), InvalidInput);
}

TEST(EnsembleCoupling, MatchesHandArithmetic) {
  // 28e9 Hz/T * sqrt(4 pi 1e-7 * 1.0546e-34 * 2 pi 2.88e9 * 1e24 / 4), from literals
  const double pi = 3.141592653589793;
  const double expect_hz = 28e9 * std::sqrt(1.25663706212e-6 * 1.054571817e-34 * 2 * pi * 2.88e9 * 1e24 / 4.0);
  const double g = ensemble_coupling(1e24, angular(2.88e9), 1.0, 1.0, gamma_e);
  EXPECT_NEAR(hertz(g) / expect_hz, 1.0, 1e-12);
  EXPECT_NEAR(hertz(g), 21.7e6, 0.05e6);
  EXPECT_NEAR(hertz(ensemble_coupling(1e24, angular(2.88e9), 0.5, 0.5, gamma_e)), 10.8e6, 0.1e6);
  EXPECT_NEAR(ensemble_coupling(4e24, angular(2.88e9), 1, 1, gamma_e) / g, 2.0, 1e-12);
}

TEST(EnsembleCoupling, MonotoneInEachArgument) {
  const double base = ensemble_coupling(1e24, 1e10, 0.5, 0.5, gamma_e);
  EXPECT_GT(ensemble_coupling(2e24, 1e10, 0.5, 0.5, gamma_e), base);
  EXPECT_GT(ensemble_coupling(1e24, 2e10, 0.5, 0.5, gamma_e), base);
  EXPECT_GT(ensemble_coupling(1e24, 1e10, 0.6, 0.5, gamma_e), base);
  EXPECT_GT(ensemble_coupling(1e24, 1e10, 0.5, 0.6, gamma_e), base);
  EXPECT_THROW(ensemble_coupling(1e24, 1e10, 1.5, 0.5, gamma_e), InvalidInput);
  EXPECT_THROW(ensemble_coupling(-1, 1e10, 0.5, 0.5, gamma_e), InvalidInput);
}

TEST(Discretize, SingleBin) {
  SpectralDensity d{LineShape::lorentzian, angular(1e6), angular(2.88e9)};
  const auto e = discretize(d, 5.0, 1, 10);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_DOUBLE_EQ(e.coupling(0), 5.0);
  EXPECT_DOUBLE_EQ(e.omega[0], angular(2.88e9));
  EXPECT_EQ(e.bin_spacing(), 0.0);
}

TEST(Discretize, NormalisationAndOrdering) {
  for (auto shape : {LineShape::lorentzian, LineShape::gaussian}) {
    SpectralDensity d{shape, angular(0.8e6), angular(2.88e9)};
    const double g = angular(2.9e6);
    const auto e = discretize(d, g, 1001, 50, 0.9, 1e5);
    EXPECT_NEAR(sum_g2(e) / (0.9 * g * g), 1.0, 1e-10);
    EXPECT_NEAR(e.g_ens() / (std::sqrt(0.9) * g), 1.0, 1e-12);
    EXPECT_TRUE(std::is_sorted(e.omega.begin(), e.omega.end()));
    EXPECT_DOUBLE_EQ(e.gamma_perp, 1e5);
  }
}

TEST(Discretize, HyperfineCombsCarryEqualMass) {
  const double off = angular(2.17e6);
  SpectralDensity d{LineShape::lorentzian, angular(0.8e6), 0.0, {{-off, 1.0 / 3}, {0.0, 1.0 / 3}, {off, 1.0 / 3}}};
  const auto e = discretize(d, 1.0, 301, 8);
  ASSERT_EQ(e.size(), 903u);
  // three sub-combs interleave; the mass within +/- half-spacing of each centre is equal
  std::array<double, 3> mass{};
  for (std::size_t j = 0; j < e.size(); ++j) {
    const double w = e.omega[j];
    const int c = w < -0.5 * off ? 0 : (w > 0.5 * off ? 2 : 1);
    mass[c] += e.coupling(j) * e.coupling(j);
  }
  EXPECT_NEAR(mass[0], mass[2], 1e-12);
  EXPECT_NEAR(mass[0] + mass[1] + mass[2], 1.0, 1e-12);
}

TEST(Discretize, RejectsBadInput) {
  SpectralDensity d{LineShape::lorentzian, angular(1e6), 0.0};
  EXPECT_THROW(discretize(d, 1.0, 0, 10), InvalidInput);
  EXPECT_THROW(discretize(d, 1.0, 10, 3), InvalidInput);
  SpectralDensity w = d;
  w.hf_offsets = {{0.0, 0.5}, {1.0, 0.4}};
  EXPECT_THROW(discretize(w, 1.0, 10, 10), InvalidInput);
  SpectralDensity z = d;
  z.gamma_hwhm = 0.0;
  EXPECT_THROW(discretize(z, 1.0, 10, 10), InvalidInput);
}

TEST(Polarization, ScalesCouplingSquared) {
  SpectralDensity d{LineShape::lorentzian, angular(1e6), 0.0};
  const auto e = discretize(d, 10.0, 51, 10);
  EXPECT_NEAR(e.with_polarization(0.9).g_ens(), 10.0 * std::sqrt(0.9), 1e-12);
  EXPECT_EQ(e.with_polarization(0.0).g_ens(), 0.0);
  EXPECT_THROW(e.with_polarization(1.2), InvalidInput);
}

TEST(BrightMode, ZeroUnitAndBruteForce) {
  SpectralDensity d{LineShape::gaussian, angular(1e6), 0.0};
  const auto e = discretize(d, 7.0, 64, 6, 0.8);
  std::vector<cplx> s(e.size(), 0.0);
  EXPECT_EQ(bright_mode_amplitude(e, s), cplx(0.0));
  for (std::size_t j = 0; j < e.size(); ++j) s[j] = e.coupling(j) / e.g_ens();
  EXPECT_NEAR(std::abs(bright_mode_amplitude(e, s) - 1.0), 0.0, 1e-14);

  std::mt19937 rng(5);
  std::normal_distribution<double> n(0, 1);
  long double re = 0, im = 0, norm = 0;
  for (std::size_t j = 0; j < e.size(); ++j) {
    s[j] = cplx(n(rng), n(rng));
    const long double gj = std::sqrt(0.8L) * e.g_full[j];
    re += gj * s[j].real();
    im += gj * s[j].imag();
    norm += gj * gj;
  }
  const cplx expect(double(re / std::sqrt(norm)), double(im / std::sqrt(norm)));
  EXPECT_NEAR(std::abs(bright_mode_amplitude(e, s) - expect), 0.0, 1e-12);

  EXPECT_THROW(bright_mode_amplitude(e, std::vector<cplx>(3)), InvalidInput);
  EXPECT_THROW(bright_mode_amplitude(e.with_polarization(0.0), s), InvalidInput);
}
