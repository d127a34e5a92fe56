#include <gtest/gtest.h>

#include <random>

#include "nvmem/dynamics.hpp"
#include "oracles.hpp"

using namespace nvmem;
using namespace nvmem::dynamics;
using ensemble::discretize;
using ensemble::LineShape;
using ensemble::SpectralDensity;

namespace {

const double ws = angular(2.88e9);

DiscretizedEnsemble single_bin(double g) {
  return discretize(SpectralDensity{LineShape::lorentzian, angular(1e6), ws}, g, 1, 10);
}

DiscretizedEnsemble lorentz(double g, double hwhm, int m, double span, double gamma_perp = 0.0) {
  return discretize(SpectralDensity{LineShape::lorentzian, hwhm, ws}, g, m, span, 1.0, gamma_perp);
}

ControlSchedule free_run(double t_end, double omega_r, double kappa, bool parked = false) {
  ControlSchedule s;
  s.t_end = t_end;
  s.segments = {{0.0, t_end, omega_r, kappa, parked}};
  return s;
}

ModeSystem cavity_excited(const DiscretizedEnsemble& e, cplx a = 1.0) {
  auto x = ground_state(e);
  x.a = a;
  return x;
}

double max_rel_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double scale = 0.0, d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    scale = std::max(scale, std::abs(b[k]));
    d = std::max(d, std::abs(a[k] - b[k]));
  }
  return d / scale;
}

}  // namespace

TEST(Propagate, VacuumRabiOscillationSingleBin) {
  const double g = angular(2.9e6);
  const auto e = single_bin(g);
  const double dt = 0.02 / g;
  const auto tr = propagate(e, free_run(400e-9, ws, 0.0), cavity_excited(e), dt);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const double c = std::cos(g * tr.t[k]);
    EXPECT_NEAR(std::norm(tr.a[k]), c * c, 1e-10);
  }
  // first zero at pi / (2 g) = 86.2 ns
  EXPECT_NEAR(M_PI / (2 * g) * 1e9, 86.2, 0.05);
}

TEST(Propagate, ZeroStateStaysZero) {
  const auto e = lorentz(angular(3e6), angular(1e6), 101, 10, 1e5);
  const auto tr = propagate(e, free_run(1e-6, ws, 1e6), ground_state(e), 1e-9);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    EXPECT_EQ(tr.a[k], cplx(0.0));
    EXPECT_EQ(tr.total_excitation[k], 0.0);
  }
}

TEST(Propagate, SplitIntegratorMatchesDenseExponential) {
  // detuned, lossy, driven, with a control switch and an inverted stretch
  const auto e = discretize(SpectralDensity{LineShape::gaussian, angular(1.5e6), ws,
                                            {{-angular(2.17e6), 0.3}, {0.0, 0.4}, {angular(2.17e6), 0.3}}},
                            angular(4e6), 21, 6, 0.9, 2e5);
  ControlSchedule s;
  s.t_end = 600e-9;
  s.segments = {{0, 250e-9, ws + angular(1e6), 2e6}, {250e-9, 600e-9, ws - angular(3e6), 8e6}};
  s.drive = {{100e-9, 20e-9, 300.0, 0.4}};
  s.refocus = {{300e-9, {M_PI}, 0.2}};
  const double dt = 0.8 * max_time_step(e, s);
  for (bool inversion : {false, true}) {
    s.track_inversion = inversion;
    PropagateOptions split, dense;
    dense.integrator = Integrator::dense_expm;
    const auto a = propagate(e, s, cavity_excited(e, {0.3, -0.2}), dt, split);
    const auto b = propagate(e, s, cavity_excited(e, {0.3, -0.2}), dt, dense);
    EXPECT_LT(max_rel_diff(a.a, b.a), 1e-8 * static_cast<double>(a.size()));
    EXPECT_LT(max_rel_diff(a.bright, b.bright), 1e-8 * static_cast<double>(a.size()));
    EXPECT_EQ(a.final_state.inverted, inversion);
  }
}

TEST(Propagate, SplitSingleStepErrorBelowOneInOneHundredMillion) {
  const auto e = lorentz(angular(5e6), angular(2e6), 41, 8, 1e5);
  ControlSchedule s = free_run(1e-6, ws + angular(0.5e6), 3e6);
  s.drive = {{0.5e-6, 0.1e-6, 1e3, 0.0}};
  const double dt = max_time_step(e, s);
  std::mt19937 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (bool inverted : {false, true}) {
    auto x = ground_state(e);
    x.inverted = inverted;
    x.a = {n(rng), n(rng)};
    for (auto& v : x.s) v = {n(rng), n(rng)};
    dynamics::detail::SplitStepper sp(e, s.segments[0], inverted, dt, PropagateOptions{}.split_phase_step);
    dynamics::detail::DenseStepper ds(e, s.segments[0], inverted, dt);
    auto y = x, z = x;
    sp.step(y, {0.7, 0.1});
    ds.step(z, {0.7, 0.1});
    double num = std::norm(y.a - z.a), den = std::norm(z.a);
    for (std::size_t j = 0; j < x.s.size(); ++j) {
      num += std::norm(y.s[j] - z.s[j]);
      den += std::norm(z.s[j]);
    }
    EXPECT_LT(std::sqrt(num / den), 1e-8);
  }
}

TEST(Propagate, LosslessConservationOverManySteps) {
  const auto e = lorentz(angular(2.9e6), angular(0.8e6), 201, 10);
  const auto s = free_run(1.0, ws + angular(0.3e6), 0.0);
  const double dt = max_time_step(e, s);
  auto sch = s;
  sch.t_end = 1e5 * dt;
  sch.segments[0].t_end = sch.t_end;
  const auto tr = propagate(e, sch, cavity_excited(e), dt);
  ASSERT_EQ(tr.size(), 100001u);
  double worst = 0.0;
  for (double v : tr.total_excitation) worst = std::max(worst, std::abs(v - 1.0));
  EXPECT_LT(worst, 1e-9);
}

TEST(Propagate, LinearityInInitialStateAndDrive) {
  const auto e = lorentz(angular(3e6), angular(1e6), 61, 8, 1e5);
  ControlSchedule s = free_run(400e-9, ws, 5e6);
  s.drive = {{100e-9, 15e-9, 1e3, 0.3}};
  const cplx c(0.7, -1.3);
  auto x = cavity_excited(e, {0.2, 0.1});
  x.s[5] = {0.01, 0.02};
  auto y = x;
  y.a *= c;
  for (auto& v : y.s) v *= c;
  ControlSchedule s2 = s;
  s2.drive[0].amplitude *= std::abs(c);
  s2.drive[0].phase += std::arg(c);
  const double dt = max_time_step(e, s);
  const auto a = propagate(e, s, x, dt);
  const auto b = propagate(e, s2, y, dt);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_LE(std::abs(b.a[k] - c * a.a[k]), 1e-12 * std::abs(c) * (std::abs(a.a[k]) + 1e-300) + 1e-15);
    EXPECT_LE(std::abs(b.a_out[k] - c * a.a_out[k]), 1e-12 * std::abs(c) * (std::abs(a.a_out[k]) + 1e-9));
  }
}

TEST(Propagate, IdealEchoRefocusesBrightMode) {
  const auto e = lorentz(angular(2.9e6), angular(1e6), 401, 12);
  const double tau = 600e-9;
  ControlSchedule s = free_run(2 * tau, ws, 0.0, true);
  s.refocus = {{tau, {M_PI}}};
  auto x = ground_state(e);
  for (std::size_t j = 0; j < e.size(); ++j) x.s[j] = e.coupling(j) / e.g_ens();
  const double dt = tau / std::ceil(tau / max_time_step(e, s));
  const auto tr = propagate(e, s, x, dt);
  EXPECT_LT(std::abs(tr.bright[tr.size() / 2 - 10]), 0.1);
  EXPECT_NEAR(std::abs(tr.bright.back()), 1.0, 1e-9);
}

TEST(Propagate, RejectsCoarseStepAndBrokenSchedule) {
  const auto e = lorentz(angular(3e6), angular(1e6), 11, 8);
  ControlSchedule s = free_run(1e-6, ws, 1e6);
  const double bound = max_time_step(e, s);
  EXPECT_NEAR(bound, 0.02 / angular(3e6), 1e-18);
  try {
    propagate(e, s, ground_state(e), 2 * bound);
    FAIL() << "expected rejection";
  } catch (const PreconditionViolation& ex) {
    EXPECT_NE(std::string(ex.what()).find("bound"), std::string::npos);
  }
  ControlSchedule gap = s;
  gap.segments = {{0, 0.4e-6, ws, 1e6}, {0.5e-6, 1e-6, ws, 1e6}};
  EXPECT_THROW(propagate(e, gap, ground_state(e), bound), InvalidInput);
  ControlSchedule late = s;
  late.refocus = {{1e-6, {M_PI}}};
  EXPECT_THROW(propagate(e, late, ground_state(e), bound), InvalidInput);
}

TEST(Propagate, EnergyBookkeepingWithLosses) {
  const double gp = 2e5;
  const auto e = lorentz(angular(2.9e6), angular(0.8e6), 301, 12, gp);
  const auto s = free_run(2e-6, ws, 1e7);
  const double dt = max_time_step(e, s);
  const auto tr = propagate(e, s, cavity_excited(e), dt);
  // trapezoid over kappa |a|^2 + 2 gamma sum |s|^2
  double out = 0.0;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    auto rate = [&](std::size_t i) {
      const double spins = tr.total_excitation[i] - std::norm(tr.a[i]);
      return tr.kappa[i] * std::norm(tr.a[i]) + 2 * gp * spins;
    };
    out += 0.5 * dt * (rate(k) + rate(k - 1));
  }
  EXPECT_NEAR(out + tr.total_excitation.back(), 1.0, 0.01);
}

TEST(Refocusing, ConjugationAndPartialFlips) {
  ModeSystem x;
  x.a = {0.3, 0.4};
  x.s = {{1, 2}, {-0.5, 0.25}};
  const std::vector<double> pi{M_PI};
  auto y = apply_refocusing_pulse(x, pi);
  EXPECT_EQ(y.a, x.a);
  EXPECT_NEAR(std::abs(y.s[0] - cplx(1, -2)), 0.0, 1e-15);
  const std::vector<double> zero{0.0};
  y = apply_refocusing_pulse(x, zero);
  EXPECT_EQ(y.s[1], cplx(0.0));
  const std::vector<double> half{M_PI / 2, M_PI};
  y = apply_refocusing_pulse(x, half);
  EXPECT_NEAR(std::abs(y.s[0] - 0.5 * std::conj(x.s[0])), 0.0, 1e-15);
  EXPECT_THROW(apply_refocusing_pulse(x, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST(Refocusing, HalfFlipHalvesEchoAmplitude) {
  const auto e = lorentz(angular(2.9e6), angular(1e6), 201, 12);
  auto x = ground_state(e);
  for (std::size_t j = 0; j < e.size(); ++j) x.s[j] = e.coupling(j) / e.g_ens();
  ControlSchedule s = free_run(1.2e-6, ws, 0.0, true);
  s.refocus = {{0.6e-6, {M_PI}}};
  const double dt = max_time_step(e, s);
  const auto full = propagate(e, s, x, dt);
  s.refocus[0].flip_angles = {M_PI / 2};
  const auto half = propagate(e, s, x, dt);
  EXPECT_NEAR(std::abs(half.bright.back()) / std::abs(full.bright.back()), 0.5, 1e-12);
}

TEST(Spectrum, EmptyEnsembleIsBareLorentzian) {
  const auto e = single_bin(0.0);
  const double kappa = 1e7;
  std::vector<double> probe;
  for (int k = -200; k <= 200; ++k) probe.push_back(ws + k * kappa / 40);
  const auto t = transmission_spectrum(e, ws, kappa, probe);
  const auto r = reflection_spectrum(e, ws, kappa, probe);
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double d = probe[k] - ws;
    EXPECT_NEAR(std::abs(t[k].response), 0.5 * kappa / std::hypot(0.5 * kappa, d), 1e-12);
    EXPECT_LE(std::abs(r[k].response), 1.0 + 1e-9);
  }
  EXPECT_NEAR(std::abs(t[200].response), 1.0, 1e-12);
}

TEST(Spectrum, NormalModeSplittingAndPassivity) {
  const double g = angular(20e6);
  const auto e = single_bin(g);
  std::vector<double> probe;
  for (int k = -4000; k <= 4000; ++k) probe.push_back(ws + k * angular(0.01e6));
  SpectrumOptions opt;
  opt.comb_smoothing = 0.0;
  auto de = e;
  de.gamma_perp = 1e5;
  const auto t = transmission_spectrum(de, ws, 1e6, probe, opt);
  std::vector<double> peaks;
  for (std::size_t k = 1; k + 1 < t.size(); ++k)
    if (std::abs(t[k].response) > std::abs(t[k - 1].response) && std::abs(t[k].response) >= std::abs(t[k + 1].response))
      peaks.push_back(t[k].omega);
  ASSERT_EQ(peaks.size(), 2u);
  EXPECT_NEAR(peaks[0], ws - g, angular(0.02e6));
  EXPECT_NEAR(peaks[1], ws + g, angular(0.02e6));

  const auto wide = lorentz(angular(5e6), angular(1e6), 301, 10, 1e4);
  for (const auto& p : reflection_spectrum(wide, ws + angular(1e6), 3e6, probe)) EXPECT_LE(std::abs(p.response), 1.0 + 1e-9);
}

TEST(Spectrum, ExactPoleIsRejected) {
  const auto e = single_bin(1e6);
  SpectrumOptions opt;
  opt.comb_smoothing = 0.0;
  EXPECT_THROW(reflection_spectrum(e, ws, 1e6, {ws}, opt), PreconditionViolation);
  EXPECT_THROW(reflection_spectrum(e, ws, 1e6, {NAN}), InvalidInput);
}

TEST(Polaritons, TwoAndThreeModes) {
  const double w = 10.0, g = 0.5;
  auto ev = polariton_eigenfrequencies(w, {{w, g}});
  EXPECT_NEAR(ev[0], w - g, 1e-14);
  EXPECT_NEAR(ev[1], w + g, 1e-14);

  // two sub-ensembles at w +/- d, resonator in the middle
  const double d = 0.8;
  ev = polariton_eigenfrequencies(w, {{w - d, g}, {w + d, g}});
  Eigen::Matrix3cd h;
  h << w, g, g, g, w - d, 0, g, 0, w + d;
  const auto ref = oracle::hermitian3_eigenvalues(h);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(ev[k], ref[k], 1e-12);
  ev = polariton_eigenfrequencies(w, {{w, g}, {w, g}});
  EXPECT_NEAR(ev[2] - ev[0], 2 * std::sqrt(2 * g * g), 1e-12);

  ev = polariton_eigenfrequencies(w, {{3.0, 0.0}, {12.0, 0.0}});
  EXPECT_DOUBLE_EQ(ev[0], 3.0);
  EXPECT_DOUBLE_EQ(ev[1], w);
  EXPECT_DOUBLE_EQ(ev[2], 12.0);
}

TEST(Polaritons, RingDownSpectrumPeaksAtEigenfrequencies) {
  // resonator + two narrow sub-ensembles, lossless; the FFT of a(t) peaks at the polaritons
  const double g = angular(3e6), d = angular(5e6);
  ensemble::DiscretizedEnsemble e;
  e.center = ws;
  e.omega = {ws - d, ws + d};
  e.g_full = {g, g};
  e.bins_per_component = 1;
  e.span = 4;
  e.density = SpectralDensity{LineShape::lorentzian, angular(1e3), ws};
  const double dt = 0.02 / std::max(std::sqrt(2.0) * g, d) / 2;
  const std::size_t n = 1 << 15;
  ControlSchedule s = free_run(static_cast<double>(n) * dt, ws, 0.0);
  const auto tr = propagate(e, s, cavity_excited(e), dt);
  const auto ev = polariton_eigenfrequencies(0.0, {{-d, g}, {d, g}});
  // direct DFT at the frequency bins around each eigenvalue
  const double T = static_cast<double>(n) * dt, bin = 2 * M_PI / T;
  for (double target : ev) {
    double best = 0, best_w = 0;
    for (int k = -30; k <= 30; ++k) {
      const double w = std::round(target / bin) * bin + k * bin;
      cplx acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += tr.a[i] * std::polar(1.0, w * tr.t[i]);
      if (std::abs(acc) > best) {
        best = std::abs(acc);
        best_w = w;
      }
    }
    // a(t) ~ exp(-i w t): the transform peaks at the eigenfrequency (in the rotating frame)
    EXPECT_LE(std::abs(best_w - target), bin);
  }
}

TEST(Fid, LorentzianAndGaussianEnvelopes) {
  const double hw = angular(1e6);
  const auto lz = lorentz(1.0, hw, 2001, 200);
  const auto gs = discretize(SpectralDensity{LineShape::gaussian, hw, ws}, 1.0, 1001, 10);
  std::vector<double> t;
  for (int k = 0; k <= 300; ++k) t.push_back(3.0 / hw * k / 300.0);
  const auto fl = fid_envelope(lz, t);
  const auto fg = fid_envelope(gs, t);
  const double sigma = gs.density.sigma();
  for (std::size_t k = 0; k < t.size(); ++k) {
    EXPECT_NEAR(fl[k], std::exp(-hw * t[k]), 0.01);
    EXPECT_NEAR(fg[k], std::exp(-0.5 * sigma * sigma * t[k] * t[k]), 0.01);
  }
}

TEST(Fid, HyperfineTripletModulation) {
  const double off = angular(2.17e6);
  const auto e = discretize(SpectralDensity{LineShape::lorentzian, angular(0.2e6), ws,
                                            {{-off, 1. / 3}, {0, 1. / 3}, {off, 1. / 3}}},
                            1.0, 1601, 200);
  std::vector<double> t;
  for (int k = 0; k <= 200; ++k) t.push_back(1.2e-6 * k / 200.0);
  const auto f = fid_envelope(e, t);
  // direct sum of the three continuous components: |1 + 2 cos(off t)| / 3 exp(-Gamma t)
  for (std::size_t k = 0; k < t.size(); ++k)
    EXPECT_NEAR(f[k], std::abs(1 + 2 * std::cos(off * t[k])) / 3 * std::exp(-angular(0.2e6) * t[k]), 0.01);
  // revival after one period 1 / 2.17 MHz
  const std::size_t k_rev = static_cast<std::size_t>(std::lround(1 / 2.17e6 / 1.2e-6 * 200));
  EXPECT_GT(f[k_rev], 0.5);
}

TEST(Fid, DiscretisationConvergence) {
  const double hw = angular(1e6);
  std::vector<double> t;
  for (int k = 0; k <= 300; ++k) t.push_back(3.0 / hw * k / 300.0);
  const auto a = fid_envelope(lorentz(1.0, hw, 501, 25), t);
  const auto b = fid_envelope(lorentz(1.0, hw, 2001, 25), t);
  double rms = 0;
  for (std::size_t k = 0; k < t.size(); ++k) rms += (a[k] - b[k]) * (a[k] - b[k]);
  EXPECT_LT(std::sqrt(rms / t.size()), 0.01);
}

TEST(Stability, PassiveSystemIsStable) {
  const auto e = lorentz(angular(5e6), angular(1e6), 101, 10, 1e4);
  EXPECT_LE(stability_spectrum(e, ws, 1e6, false), 0.0);
  EXPECT_LE(stability_spectrum(e, ws + angular(3e6), 1e7, false), 0.0);
}

TEST(Stability, EigenvaluesMatchCharacteristicPolynomialOracle) {
  const auto e = lorentz(angular(4e6), angular(1e6), 7, 5, 1e5);
  for (bool inv : {false, true}) {
    const auto a = dynamics::detail::system_matrix(e, ws + angular(0.5e6), 3e6, false, inv);
    // rescale to O(1) for the polynomial oracle
    const double sc = a.cwiseAbs().maxCoeff();
    const auto roots = oracle::poly_roots(oracle::char_poly(a / sc));
    double oracle_max = -1e300;
    for (auto z : roots) oracle_max = std::max(oracle_max, z.real() * sc);
    EXPECT_NEAR(stability_spectrum(e, ws + angular(0.5e6), 3e6, inv), oracle_max, 1e-6 * sc);
  }
}

TEST(Stability, InvertedStrongCouplingGrowsAtAbscissaRate) {
  const auto e = lorentz(angular(11e6), angular(1.5e6), 201, 10, 1e5);
  const double kappa = 9e6;
  const double rate = stability_spectrum(e, ws, kappa, true);
  ASSERT_GT(rate, 0.0);
  ControlSchedule s = free_run(30.0 / rate, ws, kappa);
  auto x = cavity_excited(e);
  x.inverted = true;
  const double dt = max_time_step(e, s);
  const auto tr = propagate(e, s, x, dt);
  const double fitted = fitted_growth_rate(tr, 15.0 / rate, 30.0 / rate);
  EXPECT_NEAR(fitted / rate, 1.0, 0.02);
}

TEST(Stability, ThresholdKappaBisection) {
  const auto e = lorentz(angular(11e6), angular(1.5e6), 201, 10, 1e5);
  const double kc = stability_threshold_kappa(e, ws, 1e6, 1e10);
  EXPECT_LE(stability_spectrum(e, ws, kc, true), 0.0);
  EXPECT_GT(stability_spectrum(e, ws, kc * 0.99, true), 0.0);
  // the threshold is near the cooperativity-one point 4 g^2 / (kappa Gamma_fwhm) ~ 1
  const double g = angular(11e6);
  EXPECT_GT(kc, 0.3 * 4 * g * g / (2 * angular(1.5e6)));
}
