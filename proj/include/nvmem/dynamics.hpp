#pragma once

// Linear (Holstein-Primakoff) cavity-ensemble dynamics in a frame rotating at
// the ensemble centre omega_s:
//
//   da/dt   = -(i d_r + kappa/2) a - i sum_j g_j s_j + sqrt(kappa) b_in
//   ds_j/dt = -(i d_j + gamma_perp) s_j -/+ i g_j a      (- ground, + inverted)
//
// with d_r = omega_r - omega_s, d_j = omega_j - omega_s and the reflected
// output a_out = sqrt(kappa) a - b_in. Also steady-state spectra, polariton
// frequencies, FID envelopes and the stability of an inverted ensemble.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvmem/ensemble.hpp"
#include "nvmem/errors.hpp"
#include "nvmem/units.hpp"

namespace nvmem::dynamics {

using ensemble::DiscretizedEnsemble;

struct ModeSystem {
  cplx a = 0.0;
  std::vector<cplx> s;
  double time = 0.0;
  bool inverted = false;
};

inline ModeSystem ground_state(const DiscretizedEnsemble& ens) {
  ModeSystem m;
  m.s.assign(ens.size(), cplx{0.0, 0.0});
  return m;
}

// Constant controls over [t_start, t_end). A parked resonator is detuned far
// enough that it no longer exchanges excitation with the spins.
struct ControlSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  double omega_r = 0.0;  // absolute angular frequency
  double kappa = 0.0;    // energy decay rate, 1/s
  bool parked = false;
};

// Gaussian input envelope truncated at +/- 3 sigma, in sqrt(photons / s).
struct GaussianPulse {
  double center = 0.0;
  double sigma = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;
  double detuning = 0.0;  // carrier offset from omega_s, rad/s

  cplx value(double t) const {
    const double x = t - center;
    if (std::abs(x) > 3.0 * sigma) return 0.0;
    return amplitude * std::exp(-0.5 * x * x / (sigma * sigma)) * std::polar(1.0, phase - detuning * x);
  }
};

struct RefocusEvent {
  double time = 0.0;
  std::vector<double> flip_angles;  // one per bin, or a single shared angle
  double phase = 0.0;               // rotation-axis phase of the pulse
};

// Instantaneous transfer of an excitation into the resonator (a qubit state
// handed over by the processor).
struct CavityInjection {
  double time = 0.0;
  cplx amplitude = 0.0;
};

struct ControlSchedule {
  std::vector<ControlSegment> segments;
  std::vector<GaussianPulse> drive;
  std::vector<RefocusEvent> refocus;
  std::vector<CavityInjection> injections;
  double t_end = 0.0;
  // When set, each refocusing event toggles the ensemble between ground and
  // inverted coupling; otherwise the medium stays passive throughout.
  bool track_inversion = false;

  cplx drive_at(double t) const {
    cplx acc = 0.0;
    for (const auto& p : drive) acc += p.value(t);
    return acc;
  }

  const ControlSegment& segment_at(double t) const {
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](double v, const ControlSegment& s) { return v < s.t_start; });
    if (it != segments.begin()) --it;
    return *it;
  }

  double kappa_max() const {
    double k = 0.0;
    for (const auto& s : segments) k = std::max(k, s.kappa);
    return k;
  }

  double max_detuning(double center) const {
    double d = 0.0;
    for (const auto& s : segments)
      if (!s.parked) d = std::max(d, std::abs(s.omega_r - center));
    return d;
  }

  void validate() const {
    detail::require(std::isfinite(t_end) && t_end > 0.0, "schedule: t_end must be positive");
    detail::require(!segments.empty(), "schedule: no control segments");
    const double tol = 1e-9 * t_end;
    detail::require(std::abs(segments.front().t_start) <= tol, "schedule: first segment must start at 0");
    for (std::size_t k = 0; k < segments.size(); ++k) {
      const auto& s = segments[k];
      detail::require(s.t_end > s.t_start, "schedule: empty or reversed segment");
      detail::require(std::isfinite(s.kappa) && s.kappa >= 0.0, "schedule: kappa must be finite and >= 0");
      detail::require(std::isfinite(s.omega_r), "schedule: omega_r must be finite");
      if (k + 1 < segments.size())
        detail::require(std::abs(segments[k + 1].t_start - s.t_end) <= tol,
                        "schedule: segments must be contiguous and non-overlapping");
    }
    detail::require(segments.back().t_end >= t_end - tol, "schedule: segments do not cover [0, t_end]");
    for (const auto& e : refocus)
      detail::require(e.time > 0.0 && e.time < t_end, "schedule: refocus events must lie strictly inside (0, t_end)");
    for (const auto& p : drive) detail::require(p.sigma > 0.0, "schedule: drive pulse width must be positive");
  }
};

struct SimulationTrace {
  std::vector<double> t;
  std::vector<cplx> a;
  std::vector<cplx> a_out;
  std::vector<cplx> bright;
  std::vector<cplx> b_in;
  std::vector<double> kappa;
  std::vector<double> total_excitation;
  ModeSystem final_state;

  std::size_t size() const { return t.size(); }
  double dt() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }
};

enum class Integrator {
  split_operator,  // O(M) per step, 4th-order symmetric composition
  dense_expm,      // exact (M+1)^2 propagator per constant segment
};

struct PropagateOptions {
  Integrator integrator = Integrator::split_operator;
  // Largest phase advance (max rate x substep) allowed in one split substep.
  double split_phase_step = 0.02;
  bool check_time_step = true;
};

// Largest admissible time step: 0.02 x min(1/g_ens, 1/Gamma, 1/kappa_max,
// 1/|max resonator detuning|); rates that vanish impose no bound.
inline double max_time_step(const DiscretizedEnsemble& ens, const ControlSchedule& schedule) {
  double rate = 0.0;
  rate = std::max(rate, ens.g_ens());
  if (ens.bins_per_component > 1) rate = std::max(rate, ens.density.gamma_hwhm);
  rate = std::max(rate, schedule.kappa_max());
  rate = std::max(rate, schedule.max_detuning(ens.center));
  return rate > 0.0 ? 0.02 / rate : std::numeric_limits<double>::infinity();
}

/// Refocusing pulse: s_j -> e^{2 i phi} sin^2(theta_j / 2) conj(s_j). The part
/// of each spin amplitude that is not refocused is discarded.
inline ModeSystem apply_refocusing_pulse(ModeSystem state, std::span<const double> flip_angles,
                                         double phase = 0.0, bool toggle_inversion = false) {
  detail::require(flip_angles.size() == 1 || flip_angles.size() == state.s.size(),
                  "apply_refocusing_pulse: need one flip angle or one per bin");
  const cplx rot = std::polar(1.0, 2.0 * phase);
  for (std::size_t j = 0; j < state.s.size(); ++j) {
    const double th = flip_angles.size() == 1 ? flip_angles[0] : flip_angles[j];
    const double eff = std::pow(std::sin(0.5 * th), 2);
    state.s[j] = rot * eff * std::conj(state.s[j]);
  }
  if (toggle_inversion) state.inverted = !state.inverted;
  return state;
}

namespace detail {

// (e^z - 1) / z
inline cplx phi1(cplx z) {
  if (std::abs(z) < 1e-5) return 1.0 + z / 2.0 + z * z / 6.0;
  return (std::exp(z) - 1.0) / z;
}

using MatrixXc = Eigen::MatrixXcd;
using VectorXc = Eigen::VectorXcd;

// Generator of (a, s_1..s_M) for one constant segment.
inline MatrixXc system_matrix(const DiscretizedEnsemble& ens, double omega_r, double kappa, bool parked,
                              bool inverted) {
  const auto n = static_cast<Eigen::Index>(ens.size());
  MatrixXc a = MatrixXc::Zero(n + 1, n + 1);
  const cplx i(0.0, 1.0);
  a(0, 0) = -(i * (omega_r - ens.center) + 0.5 * kappa);
  const auto g = ens.couplings();
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    a(j + 1, j + 1) = -(i * (ens.omega[ju] - ens.center) + ens.gamma_perp);
    if (!parked) {
      a(0, j + 1) = -i * g[ju];
      a(j + 1, 0) = (inverted ? i : -i) * g[ju];
    }
  }
  return a;
}

class Stepper {
 public:
  virtual ~Stepper() = default;
  // Advance by one output step with the drive held at u.
  virtual void step(ModeSystem& x, cplx u) = 0;
};

class DenseStepper final : public Stepper {
 public:
  DenseStepper(const DiscretizedEnsemble& ens, const ControlSegment& seg, bool inverted, double dt) {
    const MatrixXc a = system_matrix(ens, seg.omega_r, seg.kappa, seg.parked, inverted);
    const auto n = a.rows();
    MatrixXc aug = MatrixXc::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = a * dt;
    aug(0, n) = std::sqrt(seg.kappa) * dt;
    const MatrixXc e = aug.exp();
    phi_ = e.topLeftCorner(n, n);
    psi_ = e.topRightCorner(n, 1);
    buf_.resize(n);
  }

  void step(ModeSystem& x, cplx u) override {
    const auto n = buf_.size();
    buf_(0) = x.a;
    for (Eigen::Index j = 1; j < n; ++j) buf_(j) = x.s[static_cast<std::size_t>(j - 1)];
    const VectorXc y = phi_ * buf_ + psi_ * u;
    x.a = y(0);
    for (Eigen::Index j = 1; j < n; ++j) x.s[static_cast<std::size_t>(j - 1)] = y(j);
  }

 private:
  MatrixXc phi_;
  VectorXc psi_;
  VectorXc buf_;
};

// Fourth-order (triple-jump) symmetric composition of the exactly solvable
// diagonal flow (detunings, losses, held drive) and the rank-2 exchange
// between the resonator and the bright mode. Each factor is exact; for a
// lossless system each is unitary, so excitation is conserved to rounding.
class SplitStepper final : public Stepper {
 public:
  SplitStepper(const DiscretizedEnsemble& ens, const ControlSegment& seg, bool inverted, double dt,
               double phase_step)
      : inverted_(inverted), coupled_(!seg.parked && ens.g_ens() > 0.0) {
    const cplx i(0.0, 1.0);
    const auto d = ens.detunings();
    const auto g = ens.couplings();
    g_ens_ = ens.g_ens();
    double rate = std::max({std::abs(seg.omega_r - ens.center), g_ens_, 0.5 * seg.kappa, ens.gamma_perp});
    for (double v : d) rate = std::max(rate, std::abs(v));
    substeps_ = std::max<long>(1, static_cast<long>(std::ceil(dt * rate / phase_step)));
    const double h = dt / static_cast<double>(substeps_);

    const double w1 = 1.0 / (2.0 - std::cbrt(2.0));
    const double w0 = 1.0 - 2.0 * w1;
    // diagonal fractions: w1/2 (ends), (w1+w0)/2 (inner), w1 (between substeps)
    const std::array<double, 3> frac{0.5 * w1, 0.5 * (w1 + w0), w1};
    const cplx ca = -(i * (seg.omega_r - ens.center) + 0.5 * seg.kappa);
    const double sk = std::sqrt(seg.kappa);
    for (std::size_t f = 0; f < 3; ++f) {
      const double tau = frac[f] * h;
      auto& dg = diag_[f];
      dg.spin.resize(d.size());
      for (std::size_t j = 0; j < d.size(); ++j)
        dg.spin[j] = std::exp(-(i * d[j] + ens.gamma_perp) * tau);
      dg.cav = std::exp(ca * tau);
      dg.drive = phi1(ca * tau) * tau * sk;
    }
    for (std::size_t c = 0; c < 2; ++c) {
      const double th = g_ens_ * (c == 0 ? w1 : w0) * h;
      rot_[c] = inverted ? std::array<double, 2>{std::cosh(th), std::sinh(th)}
                         : std::array<double, 2>{std::cos(th), std::sin(th)};
    }
    unit_.resize(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) unit_[j] = g_ens_ > 0.0 ? g[j] / g_ens_ : 0.0;
  }

  void step(ModeSystem& x, cplx u) override {
    diagonal(x, 0, u);
    for (long k = 0; k < substeps_; ++k) {
      exchange(x, 0);
      diagonal(x, 1, u);
      exchange(x, 1);
      diagonal(x, 1, u);
      exchange(x, 0);
      diagonal(x, k + 1 < substeps_ ? 2 : 0, u);
    }
  }

  long substeps() const { return substeps_; }

 private:
  struct Diag {
    std::vector<cplx> spin;
    cplx cav, drive;
  };

  void diagonal(ModeSystem& x, std::size_t f, cplx u) {
    const auto& dg = diag_[f];
    x.a = dg.cav * x.a + dg.drive * u;
    cplx* s = x.s.data();
    const cplx* e = dg.spin.data();
    const std::size_t n = x.s.size();
    for (std::size_t j = 0; j < n; ++j) s[j] *= e[j];
  }

  void exchange(ModeSystem& x, std::size_t c) {
    if (!coupled_) return;
    const double* w = unit_.data();
    cplx* s = x.s.data();
    const std::size_t n = x.s.size();
    cplx b = 0.0;
    for (std::size_t j = 0; j < n; ++j) b += w[j] * s[j];
    const auto [cs, sn] = rot_[c];
    const cplx mi(0.0, -1.0);
    const cplx a2 = cs * x.a + mi * sn * b;
    const cplx b2 = inverted_ ? cs * b - mi * sn * x.a : cs * b + mi * sn * x.a;
    const cplx db = b2 - b;
    for (std::size_t j = 0; j < n; ++j) s[j] += w[j] * db;
    x.a = a2;
  }

  bool inverted_;
  bool coupled_;
  double g_ens_ = 0.0;
  long substeps_ = 1;
  std::array<Diag, 3> diag_;
  std::array<std::array<double, 2>, 2> rot_{};
  std::vector<double> unit_;
};

}  // namespace detail

/// Propagates the state on the uniform grid t_n = n dt, n = 0..round(t_end/dt).
/// Controls for step n are those of the segment containing (n + 1/2) dt and the
/// drive is held at its midpoint value. Instantaneous events (injections, then
/// refocusing pulses) are applied at the nearest grid point before that point
/// is recorded.
inline SimulationTrace propagate(const DiscretizedEnsemble& ens, const ControlSchedule& schedule,
                                 const ModeSystem& initial, double dt, const PropagateOptions& opt = {}) {
  schedule.validate();
  nvmem::detail::require(std::isfinite(dt) && dt > 0.0, "propagate: dt must be positive");
  nvmem::detail::require(initial.s.size() == ens.size(), "propagate: initial state does not match the ensemble");
  if (opt.check_time_step) {
    const double bound = max_time_step(ens, schedule);
    if (dt > bound * (1.0 + 1e-9))
      throw PreconditionViolation("propagate: dt = " + std::to_string(dt) +
                                  " s exceeds the resolution bound " + std::to_string(bound) + " s");
  }
  for (const auto& ev : schedule.refocus)
    nvmem::detail::require(ev.flip_angles.size() == 1 || ev.flip_angles.size() == ens.size(),
                           "propagate: refocus event needs one flip angle or one per bin");

  const auto steps = static_cast<std::size_t>(std::llround(schedule.t_end / dt));
  nvmem::detail::require(steps >= 1, "propagate: t_end shorter than one step");
  auto grid_index = [dt](double t) { return static_cast<std::size_t>(std::llround(t / dt)); };

  const auto g = ens.couplings();
  const double g_ens = ens.g_ens();
  ModeSystem x = initial;

  SimulationTrace tr;
  const std::size_t n_pts = steps + 1;
  tr.t.reserve(n_pts);
  tr.a.reserve(n_pts);
  tr.a_out.reserve(n_pts);
  tr.bright.reserve(n_pts);
  tr.b_in.reserve(n_pts);
  tr.kappa.reserve(n_pts);
  tr.total_excitation.reserve(n_pts);

  auto apply_events = [&](std::size_t k) {
    for (const auto& inj : schedule.injections)
      if (grid_index(inj.time) == k) x.a += inj.amplitude;
    for (const auto& ev : schedule.refocus)
      if (grid_index(ev.time) == k) x = apply_refocusing_pulse(std::move(x), ev.flip_angles, ev.phase,
                                                               schedule.track_inversion);
  };
  auto record = [&](std::size_t k) {
    const double t = static_cast<double>(k) * dt;
    const double kap = schedule.segment_at(std::min(t, schedule.t_end * (1.0 - 1e-12))).kappa;
    const cplx bin = schedule.drive_at(t);
    cplx br = 0.0;
    double exc = std::norm(x.a);
    for (std::size_t j = 0; j < x.s.size(); ++j) {
      br += g[j] * x.s[j];
      exc += std::norm(x.s[j]);
    }
    tr.t.push_back(t);
    tr.a.push_back(x.a);
    tr.a_out.push_back(std::sqrt(kap) * x.a - bin);
    tr.bright.push_back(g_ens > 0.0 ? br / g_ens : cplx{0.0});
    tr.b_in.push_back(bin);
    tr.kappa.push_back(kap);
    tr.total_excitation.push_back(exc);
  };

  apply_events(0);
  record(0);

  std::unique_ptr<detail::Stepper> stepper;
  const ControlSegment* active = nullptr;
  bool active_inverted = false;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t_mid = (static_cast<double>(k) + 0.5) * dt;
    const ControlSegment& seg = schedule.segment_at(t_mid);
    if (&seg != active || x.inverted != active_inverted) {
      if (opt.integrator == Integrator::dense_expm)
        stepper = std::make_unique<detail::DenseStepper>(ens, seg, x.inverted, dt);
      else
        stepper = std::make_unique<detail::SplitStepper>(ens, seg, x.inverted, dt, opt.split_phase_step);
      active = &seg;
      active_inverted = x.inverted;
    }
    stepper->step(x, schedule.drive_at(t_mid));
    apply_events(k + 1);
    record(k + 1);
  }
  x.time = static_cast<double>(steps) * dt;
  tr.final_state = std::move(x);
  return tr;
}

// ---------------------------------------------------------------------------
// Steady-state spectra

struct SpectrumPoint {
  double omega = 0.0;  // probe angular frequency
  cplx response = 0.0;
};

struct SpectrumOptions {
  // Extra homogeneous width (rad/s) that smooths the discrete comb of bins
  // into a continuous line. Negative selects one bin spacing.
  double comb_smoothing = -1.0;
};

namespace detail {

inline double smoothing_width(const DiscretizedEnsemble& ens, const SpectrumOptions& opt) {
  return opt.comb_smoothing < 0.0 ? ens.bin_spacing() : opt.comb_smoothing;
}

// kappa/2 + i (omega_r - omega) + W(omega), W = sum g_j^2 / (i (omega_j - omega) + gamma).
inline cplx response_denominator(const DiscretizedEnsemble& ens, const std::vector<double>& g, double omega_r,
                                 double kappa, double width, double omega) {
  const cplx i(0.0, 1.0);
  cplx w = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] == 0.0) continue;
    const cplx den = i * (ens.omega[j] - omega) + width;
    if (den == cplx(0.0)) throw PreconditionViolation("spectrum: probe hits a bin pole with zero linewidth");
    w += g[j] * g[j] / den;
  }
  return i * (omega_r - omega) + 0.5 * kappa + w;
}

}  // namespace detail

/// One-port reflection r = kappa / D - 1 (a_out = sqrt(kappa) a - b_in).
inline std::vector<SpectrumPoint> reflection_spectrum(const DiscretizedEnsemble& ens, double omega_r, double kappa,
                                                      const std::vector<double>& probe,
                                                      const SpectrumOptions& opt = {}) {
  nvmem::detail::require(kappa > 0.0, "reflection_spectrum: kappa must be positive");
  const auto g = ens.couplings();
  const double width = ens.gamma_perp + detail::smoothing_width(ens, opt);
  std::vector<SpectrumPoint> out;
  out.reserve(probe.size());
  for (double w : probe) {
    nvmem::detail::require(std::isfinite(w), "reflection_spectrum: non-finite probe frequency");
    out.push_back({w, kappa / detail::response_denominator(ens, g, omega_r, kappa, width, w) - 1.0});
  }
  return out;
}

/// Symmetric two-port transmission t = (kappa / 2) / D.
inline std::vector<SpectrumPoint> transmission_spectrum(const DiscretizedEnsemble& ens, double omega_r,
                                                        double kappa, const std::vector<double>& probe,
                                                        const SpectrumOptions& opt = {}) {
  nvmem::detail::require(kappa > 0.0, "transmission_spectrum: kappa must be positive");
  const auto g = ens.couplings();
  const double width = ens.gamma_perp + detail::smoothing_width(ens, opt);
  std::vector<SpectrumPoint> out;
  out.reserve(probe.size());
  for (double w : probe) {
    nvmem::detail::require(std::isfinite(w), "transmission_spectrum: non-finite probe frequency");
    out.push_back({w, 0.5 * kappa / detail::response_denominator(ens, g, omega_r, kappa, width, w)});
  }
  return out;
}

struct CoupledMode {
  double omega = 0.0;
  double g = 0.0;
};

/// Eigenfrequencies of the resonator coupled to K bright modes, ascending.
inline std::vector<double> polariton_eigenfrequencies(double omega_r, const std::vector<CoupledMode>& modes) {
  nvmem::detail::require(!modes.empty(), "polariton_eigenfrequencies: need at least one mode");
  const auto n = static_cast<Eigen::Index>(modes.size()) + 1;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  h(0, 0) = omega_r;
  for (Eigen::Index k = 1; k < n; ++k) {
    const auto& m = modes[static_cast<std::size_t>(k - 1)];
    h(k, k) = m.omega;
    h(0, k) = h(k, 0) = m.g;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().data(), es.eigenvalues().data() + n};
}

/// |sum_j g_j^2 e^{-(i d_j + gamma_perp) t}| / g_ens^2: bright-mode free
/// induction decay with the resonator removed.
inline std::vector<double> fid_envelope(const DiscretizedEnsemble& ens, const std::vector<double>& t_grid) {
  const double g2 = ens.g_ens() * ens.g_ens();
  nvmem::detail::require(g2 > 0.0, "fid_envelope: ensemble has zero coupling");
  const auto d = ens.detunings();
  std::vector<double> out;
  out.reserve(t_grid.size());
  for (double t : t_grid) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) acc += ens.coupling(j) * ens.coupling(j) * std::polar(1.0, -d[j] * t);
    out.push_back(std::abs(acc) / g2 * std::exp(-ens.gamma_perp * t));
  }
  return out;
}

/// Eigenvalues of the linear system with the resonator at omega_r. For an
/// inverted ensemble the spin-side coupling changes sign (the amplitude
/// equations of (a, s) close on themselves; their conjugate copy has the same
/// real parts).
inline Eigen::VectorXcd system_eigenvalues(const DiscretizedEnsemble& ens, double omega_r, double kappa,
                                           bool inverted) {
  const auto a = detail::system_matrix(ens, omega_r, kappa, false, inverted);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(a, false);
  return es.eigenvalues();
}

/// Spectral abscissa (largest real part of the system eigenvalues), 1/s.
inline double stability_spectrum(const DiscretizedEnsemble& ens, double omega_r, double kappa, bool inverted) {
  return system_eigenvalues(ens, omega_r, kappa, inverted).real().maxCoeff();
}

/// Smallest kappa in [kappa_lo, kappa_hi] for which the inverted ensemble is
/// stable (abscissa <= 0), by bisection to relative tolerance `rel_tol`.
inline double stability_threshold_kappa(const DiscretizedEnsemble& ens, double omega_r, double kappa_lo,
                                        double kappa_hi, double rel_tol = 1e-4) {
  nvmem::detail::require(kappa_lo >= 0.0 && kappa_hi > kappa_lo, "stability_threshold_kappa: bad bracket");
  if (stability_spectrum(ens, omega_r, kappa_hi, true) > 0.0)
    throw InvalidInput("stability_threshold_kappa: unstable at the upper bracket");
  if (stability_spectrum(ens, omega_r, kappa_lo, true) <= 0.0) return kappa_lo;
  double lo = kappa_lo, hi = kappa_hi;
  while (hi - lo > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (stability_spectrum(ens, omega_r, mid, true) > 0.0 ? lo : hi) = mid;
  }
  return hi;
}

/// Least-squares slope of ln|x| = ln(sqrt(total excitation)) over [t0, t1]:
/// the amplitude growth (>0) or decay (<0) rate seen in a trace.
inline double fitted_growth_rate(const SimulationTrace& tr, double t0, double t1) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    if (tr.t[k] < t0 || tr.t[k] > t1 || !(tr.total_excitation[k] > 0.0)) continue;
    const double y = 0.5 * std::log(tr.total_excitation[k]);
    n += 1;
    sx += tr.t[k];
    sy += y;
    sxx += tr.t[k] * tr.t[k];
    sxy += tr.t[k] * y;
  }
  nvmem::detail::require(n >= 2, "fitted_growth_rate: fewer than two samples in the window");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace nvmem::dynamics
