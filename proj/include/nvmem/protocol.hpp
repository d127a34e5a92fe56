#pragma once

// Memory experiments on top of the dynamics: qubit-resonator-ensemble swap,
// two-pulse echo, and the write / silenced echo / on-demand read protocol with
// Q-switching. Also the schedule validator and the scalar figures of merit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nvmem/dynamics.hpp"
#include "nvmem/ensemble.hpp"
#include "nvmem/errors.hpp"
#include "nvmem/units.hpp"

namespace nvmem::protocol {

using dynamics::ControlSchedule;
using dynamics::ControlSegment;
using dynamics::SimulationTrace;
using ensemble::DiscretizedEnsemble;

inline constexpr double infinite_t2 = std::numeric_limits<double>::infinity();

struct EnsembleSpec {
  ensemble::SpectralDensity density;
  double g_ens = 0.0;  // at full polarisation, rad/s
  int bins = 1001;     // per hyperfine component
  double span = 20.0;
  double T2 = infinite_t2;
  // how the quoted width was given in the input ("fwhm" or "hwhm")
  std::string width_convention = "hwhm";
  // bins loaded verbatim from an ensemble file instead of being discretised
  std::optional<DiscretizedEnsemble> explicit_bins;
};

struct CavitySpec {
  double omega_r = 0.0;  // baseline (resonant) frequency, absolute rad/s
  double kappa_min = 0.0;
  double kappa_max = 0.0;
  std::optional<double> kappa_read;  // after the last refocusing; defaults to kappa_min
  double detune = 0.0;               // silencing / parking offset Delta, rad/s

  double read_kappa() const { return kappa_read.value_or(kappa_min); }
};

struct WritePulse {
  double t = 0.0;         // centre
  double amplitude = 0.0; // peak, sqrt(photons / s)
  double duration = 0.0;  // full support, 6 sigma
  double phase = 0.0;
  double detuning = 0.0;  // carrier offset from the ensemble centre, rad/s

  double sigma() const { return duration / 6.0; }
  double start() const { return t - 0.5 * duration; }
  double end() const { return t + 0.5 * duration; }
};

struct FlipSpec {
  enum class Kind { fixed, uniform, list, random_uniform };
  Kind kind = Kind::fixed;
  double angle = std::numbers::pi;
  double lo = std::numbers::pi, hi = std::numbers::pi;
  int levels = 1;
  std::vector<double> angles;
};

struct RefocusSpec {
  std::vector<double> times;
  FlipSpec flip;
  double phase = 0.0;
};

struct Window {
  double t0 = 0.0, t1 = 0.0;
  bool contains(double t) const { return t >= t0 && t <= t1; }
  bool overlaps(const Window& o) const { return t0 < o.t1 && o.t0 < t1; }
};

struct Scenario {
  std::string name;
  EnsembleSpec ensemble;
  CavitySpec cavity;
  std::vector<WritePulse> pulses;
  RefocusSpec refocus;
  std::vector<Window> silencing;
  std::vector<Window> retrieval;
  double repump_efficiency = 1.0;
  cplx initial_cavity = 0.0;
  double dt = 0.0;  // 0 selects the largest admissible step
  double t_end = 0.0;
  std::uint64_t seed = 0;
  bool track_inversion = false;

  void validate() const {
    detail::require(t_end > 0.0 && std::isfinite(t_end), "scenario: t_end must be positive");
    detail::require(dt >= 0.0 && std::isfinite(dt), "scenario: dt must be >= 0");
    detail::require(ensemble.g_ens >= 0.0 || ensemble.explicit_bins, "scenario: g_ens must be >= 0");
    detail::require(ensemble.T2 > 0.0, "scenario: T2 must be positive");
    detail::require(cavity.kappa_min > 0.0 && cavity.kappa_max > 0.0, "scenario: kappa values must be positive");
    detail::require(cavity.kappa_min < cavity.kappa_max, "scenario: kappa_min must be below kappa_max");
    detail::require(!cavity.kappa_read || *cavity.kappa_read > 0.0, "scenario: kappa_read must be positive");
    detail::require(repump_efficiency >= 0.0 && repump_efficiency <= 1.0,
                    "scenario: repump efficiency must lie in [0, 1]");
    for (std::size_t k = 0; k < pulses.size(); ++k) {
      const auto& p = pulses[k];
      detail::require(p.duration > 0.0 && std::isfinite(p.amplitude), "scenario: bad write pulse");
      detail::require(p.start() >= 0.0 && p.end() <= t_end, "scenario: write pulse outside [0, t_end]");
      if (k > 0) detail::require(p.t > pulses[k - 1].t, "scenario: write pulses must be in ascending order");
    }
    for (std::size_t k = 0; k < refocus.times.size(); ++k) {
      detail::require(refocus.times[k] > 0.0 && refocus.times[k] < t_end, "scenario: refocus time outside (0, t_end)");
      if (k > 0) detail::require(refocus.times[k] > refocus.times[k - 1], "scenario: refocus times must ascend");
    }
    if (!refocus.times.empty())
      for (const auto& p : pulses)
        detail::require(p.end() <= refocus.times.front(), "scenario: write pulses must end before the first refocusing");
    for (const auto* list : {&silencing, &retrieval})
      for (const auto& w : *list)
        detail::require(w.t0 >= 0.0 && w.t1 <= t_end && w.t1 > w.t0, "scenario: window outside [0, t_end]");
    const auto& f = refocus.flip;
    if (f.kind == FlipSpec::Kind::uniform || f.kind == FlipSpec::Kind::random_uniform)
      detail::require(f.hi >= f.lo && f.levels >= 1, "scenario: bad flip-angle distribution");
    if (f.kind == FlipSpec::Kind::list) detail::require(!f.angles.empty(), "scenario: empty flip-angle list");
  }
};

/// Cleared memory after optical repumping: polarisation p, all amplitudes zero.
struct ResetState {
  DiscretizedEnsemble ensemble;
  dynamics::ModeSystem state;
};

inline ResetState reset(const DiscretizedEnsemble& ens, double repump_efficiency) {
  detail::require(repump_efficiency >= 0.0 && repump_efficiency <= 1.0, "reset: p must lie in [0, 1]");
  ResetState r{ens.with_polarization(repump_efficiency), {}};
  r.state = dynamics::ground_state(r.ensemble);
  return r;
}

inline DiscretizedEnsemble build_ensemble(const Scenario& sc) {
  DiscretizedEnsemble e = sc.ensemble.explicit_bins
                              ? *sc.ensemble.explicit_bins
                              : ensemble::discretize(sc.ensemble.density, sc.ensemble.g_ens, sc.ensemble.bins,
                                                     sc.ensemble.span);
  e.gamma_perp = std::isfinite(sc.ensemble.T2) ? 1.0 / sc.ensemble.T2 : 0.0;
  return reset(e, sc.repump_efficiency).ensemble;
}

/// Number of equal-weight sub-populations each frequency bin is split into.
/// A discrete flip-angle distribution describes a spatial spread of Rabi
/// frequencies, which is independent of the spin frequency, so every bin
/// carries every level.
inline std::size_t flip_levels(const FlipSpec& f) {
  switch (f.kind) {
    case FlipSpec::Kind::uniform: return static_cast<std::size_t>(f.levels);
    case FlipSpec::Kind::list: return f.angles.size();
    default: return 1;
  }
}

inline std::vector<double> level_angles(const FlipSpec& f) {
  if (f.kind == FlipSpec::Kind::list) return f.angles;
  std::vector<double> out;
  const double w = (f.hi - f.lo) / f.levels;
  for (int k = 0; k < f.levels; ++k) out.push_back(f.lo + (k + 0.5) * w);
  return out;
}

/// Ensemble as seen by the simulation plus one flip angle per bin.
struct Medium {
  DiscretizedEnsemble ensemble;
  std::vector<double> flips;
};

inline Medium split_for_flips(const DiscretizedEnsemble& ens, const FlipSpec& f, std::uint64_t seed) {
  Medium m{ens, {}};
  switch (f.kind) {
    case FlipSpec::Kind::fixed:
      m.flips.assign(ens.size(), f.angle);
      break;
    case FlipSpec::Kind::random_uniform: {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(f.lo, f.hi);
      m.flips.resize(ens.size());
      for (auto& v : m.flips) v = u(rng);
      break;
    }
    default: {
      const auto angles = level_angles(f);
      const double scale = 1.0 / std::sqrt(static_cast<double>(angles.size()));
      m.ensemble.omega.clear();
      m.ensemble.g_full.clear();
      for (std::size_t j = 0; j < ens.size(); ++j)
        for (double th : angles) {
          m.ensemble.omega.push_back(ens.omega[j]);
          m.ensemble.g_full.push_back(ens.g_full[j] * scale);
          m.flips.push_back(th);
        }
    }
  }
  return m;
}

inline Medium build_medium(const Scenario& sc) {
  return split_for_flips(build_ensemble(sc), sc.refocus.flip, sc.seed);
}

// ---------------------------------------------------------------------------
// Echo bookkeeping

/// Echo times per generation: e_0 = t_i, e_k = 2 tau_k - e_{k-1}.
inline std::vector<std::vector<double>> predicted_echo_times(const std::vector<double>& t_in,
                                                             const std::vector<double>& tau) {
  std::vector<std::vector<double>> gens;
  std::vector<double> prev = t_in;
  for (double t : tau) {
    std::vector<double> cur;
    cur.reserve(prev.size());
    for (double e : prev) cur.push_back(2.0 * t - e);
    gens.push_back(cur);
    prev = std::move(cur);
  }
  return gens;
}

struct EchoRow {
  int pulse_id = 0;
  int generation = 1;
  double t_in = 0.0;
  double t_pred = 0.0;
  Window window;
  double t_obs = 0.0;
  double energy = 0.0;    // integral of |a_out|^2 over the window
  double peak_amp = 0.0;  // max |a_out|
  double phase = 0.0;     // arg of the window-integrated a_out
  double bright_peak = 0.0;
  bool retrieved = false;
  // revived |bright| relative to the T2- and flip-limited ideal (last generation)
  std::optional<double> retention;
};

using EchoTable = std::vector<EchoRow>;

namespace detail {

inline std::size_t index_at(const SimulationTrace& tr, double t) {
  const auto it = std::lower_bound(tr.t.begin(), tr.t.end(), t);
  return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - tr.t.begin(), static_cast<std::ptrdiff_t>(tr.size()) - 1));
}

template <class F>
double integrate(const SimulationTrace& tr, const Window& w, F&& f) {
  const std::size_t i0 = index_at(tr, w.t0), i1 = index_at(tr, w.t1);
  double acc = 0.0;
  for (std::size_t k = i0 + 1; k <= i1 && k < tr.size(); ++k) acc += 0.5 * (tr.t[k] - tr.t[k - 1]) * (f(k) + f(k - 1));
  return acc;
}

}  // namespace detail

/// E = int_echo |a_out|^2 dt / int_input |b_in|^2 dt.
inline double echo_efficiency(const SimulationTrace& tr, const Window& input, const Window& echo) {
  nvmem::detail::require(!input.overlaps(echo), "echo_efficiency: windows must be disjoint");
  const double in = detail::integrate(tr, input, [&](std::size_t k) { return std::norm(tr.b_in[k]); });
  if (!(in > 0.0)) throw InvalidInput("echo_efficiency: input window carries no energy");
  return detail::integrate(tr, echo, [&](std::size_t k) { return std::norm(tr.a_out[k]); }) / in;
}

inline double input_energy(const SimulationTrace& tr, const WritePulse& p) {
  return detail::integrate(tr, {p.start(), p.end()}, [&](std::size_t k) { return std::norm(tr.b_in[k]); });
}

inline Window input_window(const WritePulse& p) { return {p.start(), p.end()}; }

// Echo window: pulse support plus two dephasing times, clipped halfway to the
// neighbouring echoes of the same generation.
inline std::vector<Window> echo_windows(const std::vector<double>& pred, const std::vector<WritePulse>& pulses,
                                        double gamma_hwhm) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double hw = 0.5 * pulses[i].duration + 2.0 / gamma_hwhm;
    for (std::size_t k = 0; k < pred.size(); ++k)
      if (k != i) hw = std::min(hw, 0.5 * std::abs(pred[k] - pred[i]));
    out.push_back({pred[i] - hw, pred[i] + hw});
  }
  return out;
}

inline EchoRow measure_echo(const SimulationTrace& tr, const Window& w) {
  EchoRow r;
  r.window = w;
  const std::size_t i0 = detail::index_at(tr, w.t0), i1 = detail::index_at(tr, w.t1);
  cplx sum = 0.0;
  for (std::size_t k = i0; k <= i1; ++k) {
    const double m = std::abs(tr.a_out[k]);
    if (m > r.peak_amp) {
      r.peak_amp = m;
      r.t_obs = tr.t[k];
    }
    r.bright_peak = std::max(r.bright_peak, std::abs(tr.bright[k]));
    sum += tr.a_out[k];
  }
  r.phase = std::arg(sum);
  r.energy = detail::integrate(tr, w, [&](std::size_t k) { return std::norm(tr.a_out[k]); });
  return r;
}

// ---------------------------------------------------------------------------
// Findings

struct Finding {
  enum class Level { error, warning };
  Level level = Level::error;
  std::string code;
  std::string message;
};

namespace detail {
inline std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}
}  // namespace detail

inline std::string to_string(Finding::Level l) { return l == Finding::Level::error ? "error" : "warning"; }

inline bool has_errors(const std::vector<Finding>& f) {
  return std::any_of(f.begin(), f.end(), [](const Finding& x) { return x.level == Finding::Level::error; });
}

// Cooperativity gate for the write stage, C = 4 g_ens^2 / (kappa Gamma_fwhm).
inline constexpr double strong_coupling_cooperativity = 10.0;
// Eigen-decompositions in the validator use at most this many bins per component.
inline constexpr int validator_max_bins = 301;

inline double cooperativity(double g_ens, double kappa, double gamma_hwhm) {
  return 4.0 * g_ens * g_ens / (kappa * 2.0 * gamma_hwhm);
}

// ---------------------------------------------------------------------------
// Schedules

/// Piecewise-constant controls of the protocol. Before the first refocusing
/// the resonator is resonant with kappa_min (write). While the ensemble is
/// inverted (between odd and even refocusing pulses) kappa = kappa_max and the
/// resonator sits at omega_s + Delta inside silencing windows. After an even
/// number of pulses the resonator is parked at omega_s + Delta except inside
/// retrieval windows, with kappa_read throughout.
inline ControlSchedule build_schedule(const Scenario& sc, const DiscretizedEnsemble& ens,
                                      const std::vector<double>& flips, double detune) {
  ControlSchedule s;
  s.t_end = sc.t_end;
  s.track_inversion = sc.track_inversion;
  for (const auto& p : sc.pulses)
    s.drive.push_back({p.t, p.sigma(), p.amplitude, p.phase, p.detuning});
  for (double t : sc.refocus.times) s.refocus.push_back({t, flips, sc.refocus.phase});
  if (sc.initial_cavity != cplx(0.0)) s.injections.push_back({0.0, sc.initial_cavity});

  std::vector<double> cuts{0.0, sc.t_end};
  for (double t : sc.refocus.times) cuts.push_back(t);
  for (const auto* list : {&sc.silencing, &sc.retrieval})
    for (const auto& w : *list) {
      cuts.push_back(w.t0);
      cuts.push_back(w.t1);
    }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const double base = sc.cavity.omega_r;
  const double parked = ens.center + detune;
  auto in_any = [](const std::vector<Window>& ws, double t) {
    return std::any_of(ws.begin(), ws.end(), [t](const Window& w) { return w.contains(t); });
  };
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double t0 = cuts[k], t1 = cuts[k + 1], mid = 0.5 * (t0 + t1);
    const auto n_ref = std::count_if(sc.refocus.times.begin(), sc.refocus.times.end(), [mid](double t) { return t < mid; });
    ControlSegment seg{t0, t1, base, sc.cavity.kappa_min, false};
    if (n_ref > 0 && n_ref % 2 == 1) {
      seg.kappa = sc.cavity.kappa_max;
      if (in_any(sc.silencing, mid)) seg.omega_r = parked;
    } else if (n_ref > 0) {
      seg.kappa = sc.cavity.read_kappa();
      if (!in_any(sc.retrieval, mid) || in_any(sc.silencing, mid)) seg.omega_r = parked;
    } else if (in_any(sc.silencing, mid)) {
      seg.omega_r = parked;
    }
    if (!s.segments.empty() && s.segments.back().omega_r == seg.omega_r && s.segments.back().kappa == seg.kappa)
      s.segments.back().t_end = t1;
    else
      s.segments.push_back(seg);
  }
  return s;
}

/// Two-pulse echo: resonant throughout, kappa_min while writing and
/// kappa_read after the refocusing pulse.
inline ControlSchedule build_echo_schedule(const Scenario& sc, const std::vector<double>& flips) {
  ControlSchedule s;
  s.t_end = sc.t_end;
  s.track_inversion = sc.track_inversion;
  for (const auto& p : sc.pulses) s.drive.push_back({p.t, p.sigma(), p.amplitude, p.phase, p.detuning});
  for (double t : sc.refocus.times) s.refocus.push_back({t, flips, sc.refocus.phase});
  if (sc.initial_cavity != cplx(0.0)) s.injections.push_back({0.0, sc.initial_cavity});
  const double tau = sc.refocus.times.front();
  s.segments = {{0.0, tau, sc.cavity.omega_r, sc.cavity.kappa_min},
                {tau, sc.t_end, sc.cavity.omega_r, sc.cavity.read_kappa()}};
  return s;
}

inline double resolve_dt(const Scenario& sc, const DiscretizedEnsemble& ens, const ControlSchedule& s) {
  return sc.dt > 0.0 ? sc.dt : dynamics::max_time_step(ens, s);
}

// ---------------------------------------------------------------------------
// Validation

inline std::vector<Finding> validate_sequence(const Scenario& sc) {
  sc.validate();
  std::vector<Finding> out;
  const DiscretizedEnsemble ens = build_ensemble(sc);
  const double gamma = sc.ensemble.density.gamma_hwhm;

  // (a) write-stage cooperativity
  if (!sc.pulses.empty()) {
    const double c = cooperativity(ens.g_ens(), sc.cavity.kappa_min, gamma);
    if (c < strong_coupling_cooperativity)
      out.push_back({Finding::Level::warning, "weak_write_coupling",
                     "write cooperativity C = " + detail::num(c) + " is below " +
                         detail::num(strong_coupling_cooperativity)});
  }

  std::vector<double> t_in;
  for (const auto& p : sc.pulses) t_in.push_back(p.t);
  const auto gens = predicted_echo_times(t_in, sc.refocus.times);

  // (e) echoes that never happen inside the run
  if (!gens.empty()) {
    std::string late;
    for (double e : gens.back())
      if (e > sc.t_end) late += " " + detail::num(e);
    if (!late.empty())
      out.push_back({Finding::Level::error, "echo_beyond_end", "predicted echo times beyond t_end (s):" + late});
  }

  // (b) superradiance while inverted
  if (!sc.refocus.times.empty()) {
    DiscretizedEnsemble probe = ens;
    if (!sc.ensemble.explicit_bins && sc.ensemble.bins > validator_max_bins) {
      probe = ensemble::discretize(sc.ensemble.density, sc.ensemble.g_ens, validator_max_bins, sc.ensemble.span,
                                   sc.repump_efficiency, ens.gamma_perp);
    }
    // Isolated comb teeth would each show a tiny gain ~ g_j^2 / kappa that
    // vanishes in the continuum; widening every bin by the bin spacing
    // restores the continuum threshold.
    probe.gamma_perp += probe.bin_spacing();
    const std::vector<double> flips{sc.refocus.flip.angle};
    const auto sched = sc.refocus.times.size() >= 2 ? build_schedule(sc, ens, flips, sc.cavity.detune)
                                                    : build_echo_schedule(sc, flips);
    for (std::size_t k = 0; k < sc.refocus.times.size(); k += 2) {
      const double t0 = sc.refocus.times[k];
      double t1 = k + 1 < sc.refocus.times.size() ? sc.refocus.times[k + 1] : sc.t_end;
      if (k < gens.size() && !gens[k].empty())
        t1 = std::min(t1, *std::max_element(gens[k].begin(), gens[k].end()) + 3.0 / gamma);
      std::vector<std::pair<double, double>> seen;
      for (const auto& seg : sched.segments) {
        if (seg.t_end <= t0 || seg.t_start >= t1) continue;
        const std::pair<double, double> key{seg.omega_r, seg.kappa};
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        const double rate = dynamics::stability_spectrum(probe, seg.omega_r, seg.kappa, true);
        if (rate > 0.0)
          out.push_back({Finding::Level::error, "superradiance_risk",
                         "inverted ensemble unstable (growth " + detail::num(rate) + " 1/s) with kappa = " +
                             detail::num(seg.kappa) + " 1/s in [" + detail::num(std::max(t0, seg.t_start)) +
                             ", " + detail::num(std::min(t1, seg.t_end)) + "] s"});
      }
    }
  }

  // (c) first echoes of a multi-refocusing protocol must fall in silencing windows
  if (sc.refocus.times.size() >= 2 && !gens.empty()) {
    std::string gaps;
    for (double e : gens.front()) {
      const Window need{e - 3.0 / gamma, e + 3.0 / gamma};
      const bool ok = std::any_of(sc.silencing.begin(), sc.silencing.end(),
                                  [&](const Window& w) { return w.t0 <= need.t0 && w.t1 >= need.t1; });
      if (!ok) gaps += " " + detail::num(e);
    }
    if (!gaps.empty())
      out.push_back({Finding::Level::error, "silencing_gap",
                     "first-echo times not covered by a silencing window (s):" + gaps});
  }

  // (d) retrieval must not overlap silencing
  for (const auto& r : sc.retrieval)
    for (const auto& s : sc.silencing)
      if (r.overlaps(s))
        out.push_back({Finding::Level::error, "window_overlap",
                       "retrieval window [" + detail::num(r.t0) + ", " + detail::num(r.t1) +
                           "] s overlaps silencing window [" + detail::num(s.t0) + ", " + detail::num(s.t1) + "] s"});
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// exp(-(kappa + 1/T2) tau_s / 2).
inline double fidelity_estimate(double kappa, double T2, double tau_s) {
  nvmem::detail::require(kappa >= 0.0 && T2 > 0.0 && tau_s >= 0.0, "fidelity_estimate: arguments must be positive");
  return std::exp(-(kappa + 1.0 / T2) * tau_s / 2.0);
}

/// floor(T2 / T2*).
inline long memory_capacity(double T2, double T2_star) {
  nvmem::detail::require(T2 > 0.0 && T2_star > 0.0 && std::isfinite(T2 / T2_star),
                         "memory_capacity: T2 and T2* must be positive and finite");
  return static_cast<long>(std::floor(T2 / T2_star));
}

struct Metrics {
  std::vector<double> efficiency;  // E per retrieved state, input order
  std::optional<double> fidelity_estimate;
  std::optional<long> capacity;
  std::optional<double> silencing_suppression_db;
  std::vector<double> efficiency_unsilenced;  // companion run without silencing
  std::optional<double> tau_s, tau_r;         // swap runs
};

// T2* = 1 / Gamma_hwhm.
inline void fill_common_metrics(Metrics& m, const Scenario& sc, double tau_s) {
  m.fidelity_estimate = fidelity_estimate(sc.cavity.kappa_min, sc.ensemble.T2, tau_s);
  if (std::isfinite(sc.ensemble.T2)) m.capacity = memory_capacity(sc.ensemble.T2, 1.0 / sc.ensemble.density.gamma_hwhm);
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  SimulationTrace trace;
  EchoTable echoes;
  Metrics metrics;
  std::vector<Finding> findings;
  ControlSchedule schedule;
  double dt = 0.0;
};

/// Resonator initially holding the qubit excitation; everything resonant.
inline RunResult run_swap(const Scenario& sc, const dynamics::PropagateOptions& opt = {}) {
  sc.validate();
  nvmem::detail::require(sc.initial_cavity != cplx(0.0), "run_swap: initial cavity amplitude is zero");
  const auto ens = build_ensemble(sc);
  RunResult r;
  r.schedule.t_end = sc.t_end;
  r.schedule.segments = {{0.0, sc.t_end, sc.cavity.omega_r, sc.cavity.kappa_min}};
  auto x = dynamics::ground_state(ens);
  x.a = sc.initial_cavity;
  r.dt = resolve_dt(sc, ens, r.schedule);
  r.trace = dynamics::propagate(ens, r.schedule, x, r.dt, opt);

  // first minimum of |a|^2, then the next maximum
  const auto& a = r.trace.a;
  std::optional<std::size_t> k_min, k_max;
  for (std::size_t k = 1; k + 1 < a.size(); ++k) {
    const double v = std::norm(a[k]);
    if (!k_min) {
      if (v < std::norm(a[k - 1]) && v <= std::norm(a[k + 1])) k_min = k;
    } else if (v > std::norm(a[k - 1]) && v >= std::norm(a[k + 1])) {
      k_max = k;
      break;
    }
  }
  if (k_min) r.metrics.tau_s = r.trace.t[*k_min];
  if (k_max) r.metrics.tau_r = r.trace.t[*k_max];
  const double ts = r.metrics.tau_s.value_or(std::numbers::pi / (2.0 * ens.g_ens()));
  fill_common_metrics(r.metrics, sc, ts);
  return r;
}

namespace detail {

inline double flip_weight(const DiscretizedEnsemble& ens, const std::vector<double>& flips, int pulses) {
  double acc = 0.0, norm = 0.0;
  for (std::size_t j = 0; j < ens.size(); ++j) {
    const double g2 = ens.coupling(j) * ens.coupling(j);
    acc += g2 * std::pow(std::sin(0.5 * flips[j]), 2 * pulses);
    norm += g2;
  }
  return norm > 0.0 ? acc / norm : 0.0;
}

inline EchoTable tabulate(const Scenario& sc, const SimulationTrace& tr, const DiscretizedEnsemble& ens,
                          const std::vector<double>& flips) {
  std::vector<double> t_in;
  for (const auto& p : sc.pulses) t_in.push_back(p.t);
  const auto gens = predicted_echo_times(t_in, sc.refocus.times);
  EchoTable table;
  std::vector<double> stored;
  for (const auto& p : sc.pulses) stored.push_back(measure_echo(tr, input_window(p)).bright_peak);
  for (std::size_t g = 0; g < gens.size(); ++g) {
    const auto wins = echo_windows(gens[g], sc.pulses, sc.ensemble.density.gamma_hwhm);
    const bool last = g + 1 == gens.size();
    for (std::size_t i = 0; i < gens[g].size(); ++i) {
      EchoRow row = measure_echo(tr, wins[i]);
      row.pulse_id = static_cast<int>(i);
      row.generation = static_cast<int>(g) + 1;
      row.t_in = t_in[i];
      row.t_pred = gens[g][i];
      if (last) {
        row.retrieved = sc.refocus.times.size() < 2 ||
                        std::any_of(sc.retrieval.begin(), sc.retrieval.end(),
                                    [&](const Window& w) { return w.contains(row.t_pred); });
        const double ideal = stored[i] * std::exp(-ens.gamma_perp * (row.t_pred - row.t_in)) *
                             flip_weight(ens, flips, static_cast<int>(sc.refocus.times.size()));
        if (ideal > 0.0) row.retention = row.bright_peak / ideal;
      }
      table.push_back(row);
    }
  }
  return table;
}

}  // namespace detail

/// Write pulses, one refocusing pulse, echoes at 2 tau - t_i.
inline RunResult run_two_pulse_echo(const Scenario& sc, const dynamics::PropagateOptions& opt = {}) {
  sc.validate();
  nvmem::detail::require(sc.refocus.times.size() == 1, "run_two_pulse_echo: exactly one refocusing pulse required");
  nvmem::detail::require(sc.silencing.empty(), "run_two_pulse_echo: silencing windows are not allowed");
  nvmem::detail::require(!sc.pulses.empty(), "run_two_pulse_echo: no write pulses");
  for (const auto& p : sc.pulses)
    if (2.0 * sc.refocus.times.front() - p.t > sc.t_end)
      throw InvalidInput("run_two_pulse_echo: predicted echo at " + detail::num(2.0 * sc.refocus.times.front() - p.t) +
                         " s lies beyond t_end");
  const auto [ens, flips] = build_medium(sc);
  RunResult r;
  r.schedule = build_echo_schedule(sc, flips);
  r.dt = resolve_dt(sc, ens, r.schedule);
  r.trace = dynamics::propagate(ens, r.schedule, dynamics::ground_state(ens), r.dt, opt);
  r.echoes = detail::tabulate(sc, r.trace, ens, flips);
  for (std::size_t i = 0; i < sc.pulses.size(); ++i)
    r.metrics.efficiency.push_back(r.echoes[i].energy / input_energy(r.trace, sc.pulses[i]));
  fill_common_metrics(r.metrics, sc, std::numbers::pi / (2.0 * ens.g_ens()));
  return r;
}

struct ProtocolOptions {
  dynamics::PropagateOptions propagate;
  bool companion_run = true;  // repeat with Delta = 0 for the suppression metric
};

/// Write, two refocusing pulses with a silenced first echo, on-demand read.
inline RunResult run_full_protocol(const Scenario& sc, const ProtocolOptions& opt = {}) {
  sc.validate();
  nvmem::detail::require(sc.refocus.times.size() >= 2 && sc.refocus.times.size() % 2 == 0,
                         "run_full_protocol: an even number (>= 2) of refocusing pulses is required");
  nvmem::detail::require(!sc.silencing.empty(), "run_full_protocol: silencing windows are required");
  nvmem::detail::require(!sc.pulses.empty(), "run_full_protocol: no write pulses");
  RunResult r;
  r.findings = validate_sequence(sc);
  if (has_errors(r.findings)) {
    std::string msg = "run_full_protocol: schedule rejected:";
    for (const auto& f : r.findings)
      if (f.level == Finding::Level::error) msg += " [" + f.code + "] " + f.message + ";";
    throw InvalidInput(msg);
  }
  const auto [ens, flips] = build_medium(sc);

  r.schedule = build_schedule(sc, ens, flips, sc.cavity.detune);
  r.dt = resolve_dt(sc, ens, r.schedule);
  r.trace = dynamics::propagate(ens, r.schedule, dynamics::ground_state(ens), r.dt, opt.propagate);
  r.echoes = detail::tabulate(sc, r.trace, ens, flips);

  const std::size_t n = sc.pulses.size();
  const std::size_t last = r.echoes.size() - n;
  for (std::size_t i = 0; i < n; ++i)
    if (r.echoes[last + i].retrieved)
      r.metrics.efficiency.push_back(r.echoes[last + i].energy / input_energy(r.trace, sc.pulses[i]));

  if (opt.companion_run) {
    // same grid as the silenced run
    const auto s0 = build_schedule(sc, ens, flips, 0.0);
    const auto tr0 = dynamics::propagate(ens, s0, dynamics::ground_state(ens), r.dt, opt.propagate);
    const auto t0 = detail::tabulate(sc, tr0, ens, flips);
    double first_sil = 0.0, first_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      first_sil += r.echoes[i].energy;
      first_res += t0[i].energy;
      if (r.echoes[last + i].retrieved)
        r.metrics.efficiency_unsilenced.push_back(t0[last + i].energy / input_energy(tr0, sc.pulses[i]));
    }
    if (first_sil > 0.0) r.metrics.silencing_suppression_db = 10.0 * std::log10(first_res / first_sil);
  }
  fill_common_metrics(r.metrics, sc, std::numbers::pi / (2.0 * ens.g_ens()));
  return r;
}

}  // namespace nvmem::protocol
