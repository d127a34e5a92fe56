#pragma once

// Single-spin and collective couplings, the inhomogeneous spectral density and
// its discretisation into frequency bins (omega_j, g_j).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nvmem/errors.hpp"
#include "nvmem/units.hpp"

namespace nvmem::ensemble {

using Vec3 = Eigen::Vector3d;

/// g = |gamma_e| |dB0| |sin theta| / sqrt(2), theta the angle between the NV
/// axis and the vacuum field. |dB0 x axis| = |dB0| |sin theta|, which is also
/// well defined (zero) for a vanishing field.
inline double single_spin_coupling(const Vec3& delta_b0, const Vec3& nv_axis, double gamma_e) {
  detail::require(nv_axis.allFinite() && std::abs(nv_axis.norm() - 1.0) <= 1e-9,
                  "single_spin_coupling: nv_axis must be a unit vector");
  detail::require(delta_b0.allFinite() && std::isfinite(gamma_e), "single_spin_coupling: non-finite input");
  return std::abs(gamma_e) * delta_b0.cross(nv_axis).norm() / std::sqrt(2.0);
}

struct FieldMap {
  std::vector<Vec3> positions;     // metres
  std::vector<Vec3> delta_b0;      // rms vacuum field, tesla
  std::vector<bool> in_sample;     // sample region flag
  std::vector<double> cell_volume;  // optional quadrature weights, default 1
  std::vector<Vec3> crystal_axes;  // NV orientations present in the sample
};

struct FillingFactors {
  double alpha = 0.0;
  double eta = 0.0;
};

/// Riemann-sum filling factor eta and orientation factor alpha. With several
/// crystal axes alpha averages sin^2(theta) over them.
inline FillingFactors filling_factors(const FieldMap& map) {
  const std::size_t n = map.delta_b0.size();
  detail::require(n > 0 && map.in_sample.size() == n, "filling_factors: field and sample arrays must match");
  detail::require(map.cell_volume.empty() || map.cell_volume.size() == n,
                  "filling_factors: cell_volume length mismatch");
  detail::require(!map.crystal_axes.empty(), "filling_factors: no crystal axis given");
  for (const auto& ax : map.crystal_axes)
    detail::require(std::abs(ax.norm() - 1.0) <= 1e-9, "filling_factors: crystal axes must be unit vectors");

  double total = 0.0, sample = 0.0, transverse = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = map.cell_volume.empty() ? 1.0 : map.cell_volume[k];
    const double b2 = map.delta_b0[k].squaredNorm();
    total += w * b2;
    if (!map.in_sample[k]) continue;
    sample += w * b2;
    double t = 0.0;
    for (const auto& ax : map.crystal_axes) t += map.delta_b0[k].cross(ax).squaredNorm();
    transverse += w * t / static_cast<double>(map.crystal_axes.size());
  }
  if (!(sample > 0.0)) throw InvalidInput("filling_factors: sample region carries no field energy");
  return {transverse / sample, sample / total};
}

/// g_ens = |gamma_e| sqrt(mu0 hbar omega_r rho alpha eta / 4).
inline double ensemble_coupling(double rho, double omega_r, double alpha, double eta, double gamma_e) {
  detail::require(rho > 0.0 && omega_r > 0.0, "ensemble_coupling: density and frequency must be positive");
  detail::require(alpha > 0.0 && alpha <= 1.0 && eta > 0.0 && eta <= 1.0,
                  "ensemble_coupling: alpha and eta must lie in (0, 1]");
  return std::abs(gamma_e) * std::sqrt(mu0 * hbar * omega_r * rho * alpha * eta / 4.0);
}

enum class LineShape { lorentzian, gaussian };

inline std::string to_string(LineShape s) { return s == LineShape::lorentzian ? "lorentzian" : "gaussian"; }

struct HyperfineComponent {
  double offset = 0.0;  // rad/s relative to the centre
  double weight = 1.0;
};

// gamma_hwhm is the half width at half maximum, so the Lorentzian free
// induction decay is exactly exp(-gamma_hwhm t) and T2* = 1 / gamma_hwhm.
struct SpectralDensity {
  LineShape shape = LineShape::lorentzian;
  double gamma_hwhm = 0.0;  // rad/s
  double center = 0.0;      // rad/s
  std::vector<HyperfineComponent> hf_offsets{{0.0, 1.0}};

  void validate() const {
    detail::require(std::isfinite(gamma_hwhm) && gamma_hwhm > 0.0, "SpectralDensity: width must be positive");
    detail::require(std::isfinite(center), "SpectralDensity: centre must be finite");
    detail::require(!hf_offsets.empty(), "SpectralDensity: at least one component required");
    double sum = 0.0;
    for (const auto& c : hf_offsets) {
      detail::require(c.weight >= 0.0 && std::isfinite(c.offset), "SpectralDensity: bad hyperfine component");
      sum += c.weight;
    }
    detail::require(std::abs(sum - 1.0) <= 1e-12, "SpectralDensity: component weights must sum to 1");
  }

  // Gaussian standard deviation with the same HWHM.
  double sigma() const { return gamma_hwhm / std::sqrt(2.0 * std::log(2.0)); }

  // Unnormalised single-line profile at detuning x from a component centre.
  double profile(double x) const {
    if (shape == LineShape::lorentzian) return 1.0 / (x * x + gamma_hwhm * gamma_hwhm);
    const double s = sigma();
    return std::exp(-0.5 * x * x / (s * s));
  }
};

struct DiscretizedEnsemble {
  std::vector<double> omega;   // absolute angular frequency per bin, ascending
  std::vector<double> g_full;  // coupling per bin at full polarisation
  double polarization = 1.0;
  double gamma_perp = 0.0;     // homogeneous amplitude decay rate, 1 / T2
  double center = 0.0;         // rotating-frame reference omega_s

  // provenance, kept for serialisation
  SpectralDensity density;
  int bins_per_component = 0;
  double span = 0.0;

  std::size_t size() const { return omega.size(); }
  double coupling(std::size_t j) const { return std::sqrt(polarization) * g_full[j]; }

  std::vector<double> couplings() const {
    std::vector<double> g(g_full.size());
    const double s = std::sqrt(polarization);
    std::transform(g_full.begin(), g_full.end(), g.begin(), [s](double v) { return s * v; });
    return g;
  }

  std::vector<double> detunings() const {
    std::vector<double> d(omega.size());
    std::transform(omega.begin(), omega.end(), d.begin(), [c = center](double w) { return w - c; });
    return d;
  }

  double g_ens_full() const {
    double acc = 0.0;
    for (double g : g_full) acc += g * g;
    return std::sqrt(acc);
  }
  double g_ens() const { return std::sqrt(polarization) * g_ens_full(); }

  // Width of one frequency bin (0 for a single bin).
  double bin_spacing() const {
    return bins_per_component > 1 ? 2.0 * span * density.gamma_hwhm / bins_per_component : 0.0;
  }

  DiscretizedEnsemble with_polarization(double p) const {
    detail::require(p >= 0.0 && p <= 1.0, "polarization must lie in [0, 1]");
    DiscretizedEnsemble e = *this;
    e.polarization = p;
    return e;
  }
};

/// Equally spaced bins over centre +/- span * gamma for every hyperfine
/// component; each bin receives midpoint mass profile(x_j) dx and the kept
/// mass is renormalised so that sum g_j^2 = g_ens^2 p exactly.
inline DiscretizedEnsemble discretize(const SpectralDensity& density, double g_ens, int bins, double span,
                                      double polarization = 1.0, double gamma_perp = 0.0) {
  density.validate();
  detail::require(bins >= 1, "discretize: bin count must be at least 1");
  detail::require(span >= 4.0, "discretize: span must be at least 4 widths");
  detail::require(g_ens >= 0.0 && std::isfinite(g_ens), "discretize: g_ens must be non-negative");
  detail::require(polarization >= 0.0 && polarization <= 1.0, "discretize: polarization must lie in [0, 1]");
  detail::require(gamma_perp >= 0.0 && std::isfinite(gamma_perp), "discretize: gamma_perp must be non-negative");

  const auto m = static_cast<std::size_t>(bins);
  const double half = span * density.gamma_hwhm;
  const double dx = 2.0 * half / static_cast<double>(bins);
  std::vector<double> x(m), mass(m);
  for (std::size_t k = 0; k < m; ++k) {
    x[k] = -half + (static_cast<double>(k) + 0.5) * dx;
    mass[k] = density.profile(x[k]);
  }
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (double& v : mass) v /= total;

  struct Bin {
    double omega, g2;
  };
  std::vector<Bin> all;
  all.reserve(m * density.hf_offsets.size());
  for (const auto& c : density.hf_offsets) {
    if (c.weight == 0.0) continue;
    for (std::size_t k = 0; k < m; ++k)
      all.push_back({density.center + c.offset + x[k], g_ens * g_ens * c.weight * mass[k]});
  }
  std::stable_sort(all.begin(), all.end(), [](const Bin& a, const Bin& b) { return a.omega < b.omega; });

  DiscretizedEnsemble e;
  e.omega.reserve(all.size());
  e.g_full.reserve(all.size());
  for (const auto& b : all) {
    e.omega.push_back(b.omega);
    e.g_full.push_back(std::sqrt(b.g2));
  }
  e.polarization = polarization;
  e.gamma_perp = gamma_perp;
  e.center = density.center;
  e.density = density;
  e.bins_per_component = bins;
  e.span = span;
  return e;
}

/// b = sum_j g_j s_j / g_ens.
inline cplx bright_mode_amplitude(const DiscretizedEnsemble& ens, std::span<const cplx> spin_amplitudes) {
  detail::require(spin_amplitudes.size() == ens.size(), "bright_mode_amplitude: amplitude count != bin count");
  const double g = ens.g_ens();
  if (!(g > 0.0)) throw InvalidInput("bright_mode_amplitude: ensemble has zero coupling");
  cplx acc = 0.0;
  const double s = std::sqrt(ens.polarization);
  for (std::size_t j = 0; j < ens.size(); ++j) acc += s * ens.g_full[j] * spin_amplitudes[j];
  return acc / g;
}

}  // namespace nvmem::ensemble
