#pragma once

// NV ground-state spin Hamiltonian (electron S=1 x 14N nuclear I=1), level
// labelling, transition branches versus field and ODMR-style stick spectra.
//
// Basis ordering: index = 3 * ms_index + mi_index with ms_index 0,1,2 <->
// m_S = +1, 0, -1 (same for m_I). Energies are angular frequencies (H / hbar).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "nvmem/errors.hpp"
#include "nvmem/units.hpp"

namespace nvmem::spin {

using Vec3 = Eigen::Vector3d;
using Matrix3c = Eigen::Matrix3cd;
using Matrix9c = Eigen::Matrix<cplx, 9, 9>;
using Vector9c = Eigen::Matrix<cplx, 9, 1>;

struct NVParams {
  double D = angular(2.878e9);
  double E = 0.0;
  double A_z = angular(-2.1e6);
  double Q_nuc = angular(-5.0e6);
  double gamma_e = angular(-28.0e9);  // rad/s per tesla
  bool hyperfine_enabled = true;

  void validate() const {
    detail::require(std::isfinite(D) && std::isfinite(E) && std::isfinite(A_z) &&
                        std::isfinite(Q_nuc) && std::isfinite(gamma_e),
                    "NVParams: all constants must be finite");
    detail::require(D > 0.0, "NVParams: D must be positive");
    detail::require(E >= 0.0, "NVParams: E must be non-negative");
  }
};

// Field validity guard for the ground-state model.
inline constexpr double max_field_tesla = 0.1;

struct MagneticField {
  Vec3 B = Vec3::Zero();  // tesla, crystal frame
};

// The four <111> NV orientations in the crystal frame, unit norm.
inline std::array<Vec3, 4> nv_axes() {
  const double n = 1.0 / std::sqrt(3.0);
  return {Vec3(1, 1, 1) * n, Vec3(1, -1, -1) * n, Vec3(-1, 1, -1) * n, Vec3(-1, -1, 1) * n};
}

// Spin-1 operators in the m = +1, 0, -1 basis (hbar = 1).
struct Spin1 {
  Matrix3c x, y, z;
};

inline const Spin1& spin1() {
  static const Spin1 ops = [] {
    Spin1 s;
    const double r = 1.0 / std::sqrt(2.0);
    const cplx i(0.0, 1.0);
    s.x << 0, r, 0, r, 0, r, 0, r, 0;
    s.y << 0, -i * r, 0, i * r, 0, -i * r, 0, i * r, 0;
    s.z << 1, 0, 0, 0, 0, 0, 0, 0, -1;
    return s;
  }();
  return ops;
}

// Orthonormal frame (x, y, z) with z = nv_axis. The transverse x axis is the
// crystal basis vector least parallel to the axis, orthogonalised.
inline std::array<Vec3, 3> nv_frame(const Vec3& nv_axis) {
  const Vec3 z = nv_axis;
  Eigen::Index k = 0;
  z.cwiseAbs().minCoeff(&k);
  Vec3 ref = Vec3::Zero();
  ref(k) = 1.0;
  const Vec3 x = (ref - ref.dot(z) * z).normalized();
  const Vec3 y = z.cross(x);
  return {x, y, z};
}

namespace detail {

inline Matrix9c kron(const Matrix3c& a, const Matrix3c& b) {
  Matrix9c out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.block<3, 3>(3 * i, 3 * j) = a(i, j) * b;
  return out;
}

inline void check_axis(const Vec3& axis) {
  nvmem::detail::require(axis.allFinite() && std::abs(axis.norm() - 1.0) <= 1e-9,
                         "nv_axis must be a finite unit vector");
}

constexpr std::array<int, 3> m_values{+1, 0, -1};

}  // namespace detail

inline Matrix9c build_spin_hamiltonian(const NVParams& params, const MagneticField& field,
                                       const Vec3& nv_axis) {
  params.validate();
  detail::check_axis(nv_axis);
  nvmem::detail::require(field.B.allFinite(), "magnetic field must be finite");
  nvmem::detail::require(field.B.norm() <= max_field_tesla,
                         "magnetic field exceeds the 0.1 T validity guard");

  const auto& s = spin1();
  const Matrix3c id = Matrix3c::Identity();
  const auto [ex, ey, ez] = nv_frame(nv_axis);
  const double bx = field.B.dot(ex), by = field.B.dot(ey), bz = field.B.dot(ez);

  Matrix3c electron = params.D * s.z * s.z +
                      params.gamma_e * (bx * s.x + by * s.y + bz * s.z) +
                      params.E * (s.x * s.x - s.y * s.y);
  Matrix9c h = detail::kron(electron, id);
  if (params.hyperfine_enabled) {
    h += params.A_z * detail::kron(s.z, s.z);
    h += params.Q_nuc * detail::kron(id, s.z * s.z - (2.0 / 3.0) * id);
  }
  return h;
}

struct StateLabel {
  int m_s = 0;
  int m_i = 0;
  double overlap = 0.0;  // weight of the dominant basis state
  bool mixed = false;

  std::string str() const {
    if (mixed) return "mixed";
    auto f = [](int m) { return m > 0 ? "+" + std::to_string(m) : std::to_string(m); };
    return "|" + f(m_s) + "," + f(m_i) + ">";
  }
};

struct LevelSet {
  std::array<double, 9> energies{};
  Matrix9c states = Matrix9c::Identity();  // columns are eigenvectors
  std::array<StateLabel, 9> labels{};
};

namespace detail {

inline StateLabel label_state(const Vector9c& v) {
  StateLabel l;
  Eigen::Index k = 0;
  l.overlap = v.cwiseAbs2().maxCoeff(&k);
  l.m_s = m_values[static_cast<std::size_t>(k / 3)];
  l.m_i = m_values[static_cast<std::size_t>(k % 3)];
  l.mixed = l.overlap < 0.5 - 1e-12;
  return l;
}

}  // namespace detail

// Hermitian eigen-decomposition. Hamiltonians of the form built above commute
// with I_z; when H has no elements between different m_I they are diagonalised
// per nuclear block so that degenerate levels keep a pure nuclear label.
inline LevelSet level_energies(const Matrix9c& h) {
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  nvmem::detail::require(h.allFinite(), "level_energies: non-finite matrix");
  nvmem::detail::require((h - h.adjoint()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
                         "level_energies: matrix is not Hermitian");

  double cross = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j)
      if (i % 3 != j % 3) cross = std::max(cross, std::abs(h(i, j)));

  std::array<double, 9> vals{};
  Matrix9c vecs = Matrix9c::Zero();
  if (cross <= 1e-14 * scale) {
    for (int mi = 0; mi < 3; ++mi) {
      Matrix3c block;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) block(a, b) = h(3 * a + mi, 3 * b + mi);
      Eigen::SelfAdjointEigenSolver<Matrix3c> es(block);
      for (int k = 0; k < 3; ++k) {
        const int col = 3 * mi + k;
        vals[static_cast<std::size_t>(col)] = es.eigenvalues()(k);
        for (int a = 0; a < 3; ++a) vecs(3 * a + mi, col) = es.eigenvectors()(a, k);
      }
    }
  } else {
    const Matrix9c herm = 0.5 * (h + h.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix9c> es(herm);
    for (int k = 0; k < 9; ++k) vals[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
    vecs = es.eigenvectors();
  }

  std::array<int, 9> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return vals[static_cast<std::size_t>(a)] < vals[static_cast<std::size_t>(b)];
  });

  LevelSet out;
  for (int k = 0; k < 9; ++k) {
    const auto src = order[static_cast<std::size_t>(k)];
    out.energies[static_cast<std::size_t>(k)] = vals[static_cast<std::size_t>(src)];
    out.states.col(k) = vecs.col(src);
    out.labels[static_cast<std::size_t>(k)] = detail::label_state(out.states.col(k));
  }
  return out;
}

struct TransitionLine {
  double frequency = 0.0;  // rad/s
  std::string from_label;
  std::string to_label;
  double weight = 0.0;  // |<f|S_x|i>|^2
  int branch = 0;       // -1 lower / +1 upper electronic branch
  int m_i = 0;
};

// |<f| S_x (x) 1 |i>|^2 between two states of a level set.
inline double transition_weight(const LevelSet& levels, int from, int to) {
  static const Matrix9c sx = detail::kron(spin1().x, Matrix3c::Identity());
  const cplx amp = levels.states.col(to).adjoint() * sx * levels.states.col(from);
  return std::norm(amp);
}

struct StateClass {
  bool ground = false;  // belongs to the m_S = 0 manifold
  int m_i = 0;          // dominant nuclear projection
  int branch = 0;       // for excited states: -1 lower, +1 upper
};

// Splits the nine levels into the m_S = 0 manifold (three states with the
// largest m_S = 0 population) and the excited manifold, and assigns each
// excited state to the lower or upper branch within its m_I sector.
inline std::array<StateClass, 9> classify_states(const LevelSet& levels) {
  std::array<double, 9> p0{};
  std::array<StateClass, 9> cls{};
  for (int k = 0; k < 9; ++k) {
    const auto v = levels.states.col(k);
    std::array<double, 3> nuc{};
    for (int ms = 0; ms < 3; ++ms)
      for (int mi = 0; mi < 3; ++mi) nuc[static_cast<std::size_t>(mi)] += std::norm(v(3 * ms + mi));
    p0[static_cast<std::size_t>(k)] = std::norm(v(3)) + std::norm(v(4)) + std::norm(v(5));
    const auto it = std::max_element(nuc.begin(), nuc.end());
    cls[static_cast<std::size_t>(k)].m_i = detail::m_values[static_cast<std::size_t>(it - nuc.begin())];
  }
  std::array<int, 9> idx{};
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return p0[static_cast<std::size_t>(a)] > p0[static_cast<std::size_t>(b)];
  });
  for (int k = 0; k < 3; ++k) cls[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])].ground = true;

  for (int mi : detail::m_values) {
    std::vector<int> excited;
    for (int k = 0; k < 9; ++k)
      if (!cls[static_cast<std::size_t>(k)].ground && cls[static_cast<std::size_t>(k)].m_i == mi)
        excited.push_back(k);
    // levels are sorted ascending, so index order is energy order
    for (std::size_t n = 0; n < excited.size(); ++n)
      cls[static_cast<std::size_t>(excited[n])].branch = (n == 0 && excited.size() > 1) ? -1 : +1;
  }
  return cls;
}

namespace detail {
inline std::string excited_label(int branch, int m_i) {
  return std::string("|") + (branch < 0 ? "-" : "+") + "," + (m_i > 0 ? "+" : "") +
         std::to_string(m_i) + ">";
}
inline std::string ground_label(int m_i) {
  return std::string("|0,") + (m_i > 0 ? "+" : "") + std::to_string(m_i) + ">";
}
}  // namespace detail

// Nuclear-spin-conserving transitions |0, m_I> -> |+/-, m_I>.
inline std::vector<TransitionLine> allowed_transitions(const LevelSet& levels) {
  const auto cls = classify_states(levels);
  std::vector<TransitionLine> lines;
  for (int g = 0; g < 9; ++g) {
    const auto& cg = cls[static_cast<std::size_t>(g)];
    if (!cg.ground) continue;
    for (int f = 0; f < 9; ++f) {
      const auto& cf = cls[static_cast<std::size_t>(f)];
      if (cf.ground || cf.m_i != cg.m_i) continue;
      TransitionLine t;
      t.frequency = levels.energies[static_cast<std::size_t>(f)] - levels.energies[static_cast<std::size_t>(g)];
      t.weight = transition_weight(levels, g, f);
      t.branch = cf.branch;
      t.m_i = cg.m_i;
      t.from_label = detail::ground_label(cg.m_i);
      t.to_label = detail::excited_label(cf.branch, cf.m_i);
      lines.push_back(std::move(t));
    }
  }
  std::sort(lines.begin(), lines.end(),
            [](const TransitionLine& a, const TransitionLine& b) { return a.frequency < b.frequency; });
  return lines;
}

struct OrientationClass {
  int id = 0;
  double projection = 0.0;  // |field_direction . axis|
  std::vector<Vec3> axes;
  int multiplicity() const { return static_cast<int>(axes.size()); }
};

// Groups the four <111> axes by their projection on the field direction.
inline std::vector<OrientationClass> orientation_classes(const Vec3& field_direction) {
  detail::check_axis(field_direction);
  std::vector<OrientationClass> classes;
  for (const Vec3& ax : nv_axes()) {
    const double p = std::abs(field_direction.dot(ax));
    auto it = std::find_if(classes.begin(), classes.end(),
                           [&](const OrientationClass& c) { return std::abs(c.projection - p) < 1e-9; });
    if (it == classes.end()) {
      classes.push_back({0, p, {ax}});
    } else {
      it->axes.push_back(ax);
    }
  }
  std::stable_sort(classes.begin(), classes.end(),
                   [](const OrientationClass& a, const OrientationClass& b) { return a.projection > b.projection; });
  for (std::size_t k = 0; k < classes.size(); ++k) classes[k].id = static_cast<int>(k);
  return classes;
}

struct BranchPoint {
  double B = 0.0;  // tesla
  int class_id = 0;
  int branch = 0;
  int m_i = 0;
  double frequency = 0.0;  // rad/s
  double weight = 0.0;
};

struct BranchSweep {
  std::vector<OrientationClass> classes;
  std::vector<BranchPoint> points;  // ordered by class, then B, then (branch, m_i)
};

// Transition branches versus field magnitude. Excited states are tracked from
// one field point to the next by maximal eigenvector overlap (ties keep the
// lower index), so branch curves stay continuous through level crossings.
inline BranchSweep transition_branch_sweep(const NVParams& params, const Vec3& field_direction,
                                           const std::vector<double>& b_range) {
  nvmem::detail::require(!b_range.empty(), "transition_branch_sweep: empty B range");
  BranchSweep out;
  out.classes = orientation_classes(field_direction);

  for (const auto& cls : out.classes) {
    const Vec3 axis = cls.axes.front();
    // per m_I sector: previous eigenvectors of the lower/upper branch
    std::array<std::array<Vector9c, 2>, 3> prev{};
    bool have_prev = false;
    for (double b : b_range) {
      const LevelSet levels = level_energies(build_spin_hamiltonian(params, {field_direction * b}, axis));
      const auto sc = classify_states(levels);
      for (int s = 0; s < 3; ++s) {
        const int mi = detail::m_values[static_cast<std::size_t>(s)];
        int ground = -1;
        std::vector<int> exc;
        for (int k = 0; k < 9; ++k) {
          if (sc[static_cast<std::size_t>(k)].m_i != mi) continue;
          if (sc[static_cast<std::size_t>(k)].ground) ground = k;
          else exc.push_back(k);
        }
        if (ground < 0 || exc.size() != 2) continue;
        std::array<int, 2> assign{exc[0], exc[1]};  // energy order on first point
        if (have_prev) {
          auto ov = [&](int k, int br) {
            return std::norm(prev[static_cast<std::size_t>(s)][static_cast<std::size_t>(br)].dot(levels.states.col(k)));
          };
          const double keep = ov(exc[0], 0) + ov(exc[1], 1);
          const double swap = ov(exc[1], 0) + ov(exc[0], 1);
          if (swap > keep + 1e-12) assign = {exc[1], exc[0]};
        }
        for (int br = 0; br < 2; ++br) {
          const int f = assign[static_cast<std::size_t>(br)];
          prev[static_cast<std::size_t>(s)][static_cast<std::size_t>(br)] = levels.states.col(f);
          BranchPoint p;
          p.B = b;
          p.class_id = cls.id;
          p.branch = br == 0 ? -1 : +1;
          p.m_i = mi;
          p.frequency = levels.energies[static_cast<std::size_t>(f)] - levels.energies[static_cast<std::size_t>(ground)];
          p.weight = transition_weight(levels, ground, f);
          out.points.push_back(p);
        }
      }
      have_prev = true;
    }
  }
  return out;
}

struct WeightedLine {
  double frequency = 0.0;  // rad/s
  double weight = 0.0;     // transition weight x multiplicity
};

struct SpectrumSample {
  double frequency = 0.0;  // rad/s
  double amplitude = 0.0;
};

// Uniform probe grid covering all lines +/- `margin` linewidths.
inline std::vector<double> auto_grid(const std::vector<WeightedLine>& lines, double linewidth_fwhm,
                                     std::size_t points = 2001, double margin = 6.0) {
  if (lines.empty()) return {};
  auto [lo, hi] = std::minmax_element(lines.begin(), lines.end(), [](const auto& a, const auto& b) {
    return a.frequency < b.frequency;
  });
  const double f0 = lo->frequency - margin * linewidth_fwhm;
  const double f1 = hi->frequency + margin * linewidth_fwhm;
  std::vector<double> grid(points);
  for (std::size_t k = 0; k < points; ++k)
    grid[k] = f0 + (f1 - f0) * static_cast<double>(k) / static_cast<double>(points - 1);
  return grid;
}

// Sum of Lorentzians (FWHM `linewidth_fwhm`) normalised to a unit maximum.
inline std::vector<SpectrumSample> odmr_stick_spectrum(const std::vector<WeightedLine>& lines,
                                                       double linewidth_fwhm, std::vector<double> grid = {}) {
  nvmem::detail::require(linewidth_fwhm > 0.0 && std::isfinite(linewidth_fwhm),
                         "odmr_stick_spectrum: linewidth must be positive");
  std::vector<WeightedLine> active;
  for (const auto& l : lines)
    if (l.weight > 0.0) active.push_back(l);
  if (active.empty()) return {};
  if (grid.empty()) grid = auto_grid(active, linewidth_fwhm);

  const double hw = 0.5 * linewidth_fwhm;
  std::vector<SpectrumSample> out(grid.size());
  double peak = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double acc = 0.0;
    for (const auto& l : active) {
      const double d = grid[k] - l.frequency;
      acc += l.weight * hw * hw / (d * d + hw * hw);
    }
    out[k] = {grid[k], acc};
    peak = std::max(peak, acc);
  }
  for (auto& s : out) s.amplitude /= peak;
  return out;
}

inline std::vector<SpectrumSample> odmr_stick_spectrum(const LevelSet& levels, double linewidth_fwhm,
                                                       std::vector<double> grid = {}) {
  std::vector<WeightedLine> lines;
  for (const auto& t : allowed_transitions(levels)) lines.push_back({t.frequency, t.weight});
  return odmr_stick_spectrum(lines, linewidth_fwhm, std::move(grid));
}

}  // namespace nvmem::spin
