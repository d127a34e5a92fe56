#pragma once

// File formats. Scenario and ensemble files are JSON with frequencies in plain
// Hz, rates in 1/s and times in seconds; everything is converted to angular
// units once, here. Outputs are CSV and JSON.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nvmem/dynamics.hpp"
#include "nvmem/ensemble.hpp"
#include "nvmem/errors.hpp"
#include "nvmem/protocol.hpp"
#include "nvmem/spin_levels.hpp"
#include "nvmem/units.hpp"

namespace nvmem::io {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Strict object reader: typed lookups with JSON-pointer error messages, and a
// final check that no unknown keys were supplied.

class Reader {
 public:
  Reader(const json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) throw SchemaError(ptr_.empty() ? "/" : ptr_, "expected an object");
  }

  const std::string& pointer() const { return ptr_; }
  std::string at(const std::string& key) const { return ptr_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  bool present(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    if (!present(key)) throw SchemaError(at(key), "missing required key");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw SchemaError(at(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(at(key), "expected a finite number");
    return d;
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  std::optional<double> nullable(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  long integer(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_integer()) throw SchemaError(at(key), "expected an integer");
    return v.get<long>();
  }
  long integer(const std::string& key, long fallback) { return has(key) ? integer(key) : fallback; }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw SchemaError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw SchemaError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw SchemaError(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number()) throw SchemaError(at(key) + "/" + std::to_string(k), "expected a number");
      out.push_back(v[k].get<double>());
    }
    return out;
  }

  Reader object(const std::string& key) { return Reader(raw(key), at(key)); }

  std::vector<Reader> objects(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw SchemaError(at(key), "expected an array of objects");
    std::vector<Reader> out;
    for (std::size_t k = 0; k < v.size(); ++k) out.emplace_back(v[k], at(key) + "/" + std::to_string(k));
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw SchemaError(at(k), "unknown key");
  }

 private:
  const json& j_;
  std::string ptr_;
  std::set<std::string> seen_;
};

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Overrides: dotted keys, array elements by index, e.g. pulses.0.phase_rad=1.2

inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

inline void set_dotted(json& doc, const std::string& key, const json& value) {
  json* node = &doc;
  std::string ptr;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw SchemaError("/", "empty override key");
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& p = parts[k];
    ptr += "/" + p;
    json* next = nullptr;
    if (node->is_object() && node->contains(p)) {
      next = &(*node)[p];
    } else if (node->is_array() && !p.empty() && p.find_first_not_of("0123456789") == std::string::npos &&
               std::stoul(p) < node->size()) {
      next = &(*node)[std::stoul(p)];
    }
    if (!next) throw SchemaError(ptr, "override refers to a key that does not exist");
    node = next;
  }
  *node = value;
}

inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw SchemaError("/", "override must look like key=value: " + assignment);
  set_dotted(doc, assignment.substr(0, eq), parse_override_value(assignment.substr(eq + 1)));
}

// ---------------------------------------------------------------------------
// Ensemble files

inline ensemble::LineShape parse_shape(Reader& r, const std::string& key) {
  const auto s = r.string(key);
  if (s == "lorentzian") return ensemble::LineShape::lorentzian;
  if (s == "gaussian") return ensemble::LineShape::gaussian;
  throw SchemaError(r.at(key), "unknown line shape '" + s + "'");
}

inline std::vector<ensemble::HyperfineComponent> parse_hyperfine(Reader& r, const std::string& key) {
  auto items = r.objects(key);
  if (items.empty()) throw SchemaError(r.at(key), "at least one component required");
  std::vector<ensemble::HyperfineComponent> out;
  bool any_weight = false;
  for (auto& it : items) any_weight |= it.has("weight");
  for (auto& it : items) {
    ensemble::HyperfineComponent c;
    c.offset = angular(it.number("offset_hz"));
    c.weight = any_weight ? it.number("weight") : 1.0 / static_cast<double>(items.size());
    it.finish();
    out.push_back(c);
  }
  return out;
}

inline json ensemble_to_json(const ensemble::DiscretizedEnsemble& e) {
  json j;
  j["shape"] = ensemble::to_string(e.density.shape);
  j["gamma_hwhm_hz"] = hertz(e.density.gamma_hwhm);
  j["center_hz"] = hertz(e.center);
  j["hf_offsets"] = json::array();
  for (const auto& c : e.density.hf_offsets) j["hf_offsets"].push_back({{"offset_hz", hertz(c.offset)}, {"weight", c.weight}});
  j["M"] = e.bins_per_component;
  j["span"] = e.span;
  j["polarization"] = e.polarization;
  j["bins"] = json::array();
  for (std::size_t k = 0; k < e.size(); ++k) j["bins"].push_back({{"omega_hz", hertz(e.omega[k])}, {"g_hz", hertz(e.g_full[k])}});
  return j;
}

inline ensemble::DiscretizedEnsemble ensemble_from_json(const json& j, const std::string& pointer = "") {
  Reader r(j, pointer);
  ensemble::SpectralDensity d;
  d.shape = parse_shape(r, "shape");
  d.gamma_hwhm = angular(r.number("gamma_hwhm_hz"));
  d.center = angular(r.number("center_hz"));
  if (r.has("hf_offsets")) d.hf_offsets = parse_hyperfine(r, "hf_offsets");
  const long m = r.integer("M");
  const double span = r.number("span");
  const double p = r.number("polarization", 1.0);
  ensemble::DiscretizedEnsemble e;
  e.density = d;
  e.center = d.center;
  e.bins_per_component = static_cast<int>(m);
  e.span = span;
  e.polarization = p;
  for (auto& b : r.objects("bins")) {
    e.omega.push_back(angular(b.number("omega_hz")));
    e.g_full.push_back(angular(b.number("g_hz")));
    b.finish();
  }
  if (e.omega.empty()) throw SchemaError(r.at("bins"), "no bins");
  for (std::size_t k = 1; k < e.omega.size(); ++k)
    if (e.omega[k] < e.omega[k - 1]) throw SchemaError(r.at("bins"), "bins must be sorted by frequency");
  if (!(p >= 0.0 && p <= 1.0)) throw SchemaError(r.at("polarization"), "must lie in [0, 1]");
  r.finish();
  return e;
}

// ---------------------------------------------------------------------------
// Scenario files

// integral of exp(-x^2 / sigma^2) over +/- 3 sigma, in units of sigma
inline double pulse_energy_factor() { return std::sqrt(std::numbers::pi) * std::erf(3.0); }

inline protocol::FlipSpec parse_flip(Reader r) {
  protocol::FlipSpec f;
  const auto kind = r.string("kind", "fixed");
  if (kind == "fixed") {
    f.kind = protocol::FlipSpec::Kind::fixed;
    f.angle = r.number("angle_rad", std::numbers::pi);
  } else if (kind == "uniform") {
    f.kind = protocol::FlipSpec::Kind::uniform;
    f.lo = r.number("lo_rad");
    f.hi = r.number("hi_rad");
    f.levels = static_cast<int>(r.integer("levels"));
    if (f.levels < 1) throw SchemaError(r.at("levels"), "must be at least 1");
  } else if (kind == "list") {
    f.kind = protocol::FlipSpec::Kind::list;
    f.angles = r.numbers("angles_rad");
    if (f.angles.empty()) throw SchemaError(r.at("angles_rad"), "empty list");
  } else if (kind == "random_uniform") {
    f.kind = protocol::FlipSpec::Kind::random_uniform;
    f.lo = r.number("lo_rad");
    f.hi = r.number("hi_rad");
  } else {
    throw SchemaError(r.at("kind"), "unknown flip distribution '" + kind + "'");
  }
  if (f.hi < f.lo) throw SchemaError(r.at("hi_rad"), "must not be below lo_rad");
  r.finish();
  return f;
}

inline std::vector<protocol::Window> parse_windows(Reader& r, const std::string& key) {
  std::vector<protocol::Window> out;
  if (!r.has(key)) return out;
  const auto& v = r.raw(key);
  if (!v.is_array()) throw SchemaError(r.at(key), "expected an array of [start, end] pairs");
  for (std::size_t k = 0; k < v.size(); ++k) {
    const auto p = r.at(key) + "/" + std::to_string(k);
    if (!v[k].is_array() || v[k].size() != 2 || !v[k][0].is_number() || !v[k][1].is_number())
      throw SchemaError(p, "expected [start_s, end_s]");
    const protocol::Window w{v[k][0].get<double>(), v[k][1].get<double>()};
    if (!(w.t1 > w.t0)) throw SchemaError(p, "window end must follow its start");
    out.push_back(w);
  }
  return out;
}

/// Parses a scenario document. Relative file references resolve against
/// `base_dir`. Optional "levels" and "spectrum" sections are accepted here
/// and read by their own parsers.
inline protocol::Scenario parse_scenario(const json& j, const std::filesystem::path& base_dir = {}) {
  Reader r(j, "");
  protocol::Scenario sc;
  sc.name = r.string("name", "");
  r.present("description");
  r.present("levels");
  r.present("spectrum");

  {
    auto e = r.object("ensemble");
    auto& es = sc.ensemble;
    if (e.has("file")) {
      const auto path = base_dir / e.string("file");
      auto ens = ensemble_from_json(load_json(path), "");
      es.density = ens.density;
      es.g_ens = ens.g_ens_full();
      es.bins = ens.bins_per_component;
      es.span = ens.span;
      sc.repump_efficiency = ens.polarization;
      es.explicit_bins = std::move(ens);
    } else {
      es.density.shape = parse_shape(e, "shape");
      const bool fwhm = e.has("linewidth_fwhm_hz"), hwhm = e.has("gamma_hwhm_hz");
      if (fwhm == hwhm)
        throw SchemaError(e.at("gamma_hwhm_hz"), "give exactly one of linewidth_fwhm_hz or gamma_hwhm_hz");
      es.width_convention = fwhm ? "fwhm" : "hwhm";
      es.density.gamma_hwhm = fwhm ? angular(0.5 * e.number("linewidth_fwhm_hz")) : angular(e.number("gamma_hwhm_hz"));
      es.density.center = angular(e.number("center_hz"));
      if (e.has("hyperfine")) es.density.hf_offsets = parse_hyperfine(e, "hyperfine");
      if (e.has("g_ens_hz") == e.has("coupling"))
        throw SchemaError(e.at("g_ens_hz"), "give exactly one of g_ens_hz or coupling");
      if (e.has("g_ens_hz")) {
        es.g_ens = angular(e.number("g_ens_hz"));
      } else {
        auto c = e.object("coupling");
        es.g_ens = ensemble::ensemble_coupling(c.number("spin_density_m3"), es.density.center, c.number("alpha"),
                                               c.number("eta"), std::abs(spin::NVParams{}.gamma_e));
        c.finish();
      }
      es.bins = static_cast<int>(e.integer("M", 1001));
      es.span = e.number("span", 20.0);
      if (es.bins < 1) throw SchemaError(e.at("M"), "must be at least 1");
    }
    es.T2 = e.nullable("T2_s").value_or(protocol::infinite_t2);
    if (!(es.T2 > 0.0)) throw SchemaError(e.at("T2_s"), "must be positive or null");
    e.finish();
  }
  {
    auto c = r.object("cavity");
    sc.cavity.omega_r = c.has("omega_r_hz") ? angular(c.number("omega_r_hz")) : sc.ensemble.density.center;
    sc.cavity.kappa_min = c.number("kappa_min_per_s");
    sc.cavity.kappa_max = c.number("kappa_max_per_s");
    sc.cavity.kappa_read = c.nullable("kappa_read_per_s");
    sc.cavity.detune = angular(c.number("detune_hz", 0.0));
    c.finish();
  }
  if (r.has("pulses")) {
    for (auto& p : r.objects("pulses")) {
      protocol::WritePulse w;
      w.t = p.number("t_s");
      w.duration = p.number("duration_s");
      if (!(w.duration > 0.0)) throw SchemaError(p.at("duration_s"), "must be positive");
      if (p.has("amplitude") == p.has("photons"))
        throw SchemaError(p.at("amplitude"), "give exactly one of amplitude or photons");
      w.amplitude = p.has("amplitude") ? p.number("amplitude")
                                       : std::sqrt(p.number("photons") / (w.sigma() * pulse_energy_factor()));
      w.phase = p.number("phase_rad", 0.0);
      w.detuning = angular(p.number("detuning_hz", 0.0));
      p.finish();
      sc.pulses.push_back(w);
    }
  }
  if (r.has("refocus")) {
    auto f = r.object("refocus");
    sc.refocus.times = f.numbers("times_s");
    sc.refocus.phase = f.number("phase_rad", 0.0);
    if (f.has("flip")) sc.refocus.flip = parse_flip(f.object("flip"));
    f.finish();
  }
  sc.silencing = parse_windows(r, "silencing_windows_s");
  sc.retrieval = parse_windows(r, "retrieval_windows_s");
  if (r.has("reset")) {
    auto x = r.object("reset");
    sc.repump_efficiency = x.number("repump_efficiency");
    x.finish();
  }
  if (r.has("initial_cavity")) {
    auto x = r.object("initial_cavity");
    sc.initial_cavity = cplx(x.number("re", 0.0), x.number("im", 0.0));
    x.finish();
  }
  {
    auto x = r.object("run");
    sc.dt = x.nullable("dt_s").value_or(0.0);
    sc.t_end = x.number("t_end_s");
    sc.track_inversion = x.boolean("track_inversion", false);
    sc.seed = static_cast<std::uint64_t>(x.integer("seed", 0));
    x.finish();
  }
  r.finish();
  return sc;
}

/// Resolved scenario, back in file units (for manifests).
inline json scenario_to_json(const protocol::Scenario& sc) {
  json j;
  j["name"] = sc.name;
  const auto& es = sc.ensemble;
  json e;
  e["shape"] = ensemble::to_string(es.density.shape);
  e["gamma_hwhm_hz"] = hertz(es.density.gamma_hwhm);
  e["width_convention_in_input"] = es.width_convention;
  e["center_hz"] = hertz(es.density.center);
  e["hyperfine"] = json::array();
  for (const auto& c : es.density.hf_offsets) e["hyperfine"].push_back({{"offset_hz", hertz(c.offset)}, {"weight", c.weight}});
  e["g_ens_hz"] = hertz(es.g_ens);
  e["M"] = es.bins;
  e["span"] = es.span;
  e["explicit_bins"] = es.explicit_bins.has_value();
  e["T2_s"] = std::isfinite(es.T2) ? json(es.T2) : json(nullptr);
  j["ensemble"] = e;
  j["cavity"] = {{"omega_r_hz", hertz(sc.cavity.omega_r)},
                 {"kappa_min_per_s", sc.cavity.kappa_min},
                 {"kappa_max_per_s", sc.cavity.kappa_max},
                 {"kappa_read_per_s", sc.cavity.read_kappa()},
                 {"detune_hz", hertz(sc.cavity.detune)}};
  j["pulses"] = json::array();
  for (const auto& p : sc.pulses)
    j["pulses"].push_back({{"t_s", p.t}, {"amplitude", p.amplitude}, {"duration_s", p.duration},
                           {"phase_rad", p.phase}, {"detuning_hz", hertz(p.detuning)}});
  json flip;
  switch (sc.refocus.flip.kind) {
    case protocol::FlipSpec::Kind::fixed: flip = {{"kind", "fixed"}, {"angle_rad", sc.refocus.flip.angle}}; break;
    case protocol::FlipSpec::Kind::uniform:
      flip = {{"kind", "uniform"}, {"lo_rad", sc.refocus.flip.lo}, {"hi_rad", sc.refocus.flip.hi}, {"levels", sc.refocus.flip.levels}};
      break;
    case protocol::FlipSpec::Kind::list: flip = {{"kind", "list"}, {"angles_rad", sc.refocus.flip.angles}}; break;
    case protocol::FlipSpec::Kind::random_uniform:
      flip = {{"kind", "random_uniform"}, {"lo_rad", sc.refocus.flip.lo}, {"hi_rad", sc.refocus.flip.hi}};
      break;
  }
  j["refocus"] = {{"times_s", sc.refocus.times}, {"phase_rad", sc.refocus.phase}, {"flip", flip}};
  auto windows = [](const std::vector<protocol::Window>& ws) {
    json a = json::array();
    for (const auto& w : ws) a.push_back({w.t0, w.t1});
    return a;
  };
  j["silencing_windows_s"] = windows(sc.silencing);
  j["retrieval_windows_s"] = windows(sc.retrieval);
  j["reset"] = {{"repump_efficiency", sc.repump_efficiency}};
  j["initial_cavity"] = {{"re", sc.initial_cavity.real()}, {"im", sc.initial_cavity.imag()}};
  j["run"] = {{"dt_s", sc.dt > 0.0 ? json(sc.dt) : json(nullptr)},
              {"t_end_s", sc.t_end},
              {"track_inversion", sc.track_inversion},
              {"seed", sc.seed}};
  return j;
}

// ---------------------------------------------------------------------------
// Level and spectrum sections

struct Range {
  double start = 0.0, stop = 0.0;
  long count = 1;

  std::vector<double> values() const {
    std::vector<double> v(static_cast<std::size_t>(count));
    for (long k = 0; k < count; ++k)
      v[static_cast<std::size_t>(k)] = count == 1 ? start : start + (stop - start) * static_cast<double>(k) / static_cast<double>(count - 1);
    return v;
  }
};

inline Range parse_range(Reader r) {
  Range g{r.number("start"), r.number("stop"), r.integer("count")};
  if (g.count < 1) throw SchemaError(r.at("count"), "must be at least 1");
  if (g.count > 1 && !(g.stop > g.start)) throw SchemaError(r.at("stop"), "must exceed start");
  r.finish();
  return g;
}

struct LevelsConfig {
  spin::NVParams nv;
  spin::Vec3 direction{0.0, 0.0, 1.0};
  Range b_tesla{0.0, 0.01, 101};
  std::optional<double> odmr_b;
  double odmr_fwhm = angular(1e6);
  long odmr_points = 2001;
};

inline LevelsConfig parse_levels(const json& doc) {
  LevelsConfig c;
  if (!doc.contains("levels")) throw SchemaError("/levels", "missing required key");
  Reader r(doc.at("levels"), "/levels");
  if (r.has("nv")) {
    auto n = r.object("nv");
    c.nv.D = angular(n.number("D_hz", hertz(c.nv.D)));
    c.nv.E = angular(n.number("E_hz", hertz(c.nv.E)));
    c.nv.A_z = angular(n.number("A_z_hz", hertz(c.nv.A_z)));
    c.nv.Q_nuc = angular(n.number("Q_hz", hertz(c.nv.Q_nuc)));
    c.nv.gamma_e = angular(n.number("gamma_e_hz_per_tesla", hertz(c.nv.gamma_e)));
    c.nv.hyperfine_enabled = n.boolean("hyperfine", true);
    n.finish();
  }
  if (r.has("field_direction")) {
    const auto d = r.numbers("field_direction");
    if (d.size() != 3) throw SchemaError(r.at("field_direction"), "expected three components");
    c.direction = spin::Vec3(d[0], d[1], d[2]);
    if (!(c.direction.norm() > 0.0)) throw SchemaError(r.at("field_direction"), "must be non-zero");
    c.direction.normalize();
  }
  if (r.has("B_tesla")) c.b_tesla = parse_range(r.object("B_tesla"));
  if (r.has("odmr")) {
    auto o = r.object("odmr");
    c.odmr_b = o.number("B_tesla");
    c.odmr_fwhm = angular(o.number("linewidth_fwhm_hz", 1e6));
    c.odmr_points = o.integer("points", 2001);
    o.finish();
  }
  r.finish();
  return c;
}

struct SpectrumConfig {
  enum class Kind { transmission, reflection };
  Kind kind = Kind::transmission;
  std::optional<double> kappa;  // defaults to the scenario's kappa_min
  Range probe_hz;
  std::optional<Range> resonator_hz;
  dynamics::SpectrumOptions options;
};

inline SpectrumConfig parse_spectrum(const json& doc) {
  SpectrumConfig c;
  if (!doc.contains("spectrum")) throw SchemaError("/spectrum", "missing required key");
  Reader r(doc.at("spectrum"), "/spectrum");
  const auto kind = r.string("kind", "transmission");
  if (kind == "transmission") c.kind = SpectrumConfig::Kind::transmission;
  else if (kind == "reflection") c.kind = SpectrumConfig::Kind::reflection;
  else throw SchemaError(r.at("kind"), "expected transmission or reflection");
  c.kappa = r.nullable("kappa_per_s");
  c.probe_hz = parse_range(r.object("probe_hz"));
  if (r.has("resonator_hz")) c.resonator_hz = parse_range(r.object("resonator_hz"));
  if (auto s = r.nullable("comb_smoothing_hz")) c.options.comb_smoothing = angular(*s);
  r.finish();
  return c;
}

// ---------------------------------------------------------------------------
// Output

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_levels_csv(std::ostream& os, const spin::BranchSweep& sweep) {
  os << "B_tesla,class_id,branch,freq_hz,weight\n";
  for (const auto& p : sweep.points)
    os << fmt(p.B) << ',' << p.class_id << ',' << p.branch << ',' << fmt(hertz(p.frequency)) << ',' << fmt(p.weight) << '\n';
}

inline void write_odmr_csv(std::ostream& os, const std::vector<spin::SpectrumSample>& s) {
  os << "freq_hz,amplitude\n";
  for (const auto& x : s) os << fmt(hertz(x.frequency)) << ',' << fmt(x.amplitude) << '\n';
}

inline void write_trace_csv(std::ostream& os, const dynamics::SimulationTrace& tr, std::size_t stride = 1) {
  os << "t_s,re_a,im_a,re_aout,im_aout,re_bright,im_bright,total_excitation\n";
  for (std::size_t k = 0; k < tr.size(); k += std::max<std::size_t>(stride, 1))
    os << fmt(tr.t[k]) << ',' << fmt(tr.a[k].real()) << ',' << fmt(tr.a[k].imag()) << ',' << fmt(tr.a_out[k].real())
       << ',' << fmt(tr.a_out[k].imag()) << ',' << fmt(tr.bright[k].real()) << ',' << fmt(tr.bright[k].imag()) << ','
       << fmt(tr.total_excitation[k]) << '\n';
}

inline void write_spectrum_csv(std::ostream& os, const std::vector<dynamics::SpectrumPoint>& s) {
  os << "freq_hz,abs_S,arg_S\n";
  for (const auto& p : s) os << fmt(hertz(p.omega)) << ',' << fmt(std::abs(p.response)) << ',' << fmt(std::arg(p.response)) << '\n';
}

inline void write_anticrossing_csv(std::ostream& os, const std::vector<double>& resonator,
                                   const std::vector<std::vector<dynamics::SpectrumPoint>>& maps) {
  os << "resonator_hz,freq_hz,abs_S,arg_S\n";
  for (std::size_t r = 0; r < resonator.size(); ++r)
    for (const auto& p : maps[r])
      os << fmt(hertz(resonator[r])) << ',' << fmt(hertz(p.omega)) << ',' << fmt(std::abs(p.response)) << ','
         << fmt(std::arg(p.response)) << '\n';
}

inline void write_echo_table_csv(std::ostream& os, const protocol::EchoTable& t) {
  os << "pulse_id,t_in_s,t_echo_pred_s,t_echo_obs_s,energy,peak_amp,phase_rad,generation\n";
  for (const auto& e : t)
    os << e.pulse_id << ',' << fmt(e.t_in) << ',' << fmt(e.t_pred) << ',' << fmt(e.t_obs) << ',' << fmt(e.energy) << ','
       << fmt(e.peak_amp) << ',' << fmt(e.phase) << ',' << e.generation << '\n';
}

inline json metrics_to_json(const protocol::Metrics& m) {
  json j;
  j["E"] = m.efficiency;
  if (!m.efficiency_unsilenced.empty()) j["E_unsilenced"] = m.efficiency_unsilenced;
  j["fidelity_estimate"] = m.fidelity_estimate ? json(*m.fidelity_estimate) : json(nullptr);
  j["capacity"] = m.capacity ? json(*m.capacity) : json(nullptr);
  j["silencing_suppression_db"] = m.silencing_suppression_db ? json(*m.silencing_suppression_db) : json(nullptr);
  if (m.tau_s) j["tau_s_s"] = *m.tau_s;
  if (m.tau_r) j["tau_r_s"] = *m.tau_r;
  return j;
}

inline json findings_to_json(const std::vector<protocol::Finding>& f) {
  json a = json::array();
  for (const auto& x : f) a.push_back({{"level", protocol::to_string(x.level)}, {"code", x.code}, {"message", x.message}});
  return a;
}

/// Scalars of a metrics object flattened into column name -> value, arrays
/// as name_0, name_1, ...
inline std::vector<std::pair<std::string, json>> flatten(const json& j, const std::string& prefix = "") {
  std::vector<std::pair<std::string, json>> out;
  for (const auto& [k, v] : j.items()) {
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      auto sub = flatten(v, name);
      out.insert(out.end(), sub.begin(), sub.end());
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(name + "_" + std::to_string(i), v[i]);
    } else {
      out.emplace_back(name, v);
    }
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace nvmem::io
