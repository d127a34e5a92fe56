#pragma once

// Command-line driver. `run` is the whole program; tools/nvmem.cpp only
// forwards argv. Exit codes: 0 ok, 1 usage, 2 invalid input or failed
// validation, 3 numerical precondition rejected.

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "nvmem/dynamics.hpp"
#include "nvmem/io.hpp"
#include "nvmem/protocol.hpp"
#include "nvmem/spin_levels.hpp"

#ifndef NVMEM_VERSION
#define NVMEM_VERSION "0.0.0"
#endif

namespace nvmem::cli {

namespace fs = std::filesystem;
using io::json;

enum Exit : int { ok = 0, usage = 1, invalid = 2, precondition = 3 };

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256: OpenSSL digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Options {
  std::string command;
  std::string scenario;
  std::string out = ".";
  std::vector<std::string> overrides;
  std::optional<long> seed;
  int threads = 1;
  std::size_t trace_stride = 1;
  std::string axis;
  std::vector<std::string> values;
  std::string mode = "auto";  // sweep: swap | echo | protocol | auto
  bool companion = true;
};

/// Scenario document with overrides applied, plus the digests of every file read.
struct Input {
  json doc;
  fs::path dir;
  json digests = json::array();
};

inline Input load_input(const Options& o) {
  Input in;
  const fs::path path(o.scenario);
  const auto text = read_file(path);
  in.digests.push_back({{"path", o.scenario}, {"sha256", sha256_hex(text)}});
  try {
    in.doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", o.scenario + ": " + e.what());
  }
  for (const auto& s : o.overrides) io::apply_override(in.doc, s);
  in.dir = path.parent_path();
  // referenced ensemble file
  if (in.doc.contains("ensemble") && in.doc["ensemble"].is_object() && in.doc["ensemble"].contains("file") &&
      in.doc["ensemble"]["file"].is_string()) {
    const auto rel = in.doc["ensemble"]["file"].get<std::string>();
    const auto full = in.dir / rel;
    if (fs::exists(full)) in.digests.push_back({{"path", rel}, {"sha256", sha256_hex(read_file(full))}});
  }
  return in;
}

inline protocol::Scenario scenario_of(const Input& in, const Options& o) {
  auto sc = io::parse_scenario(in.doc, in.dir);
  if (o.seed) sc.seed = static_cast<std::uint64_t>(*o.seed);
  return sc;
}

inline json manifest(const Options& o, const Input& in, const json& resolved) {
  json m;
  m["tool"] = "nvmem";
  m["version"] = NVMEM_VERSION;
  m["command"] = o.command;
  m["inputs"] = in.digests;
  m["overrides"] = o.overrides;
  m["seed"] = o.seed ? json(*o.seed) : json(nullptr);
  m["threads"] = o.threads;
  m["resolved"] = resolved;
  return m;
}

inline json resolved_run(const protocol::Scenario& sc, double dt) {
  auto j = io::scenario_to_json(sc);
  j["run"]["dt_used_s"] = dt;
  return j;
}

inline fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw InvalidInput("cannot create output directory " + dir);
  return p;
}

inline void write_trace(const fs::path& out, const dynamics::SimulationTrace& tr, std::size_t stride) {
  std::ostringstream os;
  io::write_trace_csv(os, tr, stride);
  io::write_text(out / "trace.csv", os.str());
}

inline void write_echoes(const fs::path& out, const protocol::EchoTable& t) {
  std::ostringstream os;
  io::write_echo_table_csv(os, t);
  io::write_text(out / "echo_table.csv", os.str());
}

// ---------------------------------------------------------------------------
// commands

inline int cmd_levels(const Options& o, std::ostream& log) {
  const auto in = load_input(o);
  const auto cfg = io::parse_levels(in.doc);
  const auto out = prepare_out(o.out);

  const auto sweep = spin::transition_branch_sweep(cfg.nv, cfg.direction, cfg.b_tesla.values());
  std::ostringstream os;
  io::write_levels_csv(os, sweep);
  io::write_text(out / "levels.csv", os.str());

  json resolved = in.doc.at("levels");
  if (cfg.odmr_b) {
    std::vector<spin::WeightedLine> lines;
    for (const auto& cls : spin::orientation_classes(cfg.direction)) {
      const auto levels = spin::level_energies(
          spin::build_spin_hamiltonian(cfg.nv, {cfg.direction * *cfg.odmr_b}, cls.axes.front()));
      for (const auto& t : spin::allowed_transitions(levels))
        lines.push_back({t.frequency, t.weight * cls.multiplicity()});
    }
    const auto grid = spin::auto_grid(lines, cfg.odmr_fwhm, static_cast<std::size_t>(cfg.odmr_points));
    std::ostringstream od;
    io::write_odmr_csv(od, spin::odmr_stick_spectrum(lines, cfg.odmr_fwhm, grid));
    io::write_text(out / "odmr.csv", od.str());
  }
  io::write_json(out / "manifest.json", manifest(o, in, resolved));
  log << "levels: " << sweep.points.size() << " points in " << sweep.classes.size() << " orientation classes\n";
  return ok;
}

/// Local maxima of |S| at least `floor` times the global maximum, ascending in frequency.
inline std::vector<double> spectrum_peaks(const std::vector<dynamics::SpectrumPoint>& s, double floor = 0.2) {
  double top = 0.0;
  for (const auto& p : s) top = std::max(top, std::abs(p.response));
  std::vector<double> out;
  for (std::size_t k = 1; k + 1 < s.size(); ++k) {
    const double v = std::abs(s[k].response);
    if (v >= floor * top && v > std::abs(s[k - 1].response) && v >= std::abs(s[k + 1].response))
      out.push_back(s[k].omega);
  }
  return out;
}

inline int cmd_spectrum(const Options& o, std::ostream& log) {
  const auto in = load_input(o);
  const auto sc = scenario_of(in, o);
  const auto cfg = io::parse_spectrum(in.doc);
  const auto out = prepare_out(o.out);
  const auto ens = protocol::build_ensemble(sc);
  const double kappa = cfg.kappa.value_or(sc.cavity.kappa_min);
  std::vector<double> probe;
  for (double f : cfg.probe_hz.values()) probe.push_back(angular(f));
  auto compute = [&](double omega_r) {
    return cfg.kind == io::SpectrumConfig::Kind::transmission
               ? dynamics::transmission_spectrum(ens, omega_r, kappa, probe, cfg.options)
               : dynamics::reflection_spectrum(ens, omega_r, kappa, probe, cfg.options);
  };

  std::vector<double> resonators;
  if (cfg.resonator_hz)
    for (double f : cfg.resonator_hz->values()) resonators.push_back(angular(f));
  else
    resonators.push_back(sc.cavity.omega_r);

  std::vector<std::vector<dynamics::SpectrumPoint>> maps(resonators.size());
  for (std::size_t k = 0; k < resonators.size(); ++k) maps[k] = compute(resonators[k]);

  if (cfg.resonator_hz) {
    std::ostringstream os;
    io::write_anticrossing_csv(os, resonators, maps);
    io::write_text(out / "anticrossing.csv", os.str());
  }
  // line at the baseline resonator frequency
  const auto centre = compute(sc.cavity.omega_r);
  std::ostringstream os;
  io::write_spectrum_csv(os, centre);
  io::write_text(out / "spectrum.csv", os.str());

  json m;
  json peaks = json::array();
  const auto pk = spectrum_peaks(centre);
  for (double w : pk) peaks.push_back(hertz(w));
  m["peaks_hz"] = peaks;
  m["splitting_hz"] = pk.size() >= 2 ? json(hertz(pk.back() - pk.front())) : json(nullptr);
  json pol = json::array();
  for (double w : dynamics::polariton_eigenfrequencies(sc.cavity.omega_r, {{ens.center, ens.g_ens()}}))
    pol.push_back(hertz(w));
  m["polariton_hz"] = pol;
  m["probe_bin_hz"] = probe.size() > 1 ? hertz(probe[1] - probe[0]) : 0.0;
  io::write_json(out / "metrics.json", m);

  json resolved = resolved_run(sc, 0.0);
  resolved["spectrum"] = in.doc.at("spectrum");
  io::write_json(out / "manifest.json", manifest(o, in, resolved));
  log << "spectrum: " << probe.size() << " probe points x " << resonators.size() << " resonator settings\n";
  return ok;
}

inline std::string infer_mode(const protocol::Scenario& sc) {
  if (sc.refocus.times.empty()) return "swap";
  if (sc.refocus.times.size() == 1) return "echo";
  return "protocol";
}

/// Runs one simulation kind; returns the result for artifact writing.
inline protocol::RunResult simulate(const std::string& mode, const protocol::Scenario& sc, bool companion) {
  if (mode == "swap") return protocol::run_swap(sc);
  if (mode == "echo") return protocol::run_two_pulse_echo(sc);
  if (mode == "protocol") {
    protocol::ProtocolOptions po;
    po.companion_run = companion;
    return protocol::run_full_protocol(sc, po);
  }
  throw InvalidInput("unknown run mode '" + mode + "'");
}

inline json run_metrics(const protocol::RunResult& r) {
  auto m = io::metrics_to_json(r.metrics);
  if (!r.findings.empty()) m["findings"] = io::findings_to_json(r.findings);
  return m;
}

inline int cmd_simulate(const Options& o, const std::string& mode, std::ostream& log) {
  const auto in = load_input(o);
  const auto sc = scenario_of(in, o);
  const auto out = prepare_out(o.out);
  const auto r = simulate(mode, sc, o.companion);
  write_trace(out, r.trace, o.trace_stride);
  if (mode != "swap") write_echoes(out, r.echoes);
  io::write_json(out / "metrics.json", run_metrics(r));
  io::write_json(out / "manifest.json", manifest(o, in, resolved_run(sc, r.dt)));
  log << mode << ": " << r.trace.size() << " samples, dt = " << r.dt << " s\n";
  return ok;
}

inline int cmd_validate(const Options& o, std::ostream& log) {
  const auto in = load_input(o);
  const auto sc = scenario_of(in, o);
  const auto findings = protocol::validate_sequence(sc);
  const auto j = io::findings_to_json(findings);
  log << j.dump(2) << "\n";
  const auto out = prepare_out(o.out);
  io::write_json(out / "findings.json", j);
  io::write_json(out / "manifest.json", manifest(o, in, resolved_run(sc, 0.0)));
  return protocol::has_errors(findings) ? invalid : ok;
}

struct PointResult {
  std::string status = "ok";
  std::string message;
  json metrics;
};

inline std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) return io::fmt(v.get<double>());
  if (v.is_number()) return v.dump();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  auto s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") != std::string::npos) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return s;
}

inline int cmd_sweep(const Options& o, std::ostream& log) {
  if (o.axis.empty()) throw SchemaError("/", "sweep needs --axis");
  if (o.values.size() < 2) throw SchemaError("/", "sweep needs at least two --values");
  const auto in = load_input(o);
  const auto out = prepare_out(o.out);
  std::vector<json> values;
  for (const auto& v : o.values) values.push_back(io::parse_override_value(v));

  // every point must accept the axis key before anything runs
  std::vector<json> docs;
  for (const auto& v : values) {
    json d = in.doc;
    io::set_dotted(d, o.axis, v);
    docs.push_back(std::move(d));
  }

  std::vector<PointResult> results(values.size());
  std::vector<json> resolved(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < values.size(); k = next++) {
      auto& pr = results[k];
      const auto dir = out / ("point_" + std::string(3 - std::min<std::size_t>(3, std::to_string(k).size()), '0') +
                              std::to_string(k));
      try {
        Input pin{docs[k], in.dir, in.digests};
        auto sc = scenario_of(pin, o);
        const auto mode = o.mode == "auto" ? infer_mode(sc) : o.mode;
        const auto r = simulate(mode, sc, o.companion);
        pr.metrics = run_metrics(r);
        pr.metrics.erase("findings");
        resolved[k] = resolved_run(sc, r.dt);
      } catch (const PreconditionViolation& e) {
        pr.status = "precondition";
        pr.message = e.what();
      } catch (const Error& e) {
        pr.status = "invalid";
        pr.message = e.what();
      }
      fs::create_directories(dir);
      json m = pr.metrics.is_null() ? json::object() : pr.metrics;
      m["status"] = pr.status;
      if (!pr.message.empty()) m["error"] = pr.message;
      io::write_json(dir / "metrics.json", m);
    }
  };
  const int n = std::max(1, std::min<int>(o.threads, static_cast<int>(values.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // columns in order of first appearance
  std::vector<std::string> cols;
  std::vector<std::vector<std::pair<std::string, json>>> flat(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!results[k].metrics.is_null()) flat[k] = io::flatten(results[k].metrics);
    for (const auto& [name, v] : flat[k])
      if (std::find(cols.begin(), cols.end(), name) == cols.end()) cols.push_back(name);
  }
  std::ostringstream os;
  os << "index," << o.axis << ",status";
  for (const auto& c : cols) os << ',' << c;
  os << '\n';
  std::size_t failed = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    os << k << ',' << csv_cell(values[k]) << ',' << results[k].status;
    for (const auto& c : cols) {
      auto it = std::find_if(flat[k].begin(), flat[k].end(), [&](const auto& p) { return p.first == c; });
      os << ',' << (it == flat[k].end() ? std::string() : csv_cell(it->second));
    }
    os << '\n';
    if (results[k].status != "ok") {
      ++failed;
      log << "point " << k << " failed: " << results[k].message << "\n";
    }
  }
  io::write_text(out / "sweep.csv", os.str());

  json man = manifest(o, in, io::scenario_to_json(scenario_of(in, o)));
  man["sweep"] = {{"axis", o.axis}, {"values", values}, {"mode", o.mode}, {"points", resolved}};
  man.erase("threads");  // sweep output does not depend on it
  io::write_json(out / "manifest.json", man);
  log << "sweep: " << values.size() << " points, " << failed << " failed\n";
  return ok;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Spin-ensemble microwave quantum memory simulator", "nvmem"};
  app.set_version_flag("--version", std::string(NVMEM_VERSION));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--scenario", o.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--set", o.overrides, "Override a scenario value: dotted.key=value")->take_all();
    c->add_option("--seed", o.seed, "Seed for randomised flip angles");
  };
  auto traced = [&](CLI::App* c) {
    c->add_option("--trace-stride", o.trace_stride, "Write every N-th trace sample")->check(CLI::PositiveNumber);
  };

  auto* levels = app.add_subcommand("levels", "Transition frequencies versus field, optional ODMR spectrum");
  common(levels);
  auto* spectrum = app.add_subcommand("spectrum", "Steady-state reflection / transmission spectra");
  common(spectrum);
  auto* swap = app.add_subcommand("swap", "Resonator-to-ensemble swap dynamics");
  common(swap);
  traced(swap);
  auto* echo = app.add_subcommand("echo", "Two-pulse echo with one refocusing pulse");
  common(echo);
  traced(echo);
  auto* proto = app.add_subcommand("protocol", "Full write / silence / retrieve sequence");
  common(proto);
  traced(proto);
  proto->add_flag("!--no-companion", o.companion, "Skip the unsilenced reference run");
  auto* validate = app.add_subcommand("validate", "Check a control sequence without running it");
  common(validate);
  auto* sweep = app.add_subcommand("sweep", "Run a scenario over a list of values of one key");
  common(sweep);
  sweep->add_option("--axis", o.axis, "Dotted key to vary")->required();
  sweep->add_option("--values", o.values, "Values, comma separated")->required()->delimiter(',');
  sweep->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_option("--run", o.mode, "swap | echo | protocol | auto")
      ->check(CLI::IsMember({"auto", "swap", "echo", "protocol"}));
  sweep->add_flag("!--no-companion", o.companion, "Skip the unsilenced reference run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (*levels) { o.command = "levels"; return cmd_levels(o, log); }
    if (*spectrum) { o.command = "spectrum"; return cmd_spectrum(o, log); }
    if (*swap) { o.command = "swap"; return cmd_simulate(o, "swap", log); }
    if (*echo) { o.command = "echo"; return cmd_simulate(o, "echo", log); }
    if (*proto) { o.command = "protocol"; return cmd_simulate(o, "protocol", log); }
    if (*validate) { o.command = "validate"; return cmd_validate(o, log); }
    if (*sweep) { o.command = "sweep"; return cmd_sweep(o, log); }
  } catch (const PreconditionViolation& e) {
    err << "error: " << e.what() << "\n";
    return precondition;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return invalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return invalid;
  }
  return usage;
}

}  // namespace nvmem::cli
