#include "doctest.h"
#include "nodesim/cli.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

using namespace nodesim;
using namespace nodesim::cli;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nodesim_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

Invocation make_invocation(const fs::path& out, const std::string& preset = "") {
  Invocation inv;
  if (!preset.empty()) apply_ini(inv.settings, read_file(find_preset(preset)), preset);
  inv.out_dir = out;
  inv.command_line = {"nodesim", "test"};
  return inv;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

int exit_of(const std::function<void()>& f) {
  std::ostringstream err;
  return run_guarded(f, err);
}

}  // namespace

TEST_CASE("ini sections, comments and value syntax") {
  Settings s;
  Origins origins;
  apply_ini(s,
            "# header\n"
            "[readout]\n"
            "threshold = 3   ; trailing comment\n"
            "\n"
            "[timing]\n"
            "phase_uncertainty_budget = 0.05pi\n"
            "[dephasing]\n"
            "ac_lines = 50:0.1, 150:0.02:fixed\n"
            "[scan]\n"
            "bases = y\n"
            "tomography = no\n"
            "[experiment]\n"
            "shots = 2e5\n"
            "[cavity]\n"
            "r1_um = 270.5\n"
            "kappa_mhz = 60\n",
            "a.ini", &origins);
  CHECK(s.experiment.readout.threshold == 3);
  CHECK(s.experiment.timing.phase_uncertainty_budget == Approx(0.05 * std::numbers::pi));
  REQUIRE(s.experiment.dephasing.ac.size() == 2);
  CHECK(s.experiment.dephasing.ac[0].random_phase);
  CHECK_FALSE(s.experiment.dephasing.ac[1].random_phase);
  CHECK(s.experiment.dephasing.ac[1].amplitude_mg == 0.02);
  CHECK(s.scan.bases == std::vector<Pauli>{Pauli::Y});
  CHECK_FALSE(s.scan.tomography);
  CHECK(s.experiment.shots == 200000);
  CHECK(s.budget.geometry.r1_m == Approx(270.5e-6));
  CHECK(s.budget.kappa.rad_per_s == Approx(2 * std::numbers::pi * 60e6));
  CHECK(origins.at("readout.threshold") == "a.ini:3");
  CHECK(origins.at("experiment.shots") == "a.ini:13");
}

TEST_CASE("ini errors carry file and line") {
  Settings s;
  CHECK(message_of([&] { apply_ini(s, "[readout]\nthreshold = 2\nbogus = 1\n", "f.ini"); }).rfind("f.ini:3:", 0) == 0);
  CHECK(message_of([&] { apply_ini(s, "threshold = 2\n", "f.ini"); }).find("outside any [section]") !=
        std::string::npos);
  CHECK(message_of([&] { apply_ini(s, "[readout\n", "f.ini"); }).rfind("f.ini:1: malformed", 0) == 0);
  CHECK(message_of([&] { apply_ini(s, "\n[readout]\nthreshold\n", "f.ini"); }).rfind("f.ini:3:", 0) == 0);
  const std::string bad = message_of([&] { apply_ini(s, "[readout]\nthreshold = two\n", "f.ini"); });
  CHECK(bad.rfind("f.ini:2: readout.threshold:", 0) == 0);
  CHECK(message_of([&] { apply_ini(s, "[experiment]\nshots = -3\n", "f.ini"); }).find("non-negative integer") !=
        std::string::npos);
  CHECK(message_of([&] { apply_ini(s, "[dephasing]\nac_lines = 50\n", "f.ini"); }).find("frequency:amplitude") !=
        std::string::npos);
  CHECK_THROWS_AS(apply_ini(s, "[scan]\nbases = q\n", "f.ini"), ValidationError);
}

TEST_CASE("layering: later sources win and validation names the origin") {
  Settings s;
  Origins origins;
  apply_ini(s, "[experiment]\nprep_fidelity = 0.95\n", "base.ini", &origins);
  apply_assignment(s, "experiment.prep_fidelity=0.9", "--set", &origins);
  CHECK(s.experiment.prep_fidelity == 0.9);
  CHECK(origins.at("experiment.prep_fidelity") == "--set");

  apply_ini(s, "[experiment]\n\nprep_fidelity = 1.5\n", "over.ini", &origins);
  const std::string msg = message_of([&] { validate(s, origins); });
  CHECK(msg.rfind("over.ini:3: prep_fidelity", 0) == 0);
  CHECK_THROWS_AS(apply_assignment(s, "nosuch.key=1", "--set"), ValidationError);
  CHECK_THROWS_AS(apply_assignment(s, "readout.threshold", "--set"), ValidationError);
}

TEST_CASE("canonical ini reloads to identical settings") {
  Settings s;
  apply_ini(s, read_file(find_preset("calibrated")), "calibrated.ini");
  apply_assignment(s, "cavity.wavelength_nm=369.5", "--set");
  apply_assignment(s, "dephasing.ac_lines=none", "--set");
  apply_assignment(s, "analysis.lower_bound_basis=y", "--set");
  apply_assignment(s, "timing.phase_uncertainty_budget=0.0123456789pi", "--set");
  const std::string text = canonical_ini(s);

  Settings r;
  apply_ini(r, text, "canonical");
  CHECK(canonical_ini(r) == text);
  CHECK(r.budget.geometry.wavelength_m == s.budget.geometry.wavelength_m);
  CHECK(r.budget.kappa.rad_per_s == s.budget.kappa.rad_per_s);
  CHECK(r.experiment.timing.phase_uncertainty_budget == s.experiment.timing.phase_uncertainty_budget);
  CHECK(r.lower_bound_basis == tomo::RotatedBasis::Y);
  CHECK(r.experiment.dephasing.ac.empty());

  // Every registered key appears exactly once.
  for (const auto& key : known_keys()) {
    const std::string leaf = "\n" + key.substr(key.find('.') + 1) + " = ";
    CHECK_MESSAGE(text.find(leaf) != std::string::npos, key);
  }
  CHECK(text.find("kappa_mhz = 58\n") != std::string::npos);
}

TEST_CASE("fnv1a64 reference vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hash_string(0xabcULL) == "fnv1a64:0000000000000abc");
}

TEST_CASE("bundled presets load and validate") {
  for (const char* name : {"calibrated", "ideal", "unstable-geometry"}) {
    Settings s;
    Origins o;
    REQUIRE_NOTHROW(apply_ini(s, read_file(find_preset(name)), name, &o));
    CHECK_NOTHROW(validate(s, o));
  }
  CHECK(message_of([] { find_preset("does-not-exist"); }).find("not found in") != std::string::npos);
}

TEST_CASE("NODE_SIM_PRESETS takes precedence") {
  const fs::path dir = scratch("presets");
  write_text(dir / "calibrated.ini", "[readout]\nthreshold = 7\n");
  ::setenv("NODE_SIM_PRESETS", ("/nonexistent:" + dir.string()).c_str(), 1);
  const fs::path found = find_preset("calibrated");
  ::unsetenv("NODE_SIM_PRESETS");
  CHECK(found == dir / "calibrated.ini");
  CHECK(find_preset("calibrated") != found);
}

TEST_CASE("plans") {
  ScanPlan scan;
  CHECK(plan_settings(scan, "full").size() == 9 + 16);
  CHECK(plan_settings(scan, "tomo").size() == 9);
  CHECK(plan_settings(scan, "z").size() == 1);
  scan.tomography = false;
  const auto s = plan_settings(scan, "full");
  REQUIRE(s.size() == 1 + 16);
  CHECK(s[0] == seq::Setting::atom_z(Pauli::Z));
  CHECK(s[3].delta_phi == Approx(2 * std::numbers::pi * 2 / 8));
  CHECK_THROWS_AS(plan_settings(scan, "partial"), ValidationError);
}

TEST_CASE("exit code mapping") {
  CHECK(exit_of([] {}) == kExitOk);
  CHECK(exit_of([] { throw ValidationError("v"); }) == kExitValidation);
  CHECK(exit_of([] { throw seq::ConfigError("c"); }) == kExitValidation);
  CHECK(exit_of([] { throw tomo::DomainError("d"); }) == kExitValidation);
  CHECK(exit_of([] { throw std::runtime_error("parse"); }) == kExitValidation);
  CHECK(exit_of([] { throw NumericalError("n"); }) == kExitNumerical);
  CHECK(exit_of([] { throw IoError("io"); }) == kExitIo);
  CHECK(exit_of([] { read_file("/nonexistent/file"); }) == kExitIo);
}

TEST_CASE("budget: lossless mirrors put every photon through the output coupler") {
  const fs::path out = scratch("budget_lossless");
  Invocation inv = make_invocation(out);
  for (double t_in : {50.0, 500.0, 5000.0}) {
    inv.settings.budget.mirrors = {t_in, 0.0, 0.0};
    std::ostringstream o, e;
    cmd_budget(inv, o, e);
    CHECK(o.str().find("eta_ext = 1.0000\n") != std::string::npos);
  }
  // Partition oracle with losses: T_in / (T_in + T_other + L).
  inv.settings.budget.mirrors = {300.0, 100.0, 100.0};
  std::ostringstream o, e;
  cmd_budget(inv, o, e);
  const auto j = nlohmann::json::parse(read_file(out / "budget.json"));
  CHECK(j.at("eta_ext").get<double>() == Approx(0.6).epsilon(1e-12));
  CHECK(j.at("rate_hz").get<double>() == Approx(2.5e-3 / 40e-6));
}

TEST_CASE("budget: unstable geometry reported in the waist line") {
  const fs::path out = scratch("budget_unstable");
  Invocation inv = make_invocation(out, "unstable-geometry");
  std::ostringstream o, e;
  cmd_budget(inv, o, e);
  // Oracle: g = 1 − L/R.
  const double g1g2 = (1 - 261.0 / 255.0) * (1 - 261.0 / 304.0);
  REQUIRE(g1g2 < 0.0);
  CHECK(o.str().find("waist_um = UNSTABLE(g1g2=") != std::string::npos);
  CHECK(e.str().find("unstable") != std::string::npos);
  const auto j = nlohmann::json::parse(read_file(out / "budget.json"));
  CHECK(j.at("waist_um").get<std::string>().rfind("UNSTABLE", 0) == 0);
  for (const char* key : {"c_eff = ", "g_eff_mhz = ", "gamma_purcell_mhz = ", "p_cavity = ", "eta_ext = ",
                          "p_detect = ", "finesse = ", "fwhm_ns = ", "rate_hz = "})
    CHECK_MESSAGE(("\n" + o.str()).find(std::string("\n") + key) != std::string::npos, key);
}

TEST_CASE("simulate: reruns are byte-identical and the manifest is consistent") {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  Invocation ia = make_invocation(a, "calibrated");
  ia.settings.experiment.shots = 20000;
  ia.svg = true;
  Invocation ib = ia;
  ib.out_dir = b;
  ia.threads = 1;
  ib.threads = 3;
  std::ostringstream o, e;
  cmd_simulate(ia, {"full", true}, o, e);
  cmd_simulate(ib, {"full", true}, o, e);

  const auto manifest = nlohmann::json::parse(read_file(a / "manifest.json"));
  REQUIRE(manifest.at("outputs").size() >= 6);
  for (const auto& f : manifest.at("outputs")) {
    const std::string name = f.at("file");
    const std::string content = read_file(a / name);
    CHECK_MESSAGE(content == read_file(b / name), name);
    CHECK(f.at("bytes").get<std::size_t>() == content.size());
    CHECK(f.at("fnv1a64").get<std::string>() == hash_string(fnv1a64(content)));
  }
  CHECK(manifest.at("seed").get<std::uint64_t>() == 1);
  CHECK(manifest.at("command").get<std::string>() == "simulate");
  CHECK(verify_manifest(a / "manifest.json"));

  auto tampered = manifest;
  tampered["config"] = manifest.at("config").get<std::string>() + "\n";
  write_text(a / "tampered.json", tampered.dump());
  CHECK_FALSE(verify_manifest(a / "tampered.json"));

  // The stored config reproduces the run.
  Invocation ic = make_invocation(scratch("sim_c"));
  apply_ini(ic.settings, manifest.at("config").get<std::string>(), "manifest");
  cmd_simulate(ic, {"full", false}, o, e);
  CHECK(read_file(ic.out_dir / "summary.csv") == read_file(a / "summary.csv"));
}

TEST_CASE("simulate with zero shots warns and succeeds") {
  Invocation inv = make_invocation(scratch("sim_zero"), "calibrated");
  inv.settings.experiment.shots = 0;
  std::ostringstream o, e;
  CHECK(run_guarded([&] { cmd_simulate(inv, {"full", false}, o, e); }, e) == kExitOk);
  CHECK(e.str().find("shots = 0") != std::string::npos);
  CHECK(o.str().find("attempts = 0") != std::string::npos);
  const auto side = nlohmann::json::parse(read_file(inv.out_dir / "summary.json"));
  CHECK(side.at("attempts").get<std::uint64_t>() == 0);
}

TEST_CASE("tomo rejects corrupted and missing input") {
  const fs::path dir = scratch("tomo_bad");
  Invocation inv = make_invocation(dir / "out");
  write_text(dir / "bad.csv", "photon,atom_rotated,delta_phi\nz,0,zero\n");
  std::ostringstream o, e;
  CHECK(run_guarded([&] { cmd_tomo(inv, {dir / "bad.csv"}, o, e); }, e) == kExitValidation);
  CHECK(e.str().find("bad.csv") != std::string::npos);
  CHECK(run_guarded([&] { cmd_tomo(inv, {dir / "missing.csv"}, o, e); }, e) == kExitIo);
  CHECK(run_guarded([&] { cmd_tomo(inv, {}, o, e); }, e) == kExitValidation);

  // A valid table whose sidecar disagrees on the number of settings.
  Invocation sim = make_invocation(dir / "sim", "calibrated");
  sim.settings.experiment.shots = 2000;
  cmd_simulate(sim, {"full", false}, o, e);
  write_text(dir / "sim" / "summary.json", "{\"attempts_per_setting\": [1, 2]}");
  CHECK(run_guarded([&] { cmd_tomo(inv, {dir / "sim" / "summary.csv"}, o, e); }, e) == kExitValidation);
}

TEST_CASE("tomo on exact Bell-state counts") {
  // Counts = N·Born probability for the target state, with the bright atom
  // eigenvector (1, e^{iΔφ})/√2 for rotated settings.
  const Mat4 bell = bell_vector() * bell_vector().adjoint();
  const double n = 2.0e5;
  auto atom_proj = [](const seq::Setting& s, bool bright) {
    Vec2 v;
    if (!s.atom_rotated) v = bright ? Vec2(1, 0) : Vec2(0, 1);
    else {
      const Complex ph = std::polar(1.0, s.delta_phi);
      v = (bright ? Vec2(1, ph) : Vec2(1, -ph)) / std::sqrt(2.0);
    }
    return Mat2(v * v.adjoint());
  };
  seq::RunSummary summary;
  summary.attempt_period_us = 40;
  for (const auto& s : plan_settings(ScanPlan{}, "full")) {
    seq::SettingSummary ss;
    ss.setting = s;
    for (Polarization port : {Polarization::H, Polarization::V})
      for (bool bright : {true, false}) {
        const Vec2 pv = pauli_eigenvector(s.photon, port == Polarization::H ? 1 : -1);
        const double p = (bell * kron(atom_proj(s, bright), pv * pv.adjoint())).trace().real();
        ss.counts.cell(port, bright) = static_cast<std::uint64_t>(std::llround(n * p));
      }
    ss.attempts = ss.counts.total();
    summary.settings.push_back(ss);
  }
  const fs::path dir = scratch("tomo_bell");
  std::ostringstream csv;
  seq::write_summary_csv(csv, summary);
  write_text(dir / "summary.csv", csv.str());

  Invocation inv = make_invocation(dir / "out");
  std::ostringstream o, e;
  REQUIRE(run_guarded([&] { cmd_tomo(inv, {dir / "summary.csv"}, o, e); }, e) == kExitOk);
  const auto j = nlohmann::json::parse(read_file(dir / "out" / "report.json"));
  CHECK(j.at("contrast_z").at("value").get<double>() == Approx(1.0).epsilon(1e-6));
  CHECK(j.at("lower_bound_raw").at("f_lower").at("value").get<double>() == Approx(1.0).epsilon(1e-4));
  CHECK(j.at("fidelity_mle").get<double>() == Approx(1.0).epsilon(1e-4));
  CHECK(j.at("purity").at("value").get<double>() == Approx(1.0).epsilon(1e-3));
  CHECK(j.at("mle_converged").get<bool>());
  CHECK(e.str().find("no summary.json") != std::string::npos);
  for (const char* f : {"rho_linear.txt", "rho_mle.txt", "rho_aligned.txt", "density_bars.csv", "manifest.json"})
    CHECK_MESSAGE(fs::exists(dir / "out" / f), f);
}

TEST_CASE("synth-heatmap and calibrate recover extinguishing angles") {
  const fs::path dir = scratch("calib");
  Invocation inv = make_invocation(dir / "map");
  std::ostringstream o, e;
  cmd_synth_heatmap(inv, o, e);
  inv.out_dir = dir / "cal";
  cmd_calibrate(inv, dir / "map" / "heatmap.csv", o, e);
  const auto j = nlohmann::json::parse(read_file(dir / "cal" / "calibration.json"));
  // The reported angles must extinguish the wrong port of the fitted model.
  const jones::FiberModel fitted{j.at("fiber").at("alpha"), j.at("fiber").at("beta"), j.at("fiber").at("delta")};
  const jones::WaveplateOffsets offsets{j.at("offsets").at("hwp"), j.at("offsets").at("qwp")};
  for (const auto& b : j.at("bases")) {
    const Pauli basis = pauli_from_letter(b.at("basis").get<std::string>()[0]);
    const jones::WaveplateSetting w{b.at("theta_hwp_rad").get<double>(), b.at("theta_qwp_rad").get<double>(), offsets};
    CHECK(jones::extinction_error(fitted, w, basis) < 1e-8);
  }
  CHECK(j.at("residual").get<double>() < 1e-8);
  write_text(dir / "bad.csv", "hwp,qwp,v\n0,0\n");
  CHECK(run_guarded([&] { cmd_calibrate(inv, dir / "bad.csv", o, e); }, e) == kExitValidation);
}

TEST_CASE("ramsey command writes both qubits") {
  Invocation inv = make_invocation(scratch("ramsey"), "calibrated");
  inv.settings.ramsey.options.shots_per_point = 400;
  std::ostringstream o, e;
  cmd_ramsey(inv, o, e);
  const auto j = nlohmann::json::parse(read_file(inv.out_dir / "ramsey.json"));
  REQUIRE(j.at("zeeman").at("bounded").get<bool>());
  REQUIRE(j.at("hyperfine").at("bounded").get<bool>());
  CHECK(j.at("hyperfine").at("tau_us").get<double>() > j.at("zeeman").at("tau_us").get<double>());

  inv.settings.experiment.dephasing = {};
  inv.out_dir = scratch("ramsey_quiet");
  cmd_ramsey(inv, o, e);
  CHECK(o.str().find("unbounded") != std::string::npos);
}
