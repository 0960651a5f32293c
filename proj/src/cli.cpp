#include "nodesim/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#ifndef NODESIM_PRESET_DIR
#define NODESIM_PRESET_DIR "presets"
#endif

namespace nodesim::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kPi = std::numbers::pi;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits, v);
  return buf;
}

// Shortest decimal d with to_stored(d) == stored, for keys kept in other units.
template <class F>
std::string format_converted(double stored, double display, F to_stored) {
  char buf[64];
  for (int digits = 1; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, display);
    const double d = std::strtod(buf, nullptr);
    if (to_stored(d) == stored) return format_double(d);
  }
  return format_double(display);
}

// Plain decimal, optionally followed by "pi" ("0.05pi", "pi", "0.5*pi").
double parse_double(const std::string& raw) {
  std::string s = lower(trim(raw));
  double factor = 1.0;
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "pi") == 0) {
    factor = kPi;
    s = trim(s.substr(0, s.size() - 2));
    if (!s.empty() && s.back() == '*') s = trim(s.substr(0, s.size() - 1));
    if (s.empty()) return kPi;
  }
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw ValidationError("expected a number, got '" + trim(raw) + "'");
  return v * factor;
}

std::uint64_t parse_count(const std::string& raw) {
  const double v = parse_double(raw);
  if (v < 0.0 || v != std::floor(v) || v > 9.0e18)
    throw ValidationError("expected a non-negative integer, got '" + trim(raw) + "'");
  return static_cast<std::uint64_t>(v);
}

int parse_int(const std::string& raw) {
  const double v = parse_double(raw);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw ValidationError("expected an integer, got '" + trim(raw) + "'");
  return static_cast<int>(v);
}

bool parse_bool(const std::string& raw) {
  const std::string s = lower(trim(raw));
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ValidationError("expected true or false, got '" + trim(raw) + "'");
}

std::vector<double> parse_list(const std::string& raw) {
  std::vector<double> out;
  for (const auto& item : split(raw, ',')) out.push_back(parse_double(item));
  return out;
}

std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + format_double(v[k]);
  return s;
}

std::vector<seq::AcLine> parse_ac_lines(const std::string& raw) {
  std::vector<seq::AcLine> out;
  if (lower(trim(raw)) == "none" || trim(raw).empty()) return out;
  for (const auto& item : split(raw, ',')) {
    const auto f = split(item, ':');
    if (f.size() < 2 || f.size() > 3) throw ValidationError("AC line '" + item + "' is not frequency:amplitude[:random|fixed]");
    seq::AcLine l{parse_double(f[0]), parse_double(f[1]), true};
    if (f.size() == 3) {
      const std::string mode = lower(f[2]);
      if (mode == "fixed") l.random_phase = false;
      else if (mode != "random") throw ValidationError("AC line phase must be random or fixed, got '" + f[2] + "'");
    }
    out.push_back(l);
  }
  return out;
}

std::string format_ac_lines(const std::vector<seq::AcLine>& lines) {
  if (lines.empty()) return "none";
  std::string s;
  for (std::size_t k = 0; k < lines.size(); ++k)
    s += (k ? ", " : "") + format_double(lines[k].frequency_hz) + ":" + format_double(lines[k].amplitude_mg) + ":" +
         (lines[k].random_phase ? "random" : "fixed");
  return s;
}

std::vector<Pauli> parse_bases(const std::string& raw) {
  std::vector<Pauli> out;
  if (lower(trim(raw)) == "none" || trim(raw).empty()) return out;
  for (const auto& item : split(raw, ',')) {
    if (item.size() != 1) throw ValidationError("basis must be x, y or z, got '" + item + "'");
    const Pauli p = pauli_from_letter(item[0]);
    if (p == Pauli::I) throw ValidationError("basis must be x, y or z");
    out.push_back(p);
  }
  return out;
}

std::string format_bases(const std::vector<Pauli>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + std::string(1, pauli_letter(v[k]));
  return s;
}

// --- key registry -----------------------------------------------------------

struct KeyDef {
  std::string name;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

template <class Ref>
KeyDef real_key(std::string name, Ref ref) {
  return {std::move(name), [ref](Settings& s, const std::string& v) { ref(s) = parse_double(v); },
          [ref](const Settings& s) { return format_double(ref(const_cast<Settings&>(s))); }};
}

template <class Ref>
KeyDef count_key(std::string name, Ref ref) {
  return {std::move(name), [ref](Settings& s, const std::string& v) { ref(s) = parse_count(v); },
          [ref](const Settings& s) { return std::to_string(ref(const_cast<Settings&>(s))); }};
}

template <class Ref>
KeyDef int_key(std::string name, Ref ref) {
  return {std::move(name), [ref](Settings& s, const std::string& v) { ref(s) = parse_int(v); },
          [ref](const Settings& s) { return std::to_string(ref(const_cast<Settings&>(s))); }};
}

template <class Ref>
KeyDef bool_key(std::string name, Ref ref) {
  return {std::move(name), [ref](Settings& s, const std::string& v) { ref(s) = parse_bool(v); },
          [ref](const Settings& s) { return std::string(ref(const_cast<Settings&>(s)) ? "true" : "false"); }};
}

// Angular rates are configured as ordinary frequencies in MHz.
template <class Ref>
KeyDef mhz_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](Settings& s, const std::string& v) { ref(s) = cavity::AngularRate::from_mhz(parse_double(v)); },
          [ref](const Settings& s) {
            const auto r = ref(const_cast<Settings&>(s));
            return format_converted(r.rad_per_s, r.mhz(),
                                    [](double v) { return cavity::AngularRate::from_mhz(v).rad_per_s; });
          }};
}

// Lengths stored in meters, configured in the given unit.
template <class Ref>
KeyDef scaled_key(std::string name, double unit, Ref ref) {
  return {std::move(name), [ref, unit](Settings& s, const std::string& v) { ref(s) = parse_double(v) * unit; },
          [ref, unit](const Settings& s) {
            const double v = ref(const_cast<Settings&>(s));
            return format_converted(v, v / unit, [unit](double d) { return d * unit; });
          }};
}

#define NS_REF(expr) [](Settings& s) -> auto& { return s.expr; }

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> keys = [] {
    std::vector<KeyDef> k;
    k.push_back(real_key("experiment.b_field_g", NS_REF(experiment.b_field_g)));
    k.push_back(real_key("experiment.prep_fidelity", NS_REF(experiment.prep_fidelity)));
    k.push_back(real_key("experiment.excitation_fidelity", NS_REF(experiment.excitation_fidelity)));
    k.push_back(real_key("experiment.p_cavity", NS_REF(experiment.p_cavity)));
    k.push_back(real_key("experiment.eta_chain", NS_REF(experiment.eta_chain)));
    k.push_back(real_key("experiment.dark_count_prob_h", NS_REF(experiment.dark_count_prob_h)));
    k.push_back(real_key("experiment.dark_count_prob_v", NS_REF(experiment.dark_count_prob_v)));
    k.push_back(real_key("experiment.acceptance_start_ns", NS_REF(experiment.acceptance_start_ns)));
    k.push_back(real_key("experiment.acceptance_window_ns", NS_REF(experiment.acceptance_window_ns)));
    k.push_back(real_key("experiment.wait_window_ns", NS_REF(experiment.wait_window_ns)));
    k.push_back(real_key("experiment.attempt_period_us", NS_REF(experiment.attempt_period_us)));
    k.push_back(count_key("experiment.shots", NS_REF(experiment.shots)));
    k.push_back(count_key("experiment.seed", NS_REF(experiment.seed)));

    k.push_back(real_key("readout.lambda_bright", NS_REF(experiment.readout.lambda_bright)));
    k.push_back(real_key("readout.lambda_dark", NS_REF(experiment.readout.lambda_dark)));
    k.push_back(int_key("readout.threshold", NS_REF(experiment.readout.threshold)));
    k.push_back(real_key("readout.contrast_penalty", NS_REF(experiment.readout.contrast_penalty)));

    k.push_back(real_key("dephasing.b_noise_rms_mg", NS_REF(experiment.dephasing.b_noise_rms_mg)));
    k.push_back({"dephasing.ac_lines",
                 [](Settings& s, const std::string& v) { s.experiment.dephasing.ac = parse_ac_lines(v); },
                 [](const Settings& s) { return format_ac_lines(s.experiment.dephasing.ac); }});
    k.push_back(
        real_key("dephasing.pulse_sequence_duration_us", NS_REF(experiment.dephasing.pulse_sequence_duration_us)));

    k.push_back(real_key("timing.sync_jitter_ps", NS_REF(experiment.timing.sync_jitter_ps)));
    k.push_back(real_key("timing.phase_uncertainty_budget", NS_REF(experiment.timing.phase_uncertainty_budget)));

    k.push_back(real_key("state.target_purity", NS_REF(experiment.state.target_purity)));
    k.push_back(real_key("state.dephasing_share", NS_REF(experiment.state.dephasing_share)));
    k.push_back(real_key("state.photon_frame_rotation", NS_REF(experiment.state.photon_frame_rotation)));

    k.push_back(real_key("photon_analysis.mixing_x", NS_REF(experiment.photon_analysis.mixing_x)));
    k.push_back(real_key("photon_analysis.mixing_y", NS_REF(experiment.photon_analysis.mixing_y)));
    k.push_back(real_key("photon_analysis.mixing_z", NS_REF(experiment.photon_analysis.mixing_z)));

    k.push_back(real_key("emission.gamma_prime_mhz", NS_REF(experiment.emission.gamma_prime_mhz)));
    k.push_back(real_key("emission.tau_cavity_ns", NS_REF(experiment.emission.tau_cavity_ns)));

    k.push_back(mhz_key("cavity.gamma_atom_mhz", NS_REF(budget.gamma_atom_full)));
    k.push_back(mhz_key("cavity.kappa_mhz", NS_REF(budget.kappa)));
    k.push_back(real_key("cavity.t_in_ppm", NS_REF(budget.mirrors.t_in_ppm)));
    k.push_back(real_key("cavity.t_other_ppm", NS_REF(budget.mirrors.t_other_ppm)));
    k.push_back(real_key("cavity.loss_total_ppm", NS_REF(budget.mirrors.loss_total_ppm)));
    k.push_back(scaled_key("cavity.length_um", 1e-6, NS_REF(budget.geometry.length_m)));
    k.push_back(scaled_key("cavity.r1_um", 1e-6, NS_REF(budget.geometry.r1_m)));
    k.push_back(scaled_key("cavity.r2_um", 1e-6, NS_REF(budget.geometry.r2_m)));
    k.push_back(scaled_key("cavity.wavelength_nm", 1e-9, NS_REF(budget.geometry.wavelength_m)));
    k.push_back(real_key("cavity.epsilon_mode", NS_REF(budget.epsilon_mode)));
    k.push_back(real_key("cavity.eta_path", NS_REF(budget.eta_path)));
    k.push_back(real_key("cavity.eta_detector", NS_REF(budget.eta_detector)));
    k.push_back(real_key("cavity.measured_success_probability", NS_REF(budget.measured_success_probability)));

    k.push_back(bool_key("scan.tomography", NS_REF(scan.tomography)));
    k.push_back({"scan.bases", [](Settings& s, const std::string& v) { s.scan.bases = parse_bases(v); },
                 [](const Settings& s) { return format_bases(s.scan.bases); }});
    k.push_back(int_key("scan.points", NS_REF(scan.points)));
    k.push_back(real_key("scan.offset_rad", NS_REF(scan.offset_rad)));

    k.push_back({"ramsey.hold_times_us", [](Settings& s, const std::string& v) { s.ramsey.hold_times_us = parse_list(v); },
                 [](const Settings& s) { return format_list(s.ramsey.hold_times_us); }});
    k.push_back(int_key("ramsey.phase_points", NS_REF(ramsey.options.phase_points)));
    k.push_back(count_key("ramsey.shots_per_point", NS_REF(ramsey.options.shots_per_point)));
    k.push_back(count_key("ramsey.seed", NS_REF(ramsey.options.seed)));

    k.push_back({"analysis.lower_bound_basis",
                 [](Settings& s, const std::string& v) {
                   const std::string b = lower(trim(v));
                   if (b == "x") s.lower_bound_basis = tomo::RotatedBasis::X;
                   else if (b == "y") s.lower_bound_basis = tomo::RotatedBasis::Y;
                   else if (b == "average") s.lower_bound_basis = tomo::RotatedBasis::Average;
                   else throw ValidationError("lower_bound_basis must be x, y or average, got '" + trim(v) + "'");
                 },
                 [](const Settings& s) {
                   switch (s.lower_bound_basis) {
                     case tomo::RotatedBasis::X: return std::string("x");
                     case tomo::RotatedBasis::Y: return std::string("y");
                     default: return std::string("average");
                   }
                 }});
    k.push_back(bool_key("analysis.dark_correct", NS_REF(dark_correct)));

    k.push_back(real_key("jones.alpha", NS_REF(jones.fiber.alpha)));
    k.push_back(real_key("jones.beta", NS_REF(jones.fiber.beta)));
    k.push_back(real_key("jones.delta", NS_REF(jones.fiber.delta)));
    k.push_back(real_key("jones.hwp_offset", NS_REF(jones.offsets.hwp)));
    k.push_back(real_key("jones.qwp_offset", NS_REF(jones.offsets.qwp)));
    k.push_back(int_key("jones.grid_points", NS_REF(jones.grid_points)));
    k.push_back(real_key("jones.noise", NS_REF(jones.noise)));
    k.push_back(count_key("jones.noise_seed", NS_REF(jones.noise_seed)));
    return k;
  }();
  return keys;
}

#undef NS_REF

const KeyDef& lookup(const std::string& key) {
  for (const auto& k : registry())
    if (k.name == key) return k;
  throw ValidationError("unknown key '" + key + "'");
}

void assign(Settings& s, const std::string& key, const std::string& value, const std::string& origin, Origins* origins) {
  try {
    lookup(key).set(s, value);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(origin + ": " + key + ": " + e.what());
  }
  if (origins) (*origins)[key] = origin;
}

// --- output bookkeeping -----------------------------------------------------

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Outputs {
 public:
  Outputs(const Invocation& inv, std::string command) : inv_(inv), command_(std::move(command)), started_(utc_now()) {
    std::error_code ec;
    fs::create_directories(inv.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + inv.out_dir.string() + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = inv_.out_dir / name;
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write " + p.string());
    os << content;
    os.close();
    if (!os) throw IoError("write failed for " + p.string());
    files_.push_back({{"file", name}, {"bytes", content.size()}, {"fnv1a64", hash_string(fnv1a64(content))}});
  }

  /// Writes the manifest last so it lists every output.
  void finish() {
    const std::string config = canonical_ini(inv_.settings);
    write("effective_config.ini", config);
    json m;
    m["tool"] = "nodesim";
    m["version"] = kVersion;
    m["modules"] = {{"quantum-core", kVersion}, {"cavity-qed", kVersion}, {"jones-optics", kVersion},
                    {"sequence-sim", kVersion}, {"tomography", kVersion}, {"cli", kVersion}};
    m["command"] = command_;
    m["command_line"] = inv_.command_line;
    m["seed"] = inv_.settings.experiment.seed;
    m["config_hash"] = hash_string(fnv1a64(config));
    m["config"] = config;
    m["started_utc"] = started_;
    m["finished_utc"] = utc_now();
    m["outputs"] = files_;
    const fs::path p = inv_.out_dir / "manifest.json";
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write " + p.string());
    os << m.dump(2) << '\n';
  }

 private:
  const Invocation& inv_;
  std::string command_;
  std::string started_;
  json files_ = json::array();
};

// --- minimal SVG ------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" "
         "font-size=\"12\">\n<rect width=\"640\" height=\"400\" fill=\"white\"/>\n<text x=\"320\" y=\"20\" "
         "text-anchor=\"middle\">" +
         title + "</text>\n";
}

std::string svg_bars(const std::string& title, const std::vector<double>& values, const std::vector<std::string>& labels) {
  std::string s = svg_header(title);
  const double top = std::max(1e-12, *std::max_element(values.begin(), values.end()));
  const double w = 560.0 / static_cast<double>(std::max<std::size_t>(values.size(), 1));
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double h = 320.0 * values[k] / top;
    const double x = 50.0 + w * static_cast<double>(k);
    s += "<rect x=\"" + fixed(x + 0.1 * w, 1) + "\" y=\"" + fixed(360.0 - h, 1) + "\" width=\"" + fixed(0.8 * w, 1) +
         "\" height=\"" + fixed(h, 1) + "\" fill=\"steelblue\"/>\n";
    if (k < labels.size() && !labels[k].empty())
      s += "<text x=\"" + fixed(x + 0.5 * w, 1) + "\" y=\"378\" text-anchor=\"middle\" font-size=\"9\">" + labels[k] +
           "</text>\n";
  }
  s += "<text x=\"45\" y=\"44\" text-anchor=\"end\">" + fixed(top, 3) + "</text>\n</svg>\n";
  return s;
}

std::string svg_lines(const std::string& title, const std::vector<Series>& series) {
  double x0 = 1e300, x1 = -1e300, y1 = 0.0;
  for (const auto& ser : series)
    for (std::size_t k = 0; k < ser.x.size(); ++k) {
      x0 = std::min(x0, ser.x[k]);
      x1 = std::max(x1, ser.x[k]);
      y1 = std::max(y1, ser.y[k]);
    }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > 0.0)) y1 = 1.0;
  static const char* colors[] = {"steelblue", "darkorange", "seagreen", "crimson"};
  std::string s = svg_header(title);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (std::size_t k = 0; k < series[i].x.size(); ++k)
      pts += fixed(50.0 + 560.0 * (series[i].x[k] - x0) / (x1 - x0), 1) + "," +
             fixed(360.0 - 320.0 * series[i].y[k] / y1, 1) + " ";
    s += "<polyline fill=\"none\" stroke=\"" + std::string(colors[i % 4]) + "\" points=\"" + pts + "\"/>\n";
    s += "<text x=\"600\" y=\"" + std::to_string(44 + 16 * i) + "\" text-anchor=\"end\" fill=\"" + colors[i % 4] +
         "\">" + series[i].name + "</text>\n";
  }
  s += "<text x=\"50\" y=\"378\">" + fixed(x0, 3) + "</text><text x=\"610\" y=\"378\" text-anchor=\"end\">" +
       fixed(x1, 3) + "</text>\n</svg>\n";
  return s;
}

std::string pm(const tomo::Estimate& e, int digits) { return fixed(e.value, digits) + " ± " + fixed(e.error, digits); }

fs::path sidecar_of(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".json");
  return p;
}

}  // namespace

// --- settings ---------------------------------------------------------------

cavity::BudgetInputs Settings::budget_inputs() const {
  cavity::BudgetInputs in = budget;
  in.gamma_purcell = cavity::AngularRate::from_mhz(experiment.emission.gamma_prime_mhz);
  in.tau_cavity_s = experiment.emission.tau_cavity_ns * 1e-9;
  in.attempt_period_s = experiment.attempt_period_us * 1e-6;
  return in;
}

tomo::AnalysisOptions Settings::analysis_options() const {
  tomo::AnalysisOptions o;
  o.dark_h = experiment.dark_in_window_h();
  o.dark_v = experiment.dark_in_window_v();
  o.lower_bound_basis = lower_bound_basis;
  o.dark_correct = dark_correct;
  return o;
}

void apply_ini(Settings& settings, std::string_view text, const std::string& source, Origins* origins) {
  std::istringstream is{std::string(text)};
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto hash = line.find_first_of("#;");
    std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ValidationError(where + ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) throw ValidationError(where + ": empty section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value', got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw ValidationError(where + ": missing key");
    if (section.empty()) throw ValidationError(where + ": key '" + key + "' outside any [section]");
    const std::string full = section + "." + key;
    try {
      lookup(full);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    assign(settings, full, s.substr(eq + 1), where, origins);
  }
}

void apply_assignment(Settings& settings, const std::string& assignment, const std::string& origin, Origins* origins) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError(origin + ": expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  try {
    lookup(key);
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  assign(settings, key, assignment.substr(eq + 1), origin, origins);
}

void validate(const Settings& settings, const Origins& origins) {
  try {
    settings.experiment.validate();
    if (settings.scan.points < 0) throw seq::ConfigError("scan.points must be >= 0");
    if (settings.jones.grid_points < 5) throw seq::ConfigError("jones.grid_points must be >= 5");
    if (!(settings.jones.noise >= 0.0)) throw seq::ConfigError("jones.noise must be >= 0");
  } catch (const seq::ConfigError& e) {
    // Name where the offending key was set. Experiment keys appear in
    // messages without their section prefix.
    const std::string msg = e.what();
    std::string best, where;
    for (const auto& [key, origin] : origins) {
      const std::string shortname = key.rfind("experiment.", 0) == 0 ? key.substr(11) : key;
      if (msg.rfind(shortname, 0) == 0 && shortname.size() > best.size()) {
        best = shortname;
        where = origin;
      }
    }
    throw ValidationError(where.empty() ? msg : where + ": " + msg);
  }
}

std::string canonical_ini(const Settings& settings) {
  std::string out, section;
  for (const auto& k : registry()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(settings) + "\n";
  }
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(k.name);
  return out;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_string(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<fs::path> preset_search_path() {
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("NODE_SIM_PRESETS"))
    for (const auto& d : split(env, ':'))
      if (!d.empty()) dirs.emplace_back(d);
  dirs.emplace_back(NODESIM_PRESET_DIR);
  return dirs;
}

fs::path find_preset(const std::string& name) {
  const std::string file = name.size() > 4 && name.compare(name.size() - 4, 4, ".ini") == 0 ? name : name + ".ini";
  std::string searched;
  for (const auto& dir : preset_search_path()) {
    const fs::path p = dir / file;
    if (fs::is_regular_file(p)) return p;
    searched += (searched.empty() ? "" : ", ") + dir.string();
  }
  throw ValidationError("preset '" + name + "' not found in: " + searched);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

std::vector<seq::Setting> plan_settings(const ScanPlan& scan, const std::string& plan) {
  std::vector<seq::Setting> out;
  if (plan == "z") return {seq::Setting::atom_z(Pauli::Z)};
  if (plan != "full" && plan != "tomo") throw ValidationError("unknown plan '" + plan + "' (full, tomo or z)");
  if (plan == "tomo" || scan.tomography)
    for (Pauli a : kMeasuredPaulis)
      for (Pauli p : kMeasuredPaulis) out.push_back(seq::Setting::for_bases(a, p));
  if (plan == "full") {
    if (out.empty()) out.push_back(seq::Setting::atom_z(Pauli::Z));
    for (Pauli p : scan.bases)
      for (int k = 0; k < scan.points; ++k)
        out.push_back(seq::Setting::rotated(p, scan.offset_rad + 2.0 * kPi * k / scan.points));
  }
  return out;
}

// --- commands ---------------------------------------------------------------

void cmd_budget(const Invocation& inv, std::ostream& out, std::ostream& err) {
  validate(inv.settings);
  const cavity::BudgetReport r = cavity::compute_budget(inv.settings.budget_inputs());
  Outputs files(inv, "budget");

  std::string waist;
  json jw;
  if (const double* w = std::get_if<double>(&r.waist_m)) {
    waist = fixed(*w * 1e6, 3) + " um";
    jw = *w * 1e6;
  } else {
    const auto& e = std::get<cavity::InstabilityError>(r.waist_m);
    waist = e.describe();
    jw = waist;
    err << "warning: resonator geometry is unstable, " << e.describe() << '\n';
  }
  std::string text;
  text += "c_eff = " + fixed(r.c_eff, 4) + "\n";
  text += "g_eff_mhz = " + fixed(r.g_eff_mhz, 3) + " MHz (angular 2pi x value)\n";
  text += "gamma_purcell_mhz = " + fixed(r.gamma_purcell_mhz, 3) + " MHz (angular 2pi x value)\n";
  text += "p_cavity = " + fixed(r.p_cavity, 4) + "\n";
  text += "eta_ext = " + fixed(r.eta_ext, 4) + "\n";
  text += "p_detect = " + sci(r.p_detect, 3) + "\n";
  text += "finesse = " + fixed(r.finesse, 0) + "\n";
  text += "waist_um = " + waist + "\n";
  text += "fwhm_ns = " + fixed(r.fwhm_ns, 3) + " ns\n";
  text += "rate_hz = " + fixed(r.rate_hz, 2) + " Hz\n";
  out << text;
  files.write("budget.txt", text);

  json j;
  j["c_eff"] = r.c_eff;
  j["g_eff_mhz"] = r.g_eff_mhz;
  j["gamma_purcell_mhz"] = r.gamma_purcell_mhz;
  j["p_cavity"] = r.p_cavity;
  j["eta_ext"] = r.eta_ext;
  j["p_detect"] = r.p_detect;
  j["finesse"] = r.finesse;
  j["waist_um"] = jw;
  j["fwhm_ns"] = r.fwhm_ns;
  j["rate_hz"] = r.rate_hz;
  files.write("budget.json", j.dump(2) + "\n");
  files.finish();
}

void cmd_simulate(const Invocation& inv, const SimulateOptions& opts, std::ostream& out, std::ostream& err) {
  validate(inv.settings);
  const seq::ExperimentConfig& cfg = inv.settings.experiment;
  const auto settings = plan_settings(inv.settings.scan, opts.plan);
  if (cfg.shots == 0) err << "warning: shots = 0, the summary is empty\n";

  seq::RunOptions ro;
  ro.threads = inv.threads;
  ro.keep_log = true;
  const seq::RunResult run = seq::run_sequence(cfg, settings, ro);
  Outputs files(inv, "simulate");

  std::ostringstream csv;
  seq::write_summary_csv(csv, run.summary);
  files.write("summary.csv", csv.str());

  json side;
  side["seed"] = cfg.seed;
  side["config_hash"] = hash_string(fnv1a64(canonical_ini(inv.settings)));
  side["attempts"] = run.summary.attempts();
  json per = json::array();
  for (const auto& s : run.summary.settings) per.push_back(s.attempts);
  side["attempts_per_setting"] = per;
  side["detected"] = run.summary.detected();
  side["attempt_period_us"] = cfg.attempt_period_us;
  side["dark_count_prob_h_window"] = cfg.dark_in_window_h();
  side["dark_count_prob_v_window"] = cfg.dark_in_window_v();
  files.write("summary.json", side.dump(2) + "\n");

  const double span = std::min(cfg.wait_window_ns, 100.0);
  const seq::Histogram h = seq::arrival_time_histogram(run.log, 1.0, span);
  std::string hist = "bin_start_ns,count\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    hist += fixed(h.start + static_cast<double>(k) * h.bin_width, 1) + "," + std::to_string(h.counts[k]) + "\n";
  files.write("arrival_histogram.csv", hist);
  if (inv.svg) {
    std::vector<double> v(h.counts.begin(), h.counts.end());
    files.write("arrival_histogram.svg", svg_bars("photon arrival time (1 ns bins)", v, {}));
  }
  if (opts.shot_log) {
    std::ostringstream log;
    seq::write_shot_log(log, run.log, settings);
    files.write("shots.jsonl", log.str());
  }

  std::string text;
  text += "settings = " + std::to_string(settings.size()) + "\n";
  text += "attempts = " + std::to_string(run.summary.attempts()) + "\n";
  text += "detected = " + std::to_string(run.summary.detected()) + "\n";
  if (run.summary.attempts() > 0)
    text += "p_detect = " + sci(static_cast<double>(run.summary.detected()) / run.summary.attempts(), 3) + "\n";
  text += "duration_s = " + fixed(run.summary.duration_s(), 2) + "\n";
  for (const auto& s : run.summary.settings)
    if (!s.setting.atom_rotated && s.setting.photon == Pauli::Z) {
      try {
        text += "contrast_z = " + pm(tomo::z_contrast(tomo::CellCounts(s.counts)), 4) + "\n";
      } catch (const std::invalid_argument&) {
        text += "contrast_z = n/a (no events in one photon port)\n";
      }
    }
  for (Pauli p : inv.settings.scan.bases) {
    std::vector<double> x, y, e;
    for (const auto& s : run.summary.settings)
      if (s.setting.atom_rotated && s.setting.photon == p && s.counts.total() > 0) {
        const tomo::Estimate c = tomo::parity_correlation(tomo::CellCounts(s.counts));
        x.push_back(s.setting.delta_phi);
        y.push_back(c.value);
        e.push_back(c.error);
      }
    if (x.size() < 6) continue;
    try {
      const tomo::SinusoidFit f = tomo::parity_fit(x, y, e);
      text += std::string("parity_contrast_") + pauli_letter(p) + " = " + fixed(f.contrast(), 4) + " ± " +
              fixed(f.contrast_error(), 4) + "\n";
    } catch (const std::exception& ex) {
      text += std::string("parity_contrast_") + pauli_letter(p) + " = n/a (" + ex.what() + ")\n";
    }
  }
  if (const auto w = seq::histogram_fwhm(h)) text += "arrival_fwhm_ns = " + fixed(*w, 2) + "\n";
  out << text;
  files.write("report.txt", text);
  files.finish();
}

void cmd_tomo(const Invocation& inv, const std::vector<fs::path>& summaries, std::ostream& out, std::ostream& err) {
  if (summaries.empty()) throw ValidationError("tomo: no summary files given");
  tomo::AnalysisOptions ao = inv.settings.analysis_options();
  seq::RunSummary merged;
  merged.attempt_period_us = inv.settings.experiment.attempt_period_us;
  bool have_sidecar = false;
  for (const auto& path : summaries) {
    std::istringstream is(read_file(path));
    seq::RunSummary s;
    try {
      s = seq::read_summary_csv(is);
    } catch (const std::runtime_error& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
    std::vector<std::uint64_t> attempts(s.settings.size(), inv.settings.experiment.shots);
    const fs::path side = sidecar_of(path);
    if (fs::is_regular_file(side)) {
      json j;
      try {
        j = json::parse(read_file(side));
        const auto& per = j.at("attempts_per_setting");
        if (per.size() != s.settings.size()) throw ValidationError("attempts_per_setting does not match the CSV");
        for (std::size_t k = 0; k < per.size(); ++k) attempts[k] = per[k].get<std::uint64_t>();
        const double h = j.at("dark_count_prob_h_window").get<double>();
        const double v = j.at("dark_count_prob_v_window").get<double>();
        if (have_sidecar && (h != ao.dark_h || v != ao.dark_v))
          err << "warning: " << side.string() << " has different dark-count probabilities, keeping the first\n";
        if (!have_sidecar) {
          ao.dark_h = h;
          ao.dark_v = v;
        }
        have_sidecar = true;
      } catch (const json::exception& e) {
        throw ValidationError(side.string() + ": " + e.what());
      }
    } else {
      err << "warning: no " << side.filename().string() << " next to " << path.string()
          << ", using experiment.shots and configured dark-count probabilities\n";
    }
    for (std::size_t k = 0; k < s.settings.size(); ++k) {
      s.settings[k].attempts = attempts[k];
      merged.settings.push_back(s.settings[k]);
    }
  }

  const tomo::FidelityReport r = tomo::analyze_run(merged, ao);
  Outputs files(inv, "tomo");

  std::string text;
  text += "contrast_z = " + pm(r.contrast_z, 4) + "\n";
  if (r.parity_x) text += "parity_contrast_x = " + fixed(r.parity_x->contrast(), 4) + " ± " + fixed(r.parity_x->contrast_error(), 4) + "\n";
  if (r.parity_y) text += "parity_contrast_y = " + fixed(r.parity_y->contrast(), 4) + " ± " + fixed(r.parity_y->contrast_error(), 4) + "\n";
  text += "f_lower_raw = " + pm(r.raw.f_lower, 4) + " (" + r.raw.basis_used + ")\n";
  if (r.corrected) {
    text += "f_lower_corrected = " + pm(r.corrected->f_lower, 4) + " (" + r.corrected->basis_used + ")\n";
    if (r.corrections_clamped) err << "warning: dark-count correction clamped negative cells to 0\n";
  }
  text += "purity = " + pm(r.purity, 4) + "\n";
  if (std::isfinite(r.f_upper.value)) text += "f_max = " + pm(r.f_upper, 4) + "\n";
  else text += "f_max = n/a (purity below 0.5)\n";
  text += "fidelity_mle = " + fixed(r.fidelity_mle, 4) + "\n";
  text += "fidelity_aligned = " + fixed(r.alignment.overlap, 4) + " (gain " + fixed(r.alignment.gain, 4) + ")\n";
  text += std::string("linear_inversion_physical = ") + (r.linear_physicality.physical ? "yes" : "no") +
          " (min eigenvalue " + fixed(r.linear_physicality.min_eigenvalue, 5) + ")\n";
  text += std::string("mle_converged = ") + (r.mle.converged ? "yes" : "no") + " (" + std::to_string(r.mle.iterations) +
          " iterations)\n";
  out << text;
  files.write("report.txt", text);

  auto density = [](const Mat4& m) {
    std::ostringstream os;
    write_density(os, m);
    return os.str();
  };
  files.write("rho_linear.txt", density(r.rho_linear.rho()));
  files.write("rho_mle.txt", density(r.mle.state.rho()));
  files.write("rho_aligned.txt", density(r.alignment.aligned.rho()));

  std::string bars = "row,col,abs_mle,abs_aligned,abs_linear\n";
  std::vector<double> heights;
  std::vector<std::string> labels;
  static const char* names[] = {"uH", "uV", "dH", "dV"};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      bars += std::to_string(i) + "," + std::to_string(j) + "," + fixed(std::abs(r.mle.state(i, j)), 6) + "," +
              fixed(std::abs(r.alignment.aligned(i, j)), 6) + "," + fixed(std::abs(r.rho_linear(i, j)), 6) + "\n";
      heights.push_back(std::abs(r.alignment.aligned(i, j)));
      labels.push_back(std::string(names[i]) + "," + names[j]);
    }
  files.write("density_bars.csv", bars);
  if (inv.svg) files.write("density_bars.svg", svg_bars("|rho_ij| after local alignment", heights, labels));

  auto est = [](const tomo::Estimate& e) { return json{{"value", e.value}, {"error", e.error}}; };
  auto bound = [&](const tomo::BoundSet& b) {
    return json{{"f_lower", est(b.f_lower)}, {"lower_x", b.lower_x}, {"lower_y", b.lower_y}, {"basis", b.basis_used}};
  };
  json j;
  j["contrast_z"] = est(r.contrast_z);
  if (r.parity_x) j["parity_contrast_x"] = est({r.parity_x->contrast(), r.parity_x->contrast_error()});
  if (r.parity_y) j["parity_contrast_y"] = est({r.parity_y->contrast(), r.parity_y->contrast_error()});
  j["lower_bound_raw"] = bound(r.raw);
  if (r.corrected) j["lower_bound_corrected"] = bound(*r.corrected);
  j["dark_count_prob_h_window"] = ao.dark_h;
  j["dark_count_prob_v_window"] = ao.dark_v;
  j["corrections_clamped"] = r.corrections_clamped;
  j["purity"] = est(r.purity);
  if (std::isfinite(r.f_upper.value)) j["f_max"] = est(r.f_upper);
  else j["f_max"] = nullptr;
  j["fidelity_mle"] = r.fidelity_mle;
  j["fidelity_aligned"] = r.alignment.overlap;
  j["alignment_gain"] = r.alignment.gain;
  j["linear_inversion_min_eigenvalue"] = r.linear_physicality.min_eigenvalue;
  j["mle_converged"] = r.mle.converged;
  j["mle_iterations"] = r.mle.iterations;
  files.write("report.json", j.dump(2) + "\n");
  files.finish();

  if (!r.mle.converged) throw NumericalError("maximum-likelihood reconstruction did not converge");
}

void cmd_calibrate(const Invocation& inv, const fs::path& heatmap, std::ostream& out, std::ostream& err) {
  std::istringstream is(read_file(heatmap));
  jones::HeatMap map;
  try {
    map = jones::read_heatmap_csv(is);
  } catch (const std::runtime_error& e) {
    throw ValidationError(heatmap.string() + ": " + e.what());
  }
  const jones::FiberFit fit = jones::fit_fiber(map);
  if (fit.degenerate) err << "warning: degenerate fit, distinct minima with equal residual\n";
  Outputs files(inv, "calibrate");

  constexpr double kDeg = 180.0 / std::numbers::pi;
  std::string text;
  text += "fiber_alpha_rad = " + fixed(fit.fiber.alpha, 6) + "\n";
  text += "fiber_beta_rad = " + fixed(fit.fiber.beta, 6) + "\n";
  text += "fiber_delta_rad = " + fixed(fit.fiber.delta, 6) + "\n";
  text += "hwp_offset_rad = " + fixed(fit.offsets.hwp, 6) + "\n";
  text += "qwp_offset_rad = " + fixed(fit.offsets.qwp, 6) + "\n";
  text += "scale = " + fixed(fit.scale, 6) + "\n";
  text += "residual = " + sci(fit.residual, 3) + "\n";
  text += std::string("degenerate = ") + (fit.degenerate ? "yes" : "no") + "\n";

  std::string table = "basis,theta_hwp_deg,theta_qwp_deg,extinction\n";
  json bases = json::array();
  for (Pauli b : {Pauli::X, Pauli::Y, Pauli::Z}) {
    jones::WaveplateSetting w;
    try {
      w = jones::solve_basis_angles(fit.fiber, fit.offsets, b);
    } catch (const std::runtime_error& e) {
      throw NumericalError(std::string("basis ") + pauli_letter(b) + ": " + e.what());
    }
    const double ext = jones::extinction_error(fit.fiber, w, b);
    table += std::string(1, pauli_letter(b)) + "," + fixed(w.theta_hwp * kDeg, 4) + "," + fixed(w.theta_qwp * kDeg, 4) +
             "," + sci(ext, 2) + "\n";
    text += std::string("basis_") + pauli_letter(b) + " = hwp " + fixed(w.theta_hwp * kDeg, 3) + " deg, qwp " +
            fixed(w.theta_qwp * kDeg, 3) + " deg, extinction " + sci(ext, 2) + "\n";
    bases.push_back({{"basis", std::string(1, pauli_letter(b))},
                     {"theta_hwp_rad", w.theta_hwp},
                     {"theta_qwp_rad", w.theta_qwp},
                     {"extinction", ext}});
  }
  out << text;
  files.write("report.txt", text);
  files.write("basis_angles.csv", table);

  std::ostringstream fitted;
  jones::write_heatmap_csv(fitted, jones::simulate_reflection_heatmap(fit.fiber, fit.offsets, map.hwp_angles, map.qwp_angles));
  files.write("heatmap_fit.csv", fitted.str());

  json j;
  j["fiber"] = {{"alpha", fit.fiber.alpha}, {"beta", fit.fiber.beta}, {"delta", fit.fiber.delta}};
  j["offsets"] = {{"hwp", fit.offsets.hwp}, {"qwp", fit.offsets.qwp}};
  j["scale"] = fit.scale;
  j["residual"] = fit.residual;
  j["degenerate"] = fit.degenerate;
  j["starts"] = fit.starts;
  j["starts_converged"] = fit.starts_converged;
  j["gauge_notes"] = fit.gauge_notes;
  j["bases"] = bases;
  files.write("calibration.json", j.dump(2) + "\n");
  files.finish();
}

void cmd_ramsey(const Invocation& inv, std::ostream& out, std::ostream& err) {
  validate(inv.settings);
  const RamseyPlan& plan = inv.settings.ramsey;
  const seq::DephasingModel& d = inv.settings.experiment.dephasing;
  Outputs files(inv, "ramsey");

  std::string csv = "qubit,hold_us,visibility,visibility_error\n";
  std::string text;
  json fits = json::object();
  std::vector<Series> series;
  for (auto [kind, name] : {std::pair{seq::QubitKind::Zeeman, "zeeman"}, std::pair{seq::QubitKind::Hyperfine, "hyperfine"}}) {
    const auto points = seq::simulate_ramsey(kind, plan.hold_times_us, d, plan.options);
    std::vector<double> t, v, e;
    for (const auto& p : points) {
      csv += std::string(name) + "," + format_double(p.hold_us) + "," + fixed(p.visibility, 6) + "," +
             fixed(p.visibility_error, 6) + "\n";
      t.push_back(p.hold_us);
      v.push_back(p.visibility);
      e.push_back(std::max(p.visibility_error, 1e-3));
    }
    series.push_back({name, t, v});
    const tomo::RamseyFit f = tomo::ramsey_fit(t, v, e);
    json jf{{"bounded", f.bounded}};
    if (f.bounded) {
      text += std::string("tau_") + name + "_us = " + fixed(f.tau_us, 1) + " ± " + fixed(f.tau_error_us, 1) + "\n";
      jf["tau_us"] = f.tau_us;
      jf["tau_error_us"] = f.tau_error_us;
    } else {
      const std::string lb = std::isfinite(f.tau_lower_bound_us) ? "> " + fixed(f.tau_lower_bound_us, 1) + " us" : "no decay";
      text += std::string("tau_") + name + "_us = unbounded (" + lb + ")\n";
      err << "note: " << name << " visibility shows no significant decay, tau is unbounded\n";
    }
    jf["tau_lower_bound_us"] = std::isfinite(f.tau_lower_bound_us) ? json(f.tau_lower_bound_us) : json(nullptr);
    fits[name] = jf;
  }
  out << text;
  files.write("report.txt", text);
  files.write("ramsey.csv", csv);
  files.write("ramsey.json", fits.dump(2) + "\n");
  if (inv.svg) files.write("ramsey.svg", svg_lines("Ramsey visibility vs hold time (us)", series));
  files.finish();
}

void cmd_synth_heatmap(const Invocation& inv, std::ostream& out, std::ostream&) {
  validate(inv.settings);
  const JonesPlan& j = inv.settings.jones;
  const auto grid = jones::angle_grid(static_cast<std::size_t>(j.grid_points), kPi);
  jones::HeatMap map = jones::normalized(jones::simulate_reflection_heatmap(j.fiber, j.offsets, grid, grid));
  if (j.noise > 0.0) {
    std::mt19937_64 rng(j.noise_seed);
    std::normal_distribution<double> n(0.0, j.noise);
    for (double& v : map.v_rate) v = std::clamp(v + n(rng), 0.0, 1.0);
  }
  Outputs files(inv, "synth-heatmap");
  std::ostringstream csv;
  jones::write_heatmap_csv(csv, map);
  files.write("heatmap.csv", csv.str());
  out << "points = " << map.size() << "\n";
  files.finish();
}

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

bool verify_manifest(const fs::path& manifest) {
  const json j = json::parse(read_file(manifest));
  return hash_string(fnv1a64(j.at("config").get<std::string>())) == j.at("config_hash").get<std::string>();
}

}  // namespace nodesim::cli
