#include "nodesim/sequence.hpp"

#include "nodesim/cavity.hpp"
#include "nodesim/tomography.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

namespace nodesim::seq {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Complex kI{0.0, 1.0};

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be a probability in [0, 1]");
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

int poisson_draw(double lambda, Rng& rng) {
  if (lambda <= 0.0) return 0;
  return std::poisson_distribution<int>(lambda)(rng);
}

double state_purity(const StateNoise& n) { return purity(noisy_bell_state(n)); }

StateNoise noise_at(double t, double share) {
  return {std::min((1.0 - share) * t, 1.0), std::min(share * t / 2.0, 0.5)};
}

}  // namespace

void ReadoutModel::validate() const {
  if (!(lambda_dark >= 0.0)) throw ConfigError("readout.lambda_dark must be >= 0");
  if (!(lambda_bright > lambda_dark)) throw ConfigError("readout.lambda_bright must exceed readout.lambda_dark");
  if (threshold < 1) throw ConfigError("readout.threshold must be >= 1");
  require_probability(contrast_penalty, "readout.contrast_penalty");
}

void DephasingModel::validate() const {
  if (!(b_noise_rms_mg >= 0.0)) throw ConfigError("dephasing.b_noise_rms_mg must be >= 0");
  if (!(pulse_sequence_duration_us >= 0.0)) throw ConfigError("dephasing.pulse_sequence_duration_us must be >= 0");
  for (const AcLine& l : ac) {
    if (!(l.amplitude_mg >= 0.0)) throw ConfigError("dephasing AC amplitudes must be >= 0");
    if (!(l.frequency_hz > 0.0)) throw ConfigError("dephasing AC frequencies must be > 0");
  }
}

void TimingModel::validate() const {
  if (!(sync_jitter_ps >= 0.0)) throw ConfigError("timing.sync_jitter_ps must be >= 0");
  if (!(phase_uncertainty_budget >= 0.0)) throw ConfigError("timing.phase_uncertainty_budget must be >= 0");
}

void StateModel::validate() const {
  if (!(target_purity >= 0.25 && target_purity <= 1.0)) throw ConfigError("state.target_purity must lie in [0.25, 1]");
  require_probability(dephasing_share, "state.dephasing_share");
  if (!std::isfinite(photon_frame_rotation)) throw ConfigError("state.photon_frame_rotation must be finite");
}

double PhotonAnalysisModel::mixing(Pauli basis) const {
  switch (basis) {
    case Pauli::X: return mixing_x;
    case Pauli::Y: return mixing_y;
    case Pauli::Z: return mixing_z;
    default: return 0.0;
  }
}

void PhotonAnalysisModel::validate() const {
  require_probability(mixing_x, "photon_analysis.mixing_x");
  require_probability(mixing_y, "photon_analysis.mixing_y");
  require_probability(mixing_z, "photon_analysis.mixing_z");
}

void ExperimentConfig::validate() const {
  if (!(b_field_g >= 0.0)) throw ConfigError("b_field_g must be >= 0");
  require_probability(prep_fidelity, "prep_fidelity");
  require_probability(excitation_fidelity, "excitation_fidelity");
  require_probability(p_cavity, "p_cavity");
  require_probability(eta_chain, "eta_chain");
  require_probability(dark_count_prob_h, "dark_count_prob_h");
  require_probability(dark_count_prob_v, "dark_count_prob_v");
  readout.validate();
  dephasing.validate();
  timing.validate();
  state.validate();
  photon_analysis.validate();
  if (!(emission.gamma_prime_mhz > 0.0)) throw ConfigError("emission.gamma_prime_mhz must be > 0");
  if (!(emission.tau_cavity_ns >= 0.0)) throw ConfigError("emission.tau_cavity_ns must be >= 0");
  if (!(acceptance_window_ns > 0.0)) throw ConfigError("acceptance_window_ns must be > 0");
  if (!(acceptance_start_ns >= 0.0)) throw ConfigError("acceptance_start_ns must be >= 0");
  if (!(wait_window_ns > 0.0)) throw ConfigError("wait_window_ns must be > 0");
  if (acceptance_start_ns + acceptance_window_ns > wait_window_ns)
    throw ConfigError("acceptance window exceeds the wait window");
  if (!(attempt_period_us > 0.0)) throw ConfigError("attempt_period_us must be > 0");
}

ExperimentConfig ideal_config() {
  ExperimentConfig c;
  c.prep_fidelity = 1.0;
  c.excitation_fidelity = 1.0;
  c.p_cavity = 1.0;
  c.eta_chain = 1.0;
  c.readout = {1e3, 0.0, 1, 0.0};
  c.state = {1.0, 0.0, 0.0};
  c.acceptance_window_ns = c.wait_window_ns;
  return c;
}

// --- readout ----------------------------------------------------------------

double poisson_tail(double lambda, int k) {
  if (k <= 0) return 1.0;
  if (lambda <= 0.0) return 0.0;
  double term = std::exp(-lambda);
  double cdf = 0.0;
  for (int n = 0; n < k; ++n) {
    cdf += term;
    term *= lambda / (n + 1);
  }
  return std::clamp(1.0 - cdf, 0.0, 1.0);
}

double prob_read_bright(const ReadoutModel& m, bool atom_is_bright) {
  const double own = atom_is_bright ? m.lambda_bright : m.lambda_dark;
  const double other = atom_is_bright ? m.lambda_dark : m.lambda_bright;
  return (1.0 - m.contrast_penalty) * poisson_tail(own, m.threshold) + m.contrast_penalty * poisson_tail(other, m.threshold);
}

double readout_fidelity(const ReadoutModel& m) {
  return 1.0 - 0.5 * ((1.0 - prob_read_bright(m, true)) + prob_read_bright(m, false));
}

bool fluorescence_readout(bool atom_is_bright, const ReadoutModel& m, Rng& rng) {
  bool source = atom_is_bright;
  if (m.contrast_penalty > 0.0 && uniform01(rng) < m.contrast_penalty) source = !source;
  return poisson_draw(source ? m.lambda_bright : m.lambda_dark, rng) >= m.threshold;
}

// --- emitted state ----------------------------------------------------------

TwoQubitState noisy_bell_state(const StateNoise& n) {
  const Mat4 psi = bell_target().rho();
  const Mat4 zi = kron(pauli(Pauli::Z), Mat2::Identity());
  const Mat4 dephased = (1.0 - n.dephasing) * psi + n.dephasing * zi * psi * zi;
  return TwoQubitState::from_density((1.0 - n.white) * dephased + n.white * Mat4::Identity() / 4.0, tol::kAlgebraic);
}

StateNoise calibrate_state_noise(const StateModel& model) {
  const double target = model.target_purity;
  if (!(target >= 0.25 && target <= 1.0)) throw ConfigError("purity target must lie in [0.25, 1]");
  const double share = model.dephasing_share;
  if (target >= 1.0) return {};
  const double t_max = share < 1.0 ? 1.0 / (1.0 - share) : 1.0;
  if (state_purity(noise_at(t_max, share)) > target + 1e-12)
    throw ConfigError("purity target unreachable with state.dephasing_share = " + std::to_string(share));
  double lo = 0.0;
  double hi = t_max;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (state_purity(noise_at(mid, share)) > target) lo = mid;
    else hi = mid;
  }
  return noise_at(0.5 * (lo + hi), share);
}

TwoQubitState emitted_joint_state(const ExperimentConfig& config) {
  return noisy_bell_state(calibrate_state_noise(config.state));
}

// --- atomic pulses ----------------------------------------------------------

double sample_field_phase(const DephasingModel& model, double sensitivity_mhz_per_g, double duration_us, Rng& rng) {
  const double t = duration_us * 1e-6;
  double integral_mg_s = 0.0;
  if (model.b_noise_rms_mg > 0.0) integral_mg_s += std::normal_distribution<double>(0.0, model.b_noise_rms_mg)(rng) * t;
  for (const AcLine& l : model.ac) {
    const double phase = l.random_phase ? 2.0 * kPi * uniform01(rng) : 0.0;
    const double w = 2.0 * kPi * l.frequency_hz;
    integral_mg_s += l.amplitude_mg / w * (std::cos(phase) - std::cos(w * t + phase));
  }
  const double hz_per_mg = sensitivity_mhz_per_g * 1e3;
  return 2.0 * kPi * hz_per_mg * integral_mg_s;
}

PhaseSample sample_phases(const ExperimentConfig& config, Rng& rng) {
  PhaseSample s;
  s.carrier = 2.0 * kPi * uniform01(rng);
  if (config.timing.sync_jitter_ps > 0.0)
    s.jitter_s = std::normal_distribution<double>(0.0, config.timing.sync_jitter_ps * 1e-12)(rng);
  s.field_phase = sample_field_phase(config.dephasing, kZeemanSensitivityMHzPerG,
                                     config.dephasing.pulse_sequence_duration_us, rng);
  if (config.timing.phase_uncertainty_budget > 0.0)
    s.budget_phase = std::normal_distribution<double>(0.0, config.timing.phase_uncertainty_budget)(rng);
  return s;
}

double phase_error(const PhaseSample& s, double larmor_mhz) {
  return s.field_phase + 2.0 * kPi * larmor_mhz * 1e6 * s.jitter_s + s.budget_phase;
}

Mat2 atomic_pulse_unitary(bool rotated, double delta_phi, double larmor_mhz, const PhaseSample& sample) {
  const double eps = phase_error(sample, larmor_mhz);
  Mat2 rz = Mat2::Zero();
  rz(0, 0) = std::exp(-kI * eps / 2.0);
  rz(1, 1) = std::exp(kI * eps / 2.0);
  Mat2 pi_pulse = Mat2::Zero();
  pi_pulse(0, 0) = 1.0;
  pi_pulse(1, 1) = -kI * std::exp(kI * sample.carrier);
  if (!rotated) return pi_pulse * rz;
  const double phi2 = sample.carrier + delta_phi - kPi;
  const double h = 1.0 / std::numbers::sqrt2;
  Mat2 half;
  half << h, -kI * std::exp(-kI * phi2) * h, -kI * std::exp(kI * phi2) * h, h;
  return half * pi_pulse * rz;
}

TwoQubitState apply_atomic_pulses(const TwoQubitState& state, bool rotated, double delta_phi, double larmor_mhz,
                                  const PhaseSample& sample) {
  return apply_local_unitaries(state, atomic_pulse_unitary(rotated, delta_phi, larmor_mhz, sample), Mat2::Identity());
}

// --- settings and counts ----------------------------------------------------

Setting Setting::for_bases(Pauli atom, Pauli photon) {
  if (atom == Pauli::Z) return atom_z(photon);
  return rotated(photon, equatorial_phase(atom));
}

std::uint64_t& JointCounts::cell(Polarization port, bool bright) {
  if (port == Polarization::H) return bright ? h_bright : h_dark;
  return bright ? v_bright : v_dark;
}

std::uint64_t JointCounts::cell(Polarization port, bool bright) const {
  return const_cast<JointCounts*>(this)->cell(port, bright);
}

JointCounts& JointCounts::operator+=(const JointCounts& o) {
  h_bright += o.h_bright;
  h_dark += o.h_dark;
  v_bright += o.v_bright;
  v_dark += o.v_dark;
  return *this;
}

std::uint64_t RunSummary::attempts() const {
  std::uint64_t n = 0;
  for (const auto& s : settings) n += s.attempts;
  return n;
}

std::uint64_t RunSummary::detected() const {
  std::uint64_t n = 0;
  for (const auto& s : settings) n += s.counts.total();
  return n;
}

// --- photon events ----------------------------------------------------------

double sample_arrival_ns(const EmissionModel& model, Rng& rng) {
  const double decay_ns = 1e3 / (2.0 * kPi * model.gamma_prime_mhz);
  double t = std::exponential_distribution<double>(1.0 / decay_ns)(rng);
  if (model.tau_cavity_ns > 0.0) t += std::exponential_distribution<double>(1.0 / model.tau_cavity_ns)(rng);
  return t;
}

std::optional<PhotonEvent> inject_dark_counts(std::optional<PhotonEvent> shot, double p_h, double p_v,
                                              const ExperimentConfig& config, Rng& rng) {
  for (Polarization port : {Polarization::H, Polarization::V}) {
    const double p = port == Polarization::H ? p_h : p_v;
    if (p <= 0.0 || uniform01(rng) >= p) continue;
    const double t = config.wait_window_ns * uniform01(rng);
    if (!shot || t < shot->arrival_ns) shot = PhotonEvent{port, t, true, false};
  }
  if (shot)
    shot->accepted = shot->arrival_ns >= config.acceptance_start_ns &&
                     shot->arrival_ns < config.acceptance_start_ns + config.acceptance_window_ns;
  return shot;
}

namespace {

struct ShardResult {
  JointCounts counts;
  std::uint64_t attempts = 0;
  std::uint64_t wait_events = 0;
  std::vector<ShotOutcome> log;
};

struct SettingPlan {
  Setting setting;
  Mat4 rho;          // emitted state in the photon analysis frame
  Mat2 photon_rot;   // measurement rotation of the photon basis
};

ShardResult run_shard(const ExperimentConfig& config, const SettingPlan& plan, const Mat4& mixed_rho,
                      std::uint32_t setting_index, std::uint64_t first_attempt, std::uint64_t attempts,
                      std::uint64_t shard_index, const RunOptions& options) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    setting_index, static_cast<std::uint32_t>(shard_index),
                    static_cast<std::uint32_t>(shard_index >> 32)};
  Rng rng(seq);
  const double p_detect = config.excitation_fidelity * config.p_cavity * config.eta_chain;
  const double larmor = config.larmor_mhz();
  const double mixing = config.photon_analysis.mixing(plan.setting.photon);

  ShardResult out;
  out.attempts = attempts;
  for (std::uint64_t a = 0; a < attempts; ++a) {
    std::optional<PhotonEvent> ev;
    if (uniform01(rng) < p_detect) {
      const double t = sample_arrival_ns(config.emission, rng);
      if (t < config.wait_window_ns) ev = PhotonEvent{Polarization::H, t, false, false};
    }
    ev = inject_dark_counts(ev, config.dark_count_prob_h, config.dark_count_prob_v, config, rng);
    if (!ev) continue;
    ++out.wait_events;

    bool atom_bright = false;
    if (!ev->is_dark) {
      const Mat4& rho = uniform01(rng) < config.prep_fidelity ? plan.rho : mixed_rho;
      PhaseSample ps = sample_phases(config, rng);
      if (!options.randomize_carrier) ps.carrier = 0.0;
      const Mat4 u = kron(atomic_pulse_unitary(plan.setting.atom_rotated, plan.setting.delta_phi, larmor, ps),
                          plan.photon_rot);
      const Mat4 out_rho = u * rho * u.adjoint();
      double r = uniform01(rng);
      int k = 0;
      for (; k < 3; ++k) {
        r -= out_rho(k, k).real();
        if (r < 0.0) break;
      }
      atom_bright = (k / 2) == 0;
      bool h = (k % 2) == 0;
      if (mixing > 0.0 && uniform01(rng) < mixing) h = !h;
      ev->port = h ? Polarization::H : Polarization::V;
    } else {
      atom_bright = uniform01(rng) < 0.5;
    }
    const bool verdict = fluorescence_readout(atom_bright, config.readout, rng);
    if (ev->accepted) ++out.counts.cell(ev->port, verdict);
    if (options.keep_log) out.log.push_back({setting_index, first_attempt + a, *ev, verdict});
  }
  return out;
}

}  // namespace

RunResult run_sequence(const ExperimentConfig& config, const std::vector<Setting>& settings,
                       const RunOptions& options) {
  config.validate();
  if (settings.empty()) throw ConfigError("run_sequence: no analysis settings given");

  const Mat4 emitted = emitted_joint_state(config).rho();
  Mat2 frame = Mat2::Zero();
  frame(0, 0) = std::exp(-kI * config.state.photon_frame_rotation / 2.0);
  frame(1, 1) = std::exp(kI * config.state.photon_frame_rotation / 2.0);
  const Mat4 framed = apply_local_unitaries(TwoQubitState::from_density(emitted, tol::kAlgebraic), Mat2::Identity(), frame).rho();

  std::vector<SettingPlan> plans;
  for (const Setting& s : settings) plans.push_back({s, framed, measurement_rotation(s.photon)});
  const Mat4 mixed = Mat4::Identity() / 4.0;

  struct Task {
    std::uint32_t setting;
    std::uint64_t shard;
    std::uint64_t first;
    std::uint64_t count;
  };
  std::vector<Task> tasks;
  for (std::uint32_t s = 0; s < settings.size(); ++s)
    for (std::uint64_t first = 0, shard = 0; first < config.shots; first += kShardSize, ++shard)
      tasks.push_back({s, shard, first, std::min(kShardSize, config.shots - first)});

  std::vector<ShardResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      const Task& t = tasks[k];
      results[k] = run_shard(config, plans[t.setting], mixed, t.setting, t.first, t.count, t.shard, options);
    }
  };
  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(tasks.size(), 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  RunResult result;
  result.summary.attempt_period_us = config.attempt_period_us;
  for (const Setting& s : settings) result.summary.settings.push_back({s, {}, 0, 0});
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    SettingSummary& dst = result.summary.settings[tasks[k].setting];
    dst.counts += results[k].counts;
    dst.attempts += results[k].attempts;
    dst.wait_window_events += results[k].wait_events;
    if (options.keep_log)
      result.log.insert(result.log.end(), results[k].log.begin(), results[k].log.end());
  }
  return result;
}

// --- arrival-time histogram -------------------------------------------------

Histogram arrival_time_histogram(const std::vector<ShotOutcome>& log, double bin_width_ns, double span_ns) {
  if (!(bin_width_ns > 0.0) || !(span_ns > 0.0)) throw std::invalid_argument("histogram: bin width and span must be > 0");
  Histogram h;
  h.bin_width = bin_width_ns;
  h.counts.assign(static_cast<std::size_t>(std::ceil(span_ns / bin_width_ns)), 0);
  for (const ShotOutcome& s : log) {
    const double t = s.photon.arrival_ns;
    if (t < 0.0 || t >= span_ns) continue;
    const auto k = static_cast<std::size_t>(t / bin_width_ns);
    if (k < h.counts.size()) ++h.counts[k];
  }
  return h;
}

std::optional<double> histogram_fwhm(const Histogram& h) {
  std::uint64_t total = 0;
  for (auto c : h.counts) total += c;
  if (total < 2) return std::nullopt;
  std::vector<double> x(h.counts.size()), y(h.counts.size());
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    x[k] = h.center(k);
    y[k] = static_cast<double>(h.counts[k]);
  }
  try {
    return cavity::fwhm_linear(x, y);
  } catch (const std::domain_error&) {
    return std::nullopt;
  }
}

// --- Ramsey -----------------------------------------------------------------

std::vector<RamseyPoint> simulate_ramsey(QubitKind qubit, const std::vector<double>& hold_times_us,
                                         const DephasingModel& dephasing, const RamseyOptions& options) {
  dephasing.validate();
  if (options.shots_per_point < 100) throw std::invalid_argument("simulate_ramsey: need at least 100 shots per phase point");
  if (options.phase_points < 6) throw std::invalid_argument("simulate_ramsey: need at least 6 phase points");
  const double sensitivity = qubit == QubitKind::Zeeman ? kZeemanSensitivityMHzPerG : kHyperfineSensitivityMHzPerG;

  std::vector<RamseyPoint> out;
  for (std::size_t h = 0; h < hold_times_us.size(); ++h) {
    const double hold = hold_times_us[h];
    if (!(hold > 0.0)) throw std::invalid_argument("simulate_ramsey: hold times must be > 0");
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(qubit), static_cast<std::uint32_t>(h)};
    Rng rng(seq);
    std::vector<double> phases, fractions, errors;
    for (int k = 0; k < options.phase_points; ++k) {
      const double phi = 2.0 * kPi * k / options.phase_points;
      std::uint64_t bright = 0;
      for (std::uint64_t s = 0; s < options.shots_per_point; ++s) {
        const double eps = sample_field_phase(dephasing, sensitivity, hold, rng);
        if (uniform01(rng) < 0.5 * (1.0 + std::cos(phi + eps))) ++bright;
      }
      const double n = static_cast<double>(options.shots_per_point);
      const double f = static_cast<double>(bright) / n;
      phases.push_back(phi);
      fractions.push_back(f);
      errors.push_back(std::max(std::sqrt(f * (1.0 - f) / n), 0.5 / n));
    }
    try {
      const tomo::SinusoidFit fit = tomo::parity_fit(phases, fractions, errors);
      out.push_back({hold, std::clamp(fit.contrast(), 0.0, 1.0), fit.contrast_error()});
    } catch (const tomo::DomainError&) {
      out.push_back({hold, 0.0, 1.0 / std::sqrt(static_cast<double>(options.shots_per_point))});
    }
  }
  return out;
}

// --- summary CSV and shot log -----------------------------------------------

void write_summary_csv(std::ostream& os, const RunSummary& summary) {
  os << "basis,delta_phi_rad,hv,hd,vb,vd\n";
  char buf[64];
  for (const SettingSummary& s : summary.settings) {
    os << pauli_letter(s.setting.photon) << ',';
    if (s.setting.atom_rotated) {
      std::snprintf(buf, sizeof buf, "%.17g", s.setting.delta_phi);
      os << buf;
    } else {
      os << 'z';
    }
    os << ',' << s.counts.h_bright << ',' << s.counts.h_dark << ',' << s.counts.v_bright << ',' << s.counts.v_dark
       << '\n';
  }
}

RunSummary read_summary_csv(std::istream& is) {
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("summary line " + std::to_string(line_no) + ": " + what);
  };
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  };
  if (!std::getline(is, line)) throw std::runtime_error("summary: empty input");
  ++line_no;
  strip(line);
  if (line != "basis,delta_phi_rad,hv,hd,vb,vd") fail("unexpected header '" + line + "'");

  RunSummary summary;
  while (std::getline(is, line)) {
    ++line_no;
    strip(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, ',');) f.push_back(field);
    if (f.size() != 6) fail("expected 6 fields, found " + std::to_string(f.size()));
    SettingSummary s;
    if (f[0].size() != 1) fail("malformed basis '" + f[0] + "'");
    try {
      s.setting.photon = pauli_from_letter(f[0][0]);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    if (s.setting.photon == Pauli::I) fail("basis must be x, y or z");
    if (f[1] == "z") {
      s.setting.atom_rotated = false;
    } else {
      char* end = nullptr;
      s.setting.delta_phi = std::strtod(f[1].c_str(), &end);
      if (f[1].empty() || end != f[1].c_str() + f[1].size() || !std::isfinite(s.setting.delta_phi))
        fail("malformed delta_phi_rad '" + f[1] + "'");
      s.setting.atom_rotated = true;
    }
    std::uint64_t* cells[4] = {&s.counts.h_bright, &s.counts.h_dark, &s.counts.v_bright, &s.counts.v_dark};
    for (int k = 0; k < 4; ++k) {
      const std::string& v = f[2 + k];
      if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) fail("malformed count '" + v + "'");
      *cells[k] = std::stoull(v);
    }
    summary.settings.push_back(s);
  }
  return summary;
}

void write_shot_log(std::ostream& os, const std::vector<ShotOutcome>& log, const std::vector<Setting>& settings) {
  char buf[256];
  for (const ShotOutcome& s : log) {
    const Setting& st = settings.at(s.setting_index);
    char dphi[32];
    if (st.atom_rotated) std::snprintf(dphi, sizeof dphi, "%.17g", st.delta_phi);
    else std::snprintf(dphi, sizeof dphi, "\"z\"");
    std::snprintf(buf, sizeof buf,
                  "{\"setting\":%u,\"attempt\":%llu,\"basis\":\"%c\",\"delta_phi\":%s,\"port\":\"%c\","
                  "\"arrival_ns\":%.6f,\"accepted\":%s,\"is_dark\":%s,\"atom\":\"%s\"}\n",
                  s.setting_index, static_cast<unsigned long long>(s.attempt_index), pauli_letter(st.photon), dphi,
                  s.photon.port == Polarization::H ? 'H' : 'V', s.photon.arrival_ns, s.photon.accepted ? "true" : "false",
                  s.photon.is_dark ? "true" : "false", s.atom_bright ? "bright" : "dark");
    os << buf;
  }
}

}  // namespace nodesim::seq
