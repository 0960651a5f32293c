// Monte Carlo model of the entanglement sequence: initialization, excitation,
// emission and collection, photon analysis, microwave mapping and analysis
// pulses, fluorescence readout and detector dark counts.
//
// Atom analysis: a π-pulse maps |g−⟩ → |0⟩ (carrier phase φc), then an
// optional π/2-pulse with phase φc + Δφ − π makes "bright" the projection onto
// (|↑⟩ + e^{iΔφ}|↓⟩)/√2, i.e. the +1 eigenstate of the equatorial operator at
// phase Δφ. Without the π/2-pulse the readout is σz. The known Larmor
// evolution is compensated in the pulse phases; only its fluctuations enter.
#pragma once

#include "nodesim/quantum.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodesim::seq {

using Rng = std::mt19937_64;

/// Field sensitivity of the Zeeman qubit |g+⟩/|g−⟩ and of the hyperfine
/// qubit |g+⟩/|0⟩, MHz per Gauss.
inline constexpr double kZeemanSensitivityMHzPerG = 5.6;
inline constexpr double kHyperfineSensitivityMHzPerG = 2.8;
inline constexpr double kLarmorMHzPerG = 2.8;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ReadoutModel {
  double lambda_bright = 12.0;
  double lambda_dark = 0.4;
  int threshold = 2;
  double contrast_penalty = 0.0;  // probability of drawing from the other state's distribution

  void validate() const;
};

/// P(counts ≥ k) for Poisson(λ).
double poisson_tail(double lambda, int k);
/// Probability of a "bright" verdict, including the contrast penalty.
double prob_read_bright(const ReadoutModel& model, bool atom_is_bright);
/// 1 − ½(P(dark | bright) + P(bright | dark)).
double readout_fidelity(const ReadoutModel& model);
/// One readout: Poisson counts against the threshold. Returns true for bright.
bool fluorescence_readout(bool atom_is_bright, const ReadoutModel& model, Rng& rng);

struct AcLine {
  double frequency_hz = 50.0;
  double amplitude_mg = 0.0;
  bool random_phase = true;  // false: line-triggered, phase 0
};

struct DephasingModel {
  double b_noise_rms_mg = 0.0;  // quasi-static per shot
  std::vector<AcLine> ac;
  double pulse_sequence_duration_us = 57.0;

  void validate() const;
};

struct TimingModel {
  double sync_jitter_ps = 0.0;
  double phase_uncertainty_budget = 0.0;  // rad, Gaussian σ of the equatorial phase

  void validate() const;
};

/// Emitted state: (1−w)[(1−d)Ψ + d(Z⊗I)Ψ(Z⊗I)] + w·I/4, with w and d set so
/// the purity equals target_purity and 2d/(w+2d) equals dephasing_share
/// (w and 2d are the contrast losses of the two channels).
/// photon_frame_rotation is a residual rotation of the photon frame about its
/// z axis, a local unitary error.
struct StateModel {
  double target_purity = 0.840;
  double dephasing_share = 0.46;
  double photon_frame_rotation = 0.0;  // rad

  void validate() const;
};

/// Polarization mixing in the photon analysis: the recorded port is flipped
/// with this probability, per photon basis.
struct PhotonAnalysisModel {
  double mixing_x = 0.0;
  double mixing_y = 0.0;
  double mixing_z = 0.0;

  double mixing(Pauli basis) const;
  void validate() const;
};

struct EmissionModel {
  double gamma_prime_mhz = 21.58;  // Purcell-broadened decay rate / 2π
  double tau_cavity_ns = 1.3;
};

struct ExperimentConfig {
  double b_field_g = 0.6036;
  double prep_fidelity = 0.99;
  double excitation_fidelity = 0.97;
  double p_cavity = 0.101;
  double eta_chain = 0.0324;
  double dark_count_prob_h = 0.0;  // per attempt, over the whole wait window
  double dark_count_prob_v = 0.0;
  ReadoutModel readout;
  DephasingModel dephasing;
  TimingModel timing;
  StateModel state;
  PhotonAnalysisModel photon_analysis;
  EmissionModel emission;
  double acceptance_start_ns = 0.0;
  double acceptance_window_ns = 10.0;
  double wait_window_ns = 1000.0;
  double attempt_period_us = 40.0;
  std::uint64_t shots = 1'000'000;  // attempts per setting
  std::uint64_t seed = 1;

  double larmor_mhz() const { return kLarmorMHzPerG * b_field_g; }
  /// Dark-count probability per attempt that lands inside the acceptance window.
  double dark_in_window_h() const { return dark_count_prob_h * acceptance_window_ns / wait_window_ns; }
  double dark_in_window_v() const { return dark_count_prob_v * acceptance_window_ns / wait_window_ns; }
  /// Throws ConfigError.
  void validate() const;
};

/// Everything off: unit fidelities, no noise, no dark counts, perfect readout.
ExperimentConfig ideal_config();

struct StateNoise {
  double white = 0.0;      // w
  double dephasing = 0.0;  // d
};

/// Noise weights reaching the target purity. Throws ConfigError when the
/// target is infeasible (> 1, < 0.25, or below the reach of the share).
StateNoise calibrate_state_noise(const StateModel& model);
TwoQubitState noisy_bell_state(const StateNoise& noise);
TwoQubitState emitted_joint_state(const ExperimentConfig& config);

/// Per-shot random phases of the atom analysis.
struct PhaseSample {
  double carrier = 0.0;      // absolute microwave carrier phase φc
  double jitter_s = 0.0;     // microwave start vs excitation
  double field_phase = 0.0;  // accumulated from field noise during the sequence
  double budget_phase = 0.0; // residual equatorial phase error
};

/// Phase accumulated by a qubit with the given sensitivity during `duration_us`
/// for one draw of the field noise.
double sample_field_phase(const DephasingModel& model, double sensitivity_mhz_per_g, double duration_us, Rng& rng);
PhaseSample sample_phases(const ExperimentConfig& config, Rng& rng);

/// Total equatorial phase error of a sample.
double phase_error(const PhaseSample& s, double larmor_mhz);

/// Atom-side unitary (2×2) of the analysis pulses: π-pulse then, if
/// `rotated`, the π/2 pulse selecting the Δφ basis. Includes the phase error
/// as a z rotation before the pulses.
Mat2 atomic_pulse_unitary(bool rotated, double delta_phi, double larmor_mhz, const PhaseSample& sample);
TwoQubitState apply_atomic_pulses(const TwoQubitState& state, bool rotated, double delta_phi, double larmor_mhz,
                                  const PhaseSample& sample);

/// One analysis setting. Atom σz when !atom_rotated; otherwise the equatorial
/// basis at phase delta_phi.
struct Setting {
  Pauli photon = Pauli::Z;
  bool atom_rotated = false;
  double delta_phi = 0.0;

  static Setting atom_z(Pauli photon) { return {photon, false, 0.0}; }
  static Setting rotated(Pauli photon, double delta_phi) { return {photon, true, delta_phi}; }
  /// Atom x/y map to Δφ = equatorial_phase(x/y), z to no π/2 pulse.
  static Setting for_bases(Pauli atom, Pauli photon);
  bool operator==(const Setting&) const = default;
};

/// Joint counts of accepted events, indexed by photon port and atom verdict.
struct JointCounts {
  std::uint64_t h_bright = 0;
  std::uint64_t h_dark = 0;
  std::uint64_t v_bright = 0;
  std::uint64_t v_dark = 0;

  std::uint64_t total() const { return h_bright + h_dark + v_bright + v_dark; }
  std::uint64_t& cell(Polarization port, bool bright);
  std::uint64_t cell(Polarization port, bool bright) const;
  JointCounts& operator+=(const JointCounts& o);
  bool operator==(const JointCounts&) const = default;
};

struct SettingSummary {
  Setting setting;
  JointCounts counts;
  std::uint64_t attempts = 0;
  std::uint64_t wait_window_events = 0;  // photon events anywhere in the wait window
  bool operator==(const SettingSummary&) const = default;
};

struct RunSummary {
  std::vector<SettingSummary> settings;
  double attempt_period_us = 0.0;

  std::uint64_t attempts() const;
  std::uint64_t detected() const;  // accepted events
  double duration_s() const { return static_cast<double>(attempts()) * attempt_period_us * 1e-6; }
  bool operator==(const RunSummary&) const = default;
};

struct PhotonEvent {
  Polarization port = Polarization::H;
  double arrival_ns = 0.0;
  bool is_dark = false;  // simulator ground truth; analysis code never reads it
  bool accepted = false;
};

/// Only shots with a photon event in the wait window are logged; the atom is
/// read out exactly for those.
struct ShotOutcome {
  std::uint32_t setting_index = 0;
  std::uint64_t attempt_index = 0;
  PhotonEvent photon;
  bool atom_bright = false;
};

struct RunOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  bool keep_log = false;
  bool randomize_carrier = true;  // false fixes φc = 0 for every shot
};

struct RunResult {
  RunSummary summary;
  std::vector<ShotOutcome> log;  // ordered by (setting, attempt)
};

/// Attempts per shard; each shard draws from its own stream seeded by
/// (seed, setting, shard), so results do not depend on the thread count.
inline constexpr std::uint64_t kShardSize = 65536;

RunResult run_sequence(const ExperimentConfig& config, const std::vector<Setting>& settings,
                       const RunOptions& options = {});

/// Applies the dark-count model to one shot: with probabilities p_h, p_v a
/// click lands uniformly in the wait window; the earliest event in the window
/// is kept and marked accepted when inside the acceptance window.
std::optional<PhotonEvent> inject_dark_counts(std::optional<PhotonEvent> shot, double p_h, double p_v,
                                              const ExperimentConfig& config, Rng& rng);

/// Arrival time of a real photon, ns after the excitation pulse.
double sample_arrival_ns(const EmissionModel& model, Rng& rng);

struct Histogram {
  double start = 0.0;
  double bin_width = 1.0;
  std::vector<std::uint64_t> counts;
  double center(std::size_t k) const { return start + (static_cast<double>(k) + 0.5) * bin_width; }
};

/// Histogram of all logged arrival times over [0, span_ns).
Histogram arrival_time_histogram(const std::vector<ShotOutcome>& log, double bin_width_ns, double span_ns);
/// Full width at half maximum by linear interpolation between bin centres;
/// nullopt when the histogram has fewer than two events or no peak.
std::optional<double> histogram_fwhm(const Histogram& h);

enum class QubitKind { Zeeman, Hyperfine };

struct RamseyPoint {
  double hold_us = 0.0;
  double visibility = 0.0;
  double visibility_error = 0.0;
};

struct RamseyOptions {
  int phase_points = 8;
  std::uint64_t shots_per_point = 400;
  std::uint64_t seed = 1;
};

/// For each hold time: scan the second π/2 phase, fit a sinusoid, report its
/// contrast. Throws std::invalid_argument for non-positive hold times or fewer
/// than 100 shots per phase point.
std::vector<RamseyPoint> simulate_ramsey(QubitKind qubit, const std::vector<double>& hold_times_us,
                                         const DephasingModel& dephasing, const RamseyOptions& options = {});

// Summary CSV: "basis,delta_phi_rad,hv,hd,vb,vd". basis is the photon basis
// letter; delta_phi_rad is the atomic analysis phase or "z" for atomic σz;
// hv/hd count H-port events with a bright/dark atom, vb/vd the V port.
void write_summary_csv(std::ostream& os, const RunSummary& summary);
/// Throws std::runtime_error naming the offending line.
RunSummary read_summary_csv(std::istream& is);

// Shot log: one JSON object per line.
void write_shot_log(std::ostream& os, const std::vector<ShotOutcome>& log, const std::vector<Setting>& settings);

}  // namespace nodesim::seq
