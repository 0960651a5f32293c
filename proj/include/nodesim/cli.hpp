// Command layer behind the nodesim executable: layered INI configuration,
// presets, run manifests and the individual commands. Commands throw; the
// executable maps exceptions to exit codes with run_guarded().
#pragma once

#include "nodesim/cavity.hpp"
#include "nodesim/jones.hpp"
#include "nodesim/sequence.hpp"
#include "nodesim/tomography.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nodesim::cli {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2, kExitIo = 3 };

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScanPlan {
  bool tomography = true;                      // the nine σi⊗σj settings
  std::vector<Pauli> bases{Pauli::X, Pauli::Y};  // photon bases of the Δφ scans
  int points = 8;
  double offset_rad = 0.0;
};

struct RamseyPlan {
  std::vector<double> hold_times_us{25, 50, 100, 200, 300, 400, 500, 600, 800, 1000, 1300, 1600, 2000};
  seq::RamseyOptions options{8, 2000, 1};
};

struct JonesPlan {
  jones::FiberModel fiber{0.4, 0.2, 1.3};
  jones::WaveplateOffsets offsets{0.05, -0.03};
  int grid_points = 20;
  double noise = 0.0;  // Gaussian σ added to synthetic rates
  std::uint64_t noise_seed = 1;
};

/// Everything a command can be configured with.
struct Settings {
  seq::ExperimentConfig experiment;
  cavity::BudgetInputs budget;
  ScanPlan scan;
  RamseyPlan ramsey;
  tomo::RotatedBasis lower_bound_basis = tomo::RotatedBasis::Average;
  bool dark_correct = true;
  JonesPlan jones;

  /// Budget inputs with the emission and timing values shared with the sequence.
  cavity::BudgetInputs budget_inputs() const;
  tomo::AnalysisOptions analysis_options() const;
};

/// Where each key got its value ("calibrated.ini:12", "--set"), for messages.
using Origins = std::map<std::string, std::string>;

/// Applies INI text on top of `settings`. Sections name the key prefix
/// ("[readout]" + "threshold = 2" → readout.threshold). Throws
/// ValidationError with "<source>:<line>: ..." messages.
void apply_ini(Settings& settings, std::string_view text, const std::string& source, Origins* origins = nullptr);
/// One dotted assignment, e.g. "readout.threshold=3".
void apply_assignment(Settings& settings, const std::string& assignment, const std::string& origin,
                      Origins* origins = nullptr);
/// Validates the experiment section; the message names where the offending key was set.
void validate(const Settings& settings, const Origins& origins = {});

/// Every key with its current value, as INI grouped by section. Loading it
/// reproduces the settings exactly.
std::string canonical_ini(const Settings& settings);
std::vector<std::string> known_keys();

std::uint64_t fnv1a64(std::string_view data);
std::string hash_string(std::uint64_t h);  // "fnv1a64:" + 16 hex digits

/// Preset directories: entries of NODE_SIM_PRESETS (':'-separated) first,
/// then the source tree's presets/ directory.
std::vector<std::filesystem::path> preset_search_path();
/// Throws ValidationError listing the searched directories.
std::filesystem::path find_preset(const std::string& name);

struct Invocation {
  Settings settings;
  std::vector<std::string> command_line;
  std::filesystem::path out_dir = "out";
  unsigned threads = 0;
  bool svg = false;
};

/// Reads a whole file; throws IoError.
std::string read_file(const std::filesystem::path& path);

struct SimulateOptions {
  std::string plan = "full";  // full | tomo | z
  bool shot_log = false;
};

/// Analysis settings of a plan.
std::vector<seq::Setting> plan_settings(const ScanPlan& scan, const std::string& plan);

void cmd_budget(const Invocation& inv, std::ostream& out, std::ostream& err);
void cmd_simulate(const Invocation& inv, const SimulateOptions& opts, std::ostream& out, std::ostream& err);
void cmd_tomo(const Invocation& inv, const std::vector<std::filesystem::path>& summaries, std::ostream& out,
              std::ostream& err);
void cmd_calibrate(const Invocation& inv, const std::filesystem::path& heatmap, std::ostream& out, std::ostream& err);
void cmd_ramsey(const Invocation& inv, std::ostream& out, std::ostream& err);
void cmd_synth_heatmap(const Invocation& inv, std::ostream& out, std::ostream& err);

/// Runs `body` and maps exceptions to exit codes: validation and parse errors
/// 1, non-convergence 2, I/O 3. The message goes to `err`.
int run_guarded(const std::function<void()>& body, std::ostream& err);

/// Recomputes the config hash stored in a manifest.json; false on mismatch.
bool verify_manifest(const std::filesystem::path& manifest);

}  // namespace nodesim::cli
