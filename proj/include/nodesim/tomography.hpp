// Estimators on joint atom-photon counts: Pauli expectations, linear
// inversion, maximum-likelihood reconstruction, local-unitary alignment,
// fidelity bounds, dark-count correction, parity and Ramsey fits.
//
// Outcome convention: atom "bright" and photon "H" are the +1 eigenvalues of
// the measured operators (see quantum.hpp).
#pragma once

#include "nodesim/quantum.hpp"
#include "nodesim/sequence.hpp"

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodesim::tomo {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct Estimate {
  double value = 0.0;
  double error = 0.0;
};

/// Joint counts of one setting as reals, so corrected tables stay in one type.
struct CellCounts {
  double h_bright = 0.0;
  double h_dark = 0.0;
  double v_bright = 0.0;
  double v_dark = 0.0;

  CellCounts() = default;
  CellCounts(double hb, double hd, double vb, double vd) : h_bright(hb), h_dark(hd), v_bright(vb), v_dark(vd) {}
  explicit CellCounts(const seq::JointCounts& c);
  double total() const { return h_bright + h_dark + v_bright + v_dark; }
  /// Count for atom eigenvalue `atom_sign` and photon eigenvalue `photon_sign` (±1).
  double at(int atom_sign, int photon_sign) const;
  CellCounts& operator+=(const CellCounts& o);
};

/// Counts per measured (atom basis, photon basis) pair.
class CountsTable {
 public:
  void add(Pauli atom, Pauli photon, const CellCounts& counts);
  bool has(Pauli atom, Pauli photon) const;
  const CellCounts& get(Pauli atom, Pauli photon) const;
  const std::map<std::pair<Pauli, Pauli>, CellCounts>& entries() const { return cells_; }

  /// Collects the settings of a run that correspond to atom σx/σy/σz (Δφ equal
  /// to ±π/4 within 1e-9 or no π/2 pulse). Other Δφ points are ignored.
  static CountsTable from_summary(const seq::RunSummary& summary);

 private:
  std::map<std::pair<Pauli, Pauli>, CellCounts> cells_;
};

struct ExpectationSet {
  Eigen::Matrix4d s = Eigen::Matrix4d::Zero();      // s(i, j): atom σi, photon σj; index 0 is identity
  Eigen::Matrix4d error = Eigen::Matrix4d::Zero();
  std::array<std::array<bool, 4>, 4> from_symmetry{};  // filled as S_ij = S_ji
};

/// Throws std::invalid_argument listing the missing settings.
ExpectationSet expectations_from_counts(const CountsTable& counts);
/// Exact expectations of a state.
ExpectationSet expectations_of(const Mat4& rho);

TwoQubitState linear_inversion(const ExpectationSet& s);

/// Multinomial log-likelihood Σ n log p of the counts under rho.
double log_likelihood(const CountsTable& counts, const Mat4& rho);

struct MleResult {
  TwoQubitState state = TwoQubitState::maximally_mixed();
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// ρ = T†T / Tr(T†T), T lower triangular, maximizing the likelihood of the
/// measured settings. The start is projected to the physical set and mixed
/// with 1e-3 of the identity before factorization.
MleResult mle_reconstruct(const CountsTable& counts, const Mat4& start);

struct OverlapResult {
  Mat2 u_atom = Mat2::Identity();
  Mat2 u_photon = Mat2::Identity();
  TwoQubitState aligned = TwoQubitState::maximally_mixed();
  double overlap = 0.0;  // fidelity with the target after alignment
  double gain = 0.0;     // overlap minus the unaligned fidelity
};

/// Global maximum of the Bell-state overlap over local unitaries. The target
/// is invariant under U⊗U, so only U_atom†·U_photon matters; the returned
/// u_atom is the identity. The optimum is the top eigenvector of a real
/// symmetric 4×4 form over unit quaternions.
OverlapResult optimize_local_overlap(const TwoQubitState& rho);

/// Joint probabilities of one setting, ↑ = bright, ↓ = dark.
struct CorrelationProbs {
  double up_h = 0.0;
  double up_v = 0.0;
  double down_h = 0.0;
  double down_v = 0.0;
  double shots = 0.0;  // sample size for the error; 0 for exact values

  static CorrelationProbs from_counts(const CellCounts& c);
};

/// F ≥ ½(ρ↑V + ρ↓H − 2√(ρ↑H·ρ↓V) + ρ̃↑V + ρ̃↓H − ρ̃↑H − ρ̃↓V), multinomial
/// error propagation. Throws std::invalid_argument for negative
/// probabilities or sets summing above 1.
Estimate fidelity_lower_bound(const CorrelationProbs& z, const CorrelationProbs& rotated);

/// ½(1 + √(2P − 1)); throws DomainError for P < 0.5.
double fidelity_upper_bound(double purity);
Estimate fidelity_upper_bound(Estimate purity);

struct CorrectionResult {
  CellCounts counts;
  bool clamped = false;
};

/// Subtracts attempts·p/2 from both atom cells of the matching photon port;
/// p_h and p_v are dark-count probabilities per attempt inside the acceptance
/// window. Cells that would go negative are clamped at 0 and flagged.
CorrectionResult dark_count_correct(const CellCounts& counts, double p_h, double p_v, double attempts);

struct SinusoidFit {
  double amplitude = 0.0;
  double amplitude_error = 0.0;
  double phase = 0.0;  // y = offset + amplitude·cos(x − phase)
  double offset = 0.0;

  double contrast() const { return 2.0 * amplitude; }
  double contrast_error() const { return 2.0 * amplitude_error; }
};

/// Weighted linear least squares of offset + a·cos x + b·sin x. Needs ≥ 6
/// points covering a full period; empty `errors` means equal weights with the
/// error scale taken from the residuals. Throws DomainError for flat data.
SinusoidFit parity_fit(const std::vector<double>& delta_phi, const std::vector<double>& correlation,
                       const std::vector<double>& errors);

struct RamseyFit {
  bool bounded = false;
  double tau_us = 0.0;        // when bounded
  double tau_error_us = 0.0;
  double tau_lower_bound_us = 0.0;  // 2σ lower bound (infinite when no decay at all)
};

/// Least squares of exp(−t/τ). Needs ≥ 3 points with visibilities in [0, 1].
RamseyFit ramsey_fit(const std::vector<double>& hold_times_us, const std::vector<double>& visibilities,
                     const std::vector<double>& errors);

/// Parity correlation P(dark, H) + P(bright, V) of one setting with its binomial error.
Estimate parity_correlation(const CellCounts& c);
/// P(bright | V) − P(bright | H).
Estimate z_contrast(const CellCounts& c);

enum class RotatedBasis { X, Y, Average };

struct AnalysisOptions {
  double dark_h = 0.0;  // dark-count probability per attempt in the acceptance window
  double dark_v = 0.0;
  RotatedBasis lower_bound_basis = RotatedBasis::Average;
  bool dark_correct = true;
};

struct BoundSet {
  Estimate f_lower;
  double lower_x = 0.0;
  double lower_y = 0.0;
  std::string basis_used;
};

struct FidelityReport {
  Estimate contrast_z;
  std::optional<SinusoidFit> parity_x;
  std::optional<SinusoidFit> parity_y;
  BoundSet raw;
  std::optional<BoundSet> corrected;
  bool dark_count_corrected = false;
  bool corrections_clamped = false;
  Estimate purity;
  Estimate f_upper;
  double fidelity_mle = 0.0;
  OverlapResult alignment;
  TwoQubitState rho_linear = TwoQubitState::maximally_mixed();
  PhysicalityReport linear_physicality;
  MleResult mle;
};

/// Full analysis of a run. Needs the atom σz/photon σz setting, a Δφ scan in
/// the photon σx and/or σy basis (≥ 6 points), and the nine tomography
/// settings. Purity error is estimated by the spread of MLE purities over
/// binomially resampled tables (fixed seed).
FidelityReport analyze_run(const seq::RunSummary& summary, const AnalysisOptions& options = {});

}  // namespace nodesim::tomo
