// Exact small-matrix algebra for the atom ⊗ photon two-qubit system.
//
// Conventions used everywhere in nodesim:
//   * Qubit order is atom ⊗ photon; the flat index of |a p⟩ is 2·a + p.
//   * Atom:   index 0 = |↑⟩ ≡ |g+⟩ (fluorescence bright), index 1 = |↓⟩ ≡ |0⟩ (dark).
//   * Photon: index 0 = |H⟩, index 1 = |V⟩ (PBS output ports after the waveplates).
//   * One Pauli set serves both qubits. σz = diag(+1, −1); σx and σy are the
//     equatorial operators whose eigenstates are (|0⟩ ± e^{iφ}|1⟩)/√2 with
//     φx = +π/4 and φy = −π/4. The textbook X/Y are available separately.
//
// Under these conventions the target state (|↑V⟩ − |↓H⟩)/√2 has
// ⟨σk ⊗ σk⟩ = −1 for k = x, y, z.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <iosfwd>
#include <string>

namespace nodesim {

using Complex = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using Mat4 = Eigen::Matrix4cd;
using Vec2 = Eigen::Vector2cd;
using Vec4 = Eigen::Vector4cd;

namespace tol {
inline constexpr double kAlgebraic = 1e-10;
inline constexpr double kConstruction = 1e-12;
}  // namespace tol

enum class Pauli : int { I = 0, X = 1, Y = 2, Z = 3 };

inline constexpr std::array<Pauli, 4> kAllPaulis{Pauli::I, Pauli::X, Pauli::Y, Pauli::Z};
inline constexpr std::array<Pauli, 3> kMeasuredPaulis{Pauli::X, Pauli::Y, Pauli::Z};

char pauli_letter(Pauli p);
/// Parses 'i','x','y','z' (case-insensitive); throws std::invalid_argument.
Pauli pauli_from_letter(char c);

/// Equatorial phase φ of the σx/σy eigenbasis (π/4, −π/4). Throws for I/Z.
double equatorial_phase(Pauli p);

/// Pauli operator in the project convention (see file header).
Mat2 pauli(Pauli p);
/// Standard X, Y, Z.
Mat2 textbook_pauli(Pauli p);

/// Eigenvector of pauli(p) with eigenvalue `sign` (±1). p must not be I.
Vec2 pauli_eigenvector(Pauli p, int sign);

/// Unitary that maps the +1 eigenstate of pauli(p) to |0⟩ and the −1
/// eigenstate to |1⟩, so that a computational-basis measurement after it
/// realizes a σp measurement.
Mat2 measurement_rotation(Pauli p);

Mat4 kron(const Mat2& atom, const Mat2& photon);
/// Dynamic-size variant; throws std::invalid_argument unless both are 2×2.
Eigen::MatrixXcd kron_checked(const Eigen::MatrixXcd& atom, const Eigen::MatrixXcd& photon);

enum class AtomLevel : int { Up = 0, Down = 1 };
enum class Polarization : int { H = 0, V = 1 };

constexpr int basis_index(AtomLevel a, Polarization p) {
  return 2 * static_cast<int>(a) + static_cast<int>(p);
}

struct PhysicalityReport {
  bool physical = false;
  double min_eigenvalue = 0.0;
  double trace_deviation = 0.0;
  double hermiticity_deviation = 0.0;
};

/// A 4×4 density matrix, Hermitian with unit trace. Positivity is not
/// enforced because estimators (linear inversion) can produce slightly
/// negative spectra; use is_physical() to flag those.
class TwoQubitState {
 public:
  /// Validates Hermiticity and trace within `tolerance`; throws std::invalid_argument.
  static TwoQubitState from_density(const Mat4& rho, double tolerance = tol::kConstruction);
  /// |ψ⟩⟨ψ| for a normalized ψ (checked within `tolerance`).
  static TwoQubitState from_pure(const Vec4& psi, double tolerance = tol::kConstruction);
  static TwoQubitState maximally_mixed();

  const Mat4& rho() const { return rho_; }
  Complex operator()(int r, int c) const { return rho_(r, c); }

 private:
  explicit TwoQubitState(const Mat4& rho) : rho_(rho) {}
  Mat4 rho_;
};

Vec4 bell_vector();
TwoQubitState bell_target();

double pauli_expectation(const TwoQubitState& state, Pauli atom, Pauli photon);
/// Raw-matrix overload; throws std::invalid_argument for non-Hermitian input.
double pauli_expectation(const Mat4& rho, Pauli atom, Pauli photon);

double purity(const TwoQubitState& state);
/// ⟨ψ|ρ|ψ⟩; ψ must be normalized within 1e-10.
double state_fidelity(const TwoQubitState& state, const Vec4& psi);

bool is_unitary(const Mat2& u, double tolerance = tol::kAlgebraic);
/// (Ua⊗Up) ρ (Ua⊗Up)†; throws std::invalid_argument for non-unitary inputs.
TwoQubitState apply_local_unitaries(const TwoQubitState& state, const Mat2& u_atom,
                                    const Mat2& u_photon);

PhysicalityReport is_physical(const Mat4& rho, double tolerance = tol::kAlgebraic);

/// Ascending eigenvalues of the Hermitian part of rho.
Eigen::Vector4d eigenvalues(const Mat4& rho);
/// ½‖a − b‖₁
double trace_distance(const Mat4& a, const Mat4& b);

/// Clips negative eigenvalues and renormalizes (nearest PSD unit-trace matrix
/// in the spectral sense).
Mat4 project_to_physical(const Mat4& rho);

// Text format: 4 lines × 4 entries, "re+imi" with 17 significant digits.
std::string format_complex(Complex z);
Complex parse_complex(const std::string& token);
void write_density(std::ostream& os, const Mat4& rho);
/// Throws std::runtime_error naming the offending line on malformed input.
Mat4 read_density(std::istream& is);

}  // namespace nodesim
