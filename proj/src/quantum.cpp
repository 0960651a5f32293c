#include "nodesim/quantum.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace nodesim {

namespace {

constexpr Complex kI{0.0, 1.0};

double hermiticity_deviation(const Mat4& rho) { return (rho - rho.adjoint()).cwiseAbs().maxCoeff(); }

}  // namespace

char pauli_letter(Pauli p) {
  switch (p) {
    case Pauli::I: return 'i';
    case Pauli::X: return 'x';
    case Pauli::Y: return 'y';
    case Pauli::Z: return 'z';
  }
  return '?';
}

Pauli pauli_from_letter(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case 'i': return Pauli::I;
    case 'x': return Pauli::X;
    case 'y': return Pauli::Y;
    case 'z': return Pauli::Z;
    default: throw std::invalid_argument(std::string("unknown Pauli label '") + c + "'");
  }
}

double equatorial_phase(Pauli p) {
  if (p == Pauli::X) return std::numbers::pi / 4.0;
  if (p == Pauli::Y) return -std::numbers::pi / 4.0;
  throw std::invalid_argument("equatorial_phase: only defined for x and y");
}

Mat2 textbook_pauli(Pauli p) {
  Mat2 m;
  switch (p) {
    case Pauli::I: m << 1, 0, 0, 1; break;
    case Pauli::X: m << 0, 1, 1, 0; break;
    case Pauli::Y: m << 0, -kI, kI, 0; break;
    case Pauli::Z: m << 1, 0, 0, -1; break;
  }
  return m;
}

Mat2 pauli(Pauli p) {
  if (p == Pauli::I || p == Pauli::Z) return textbook_pauli(p);
  const double phi = equatorial_phase(p);
  Mat2 m;
  m << 0, std::polar(1.0, -phi), std::polar(1.0, phi), 0;
  return m;
}

Vec2 pauli_eigenvector(Pauli p, int sign) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("pauli_eigenvector: sign must be ±1");
  Vec2 v;
  switch (p) {
    case Pauli::I: throw std::invalid_argument("pauli_eigenvector: identity has no eigenbasis");
    case Pauli::Z:
      v = sign > 0 ? Vec2(1, 0) : Vec2(0, 1);
      return v;
    default: {
      const double phi = equatorial_phase(p);
      v << 1.0, static_cast<double>(sign) * std::polar(1.0, phi);
      return v / std::numbers::sqrt2;
    }
  }
}

Mat2 measurement_rotation(Pauli p) {
  Mat2 u;
  u.row(0) = pauli_eigenvector(p, +1).adjoint();
  u.row(1) = pauli_eigenvector(p, -1).adjoint();
  return u;
}

Mat4 kron(const Mat2& atom, const Mat2& photon) {
  Mat4 out;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) out.block<2, 2>(2 * a, 2 * b) = atom(a, b) * photon;
  return out;
}

Eigen::MatrixXcd kron_checked(const Eigen::MatrixXcd& atom, const Eigen::MatrixXcd& photon) {
  if (atom.rows() != 2 || atom.cols() != 2 || photon.rows() != 2 || photon.cols() != 2)
    throw std::invalid_argument("kron: both factors must be 2x2");
  return kron(Mat2(atom), Mat2(photon));
}

TwoQubitState TwoQubitState::from_density(const Mat4& rho, double tolerance) {
  if (!rho.allFinite()) throw std::invalid_argument("density matrix has non-finite entries");
  const double herm = hermiticity_deviation(rho);
  if (herm > tolerance)
    throw std::invalid_argument("density matrix not Hermitian (deviation " + std::to_string(herm) + ")");
  const double tr_dev = std::abs(rho.trace() - 1.0);
  if (tr_dev > tolerance)
    throw std::invalid_argument("density matrix trace deviates from 1 by " + std::to_string(tr_dev));
  // Store the exactly Hermitian part.
  return TwoQubitState(0.5 * (rho + rho.adjoint()));
}

TwoQubitState TwoQubitState::from_pure(const Vec4& psi, double tolerance) {
  if (std::abs(psi.squaredNorm() - 1.0) > tolerance)
    throw std::invalid_argument("pure state is not normalized");
  return TwoQubitState(psi * psi.adjoint());
}

TwoQubitState TwoQubitState::maximally_mixed() { return TwoQubitState(Mat4::Identity() / 4.0); }

Vec4 bell_vector() {
  Vec4 psi = Vec4::Zero();
  psi(basis_index(AtomLevel::Up, Polarization::V)) = 1.0 / std::numbers::sqrt2;
  psi(basis_index(AtomLevel::Down, Polarization::H)) = -1.0 / std::numbers::sqrt2;
  return psi;
}

TwoQubitState bell_target() { return TwoQubitState::from_pure(bell_vector()); }

double pauli_expectation(const Mat4& rho, Pauli atom, Pauli photon) {
  if (hermiticity_deviation(rho) > tol::kAlgebraic)
    throw std::invalid_argument("pauli_expectation: input is not Hermitian");
  return (rho * kron(pauli(atom), pauli(photon))).trace().real();
}

double pauli_expectation(const TwoQubitState& state, Pauli atom, Pauli photon) {
  return pauli_expectation(state.rho(), atom, photon);
}

double purity(const TwoQubitState& state) { return (state.rho() * state.rho()).trace().real(); }

double state_fidelity(const TwoQubitState& state, const Vec4& psi) {
  if (std::abs(psi.squaredNorm() - 1.0) > tol::kAlgebraic)
    throw std::invalid_argument("state_fidelity: reference state is not normalized");
  return (psi.adjoint() * state.rho() * psi)(0, 0).real();
}

bool is_unitary(const Mat2& u, double tolerance) {
  return (u.adjoint() * u - Mat2::Identity()).cwiseAbs().maxCoeff() <= tolerance;
}

TwoQubitState apply_local_unitaries(const TwoQubitState& state, const Mat2& u_atom,
                                    const Mat2& u_photon) {
  if (!is_unitary(u_atom)) throw std::invalid_argument("apply_local_unitaries: atom operator not unitary");
  if (!is_unitary(u_photon)) throw std::invalid_argument("apply_local_unitaries: photon operator not unitary");
  const Mat4 u = kron(u_atom, u_photon);
  return TwoQubitState::from_density(u * state.rho() * u.adjoint(), tol::kAlgebraic);
}

Eigen::Vector4d eigenvalues(const Mat4& rho) {
  Eigen::SelfAdjointEigenSolver<Mat4> solver(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

PhysicalityReport is_physical(const Mat4& rho, double tolerance) {
  PhysicalityReport r;
  r.hermiticity_deviation = hermiticity_deviation(rho);
  r.trace_deviation = std::abs(rho.trace() - 1.0);
  r.min_eigenvalue = eigenvalues(rho)(0);
  r.physical = r.hermiticity_deviation <= tolerance && r.trace_deviation <= tolerance &&
               r.min_eigenvalue >= -tolerance;
  return r;
}

double trace_distance(const Mat4& a, const Mat4& b) {
  return 0.5 * eigenvalues(a - b).cwiseAbs().sum();
}

Mat4 project_to_physical(const Mat4& rho) {
  Eigen::SelfAdjointEigenSolver<Mat4> solver(0.5 * (rho + rho.adjoint()));
  Eigen::Vector4d lambda = solver.eigenvalues().cwiseMax(0.0);
  const double total = lambda.sum();
  if (total <= 0.0) return Mat4::Identity() / 4.0;
  lambda /= total;
  return solver.eigenvectors() * lambda.cast<Complex>().asDiagonal() * solver.eigenvectors().adjoint();
}

std::string format_complex(Complex z) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g%+.17gi", z.real(), z.imag());
  return buf;
}

Complex parse_complex(const std::string& token) {
  if (token.size() < 4 || token.back() != 'i') throw std::invalid_argument("malformed complex entry '" + token + "'");
  // The imaginary part starts at the last sign that is not an exponent sign.
  std::size_t split = std::string::npos;
  for (std::size_t k = token.size() - 1; k > 0; --k) {
    const char c = token[k];
    if ((c == '+' || c == '-') && token[k - 1] != 'e' && token[k - 1] != 'E') {
      split = k;
      break;
    }
  }
  if (split == std::string::npos) throw std::invalid_argument("malformed complex entry '" + token + "'");
  const std::string re_str = token.substr(0, split);
  const std::string im_str = token.substr(split, token.size() - split - 1);
  char* end = nullptr;
  const double re = std::strtod(re_str.c_str(), &end);
  if (end != re_str.c_str() + re_str.size()) throw std::invalid_argument("malformed real part in '" + token + "'");
  const double im = std::strtod(im_str.c_str(), &end);
  if (end != im_str.c_str() + im_str.size()) throw std::invalid_argument("malformed imaginary part in '" + token + "'");
  return {re, im};
}

void write_density(std::ostream& os, const Mat4& rho) {
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (c) os << ' ';
      os << format_complex(rho(r, c));
    }
    os << '\n';
  }
}

Mat4 read_density(std::istream& is) {
  Mat4 rho;
  std::string line;
  int row = 0;
  int line_no = 0;
  while (row < 4 && std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string tok;
    int col = 0;
    while (ls >> tok) {
      if (col >= 4) throw std::runtime_error("density matrix line " + std::to_string(line_no) + ": more than 4 entries");
      try {
        rho(row, col) = parse_complex(tok);
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error("density matrix line " + std::to_string(line_no) + ": " + e.what());
      }
      ++col;
    }
    if (col != 4) throw std::runtime_error("density matrix line " + std::to_string(line_no) + ": expected 4 entries");
    ++row;
  }
  if (row != 4) throw std::runtime_error("density matrix: expected 4 rows, found " + std::to_string(row));
  return rho;
}

}  // namespace nodesim
