#include "doctest.h"
#include "nodesim/quantum.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <sstream>

using namespace nodesim;

namespace {

// Element-by-element Kronecker product from the definition, written
// independently of the block-based implementation.
Mat4 kron_by_definition(const Mat2& a, const Mat2& b) {
  Mat4 out;
  for (int k = 0; k < 2; ++k)
    for (int l = 0; l < 2; ++l)
      for (int m = 0; m < 2; ++m)
        for (int n = 0; n < 2; ++n) out(2 * k + m, 2 * l + n) = a(k, l) * b(m, n);
  return out;
}

}  // namespace

TEST_CASE("kron") {
  CHECK((kron(Mat2::Identity(), Mat2::Identity()) - Mat4::Identity()).norm() < 1e-15);

  const Mat4 zz = kron(pauli(Pauli::Z), pauli(Pauli::Z));
  Eigen::Vector4cd diag(1, -1, -1, 1);
  CHECK((zz - Mat4(diag.asDiagonal())).norm() < 1e-15);

  const Mat4 xy = kron(textbook_pauli(Pauli::X), textbook_pauli(Pauli::Y));
  CHECK((xy - kron_by_definition(textbook_pauli(Pauli::X), textbook_pauli(Pauli::Y))).norm() < 1e-15);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (r + c == 3) {
        CHECK(std::abs(xy(r, c).real()) < 1e-15);
        CHECK(std::abs(std::abs(xy(r, c).imag()) - 1.0) < 1e-15);
      } else {
        CHECK(std::abs(xy(r, c)) < 1e-15);
      }
    }
  }

  SUBCASE("dimension mismatch") {
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Identity(3, 3);
    Eigen::MatrixXcd b = Eigen::MatrixXcd::Identity(2, 2);
    CHECK_THROWS_AS(kron_checked(a, b), std::invalid_argument);
    CHECK(kron_checked(b, b).rows() == 4);
  }
}

TEST_CASE("pauli convention") {
  for (Pauli p : kMeasuredPaulis) {
    const Mat2 s = pauli(p);
    CHECK(std::abs(s.trace()) < 1e-15);
    CHECK((s - s.adjoint()).norm() < 1e-15);
    CHECK((s * s - Mat2::Identity()).norm() < 1e-15);
    for (int sign : {+1, -1}) {
      const Vec2 v = pauli_eigenvector(p, sign);
      CHECK((s * v - static_cast<double>(sign) * v).norm() < 1e-15);
    }
    const Mat2 u = measurement_rotation(p);
    CHECK(is_unitary(u));
    Eigen::Vector2cd d(1, -1);
    CHECK((u * s * u.adjoint() - Mat2(d.asDiagonal())).norm() < 1e-14);
  }
  for (Pauli p : kMeasuredPaulis)
    for (Pauli q : kMeasuredPaulis)
      if (p != q) CHECK((pauli(p) * pauli(q) + pauli(q) * pauli(p)).norm() < 1e-15);
  CHECK(pauli_from_letter('Y') == Pauli::Y);
  CHECK_THROWS(pauli_from_letter('q'));
}

TEST_CASE("bell_target") {
  const auto bell = bell_target();
  CHECK(purity(bell) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pauli_expectation(bell, Pauli::I, Pauli::I) == doctest::Approx(1.0));
  // Direct evaluation ⟨Ψ|σk⊗σk|Ψ⟩ for all three axes.
  for (Pauli p : kMeasuredPaulis) {
    const Vec4 psi = bell_vector();
    const double direct = (psi.adjoint() * kron(pauli(p), pauli(p)) * psi)(0, 0).real();
    CHECK(direct == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(pauli_expectation(bell, p, p) == doctest::Approx(-1.0).epsilon(1e-14));
  }
  CHECK(bell(basis_index(AtomLevel::Up, Polarization::V), basis_index(AtomLevel::Up, Polarization::V)).real() ==
        doctest::Approx(0.5));
  CHECK(is_physical(bell.rho()).physical);
}

TEST_CASE("pauli_expectation") {
  const auto mixed = TwoQubitState::maximally_mixed();
  for (Pauli a : kAllPaulis)
    for (Pauli b : kAllPaulis) {
      const double s = pauli_expectation(mixed, a, b);
      if (a == Pauli::I && b == Pauli::I) CHECK(s == doctest::Approx(1.0));
      else CHECK(std::abs(s) < 1e-15);
    }

  Mat4 bad = Mat4::Identity() / 4.0;
  bad(0, 1) = 0.3;
  CHECK_THROWS_AS(pauli_expectation(bad, Pauli::X, Pauli::X), std::invalid_argument);

  std::mt19937_64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const auto rho = TwoQubitState::from_density(testing::random_density(rng), 1e-10);
    for (Pauli a : kAllPaulis)
      for (Pauli b : kAllPaulis) CHECK(std::abs(pauli_expectation(rho, a, b)) <= 1.0 + 1e-12);
  }
}

TEST_CASE("purity and fidelity") {
  CHECK(purity(TwoQubitState::maximally_mixed()) == doctest::Approx(0.25));
  const Vec4 psi = bell_vector();
  CHECK(state_fidelity(bell_target(), psi) == doctest::Approx(1.0));
  CHECK(state_fidelity(TwoQubitState::maximally_mixed(), psi) == doctest::Approx(0.25));
  const Mat4 werner = 0.9 * bell_target().rho() + 0.1 * Mat4::Identity() / 4.0;
  CHECK(state_fidelity(TwoQubitState::from_density(werner), psi) == doctest::Approx(0.925).epsilon(1e-14));
  CHECK_THROWS(state_fidelity(bell_target(), 2.0 * psi));
}

TEST_CASE("apply_local_unitaries") {
  const auto bell = bell_target();
  const auto same = apply_local_unitaries(bell, Mat2::Identity(), Mat2::Identity());
  CHECK((same.rho() - bell.rho()).norm() < 1e-15);

  const auto flipped = apply_local_unitaries(bell, pauli(Pauli::X), pauli(Pauli::X));
  CHECK(purity(flipped) == doctest::Approx(1.0));

  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    const auto rho = TwoQubitState::from_density(testing::random_density(rng), 1e-10);
    const auto out = apply_local_unitaries(rho, testing::random_unitary(rng), testing::random_unitary(rng));
    CHECK((eigenvalues(out.rho()) - eigenvalues(rho.rho())).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(purity(out) - purity(rho)) < 1e-10);
  }

  Mat2 not_unitary = Mat2::Identity() * 1.1;
  CHECK_THROWS_AS(apply_local_unitaries(bell, not_unitary, Mat2::Identity()), std::invalid_argument);
}

TEST_CASE("is_physical") {
  CHECK(is_physical(bell_target().rho()).physical);

  Eigen::Vector4cd d(0.5, 0.6, -0.05, -0.05);
  const auto rep = is_physical(Mat4(d.asDiagonal()));
  CHECK_FALSE(rep.physical);
  CHECK(rep.trace_deviation < 1e-12);
  CHECK(rep.min_eigenvalue == doctest::Approx(-0.05));

  Mat4 skew = Mat4::Identity() / 4.0;
  skew(0, 3) = 0.1;
  CHECK(is_physical(skew).hermiticity_deviation == doctest::Approx(0.1));
}

TEST_CASE("state construction validates") {
  Mat4 rho = Mat4::Identity() / 2.0;
  CHECK_THROWS_AS(TwoQubitState::from_density(rho), std::invalid_argument);
  Vec4 v = Vec4::Zero();
  v(0) = 2.0;
  CHECK_THROWS_AS(TwoQubitState::from_pure(v), std::invalid_argument);
}

TEST_CASE("density text format round-trips bit-identically") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    Mat4 rho = testing::random_density(rng);
    rho(1, 2) = Complex(-0.0, -1.5e-300);
    std::ostringstream os;
    write_density(os, rho);
    std::istringstream is(os.str());
    const Mat4 back = read_density(is);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        CHECK(std::signbit(back(r, c).real()) == std::signbit(rho(r, c).real()));
        CHECK(back(r, c) == rho(r, c));
      }
  }
  CHECK(format_complex({0.5, -0.25}) == "0.5-0.25i");
  CHECK(parse_complex("1e-05+2.5E+03i") == Complex(1e-5, 2500.0));

  std::istringstream broken("1+0i 0+0i 0+0i 0+0i\n0+0i 1+0i 0+0i\n");
  try {
    read_density(broken);
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("trace distance and projection") {
  CHECK(trace_distance(bell_target().rho(), bell_target().rho()) < 1e-15);
  Eigen::Vector4cd d(0.6, 0.5, -0.05, -0.05);
  const Mat4 p = project_to_physical(Mat4(d.asDiagonal()));
  CHECK(is_physical(p).physical);
  CHECK(p(0, 0).real() == doctest::Approx(0.6 / 1.1));
}
