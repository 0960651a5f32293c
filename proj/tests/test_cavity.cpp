#include "doctest.h"
#include "nodesim/cavity.hpp"

#include <array>
#include <cmath>
#include <algorithm>
#include <complex>

using namespace nodesim::cavity;
using doctest::Approx;

namespace {

// Waist from the self-consistent q parameter of the ABCD round trip, starting
// just inside mirror 1. Independent of the g-parameter closed form.
double waist_by_abcd(const CavityGeometry& g) {
  using M = std::array<double, 4>;  // A B C D
  auto mul = [](const M& x, const M& y) {
    return M{x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3], x[2] * y[0] + x[3] * y[2],
             x[2] * y[1] + x[3] * y[3]};
  };
  const M prop{1.0, g.length_m, 0.0, 1.0};
  const M mirror1{1.0, 0.0, -2.0 / g.r1_m, 1.0};
  const M mirror2{1.0, 0.0, -2.0 / g.r2_m, 1.0};
  const M rt = mul(mirror1, mul(prop, mul(mirror2, prop)));
  const double a = rt[0], b = rt[1], c = rt[2], d = rt[3];
  const std::complex<double> disc = std::sqrt(std::complex<double>((a - d) * (a - d) + 4.0 * b * c));
  std::complex<double> q = ((a - d) + disc) / (2.0 * c);
  if (q.imag() < 0.0) q = ((a - d) - disc) / (2.0 * c);
  return std::sqrt(g.wavelength_m * std::abs(q.imag()) / std::numbers::pi);
}

// Brute-force discrete convolution of the two exponential densities.
double fwhm_by_convolution(double rate_a, double rate_b, double h, double span) {
  const auto n = static_cast<std::size_t>(span / h);
  std::vector<double> t(n), x(n), y(n), c(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    t[k] = static_cast<double>(k) * h;
    x[k] = rate_a * std::exp(-rate_a * t[k]);
    y[k] = rate_b * std::exp(-rate_b * t[k]);
  }
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j <= k; ++j) s += x[j] * y[k - j];
    c[k] = s * h;
  }
  return fwhm_linear(t, c);
}

}  // namespace

TEST_CASE("cooperativity and Purcell linewidth") {
  const auto gamma = AngularRate::from_mhz(19.4);
  CHECK(cooperativity_from_linewidth(AngularRate::from_mhz(21.58), gamma) == Approx(0.056).epsilon(0.01));
  CHECK(cooperativity_from_linewidth(gamma, gamma) == 0.0);
  CHECK(cooperativity_from_linewidth({3.0 * gamma.rad_per_s}, gamma) == Approx(1.0));
  CHECK_THROWS_AS(cooperativity_from_linewidth({0.5 * gamma.rad_per_s}, gamma), std::invalid_argument);

  CHECK(purcell_linewidth(gamma, 0.056).mhz() == Approx(21.58).epsilon(0.01));
  CHECK(purcell_linewidth(gamma, 0.0).rad_per_s == gamma.rad_per_s);
  CHECK(purcell_linewidth(gamma, 0.5).rad_per_s == Approx(2.0 * gamma.rad_per_s));
  CHECK_THROWS(purcell_linewidth(gamma, -0.1));

  for (double c = 0.0; c <= 10.0; c += 0.137)
    CHECK(std::abs(cooperativity_from_linewidth(purcell_linewidth(gamma, c), gamma) - c) < 1e-12);
}

TEST_CASE("coupling rate") {
  const auto g = coupling_rate(0.056, AngularRate::from_mhz(58.0), AngularRate::from_mhz(9.7));
  CHECK(g.mhz() == Approx(7.9).epsilon(0.02));
  CHECK(coupling_rate(0.0, {1.0}, {1.0}).rad_per_s == 0.0);
  CHECK(coupling_rate(1.0, {1.0}, {1.0}).rad_per_s == Approx(std::sqrt(2.0)));
}

TEST_CASE("emission probability") {
  CHECK(emission_probability(0.056) == Approx(0.101).epsilon(0.005));
  CHECK(emission_probability(0.0) == 0.0);
  CHECK(emission_probability(500.0) > 0.999);
  CHECK(emission_probability(500.0) < 1.0);
  double prev = -1.0;
  for (double c = 0.0; c < 20.0; c += 0.1) {
    CHECK(emission_probability(c) > prev);
    prev = emission_probability(c);
  }
}

TEST_CASE("extraction efficiency and finesse") {
  CHECK(extraction_efficiency({500, 100, 350}) == Approx(500.0 / 950.0));
  CHECK(extraction_efficiency({100, 100, 0}) == Approx(0.5));
  CHECK(extraction_efficiency({0, 100, 50}) == 0.0);
  CHECK_THROWS(extraction_efficiency({0, 0, 0}));
  double prev = 2.0;
  for (double loss = 0.0; loss < 2000.0; loss += 50.0) {
    CHECK(extraction_efficiency({500, 100, loss}) < prev);
    prev = extraction_efficiency({500, 100, loss});
  }
  // Zero loss: the two outcoupling fractions partition the photon.
  CHECK(extraction_efficiency({500, 100, 0}) + extraction_efficiency({100, 500, 0}) == Approx(1.0));

  CHECK(finesse({1337, 0, 0}) == Approx(4700).epsilon(0.001));
  CHECK(finesse({628.3185307179586, 0, 0}) == Approx(10000.0));
  CHECK(finesse({500, 100, 350}) == Approx(6614).epsilon(0.001));
  CHECK_THROWS(finesse({0, 0, 0}));
}

TEST_CASE("detection efficiency") {
  CHECK(detection_efficiency({0.101, 0.53, 0.44, 0.65, 0.215}) == Approx(3.2e-3).epsilon(0.03));
  CHECK(detection_efficiency({0.101, 0.0, 0.44, 0.65, 0.215}) == 0.0);
  CHECK(detection_efficiency({1, 1, 1, 1, 1}) == 1.0);
  const EfficiencyChain c{0.3, 0.8, 0.6, 0.9, 0.5};
  CHECK(detection_efficiency(c) <= 0.3);
  CHECK_THROWS(detection_efficiency({1.2, 1, 1, 1, 1}));
}

TEST_CASE("mode waist") {
  const double lambda = 370e-9;
  SUBCASE("symmetric confocal") {
    const auto w = mode_waist({261e-6, 261e-6, 261e-6, lambda});
    REQUIRE(std::holds_alternative<double>(w));
    CHECK(std::get<double>(w) == Approx(std::sqrt(261e-6 * lambda / (2.0 * std::numbers::pi))));
    CHECK(std::get<double>(w) == Approx(3.92e-6).epsilon(0.005));
  }
  SUBCASE("agrees with the ABCD round trip") {
    for (const CavityGeometry g : {CavityGeometry{261e-6, 271e-6, 304e-6, lambda},
                                   CavityGeometry{261e-6, 271e-6, 270e-6, lambda},
                                   CavityGeometry{100e-6, 500e-6, 300e-6, lambda},
                                   CavityGeometry{1e-3, -5e-3, 2.5e-3, 1064e-9}}) {
      const auto w = mode_waist(g);
      REQUIRE(std::holds_alternative<double>(w));
      CHECK(std::get<double>(w) == Approx(waist_by_abcd(g)).epsilon(1e-9));
    }
  }
  SUBCASE("radii inside the quoted error bars") {
    // R1 = 255+16 µm, R2 = 304-34 µm gives ≈4.0 µm, close to the quoted 4.1(2) µm.
    const auto w = mode_waist({261e-6, 271e-6, 270e-6, lambda});
    CHECK(std::get<double>(w) == Approx(4.1e-6).epsilon(0.10));
    // R2 at its central value gives 3.63 µm.
    CHECK(std::get<double>(mode_waist({261e-6, 271e-6, 304e-6, lambda})) == Approx(3.63e-6).epsilon(0.01));
  }
  SUBCASE("central radii are unstable") {
    const auto w = mode_waist({261e-6, 255e-6, 304e-6, lambda});
    REQUIRE(std::holds_alternative<InstabilityError>(w));
    const auto& e = std::get<InstabilityError>(w);
    CHECK(e.g1 < 0.0);
    CHECK(e.g1g2 < 0.0);
    CHECK(e.describe().rfind("UNSTABLE(g1g2=", 0) == 0);
  }
  SUBCASE("symmetric under swapping the mirrors") {
    const auto a = mode_waist({200e-6, 300e-6, 450e-6, lambda});
    const auto b = mode_waist({200e-6, 450e-6, 300e-6, lambda});
    CHECK(std::get<double>(a) == Approx(std::get<double>(b)).epsilon(1e-12));
  }
}

TEST_CASE("photon wavepacket") {
  const auto gp = AngularRate::from_mhz(21.58);
  SUBCASE("fast cavity limit is a single exponential") {
    const auto wp = photon_wavepacket(gp, 1e-15);
    CHECK(wp.fwhm_s == Approx(std::log(2.0) / gp.rad_per_s).epsilon(0.005));
    CHECK(wp.fwhm_s == Approx(5.11e-9).epsilon(0.005));
  }
  SUBCASE("design parameters against the convolution oracle") {
    const auto wp = photon_wavepacket(gp, 1.3e-9);
    const double oracle = fwhm_by_convolution(gp.rad_per_s, 1.0 / 1.3e-9, 5e-12, 80e-9);
    CHECK(wp.fwhm_s == Approx(oracle).epsilon(0.01));
    // Frozen from a 1 ps dense-grid convolution computed before the build.
    CHECK(wp.fwhm_s == Approx(8.681e-9).epsilon(0.005));
    CHECK(wp.fwhm_s > 5e-9);
    CHECK(wp.fwhm_s < 12e-9);
  }
  SUBCASE("equal decay constants peak at tau") {
    const double tau = 2e-9;
    const auto wp = photon_wavepacket({1.0 / tau}, tau);
    const auto peak = std::max_element(wp.intensity.begin(), wp.intensity.end()) - wp.intensity.begin();
    CHECK(wp.time_s[static_cast<std::size_t>(peak)] == Approx(tau).epsilon(0.01));
    const double t = 3.7e-9;
    const auto k = static_cast<std::size_t>(std::lround(t / 10e-12));
    CHECK(wp.intensity[k] == Approx(wp.time_s[k] * std::exp(-wp.time_s[k] / tau) / (tau * tau)).epsilon(1e-5));
  }
  SUBCASE("profile integrates to one") {
    const auto wp = photon_wavepacket(gp, 1.3e-9);
    double s = 0.0;
    for (std::size_t k = 1; k < wp.time_s.size(); ++k)
      s += 0.5 * (wp.intensity[k] + wp.intensity[k - 1]) * (wp.time_s[k] - wp.time_s[k - 1]);
    CHECK(s == Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(photon_wavepacket(gp, 1.3e-9, {100e-12, 200e-9}), std::invalid_argument);
}

TEST_CASE("fwhm of degenerate curves") {
  CHECK_THROWS_AS(fwhm_linear({0.0, 1.0, 2.0}, {0.0, 1.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(fwhm_linear({0.0}, {1.0}), std::domain_error);
  CHECK(fwhm_linear({0, 1, 2, 3, 4}, {0, 0, 2, 0, 0}) == Approx(1.0));
}

TEST_CASE("entanglement rate and budget") {
  CHECK(entanglement_rate(2.5e-3, 62.0 / 2.5e-3) == Approx(62.0));
  CHECK(entanglement_rate(0.0, 1e4) == 0.0);
  CHECK(entanglement_rate(1.0, 100.0) == 100.0);

  const auto r = compute_budget(BudgetInputs{});
  CHECK(r.c_eff == Approx(0.056).epsilon(0.035));
  CHECK(r.p_cavity == Approx(0.101).epsilon(0.02));
  CHECK(r.p_detect == Approx(3.2e-3).epsilon(0.03));
  CHECK(r.rate_hz == Approx(62.0).epsilon(0.016));
  CHECK(std::holds_alternative<InstabilityError>(r.waist_m));
}
