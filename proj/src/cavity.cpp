#include "nodesim/cavity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace nodesim::cavity {

namespace {

void check_mirrors(const MirrorSet& m) {
  if (m.t_in_ppm < 0.0 || m.t_other_ppm < 0.0 || m.loss_total_ppm < 0.0)
    throw std::invalid_argument("mirror transmissions and losses must be non-negative");
  if (m.t_in_ppm + m.t_other_ppm + m.loss_total_ppm <= 0.0)
    throw std::invalid_argument("mirror budget sums to zero");
}

}  // namespace

double cooperativity_from_linewidth(AngularRate gamma_purcell, AngularRate gamma_atom_full) {
  if (!(gamma_atom_full.rad_per_s > 0.0)) throw std::invalid_argument("atomic linewidth must be positive");
  if (gamma_purcell.rad_per_s < gamma_atom_full.rad_per_s)
    throw std::invalid_argument("Purcell linewidth below the free-space linewidth");
  return (gamma_purcell.rad_per_s / gamma_atom_full.rad_per_s - 1.0) / 2.0;
}

AngularRate purcell_linewidth(AngularRate gamma_atom_full, double c_eff) {
  if (c_eff < 0.0 || gamma_atom_full.rad_per_s < 0.0)
    throw std::invalid_argument("purcell_linewidth: negative input");
  return {gamma_atom_full.rad_per_s * (1.0 + 2.0 * c_eff)};
}

AngularRate coupling_rate(double c_eff, AngularRate kappa, AngularRate gamma_half) {
  if (c_eff < 0.0 || !(kappa.rad_per_s > 0.0) || !(gamma_half.rad_per_s > 0.0))
    throw std::invalid_argument("coupling_rate: rates must be positive and C non-negative");
  return {std::sqrt(c_eff * 2.0 * kappa.rad_per_s * gamma_half.rad_per_s)};
}

double emission_probability(double c_eff) {
  if (c_eff < 0.0) throw std::invalid_argument("emission_probability: negative cooperativity");
  return 2.0 * c_eff / (2.0 * c_eff + 1.0);
}

double extraction_efficiency(const MirrorSet& m) {
  check_mirrors(m);
  return m.t_in_ppm / (m.t_in_ppm + m.t_other_ppm + m.loss_total_ppm);
}

double finesse(const MirrorSet& m) {
  check_mirrors(m);
  return 2.0 * std::numbers::pi / ((m.t_in_ppm + m.t_other_ppm + m.loss_total_ppm) * 1e-6);
}

double detection_efficiency(const EfficiencyChain& c) {
  for (double f : {c.p_cavity, c.eta_ext, c.epsilon_mode, c.eta_path, c.eta_detector})
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("efficiency factor outside [0,1]");
  return c.p_cavity * c.eta_ext * c.epsilon_mode * c.eta_path * c.eta_detector;
}

double entanglement_rate(double p, double attempt_rate_hz) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("success probability outside [0,1]");
  if (attempt_rate_hz < 0.0) throw std::invalid_argument("negative attempt rate");
  return p * attempt_rate_hz;
}

std::string InstabilityError::describe() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "UNSTABLE(g1g2=%.6g)", g1g2);
  return buf;
}

std::variant<double, InstabilityError> mode_waist(const CavityGeometry& geo) {
  if (!(geo.length_m > 0.0) || !(geo.wavelength_m > 0.0))
    throw std::invalid_argument("cavity length and wavelength must be positive");
  const double len = geo.length_m;
  const double g1 = 1.0 - len / geo.r1_m;
  const double g2 = 1.0 - len / geo.r2_m;
  const double g = g1 * g2;
  constexpr double kEps = 1e-12;
  if (std::abs(g1) < kEps && std::abs(g2) < kEps)
    return std::sqrt(len * geo.wavelength_m / (2.0 * std::numbers::pi));
  if (!(g > 0.0 && g < 1.0)) return InstabilityError{g1, g2, g};
  const double w0_sq = (len * geo.wavelength_m / std::numbers::pi) * std::sqrt(g * (1.0 - g)) /
                       std::abs(g1 + g2 - 2.0 * g);
  return std::sqrt(w0_sq);
}

Wavepacket photon_wavepacket(AngularRate gamma_purcell, double tau_cavity_s, const WavepacketGrid& grid) {
  if (!(gamma_purcell.rad_per_s > 0.0) || !(tau_cavity_s > 0.0))
    throw std::invalid_argument("photon_wavepacket: decay rates must be positive");
  if (!(grid.step_s > 0.0) || grid.step_s > 50e-12)
    throw std::invalid_argument("photon_wavepacket: grid step must be in (0, 50 ps]");
  if (!(grid.span_s > grid.step_s)) throw std::invalid_argument("photon_wavepacket: span shorter than one step");

  const double a = gamma_purcell.rad_per_s;
  const double b = 1.0 / tau_cavity_s;
  const auto n = static_cast<std::size_t>(std::floor(grid.span_s / grid.step_s)) + 1;

  Wavepacket wp;
  wp.time_s.resize(n);
  wp.intensity.resize(n);
  // (a e^{-at}) * (b e^{-bt}) = ab (e^{-at} - e^{-bt}) / (b - a); t·a²e^{-at} when a = b.
  const bool equal = std::abs(a - b) <= 1e-9 * std::max(a, b);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * grid.step_s;
    wp.time_s[k] = t;
    wp.intensity[k] = equal ? a * a * t * std::exp(-a * t)
                            : a * b * (std::exp(-a * t) - std::exp(-b * t)) / (b - a);
  }
  double integral = 0.0;
  for (std::size_t k = 1; k < n; ++k) integral += 0.5 * (wp.intensity[k] + wp.intensity[k - 1]) * grid.step_s;
  for (double& v : wp.intensity) v /= integral;
  wp.fwhm_s = fwhm_linear(wp.time_s, wp.intensity);
  return wp;
}

double fwhm_linear(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw std::domain_error("fwhm: need at least 3 samples");
  const auto peak_it = std::max_element(y.begin(), y.end());
  const auto peak = static_cast<std::size_t>(peak_it - y.begin());
  const double half = *peak_it / 2.0;
  if (!(half > 0.0)) throw std::domain_error("fwhm: curve has no positive peak");

  auto cross = [&](std::size_t i, std::size_t j) {
    // Linear interpolation between samples i and j bracketing the half level.
    const double t = (half - y[i]) / (y[j] - y[i]);
    return x[i] + t * (x[j] - x[i]);
  };

  double left = x.front();
  bool found_left = false;
  if (y[0] <= half) {
    for (std::size_t k = peak; k > 0; --k) {
      if (y[k - 1] <= half) {
        left = cross(k - 1, k);
        found_left = true;
        break;
      }
    }
  }
  // A curve that starts at or above half maximum (instantaneous rise) uses
  // the first sample as its left edge.
  if (!found_left && y[0] < half) throw std::domain_error("fwhm: no left half-maximum crossing");

  for (std::size_t k = peak; k + 1 < y.size(); ++k) {
    if (y[k + 1] <= half) return cross(k, k + 1) - left;
  }
  throw std::domain_error("fwhm: no right half-maximum crossing");
}

BudgetReport compute_budget(const BudgetInputs& in) {
  BudgetReport r;
  r.c_eff = cooperativity_from_linewidth(in.gamma_purcell, in.gamma_atom_full);
  r.gamma_purcell_mhz = in.gamma_purcell.mhz();
  const AngularRate gamma_half{in.gamma_atom_full.rad_per_s / 2.0};
  r.g_eff_mhz = coupling_rate(r.c_eff, in.kappa, gamma_half).mhz();
  r.p_cavity = emission_probability(r.c_eff);
  r.eta_ext = extraction_efficiency(in.mirrors);
  r.p_detect = detection_efficiency({r.p_cavity, r.eta_ext, in.epsilon_mode, in.eta_path, in.eta_detector});
  r.finesse = finesse(in.mirrors);
  r.waist_m = mode_waist(in.geometry);
  r.fwhm_ns = photon_wavepacket(in.gamma_purcell, in.tau_cavity_s).fwhm_s * 1e9;
  const double p = in.measured_success_probability > 0.0 ? in.measured_success_probability : r.p_detect;
  if (!(in.attempt_period_s > 0.0)) throw std::invalid_argument("attempt period must be positive");
  r.rate_hz = entanglement_rate(p, 1.0 / in.attempt_period_s);
  return r;
}

}  // namespace nodesim::cavity
