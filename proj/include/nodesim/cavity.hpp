// Closed-form cavity-QED budget for a single emitter in a two-mirror cavity.
//
// Rates are carried as angular frequencies (rad/s). AngularRate::from_mhz()
// and mhz() convert to and from ordinary frequency, i.e. "2π·x MHz" ↔ x.
#pragma once

#include <numbers>
#include <string>
#include <variant>
#include <vector>

namespace nodesim::cavity {

struct AngularRate {
  double rad_per_s = 0.0;

  static constexpr AngularRate from_mhz(double mhz) { return {2.0 * std::numbers::pi * mhz * 1e6}; }
  constexpr double mhz() const { return rad_per_s / (2.0 * std::numbers::pi * 1e6); }
};

/// Mirror budget in ppm. t_in is the mirror the photon leaves through.
struct MirrorSet {
  double t_in_ppm = 0.0;
  double t_other_ppm = 0.0;
  double loss_total_ppm = 0.0;  // scattering + absorption summed over both mirrors
};

struct CavityGeometry {
  double length_m = 0.0;
  double r1_m = 0.0;
  double r2_m = 0.0;
  double wavelength_m = 0.0;
};

struct EfficiencyChain {
  double p_cavity = 0.0;
  double eta_ext = 0.0;
  double epsilon_mode = 0.0;
  double eta_path = 0.0;
  double eta_detector = 0.0;
};

double cooperativity_from_linewidth(AngularRate gamma_purcell, AngularRate gamma_atom_full);
AngularRate purcell_linewidth(AngularRate gamma_atom_full, double c_eff);
/// g = √(2Cκγ) with γ = Γ/2.
AngularRate coupling_rate(double c_eff, AngularRate kappa, AngularRate gamma_half);
double emission_probability(double c_eff);
double extraction_efficiency(const MirrorSet& mirrors);
double finesse(const MirrorSet& mirrors);
double detection_efficiency(const EfficiencyChain& chain);
double entanglement_rate(double p_success_per_shot, double attempt_rate_hz);

struct InstabilityError {
  double g1 = 0.0;
  double g2 = 0.0;
  double g1g2 = 0.0;
  std::string describe() const;
};

/// Waist (1/e² intensity radius, meters) of the fundamental Gaussian mode, or
/// the stability parameters when the resonator does not confine a mode.
/// Stable means 0 < g1·g2 < 1; the symmetric confocal point g1 = g2 = 0 is
/// accepted as its limiting value √(Lλ/2π).
std::variant<double, InstabilityError> mode_waist(const CavityGeometry& geometry);

struct WavepacketGrid {
  double step_s = 10e-12;
  double span_s = 200e-9;
};

struct Wavepacket {
  std::vector<double> time_s;
  std::vector<double> intensity;  // normalized to unit integral (trapezoid rule)
  double fwhm_s = 0.0;
};

/// Photon intensity profile: atomic decay exp(−Γ′t) convolved with the cavity
/// response exp(−t/τ). Throws std::invalid_argument for a grid step above 50 ps.
Wavepacket photon_wavepacket(AngularRate gamma_purcell, double tau_cavity_s,
                             const WavepacketGrid& grid = {});

/// Full width at half maximum of a sampled curve by linear interpolation of the
/// half-maximum crossings on either side of the peak. Throws std::domain_error
/// when the curve never falls below half maximum on one side.
double fwhm_linear(const std::vector<double>& x, const std::vector<double>& y);

struct BudgetInputs {
  AngularRate gamma_atom_full = AngularRate::from_mhz(19.4);
  AngularRate gamma_purcell = AngularRate::from_mhz(21.58);
  AngularRate kappa = AngularRate::from_mhz(58.0);
  MirrorSet mirrors{500.0, 100.0, 350.0};
  CavityGeometry geometry{261e-6, 255e-6, 304e-6, 370e-9};
  double epsilon_mode = 0.44;
  double eta_path = 0.65;
  double eta_detector = 0.215;
  double tau_cavity_s = 1.3e-9;
  double measured_success_probability = 2.5e-3;  // ≤ 0 means "use p_detect"
  double attempt_period_s = 40e-6;
};

struct BudgetReport {
  double c_eff = 0.0;
  double g_eff_mhz = 0.0;
  double gamma_purcell_mhz = 0.0;
  double p_cavity = 0.0;
  double eta_ext = 0.0;
  double p_detect = 0.0;
  double finesse = 0.0;
  std::variant<double, InstabilityError> waist_m;
  double fwhm_ns = 0.0;
  double rate_hz = 0.0;
};

BudgetReport compute_budget(const BudgetInputs& in);

}  // namespace nodesim::cavity
