// Jones-calculus model of the photon analysis path: fiber, quarter- and
// half-wave plates and a polarizing beam splitter, in the (H, V) field basis.
//
// Photon path (cavity → detectors): fiber (backward pass) → QWP → HWP → PBS.
// Calibration path (reference laser): PBS → HWP → QWP → fiber → first cavity
// mirror → fiber → QWP → HWP → PBS, detected on the V port. Backward passes
// use the transpose of the forward Jones matrix (reciprocity) and the mirror
// is the identity.
#pragma once

#include "nodesim/quantum.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace nodesim::jones {

struct JonesElement {
  Mat2 m = Mat2::Identity();

  JonesElement operator*(const JonesElement& rhs) const { return {m * rhs.m}; }
  Vec2 operator*(const Vec2& field) const { return m * field; }
  /// Same element traversed in the opposite direction.
  JonesElement reversed() const { return {m.transpose()}; }
};

/// Linear retarder with fast axis at `axis` (radians from H) and retardance
/// `retardance`: exp(−i·retardance/2 · (cos 2θ σ₁ + sin 2θ σ₂)) with σ₁ = diag(1,−1)
/// and σ₂ the H/V exchange.
JonesElement retarder(double axis, double retardance);
JonesElement hwp(double theta);
JonesElement qwp(double theta);

/// General lossless retarder: eigen-axis at Stokes azimuth 2α and ellipticity
/// 2β on the Poincaré sphere, total retardance δ.
struct FiberModel {
  double alpha = 0.0;
  double beta = 0.0;
  double delta = 0.0;
};

JonesElement fiber_unitary(const FiberModel& fiber);

/// Fast-axis zero offsets of the two plates (radians). Physical plate angle =
/// dial angle + offset.
struct WaveplateOffsets {
  double hwp = 0.0;
  double qwp = 0.0;
};

struct WaveplateSetting {
  double theta_hwp = 0.0;  // dial angles, reported modulo π
  double theta_qwp = 0.0;
  WaveplateOffsets offsets;
};

/// Rectangular map of the normalized V-port rate over dial angles.
struct HeatMap {
  std::vector<double> hwp_angles;  // sorted ascending, radians
  std::vector<double> qwp_angles;  // sorted ascending, radians
  std::vector<double> v_rate;      // row-major: index = i_hwp * qwp_angles.size() + i_qwp

  std::size_t size() const { return v_rate.size(); }
  double at(std::size_t i_hwp, std::size_t i_qwp) const { return v_rate[i_hwp * qwp_angles.size() + i_qwp]; }
};

/// Round-trip Jones matrix Fᵀ·F seen by the calibration light.
JonesElement double_pass(const FiberModel& fiber);

/// V-port probability for H input on the calibration path.
double reflection_v_rate(const FiberModel& fiber, const WaveplateOffsets& offsets, double theta_hwp,
                         double theta_qwp);

HeatMap simulate_reflection_heatmap(const FiberModel& fiber, const WaveplateOffsets& offsets,
                                    const std::vector<double>& hwp_angles,
                                    const std::vector<double>& qwp_angles);

/// Divides every rate by the map maximum.
HeatMap normalized(HeatMap map);

/// Uniform grid of n angles in [0, span).
std::vector<double> angle_grid(std::size_t n, double span);

struct FiberFit {
  FiberModel fiber;           // canonical representative, see canonicalize()
  WaveplateOffsets offsets;
  double scale = 1.0;         // fitted amplitude of the normalized map
  double residual = 0.0;      // Σ (model − data)²
  bool degenerate = false;    // distinct minima with equal residual
  int starts = 0;
  int starts_converged = 0;
  std::vector<std::string> gauge_notes;
};

/// Least-squares fit of the fiber and plate offsets to a measured map. The
/// map is normalized to max = 1 first. Throws std::invalid_argument when the
/// map has fewer than 25 points or spans less than π/2 in either angle.
FiberFit fit_fiber(const HeatMap& map);

struct FiberCalibration {
  FiberModel fiber;
  WaveplateOffsets offsets;
};

/// Gauge-fixed representative of a calibration. The reflection map is
/// unchanged by
///   * F → O·F for any real rotation O (only Fᵀ·F, a linear retarder, enters);
///   * HWP offset + φ together with QWP offset and double-pass axis + 2φ;
///   * QWP offset and double-pass axis + π/2 together.
/// The representative is the linear retarder F = √(Fᵀ·F) with β = 0,
/// δ ∈ [0, π/2], α ∈ [0, π), HWP offset 0 and QWP offset in [0, π/2).
/// On the photon path these gauges are a rotation of the photon frame about
/// its z axis, which a shift of the atomic analysis phase compensates.
FiberCalibration canonicalize(const FiberCalibration& cal);

/// Jones vector (at the cavity output) of the ±1 eigenstate of the photon
/// qubit operator `basis`. Photon qubit |0⟩ (H after ideal analysis) is σ⁻ and
/// |1⟩ (V) is σ⁺, with σ± = (H ± iV)/√2.
Vec2 photon_basis_state(Pauli basis, int sign);

/// Single-pass analysis train fiber → QWP → HWP for dial angles `setting`.
JonesElement photon_train(const FiberModel& fiber, const WaveplateSetting& setting);

/// Probability that the +1 eigenstate exits the V port (equal to that of the −1
/// eigenstate exiting H for a lossless train).
double extinction_error(const FiberModel& fiber, const WaveplateSetting& setting, Pauli basis);

/// Dial angles mapping the basis eigenstates (+1 → H, −1 → V) with extinction
/// ≤ 1e-6. Among all solutions modulo π, returns the one with the smallest QWP
/// angle, then the smallest HWP angle. Throws std::runtime_error ("no
/// solution") when the best extinction exceeds 1e-3.
WaveplateSetting solve_basis_angles(const FiberModel& fiber, const WaveplateOffsets& offsets, Pauli basis);

// CSV: header "theta_hwp_deg,theta_qwp_deg,v_rate", 4-decimal degrees, 6-decimal rates.
void write_heatmap_csv(std::ostream& os, const HeatMap& map);
/// Throws std::runtime_error naming the offending line.
HeatMap read_heatmap_csv(std::istream& is);

}  // namespace nodesim::jones
