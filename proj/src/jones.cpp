#include "nodesim/jones.hpp"

#include "nodesim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace nodesim::jones {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Complex kI{0.0, 1.0};

// Stokes-ordered Pauli set for polarization: σ₁ = Z, σ₂ = X, σ₃ = Y.
Mat2 stokes_operator(double n1, double n2, double n3) {
  Mat2 m;
  m << n1, Complex(n2, -n3), Complex(n2, n3), -n1;
  return m;
}

Mat2 rotation_about(double n1, double n2, double n3, double angle) {
  return std::cos(angle / 2.0) * Mat2::Identity() - kI * std::sin(angle / 2.0) * stokes_operator(n1, n2, n3);
}

double wrap(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  if (r >= period - 1e-12) r = 0.0;
  return r;
}

double to_deg(double rad) { return rad * 180.0 / kPi; }
double to_rad(double deg) { return deg * kPi / 180.0; }

double span(const std::vector<double>& v) { return v.empty() ? 0.0 : v.back() - v.front(); }

// Model of a normalized map: parameters (α, β, δ, o_hwp, o_qwp, scale).
constexpr int kFitParams = 6;

Eigen::VectorXd map_residuals(const HeatMap& data, const Eigen::VectorXd& p) {
  const FiberModel f{p(0), p(1), p(2)};
  const WaveplateOffsets o{p(3), p(4)};
  Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
  const std::size_t nq = data.qwp_angles.size();
  for (std::size_t i = 0; i < data.hwp_angles.size(); ++i)
    for (std::size_t j = 0; j < nq; ++j) {
      const std::size_t k = i * nq + j;
      r(static_cast<Eigen::Index>(k)) =
          p(5) * reflection_v_rate(f, o, data.hwp_angles[i], data.qwp_angles[j]) - data.v_rate[k];
    }
  return r;
}

struct StartResult {
  optim::LeastSquaresResult lsq;
  FiberCalibration canonical;
};

StartResult run_start(const HeatMap& data, const FiberModel& start) {
  // Coarse scan of the plate offsets for this fiber start, then local refinement.
  Eigen::VectorXd best(kFitParams);
  double best_cost = std::numeric_limits<double>::infinity();
  constexpr int kScan = 12;
  for (int a = 0; a < kScan; ++a)
    for (int b = 0; b < kScan; ++b) {
      Eigen::VectorXd p(kFitParams);
      p << start.alpha, start.beta, start.delta, a * (kPi / 2.0) / kScan, b * kPi / kScan, 1.0;
      const double cost = map_residuals(data, p).squaredNorm();
      if (cost < best_cost) {
        best_cost = cost;
        best = p;
      }
    }
  StartResult out;
  out.lsq = optim::levenberg_marquardt([&data](const Eigen::VectorXd& p) { return map_residuals(data, p); }, best);
  const Eigen::VectorXd& x = out.lsq.x;
  out.canonical = canonicalize({{x(0), x(1), x(2)}, {x(3), x(4)}});
  return out;
}

double angular_distance(double a, double b, double period) {
  const double d = wrap(a - b, period);
  return std::min(d, period - d);
}

bool same_calibration(const FiberCalibration& a, const FiberCalibration& b, double tol) {
  const Mat2 da = double_pass(a.fiber).m;
  const Mat2 db = double_pass(b.fiber).m;
  const double dist = std::min((da - db).norm(), (da + db).norm());
  return dist < tol && angular_distance(a.offsets.hwp, b.offsets.hwp, kPi / 2.0) < tol &&
         angular_distance(a.offsets.qwp, b.offsets.qwp, kPi / 2.0) < tol;
}

}  // namespace

JonesElement retarder(double axis, double retardance) {
  return {rotation_about(std::cos(2.0 * axis), std::sin(2.0 * axis), 0.0, retardance)};
}

JonesElement hwp(double theta) { return retarder(theta, kPi); }
JonesElement qwp(double theta) { return retarder(theta, kPi / 2.0); }

JonesElement fiber_unitary(const FiberModel& f) {
  const double c = std::cos(2.0 * f.beta);
  return {rotation_about(c * std::cos(2.0 * f.alpha), c * std::sin(2.0 * f.alpha), std::sin(2.0 * f.beta), f.delta)};
}

JonesElement double_pass(const FiberModel& fiber) {
  const JonesElement f = fiber_unitary(fiber);
  return f.reversed() * f;
}

double reflection_v_rate(const FiberModel& fiber, const WaveplateOffsets& offsets, double theta_hwp,
                         double theta_qwp) {
  const JonesElement forward = fiber_unitary(fiber) * qwp(theta_qwp + offsets.qwp) * hwp(theta_hwp + offsets.hwp);
  const JonesElement round_trip = forward.reversed() * forward;
  return std::norm(round_trip.m(1, 0));
}

HeatMap simulate_reflection_heatmap(const FiberModel& fiber, const WaveplateOffsets& offsets,
                                    const std::vector<double>& hwp_angles,
                                    const std::vector<double>& qwp_angles) {
  if (hwp_angles.empty() || qwp_angles.empty()) throw std::invalid_argument("heat map grid is empty");
  HeatMap map;
  map.hwp_angles = hwp_angles;
  map.qwp_angles = qwp_angles;
  std::sort(map.hwp_angles.begin(), map.hwp_angles.end());
  std::sort(map.qwp_angles.begin(), map.qwp_angles.end());
  map.v_rate.reserve(hwp_angles.size() * qwp_angles.size());
  for (double th : map.hwp_angles)
    for (double tq : map.qwp_angles) map.v_rate.push_back(reflection_v_rate(fiber, offsets, th, tq));
  return map;
}

HeatMap normalized(HeatMap map) {
  const double peak = map.v_rate.empty() ? 0.0 : *std::max_element(map.v_rate.begin(), map.v_rate.end());
  if (peak <= 0.0) throw std::invalid_argument("heat map has no positive rate to normalize by");
  for (double& v : map.v_rate) v /= peak;
  return map;
}

std::vector<double> angle_grid(std::size_t n, double range) {
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = range * static_cast<double>(k) / static_cast<double>(n);
  return out;
}

FiberCalibration canonicalize(const FiberCalibration& cal) {
  const Mat2 d = double_pass(cal.fiber).m;
  const double c = 0.5 * (d(0, 0) + d(1, 1)).real();
  const double a = (kI * (d(0, 0) - d(1, 1)) / 2.0).real();
  const double b = (kI * (d(0, 1) + d(1, 0)) / 2.0).real();
  double half = std::atan2(std::hypot(a, b), c);  // D = exp(−i·half·n·σ)
  double axis = 0.5 * std::atan2(b, a);
  if (half > kPi / 2.0) {  // −D is the same element
    half = kPi - half;
    axis += kPi / 2.0;
  }
  // Rotating the HWP by φ and everything behind it by 2φ leaves the input H
  // and the V projection unchanged; fix the HWP offset to zero.
  const double phi = -cal.offsets.hwp;
  axis += 2.0 * phi;
  double oq = wrap(cal.offsets.qwp + 2.0 * phi, kPi);
  if (oq >= kPi / 2.0) {
    oq -= kPi / 2.0;
    axis += kPi / 2.0;
  }
  if (half < 1e-12) axis = 0.0;

  FiberCalibration out;
  out.fiber = {wrap(axis, kPi), 0.0, half};
  out.offsets = {0.0, oq};
  return out;
}

FiberFit fit_fiber(const HeatMap& map) {
  if (map.size() < 25) throw std::invalid_argument("fit_fiber: need at least 25 grid points");
  if (map.size() != map.hwp_angles.size() * map.qwp_angles.size())
    throw std::invalid_argument("fit_fiber: heat map is not rectangular");
  if (span(map.hwp_angles) < kPi / 2.0 - 1e-9 || span(map.qwp_angles) < kPi / 2.0 - 1e-9)
    throw std::invalid_argument("fit_fiber: grid must span at least half a period in each angle");
  const HeatMap data = normalized(map);

  std::vector<FiberModel> starts;
  for (double alpha : {0.3, 1.1})
    for (double beta : {-0.35, 0.35})
      for (double delta : {0.6, 1.9, 3.4, 4.9}) starts.push_back({alpha, beta, delta});

  std::vector<std::future<StartResult>> pending;
  for (const FiberModel& s : starts)
    pending.push_back(std::async(std::launch::async, [&data, s] { return run_start(data, s); }));
  std::vector<StartResult> results;
  for (auto& f : pending) results.push_back(f.get());

  FiberFit fit;
  fit.starts = static_cast<int>(results.size());
  std::size_t best = 0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    if (results[k].lsq.converged) ++fit.starts_converged;
    if (results[k].lsq.cost < results[best].lsq.cost) best = k;
  }
  const StartResult& winner = results[best];
  fit.fiber = winner.canonical.fiber;
  fit.offsets = winner.canonical.offsets;
  fit.scale = winner.lsq.x(5);
  fit.residual = winner.lsq.cost;

  const double tie = fit.residual * (1.0 + 1e-6) + 1e-12;
  for (const StartResult& r : results) {
    if (r.lsq.cost > tie) continue;
    if (!same_calibration(r.canonical, winner.canonical, 1e-4)) fit.degenerate = true;
  }

  fit.gauge_notes = {
      "fiber reported as the linear retarder sqrt(F^T F); F -> O F for real rotations O leaves the map unchanged",
      "hwp offset fixed to 0: turning it by phi while turning the qwp offset and the double-pass axis by 2*phi "
      "leaves the map unchanged",
      "double-pass axis and qwp offset defined jointly modulo pi/2",
      "for the photon path both gauges amount to a rotation of the photon frame about its z axis",
  };
  if (fit.degenerate) fit.gauge_notes.push_back("distinct minima with equal residual found; reported fit is the first");
  return fit;
}

Vec2 photon_basis_state(Pauli basis, int sign) {
  const Vec2 q = pauli_eigenvector(basis, sign);
  const Vec2 sigma_minus = Vec2(1.0, -kI) / std::numbers::sqrt2;
  const Vec2 sigma_plus = Vec2(1.0, kI) / std::numbers::sqrt2;
  return q(0) * sigma_minus + q(1) * sigma_plus;
}

JonesElement photon_train(const FiberModel& fiber, const WaveplateSetting& s) {
  return hwp(s.theta_hwp + s.offsets.hwp) * qwp(s.theta_qwp + s.offsets.qwp) * fiber_unitary(fiber).reversed();
}

double extinction_error(const FiberModel& fiber, const WaveplateSetting& setting, Pauli basis) {
  const Vec2 out = photon_train(fiber, setting) * photon_basis_state(basis, +1);
  return std::norm(out(1));
}

WaveplateSetting solve_basis_angles(const FiberModel& fiber, const WaveplateOffsets& offsets, Pauli basis) {
  if (basis == Pauli::I) throw std::invalid_argument("solve_basis_angles: identity is not a readout basis");
  const Vec2 e_plus = photon_basis_state(basis, +1);
  auto residual = [&](const Eigen::VectorXd& x) {
    const Vec2 out = photon_train(fiber, {x(0), x(1), offsets}) * e_plus;
    Eigen::VectorXd r(2);
    r << out(1).real(), out(1).imag();
    return r;
  };

  constexpr int kGrid = 24;
  std::vector<std::pair<double, Eigen::VectorXd>> candidates;
  for (int a = 0; a < kGrid; ++a)
    for (int b = 0; b < kGrid; ++b) {
      Eigen::VectorXd x(2);
      x << a * kPi / kGrid, b * kPi / kGrid;
      candidates.emplace_back(residual(x).squaredNorm(), x);
    }
  std::sort(candidates.begin(), candidates.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
  candidates.resize(16);

  std::vector<WaveplateSetting> solutions;
  double best_ext = std::numeric_limits<double>::infinity();
  for (const auto& [ext0, x0] : candidates) {
    const auto res = optim::levenberg_marquardt(residual, x0);
    WaveplateSetting s{wrap(res.x(0), kPi), wrap(res.x(1), kPi), offsets};
    const double ext = extinction_error(fiber, s, basis);
    best_ext = std::min(best_ext, ext);
    if (ext > 1e-6) continue;
    const bool seen = std::any_of(solutions.begin(), solutions.end(), [&](const WaveplateSetting& o) {
      return angular_distance(o.theta_hwp, s.theta_hwp, kPi) < 1e-6 &&
             angular_distance(o.theta_qwp, s.theta_qwp, kPi) < 1e-6;
    });
    if (!seen) solutions.push_back(s);
  }
  if (solutions.empty()) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "solve_basis_angles: no solution for sigma_%c (best extinction %.3g)",
                  pauli_letter(basis), best_ext);
    throw std::runtime_error(buf);
  }
  return *std::min_element(solutions.begin(), solutions.end(), [](const auto& l, const auto& r) {
    if (std::abs(l.theta_qwp - r.theta_qwp) > 1e-9) return l.theta_qwp < r.theta_qwp;
    return l.theta_hwp < r.theta_hwp;
  });
}

void write_heatmap_csv(std::ostream& os, const HeatMap& map) {
  os << "theta_hwp_deg,theta_qwp_deg,v_rate\n";
  char buf[96];
  for (std::size_t i = 0; i < map.hwp_angles.size(); ++i)
    for (std::size_t j = 0; j < map.qwp_angles.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.6f\n", to_deg(map.hwp_angles[i]), to_deg(map.qwp_angles[j]),
                    map.at(i, j));
      os << buf;
    }
}

HeatMap read_heatmap_csv(std::istream& is) {
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("heat map line " + std::to_string(line_no) + ": " + what);
  };
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  };

  if (!std::getline(is, line)) throw std::runtime_error("heat map: empty input");
  ++line_no;
  strip(line);
  if (line != "theta_hwp_deg,theta_qwp_deg,v_rate") fail("unexpected header '" + line + "'");

  std::map<std::pair<double, double>, double> cells;
  while (std::getline(is, line)) {
    ++line_no;
    strip(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    double v[3];
    int n = 0;
    while (std::getline(ls, field, ',')) {
      if (n >= 3) fail("more than 3 fields");
      char* end = nullptr;
      v[n] = std::strtod(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size() || !std::isfinite(v[n]))
        fail("malformed number '" + field + "'");
      ++n;
    }
    if (n != 3) fail("expected 3 fields");
    if (!cells.emplace(std::make_pair(v[0], v[1]), v[2]).second) fail("duplicate angle pair");
  }

  std::vector<double> hwp_deg, qwp_deg;
  for (const auto& [key, rate] : cells) {
    hwp_deg.push_back(key.first);
    qwp_deg.push_back(key.second);
  }
  std::sort(hwp_deg.begin(), hwp_deg.end());
  hwp_deg.erase(std::unique(hwp_deg.begin(), hwp_deg.end()), hwp_deg.end());
  std::sort(qwp_deg.begin(), qwp_deg.end());
  qwp_deg.erase(std::unique(qwp_deg.begin(), qwp_deg.end()), qwp_deg.end());
  if (cells.empty() || cells.size() != hwp_deg.size() * qwp_deg.size())
    throw std::runtime_error("heat map: grid is not rectangular");

  HeatMap map;
  for (double d : hwp_deg) map.hwp_angles.push_back(to_rad(d));
  for (double d : qwp_deg) map.qwp_angles.push_back(to_rad(d));
  for (double h : hwp_deg)
    for (double q : qwp_deg) map.v_rate.push_back(cells.at({h, q}));
  return map;
}

}  // namespace nodesim::jones
