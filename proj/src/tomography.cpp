#include "nodesim/tomography.hpp"

#include "nodesim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace nodesim::tomo {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Complex kI{0.0, 1.0};
constexpr std::array<int, 2> kSigns{+1, -1};

int pauli_index(Pauli p) { return static_cast<int>(p); }

Mat2 projector(Pauli p, int sign) {
  const Vec2 v = pauli_eigenvector(p, sign);
  return v * v.adjoint();
}

double angular_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * kPi);
  return std::min(d, 2.0 * kPi - d);
}

struct Term {
  Mat4 projector;
  double count;
};

std::vector<Term> likelihood_terms(const CountsTable& counts) {
  std::vector<Term> terms;
  for (const auto& [key, cells] : counts.entries())
    for (int sa : kSigns)
      for (int sp : kSigns) {
        const double n = cells.at(sa, sp);
        if (n != 0.0) terms.push_back({kron(projector(key.first, sa), projector(key.second, sp)), n});
      }
  return terms;
}

// Cholesky-style parameterization: 4 real diagonal entries followed by the
// real and imaginary parts of the strictly lower entries, row by row.
constexpr int kCholeskyParams = 16;

Mat4 t_from_params(const Eigen::VectorXd& x) {
  Mat4 t = Mat4::Zero();
  for (int d = 0; d < 4; ++d) t(d, d) = x(d);
  int k = 4;
  for (int r = 1; r < 4; ++r)
    for (int c = 0; c < r; ++c, k += 2) t(r, c) = Complex(x(k), x(k + 1));
  return t;
}

Eigen::VectorXd params_from_t(const Mat4& t) {
  Eigen::VectorXd x(kCholeskyParams);
  for (int d = 0; d < 4; ++d) x(d) = t(d, d).real();
  int k = 4;
  for (int r = 1; r < 4; ++r)
    for (int c = 0; c < r; ++c, k += 2) {
      x(k) = t(r, c).real();
      x(k + 1) = t(r, c).imag();
    }
  return x;
}

/// Lower-triangular T with T†T = rho (rho positive definite).
Mat4 reverse_cholesky(const Mat4& rho) {
  Mat4 j = Mat4::Zero();
  for (int k = 0; k < 4; ++k) j(k, 3 - k) = 1.0;
  const Eigen::LLT<Mat4> llt(j * rho * j);
  const Mat4 l = llt.matrixL();
  const Mat4 upper = j * l * j;  // rho = upper · upper†
  return upper.adjoint();
}

double weighted_variance(const std::vector<double>& w, const std::vector<double>& p, double shots) {
  if (shots <= 0.0) return 0.0;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    m1 += w[k] * p[k];
    m2 += w[k] * w[k] * p[k];
  }
  return std::max(0.0, (m2 - m1 * m1) / shots);
}

void check_probs(const CorrelationProbs& p, const char* which) {
  for (double v : {p.up_h, p.up_v, p.down_h, p.down_v})
    if (!(v >= 0.0)) throw std::invalid_argument(std::string("fidelity_lower_bound: negative ") + which + " probability");
  if (p.up_h + p.up_v + p.down_h + p.down_v > 1.0 + 1e-9)
    throw std::invalid_argument(std::string("fidelity_lower_bound: ") + which + " probabilities sum above 1");
}

}  // namespace

// --- counts -----------------------------------------------------------------

CellCounts::CellCounts(const seq::JointCounts& c)
    : h_bright(static_cast<double>(c.h_bright)),
      h_dark(static_cast<double>(c.h_dark)),
      v_bright(static_cast<double>(c.v_bright)),
      v_dark(static_cast<double>(c.v_dark)) {}

double CellCounts::at(int atom_sign, int photon_sign) const {
  if (photon_sign > 0) return atom_sign > 0 ? h_bright : h_dark;
  return atom_sign > 0 ? v_bright : v_dark;
}

CellCounts& CellCounts::operator+=(const CellCounts& o) {
  h_bright += o.h_bright;
  h_dark += o.h_dark;
  v_bright += o.v_bright;
  v_dark += o.v_dark;
  return *this;
}

void CountsTable::add(Pauli atom, Pauli photon, const CellCounts& counts) {
  if (atom == Pauli::I || photon == Pauli::I) throw std::invalid_argument("CountsTable: identity is not a measured basis");
  cells_[{atom, photon}] += counts;
}

bool CountsTable::has(Pauli atom, Pauli photon) const { return cells_.count({atom, photon}) > 0; }

const CellCounts& CountsTable::get(Pauli atom, Pauli photon) const {
  const auto it = cells_.find({atom, photon});
  if (it == cells_.end())
    throw std::invalid_argument(std::string("CountsTable: no setting ") + pauli_letter(atom) + pauli_letter(photon));
  return it->second;
}

CountsTable CountsTable::from_summary(const seq::RunSummary& summary) {
  CountsTable table;
  for (const auto& s : summary.settings) {
    Pauli atom;
    if (!s.setting.atom_rotated) atom = Pauli::Z;
    else if (angular_distance(s.setting.delta_phi, equatorial_phase(Pauli::X)) < 1e-9) atom = Pauli::X;
    else if (angular_distance(s.setting.delta_phi, equatorial_phase(Pauli::Y)) < 1e-9) atom = Pauli::Y;
    else continue;
    table.add(atom, s.setting.photon, CellCounts(s.counts));
  }
  return table;
}

// --- expectations and inversion ----------------------------------------------

ExpectationSet expectations_from_counts(const CountsTable& counts) {
  ExpectationSet e;
  e.s(0, 0) = 1.0;
  std::vector<std::string> missing;
  for (const auto& [key, cells] : counts.entries())
    if (!(cells.total() > 0.0))
      missing.push_back(std::string(1, pauli_letter(key.first)) + pauli_letter(key.second) + " (no events)");

  for (Pauli a : kMeasuredPaulis)
    for (Pauli p : kMeasuredPaulis) {
      const int i = pauli_index(a), j = pauli_index(p);
      Pauli src_a = a, src_p = p;
      if (!counts.has(a, p)) {
        if (!counts.has(p, a)) {
          missing.push_back(std::string(1, pauli_letter(a)) + pauli_letter(p));
          continue;
        }
        src_a = p;
        src_p = a;
        e.from_symmetry[i][j] = true;
      }
      const CellCounts& c = counts.get(src_a, src_p);
      const double n = c.total();
      if (!(n > 0.0)) continue;
      double sum = 0.0;
      for (int sa : kSigns)
        for (int sp : kSigns) sum += sa * sp * c.at(sa, sp);
      e.s(i, j) = sum / n;
      e.error(i, j) = std::sqrt(std::max(0.0, 1.0 - e.s(i, j) * e.s(i, j)) / n);
    }

  // Marginals pool every setting that measured the basis on that side.
  for (Pauli b : kMeasuredPaulis) {
    double atom_sum = 0.0, atom_n = 0.0, photon_sum = 0.0, photon_n = 0.0;
    for (const auto& [key, c] : counts.entries()) {
      if (key.first == b) {
        atom_sum += (c.h_bright + c.v_bright) - (c.h_dark + c.v_dark);
        atom_n += c.total();
      }
      if (key.second == b) {
        photon_sum += (c.h_bright + c.h_dark) - (c.v_bright + c.v_dark);
        photon_n += c.total();
      }
    }
    const int k = pauli_index(b);
    if (atom_n > 0.0) {
      e.s(k, 0) = atom_sum / atom_n;
      e.error(k, 0) = std::sqrt(std::max(0.0, 1.0 - e.s(k, 0) * e.s(k, 0)) / atom_n);
    } else {
      missing.push_back(std::string("atom ") + pauli_letter(b) + " marginal");
    }
    if (photon_n > 0.0) {
      e.s(0, k) = photon_sum / photon_n;
      e.error(0, k) = std::sqrt(std::max(0.0, 1.0 - e.s(0, k) * e.s(0, k)) / photon_n);
    } else {
      missing.push_back(std::string("photon ") + pauli_letter(b) + " marginal");
    }
  }

  if (!missing.empty()) {
    std::ostringstream os;
    os << "missing settings:";
    for (const auto& m : missing) os << ' ' << m;
    throw std::invalid_argument(os.str());
  }
  return e;
}

ExpectationSet expectations_of(const Mat4& rho) {
  ExpectationSet e;
  for (Pauli a : kAllPaulis)
    for (Pauli p : kAllPaulis) e.s(pauli_index(a), pauli_index(p)) = pauli_expectation(rho, a, p);
  return e;
}

TwoQubitState linear_inversion(const ExpectationSet& e) {
  Mat4 rho = Mat4::Zero();
  for (Pauli a : kAllPaulis)
    for (Pauli p : kAllPaulis) rho += e.s(pauli_index(a), pauli_index(p)) * kron(pauli(a), pauli(p));
  return TwoQubitState::from_density(rho / 4.0, tol::kAlgebraic);
}

// --- maximum likelihood -----------------------------------------------------

double log_likelihood(const CountsTable& counts, const Mat4& rho) {
  double ll = 0.0;
  for (const Term& t : likelihood_terms(counts)) {
    const double p = (rho * t.projector).trace().real();
    if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
    ll += t.count * std::log(p);
  }
  return ll;
}

MleResult mle_reconstruct(const CountsTable& counts, const Mat4& start) {
  if (!start.allFinite()) throw std::invalid_argument("mle_reconstruct: start has non-finite entries");
  if ((start - start.adjoint()).cwiseAbs().maxCoeff() > tol::kAlgebraic || std::abs(start.trace() - 1.0) > tol::kAlgebraic)
    throw std::invalid_argument("mle_reconstruct: start must be Hermitian with unit trace");
  const std::vector<Term> terms = likelihood_terms(counts);
  if (terms.empty()) throw std::invalid_argument("mle_reconstruct: no counts");
  double total = 0.0;
  for (const Term& t : terms) total += t.count;

  auto objective = [&terms, total](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const Mat4 t = t_from_params(x);
    const Mat4 a = t.adjoint() * t;
    const double tr = a.trace().real();
    if (!(tr > 0.0)) return std::numeric_limits<double>::infinity();
    double value = total * std::log(tr);
    Mat4 g = (total / tr) * t;
    for (const Term& term : terms) {
      const double q = (a * term.projector).trace().real();
      if (!(q > 0.0)) return std::numeric_limits<double>::infinity();
      value -= term.count * std::log(q);
      if (grad) g -= (term.count / q) * (t * term.projector);
    }
    if (grad) {
      grad->resize(kCholeskyParams);
      for (int d = 0; d < 4; ++d) (*grad)(d) = 2.0 * g(d, d).real();
      int k = 4;
      for (int r = 1; r < 4; ++r)
        for (int c = 0; c < r; ++c, k += 2) {
          (*grad)(k) = 2.0 * g(r, c).real();
          (*grad)(k + 1) = 2.0 * g(r, c).imag();
        }
    }
    return value;
  };

  const Mat4 seed = (1.0 - 1e-3) * project_to_physical(start) + 1e-3 * Mat4::Identity() / 4.0;
  optim::MinimizeOptions opts;
  opts.max_iterations = 5000;
  opts.step_tolerance = 1e-9;
  opts.relative_value_tolerance = 1e-12;
  const auto res = optim::bfgs(objective, params_from_t(reverse_cholesky(seed)), opts);

  const Mat4 t = t_from_params(res.x);
  Mat4 rho = t.adjoint() * t;
  rho /= rho.trace().real();
  rho = 0.5 * (rho + rho.adjoint());
  MleResult out;
  out.state = TwoQubitState::from_density(rho, tol::kAlgebraic);
  out.log_likelihood = log_likelihood(counts, out.state.rho());
  out.iterations = res.iterations;
  out.converged = res.converged;
  return out;
}

// --- local alignment --------------------------------------------------------

OverlapResult optimize_local_overlap(const TwoQubitState& rho) {
  const Vec4 psi = bell_vector();
  std::array<Mat2, 4> basis{Mat2::Identity(), -kI * textbook_pauli(Pauli::X), -kI * textbook_pauli(Pauli::Y),
                            -kI * textbook_pauli(Pauli::Z)};
  std::array<Vec4, 4> v;
  for (int k = 0; k < 4; ++k) v[k] = kron(Mat2::Identity(), basis[k]).adjoint() * psi;
  Eigen::Matrix4d form;
  for (int k = 0; k < 4; ++k)
    for (int l = 0; l < 4; ++l) form(k, l) = (v[k].adjoint() * rho.rho() * v[l])(0, 0).real();
  form = 0.5 * (form + form.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(form);
  const Eigen::Vector4d q = solver.eigenvectors().col(3);

  Mat2 w = Mat2::Zero();
  for (int k = 0; k < 4; ++k) w += q(k) * basis[k];
  // Remove rounding drift from unitarity.
  Eigen::JacobiSVD<Mat2> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  w = svd.matrixU() * svd.matrixV().adjoint();

  OverlapResult out;
  out.u_photon = w;
  out.aligned = apply_local_unitaries(rho, Mat2::Identity(), w);
  out.overlap = state_fidelity(out.aligned, psi);
  out.gain = out.overlap - state_fidelity(rho, psi);
  return out;
}

// --- fidelity bounds --------------------------------------------------------

CorrelationProbs CorrelationProbs::from_counts(const CellCounts& c) {
  const double n = c.total();
  if (!(n > 0.0)) throw std::invalid_argument("CorrelationProbs: setting has no events");
  return {c.h_bright / n, c.v_bright / n, c.h_dark / n, c.v_dark / n, n};
}

Estimate fidelity_lower_bound(const CorrelationProbs& z, const CorrelationProbs& r) {
  check_probs(z, "z-basis");
  check_probs(r, "rotated-basis");
  const double cross = std::sqrt(z.up_h * z.down_v);
  Estimate f;
  f.value = 0.5 * (z.up_v + z.down_h - 2.0 * cross + r.up_v + r.down_h - r.up_h - r.down_v);

  double w_up_h = -0.5, w_down_v = -0.5;
  if (z.up_h > 0.0 && z.down_v > 0.0) {
    w_up_h = -0.5 * std::sqrt(z.down_v / z.up_h);
    w_down_v = -0.5 * std::sqrt(z.up_h / z.down_v);
  }
  const double var_z = weighted_variance({0.5, 0.5, w_up_h, w_down_v}, {z.up_v, z.down_h, z.up_h, z.down_v}, z.shots);
  const double var_r = weighted_variance({0.5, 0.5, -0.5, -0.5}, {r.up_v, r.down_h, r.up_h, r.down_v}, r.shots);
  f.error = std::sqrt(var_z + var_r);
  return f;
}

double fidelity_upper_bound(double purity) {
  if (!(purity >= 0.5)) throw DomainError("fidelity_upper_bound: purity below 0.5, bound not applicable");
  if (purity > 1.0 + 1e-12) throw DomainError("fidelity_upper_bound: purity above 1");
  return 0.5 * (1.0 + std::sqrt(std::max(0.0, 2.0 * purity - 1.0)));
}

Estimate fidelity_upper_bound(Estimate purity) {
  const double v = fidelity_upper_bound(purity.value);
  const double root = std::sqrt(std::max(0.0, 2.0 * purity.value - 1.0));
  const double slope = root > 0.0 ? 0.5 / root : 0.0;
  return {v, slope * purity.error};
}

CorrectionResult dark_count_correct(const CellCounts& counts, double p_h, double p_v, double attempts) {
  CorrectionResult out;
  const double sub_h = attempts * p_h / 2.0;
  const double sub_v = attempts * p_v / 2.0;
  auto take = [&out](double n, double sub) {
    const double r = n - sub;
    if (r < 0.0) {
      out.clamped = true;
      return 0.0;
    }
    return r;
  };
  out.counts = {take(counts.h_bright, sub_h), take(counts.h_dark, sub_h), take(counts.v_bright, sub_v),
                take(counts.v_dark, sub_v)};
  return out;
}

// --- fits -------------------------------------------------------------------

SinusoidFit parity_fit(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& errors) {
  const std::size_t n = x.size();
  if (n != y.size() || (!errors.empty() && errors.size() != n))
    throw std::invalid_argument("parity_fit: input sizes differ");
  if (n < 6) throw std::invalid_argument("parity_fit: need at least 6 phase points");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*hi - *lo + 2.0 * kPi / static_cast<double>(n) < 2.0 * kPi - 1e-9)
    throw std::invalid_argument("parity_fit: phase points must cover a full period");

  const bool weighted = !errors.empty();
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n), w(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = weighted ? errors[k] : 1.0;
    if (!(s > 0.0)) throw std::invalid_argument("parity_fit: errors must be positive");
    w(k) = 1.0 / s;
    a(k, 0) = w(k);
    a(k, 1) = w(k) * std::cos(x[k]);
    a(k, 2) = w(k) * std::sin(x[k]);
    b(k) = w(k) * y[k];
  }
  const Eigen::Matrix3d normal = a.transpose() * a;
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(normal);
  if (lu.rank() < 3) throw DomainError("parity_fit: phase points do not determine a sinusoid");
  const Eigen::Vector3d p = lu.solve(a.transpose() * b);
  Eigen::Matrix3d cov = lu.inverse();
  if (!weighted) {
    const double rss = (a * p - b).squaredNorm();
    cov *= n > 3 ? rss / static_cast<double>(n - 3) : 0.0;
  }

  SinusoidFit fit;
  fit.offset = p(0);
  fit.amplitude = std::hypot(p(1), p(2));
  if (!(fit.amplitude > 1e-12)) throw DomainError("parity_fit: flat data, no oscillation");
  fit.phase = std::atan2(p(2), p(1));
  const double ca = p(1) / fit.amplitude, sa = p(2) / fit.amplitude;
  fit.amplitude_error = std::sqrt(std::max(0.0, ca * ca * cov(1, 1) + sa * sa * cov(2, 2) + 2.0 * ca * sa * cov(1, 2)));
  return fit;
}

RamseyFit ramsey_fit(const std::vector<double>& t, const std::vector<double>& v, const std::vector<double>& errors) {
  const std::size_t n = t.size();
  if (n != v.size() || (!errors.empty() && errors.size() != n)) throw std::invalid_argument("ramsey_fit: input sizes differ");
  if (n < 3) throw std::invalid_argument("ramsey_fit: need at least 3 hold times");
  for (double x : v)
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("ramsey_fit: visibilities must lie in [0, 1]");
  const bool weighted = !errors.empty();
  std::vector<double> w(n, 1.0);
  if (weighted)
    for (std::size_t k = 0; k < n; ++k) {
      if (!(errors[k] > 0.0)) throw std::invalid_argument("ramsey_fit: errors must be positive");
      w[k] = 1.0 / errors[k];
    }

  // Start from a log-linear fit through the origin.
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (v[k] > 0.05) {
      num += -std::log(v[k]) * t[k];
      den += t[k] * t[k];
    }
  Eigen::VectorXd x0(1);
  x0(0) = den > 0.0 ? num / den : 0.0;

  auto residuals = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) r(static_cast<Eigen::Index>(k)) = w[k] * (std::exp(-p(0) * t[k]) - v[k]);
    return r;
  };
  optim::LeastSquaresOptions opts;
  opts.step_tolerance = 1e-14;
  opts.gradient_tolerance = 1e-16;
  opts.jacobian_step = 1e-9;
  const auto res = optim::levenberg_marquardt(residuals, x0, opts);
  const double rate = res.x(0);
  const double jtj = res.jacobian.squaredNorm();
  double var = jtj > 0.0 ? 1.0 / jtj : 0.0;
  if (!weighted) var *= res.cost / static_cast<double>(n - 1);
  const double sigma = std::sqrt(var);

  RamseyFit fit;
  const bool significant = sigma > 0.0 ? rate > 2.0 * sigma : rate > 1e-12;
  if (significant) {
    fit.bounded = true;
    fit.tau_us = 1.0 / rate;
    fit.tau_error_us = sigma / (rate * rate);
  }
  const double upper_rate = rate + 2.0 * sigma;
  fit.tau_lower_bound_us = upper_rate > 1e-15 ? 1.0 / upper_rate : std::numeric_limits<double>::infinity();
  return fit;
}

// --- run analysis -----------------------------------------------------------

Estimate parity_correlation(const CellCounts& c) {
  const double n = c.total();
  if (!(n > 0.0)) throw std::invalid_argument("parity_correlation: setting has no events");
  const double p = (c.h_dark + c.v_bright) / n;
  return {p, std::sqrt(std::max(p * (1.0 - p), 0.25 / n) / n)};
}

Estimate z_contrast(const CellCounts& c) {
  const double nv = c.v_bright + c.v_dark;
  const double nh = c.h_bright + c.h_dark;
  if (!(nv > 0.0 && nh > 0.0)) throw std::invalid_argument("z_contrast: both photon ports need events");
  const double pv = c.v_bright / nv, ph = c.h_bright / nh;
  return {pv - ph, std::sqrt(pv * (1.0 - pv) / nv + ph * (1.0 - ph) / nh)};
}

namespace {

struct Scan {
  std::vector<double> phases;
  std::vector<CellCounts> counts;
};

std::map<Pauli, Scan> collect_scans(const std::vector<std::pair<seq::Setting, CellCounts>>& settings) {
  std::map<Pauli, Scan> scans;
  for (const auto& [s, c] : settings) {
    if (!s.atom_rotated || s.photon == Pauli::Z || !(c.total() > 0.0)) continue;
    scans[s.photon].phases.push_back(s.delta_phi);
    scans[s.photon].counts.push_back(c);
  }
  return scans;
}

std::optional<SinusoidFit> fit_scan(const Scan& scan) {
  if (scan.phases.size() < 6) return std::nullopt;
  std::vector<double> y, e;
  for (const auto& c : scan.counts) {
    const Estimate p = parity_correlation(c);
    y.push_back(p.value);
    e.push_back(p.error);
  }
  return parity_fit(scan.phases, y, e);
}

// `chosen` maps a photon basis to the scan point used for the rotated term.
// Empty entries are filled from the fitted parity maximum, so a corrected
// table can reuse the points picked on the raw one.
BoundSet lower_bounds(const std::vector<std::pair<seq::Setting, CellCounts>>& settings, RotatedBasis basis,
                      std::map<Pauli, std::size_t>& chosen) {
  const CellCounts* zz = nullptr;
  for (const auto& [s, c] : settings)
    if (!s.atom_rotated && s.photon == Pauli::Z) zz = &c;
  if (!zz) throw std::invalid_argument("analysis: missing atom z / photon z setting");
  const CorrelationProbs z = CorrelationProbs::from_counts(*zz);

  const auto scans = collect_scans(settings);
  std::map<Pauli, Estimate> bounds;
  for (const auto& [photon, scan] : scans) {
    if (!chosen.count(photon)) {
      const auto fit = fit_scan(scan);
      if (!fit) continue;
      // Scan point nearest the fitted maximum of the parity correlation.
      std::size_t best = 0;
      for (std::size_t k = 1; k < scan.phases.size(); ++k)
        if (angular_distance(scan.phases[k], fit->phase) < angular_distance(scan.phases[best], fit->phase)) best = k;
      chosen[photon] = best;
    }
    const std::size_t best = chosen.at(photon);
    bounds[photon] = fidelity_lower_bound(z, CorrelationProbs::from_counts(scan.counts[best]));
  }

  BoundSet out;
  const bool has_x = bounds.count(Pauli::X) > 0, has_y = bounds.count(Pauli::Y) > 0;
  if (has_x) out.lower_x = bounds[Pauli::X].value;
  if (has_y) out.lower_y = bounds[Pauli::Y].value;
  if (basis == RotatedBasis::Average && has_x && has_y) {
    out.f_lower = {0.5 * (bounds[Pauli::X].value + bounds[Pauli::Y].value),
                   0.5 * std::hypot(bounds[Pauli::X].error, bounds[Pauli::Y].error)};
    out.basis_used = "average(x,y)";
  } else if ((basis != RotatedBasis::X && has_y) || (basis == RotatedBasis::X && !has_x && has_y)) {
    out.f_lower = bounds[Pauli::Y];
    out.basis_used = "y";
  } else if (has_x) {
    out.f_lower = bounds[Pauli::X];
    out.basis_used = "x";
  } else {
    throw std::invalid_argument("analysis: no parity scan (>= 6 phase points) in photon x or y");
  }
  return out;
}

}  // namespace

FidelityReport analyze_run(const seq::RunSummary& summary, const AnalysisOptions& options) {
  std::vector<std::pair<seq::Setting, CellCounts>> raw;
  for (const auto& s : summary.settings) raw.emplace_back(s.setting, CellCounts(s.counts));

  FidelityReport r;
  for (const auto& [s, c] : raw)
    if (!s.atom_rotated && s.photon == Pauli::Z) r.contrast_z = z_contrast(c);
  const auto scans = collect_scans(raw);
  if (scans.count(Pauli::X)) r.parity_x = fit_scan(scans.at(Pauli::X));
  if (scans.count(Pauli::Y)) r.parity_y = fit_scan(scans.at(Pauli::Y));
  std::map<Pauli, std::size_t> chosen;
  r.raw = lower_bounds(raw, options.lower_bound_basis, chosen);

  if (options.dark_correct && (options.dark_h > 0.0 || options.dark_v > 0.0)) {
    std::vector<std::pair<seq::Setting, CellCounts>> corrected;
    for (const auto& s : summary.settings) {
      const auto c = dark_count_correct(CellCounts(s.counts), options.dark_h, options.dark_v,
                                        static_cast<double>(s.attempts));
      r.corrections_clamped = r.corrections_clamped || c.clamped;
      corrected.emplace_back(s.setting, c.counts);
    }
    r.corrected = lower_bounds(corrected, options.lower_bound_basis, chosen);
    r.dark_count_corrected = true;
  }

  const CountsTable table = CountsTable::from_summary(summary);
  const ExpectationSet e = expectations_from_counts(table);
  r.rho_linear = linear_inversion(e);
  r.linear_physicality = is_physical(r.rho_linear.rho());
  r.mle = mle_reconstruct(table, r.rho_linear.rho());
  r.fidelity_mle = state_fidelity(r.mle.state, bell_vector());
  r.alignment = optimize_local_overlap(r.mle.state);

  // Parametric bootstrap of the purity.
  const double p_hat = purity(r.mle.state);
  std::mt19937_64 rng(20240601);
  constexpr int kResamples = 16;
  double m1 = 0.0, m2 = 0.0;
  for (int b = 0; b < kResamples; ++b) {
    CountsTable resampled;
    for (const auto& [key, c] : table.entries()) {
      const auto n = static_cast<std::uint64_t>(std::llround(c.total()));
      double probs[4];
      int k = 0;
      for (int sa : kSigns)
        for (int sp : kSigns)
          probs[k++] = std::max(0.0, (r.mle.state.rho() * kron(projector(key.first, sa), projector(key.second, sp)))
                                         .trace()
                                         .real());
      std::discrete_distribution<int> pick(probs, probs + 4);
      double cells[4] = {0, 0, 0, 0};
      for (std::uint64_t s = 0; s < n; ++s) cells[pick(rng)] += 1.0;
      // Order above: (+,+), (+,−), (−,+), (−,−) = bright H, bright V, dark H, dark V.
      resampled.add(key.first, key.second, {cells[0], cells[2], cells[1], cells[3]});
    }
    const Mat4 start = linear_inversion(expectations_from_counts(resampled)).rho();
    const double pb = purity(mle_reconstruct(resampled, start).state);
    m1 += pb;
    m2 += pb * pb;
  }
  m1 /= kResamples;
  r.purity = {p_hat, std::sqrt(std::max(0.0, m2 / kResamples - m1 * m1) * kResamples / (kResamples - 1))};
  try {
    r.f_upper = fidelity_upper_bound(r.purity);
  } catch (const DomainError&) {
    r.f_upper = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  }
  return r;
}

}  // namespace nodesim::tomo
