#include "nodesim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nodesim::optim {

MinimizeResult bfgs(const Objective& f, Eigen::VectorXd x, const MinimizeOptions& opts) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n);
  double fx = f(x, &g);
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);

  MinimizeResult res;
  res.x = x;
  res.value = fx;
  if (!std::isfinite(fx)) return res;

  for (int it = 1; it <= opts.max_iterations; ++it) {
    res.iterations = it;
    if (g.norm() < opts.gradient_tolerance) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -h_inv * g;
    double slope = g.dot(dir);
    if (slope >= 0.0) {
      h_inv.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }

    // Backtracking line search with the Armijo condition.
    double alpha = 1.0;
    Eigen::VectorXd x_new(n), g_new(n);
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + alpha * dir;
      f_new = f(x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // No descent possible along any tried step: at numerical precision.
      res.converged = g.norm() < std::sqrt(opts.gradient_tolerance);
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double df = std::abs(fx - f_new);
    const double scale = std::max(1.0, std::abs(fx));
    x = x_new;
    g = g_new;
    fx = f_new;

    const double sy = s.dot(y);
    if (sy > 1e-300) {
      if (it == 1) h_inv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) +
              rho * s * s.transpose();
    }

    if (s.norm() < opts.step_tolerance && df / scale < opts.relative_value_tolerance) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + h;
    const double fp = f(xp);
    xp(i) = orig - h;
    const double fm = f(xp);
    xp(i) = orig;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

Objective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f, double h) {
  return [f = std::move(f), h](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (grad) *grad = numeric_gradient(f, x, h);
    return f(x);
  };
}

Eigen::MatrixXd numeric_jacobian(const Residuals& r, const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd r0 = r(x);
  Eigen::MatrixXd jac(r0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    const double step = h * std::max(1.0, std::abs(orig));
    xp(i) = orig + step;
    const Eigen::VectorXd rp = r(xp);
    xp(i) = orig - step;
    const Eigen::VectorXd rm = r(xp);
    xp(i) = orig;
    jac.col(i) = (rp - rm) / (2.0 * step);
  }
  return jac;
}

LeastSquaresResult levenberg_marquardt(const Residuals& r, Eigen::VectorXd x,
                                       const LeastSquaresOptions& opts) {
  LeastSquaresResult res;
  Eigen::VectorXd rx = r(x);
  double cost = rx.squaredNorm();
  double lambda = 1e-3;
  Eigen::MatrixXd jac = numeric_jacobian(r, x, opts.jacobian_step);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    res.iterations = it;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * rx;
    if (jtr.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
      res.converged = true;
      break;
    }

    bool improved = false;
    Eigen::VectorXd step;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += lambda * std::max(jtj(i, i), 1e-12);
      step = a.ldlt().solve(-jtr);
      const Eigen::VectorXd x_new = x + step;
      const Eigen::VectorXd r_new = r(x_new);
      const double cost_new = r_new.squaredNorm();
      if (std::isfinite(cost_new) && cost_new <= cost) {
        x = x_new;
        rx = r_new;
        cost = cost_new;
        lambda = std::max(lambda / 3.0, 1e-12);
        improved = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!improved) {
      res.converged = true;  // no further decrease achievable
      break;
    }
    jac = numeric_jacobian(r, x, opts.jacobian_step);
    if (step.norm() < opts.step_tolerance * (x.norm() + opts.step_tolerance)) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.cost = cost;
  res.jacobian = jac;
  return res;
}

}  // namespace nodesim::optim
