// Small dense optimizers shared by the estimators: BFGS for smooth scalar
// objectives and Levenberg–Marquardt for least squares.
#pragma once

#include <Eigen/Dense>

#include <functional>

namespace nodesim::optim {

/// Objective returning f(x); fills *grad when grad is non-null.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;
using Residuals = std::function<Eigen::VectorXd(const Eigen::VectorXd& x)>;

struct MinimizeOptions {
  int max_iterations = 1000;
  double step_tolerance = 1e-10;
  double gradient_tolerance = 1e-10;
  double relative_value_tolerance = 1e-12;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

MinimizeResult bfgs(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& opts = {});

/// Central-difference gradient of a value-only function.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h = 1e-6);

/// Wraps a value-only function as an Objective with a numeric gradient.
Objective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f, double h = 1e-6);

struct LeastSquaresOptions {
  int max_iterations = 500;
  double step_tolerance = 1e-10;
  double gradient_tolerance = 1e-10;
  double jacobian_step = 1e-7;
};

struct LeastSquaresResult {
  Eigen::VectorXd x;
  double cost = 0.0;  // Σ r²
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd jacobian;  // at x
};

LeastSquaresResult levenberg_marquardt(const Residuals& r, Eigen::VectorXd x0,
                                       const LeastSquaresOptions& opts = {});

Eigen::MatrixXd numeric_jacobian(const Residuals& r, const Eigen::VectorXd& x, double h);

}  // namespace nodesim::optim
