#pragma once

#include <Eigen/Dense>
#include <functional>

namespace vme::num {

// Least-squares polynomial fit, coeffs[k] multiplies x^k.
Eigen::VectorXd polyfit(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                        int degree);
double polyval(const Eigen::VectorXd& coeffs, double x);
double polyder(const Eigen::VectorXd& coeffs, double x);

// Straight-line fit y = a + b x; returns (a, b).
std::pair<double, double> linear_fit(const Eigen::VectorXd& xs,
                                     const Eigen::VectorXd& ys);

struct LmOptions {
  int max_iters = 200;
  double step_tol = 1e-13;
  double grad_tol = 1e-13;
  double lambda0 = 1e-3;
};

struct LmResult {
  Eigen::VectorXd x;
  double rms = 0.0;     // residual root mean square at the solution
  int iters = 0;
  bool converged = false;
};

// Levenberg-Marquardt on r(x); jacobian column k = d r / d x_k.
LmResult levenberg_marquardt(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residuals,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
    Eigen::VectorXd x0, const LmOptions& opts = {});

// Composite Simpson on [a,b] with n panels (n made even internally).
double simpson(const std::function<double(double)>& f, double a, double b,
               int n);

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // population variance (divide by n)
};
MeanVar mean_var(const Eigen::VectorXd& xs);

}  // namespace vme::num
