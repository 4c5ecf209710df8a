#include "vme/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace vme::num {

Eigen::VectorXd polyfit(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                        int degree) {
  if (xs.size() != ys.size())
    throw std::invalid_argument("polyfit: size mismatch");
  if (xs.size() < degree + 1)
    throw std::invalid_argument("polyfit: underdetermined");
  Eigen::MatrixXd v(xs.size(), degree + 1);
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    double p = 1.0;
    for (int k = 0; k <= degree; ++k) {
      v(i, k) = p;
      p *= xs(i);
    }
  }
  return v.householderQr().solve(ys);
}

double polyval(const Eigen::VectorXd& coeffs, double x) {
  double acc = 0.0;
  for (Eigen::Index k = coeffs.size() - 1; k >= 0; --k) acc = acc * x + coeffs(k);
  return acc;
}

double polyder(const Eigen::VectorXd& coeffs, double x) {
  double acc = 0.0;
  for (Eigen::Index k = coeffs.size() - 1; k >= 1; --k)
    acc = acc * x + static_cast<double>(k) * coeffs(k);
  return acc;
}

std::pair<double, double> linear_fit(const Eigen::VectorXd& xs,
                                     const Eigen::VectorXd& ys) {
  const Eigen::VectorXd c = polyfit(xs, ys, 1);
  return {c(0), c(1)};
}

LmResult levenberg_marquardt(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residuals,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
    Eigen::VectorXd x0, const LmOptions& opts) {
  LmResult out;
  out.x = std::move(x0);
  Eigen::VectorXd r = residuals(out.x);
  double f = 0.5 * r.squaredNorm();
  double damping = opts.lambda0;
  const Eigen::Index n = out.x.size();
  for (out.iters = 0; out.iters < opts.max_iters; ++out.iters) {
    const Eigen::MatrixXd j = jacobian(out.x);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      out.converged = true;
      break;
    }
    bool stepped = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal().array() += damping;
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      const Eigen::VectorXd x_new = out.x + step;
      const Eigen::VectorXd r_new = residuals(x_new);
      const double f_new = 0.5 * r_new.squaredNorm();
      if (std::isfinite(f_new) && f_new <= f) {
        const bool tiny =
            step.lpNorm<Eigen::Infinity>() <=
            opts.step_tol * (1.0 + out.x.lpNorm<Eigen::Infinity>());
        out.x = x_new;
        r = r_new;
        f = f_new;
        damping = std::max(damping * 0.33, 1e-12);
        stepped = true;
        if (tiny) out.converged = true;
        break;
      }
      damping *= 4.0;
    }
    if (!stepped || out.converged) break;
  }
  if (n > 0 && r.size() > 0)
    out.rms = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  return out;
}

double simpson(const std::function<double(double)>& f, double a, double b,
               int n) {
  if (n < 2) n = 2;
  if (n % 2 != 0) ++n;
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i)
    acc += f(a + h * i) * ((i % 2 != 0) ? 4.0 : 2.0);
  return acc * h / 3.0;
}

MeanVar mean_var(const Eigen::VectorXd& xs) {
  MeanVar mv;
  if (xs.size() == 0) return mv;
  mv.mean = xs.mean();
  mv.var = (xs.array() - mv.mean).square().sum() / static_cast<double>(xs.size());
  return mv;
}

}  // namespace vme::num
