#include "vme/spectral.hpp"

#include <lapacke.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vme/circuit.hpp"
#include "vme/errors.hpp"
#include "vme/numerics.hpp"

namespace vme::spectral {

Basis Basis::own(Eigen::MatrixXd m) {
  auto holder = std::make_shared<Eigen::MatrixXd>(std::move(m));
  Basis b;
  b.data_ = holder->data();
  b.dim_ = holder->rows();
  b.holder_ = std::move(holder);
  return b;
}

Basis Basis::view(std::shared_ptr<const void> holder, const double* data,
                  Eigen::Index dim) {
  Basis b;
  b.holder_ = std::move(holder);
  b.data_ = data;
  b.dim_ = dim;
  return b;
}

Spectrum exact_spectrum(const model::HamiltonianSpec& spec) {
  if (spec.n_sites < 2 || spec.n_sites > 14)
    throw std::invalid_argument("exact_spectrum: n_sites out of [2,14]");
  Eigen::MatrixXd h = model::to_dense(model::build_mfim(spec), spec.n_sites);
  const lapack_int dim = static_cast<lapack_int>(h.rows());
  Eigen::VectorXd energies(dim);
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', dim,
                                         h.data(), dim, energies.data());
  if (info != 0)
    throw std::runtime_error("exact_spectrum: dsyevd failed, info=" +
                             std::to_string(info));
  // Sign convention: largest-magnitude component positive (first on ties).
  for (Eigen::Index c = 0; c < h.cols(); ++c) {
    Eigen::Index imax = 0;
    double best = 0.0;
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
      const double m = std::abs(h(r, c));
      if (m > best) {
        best = m;
        imax = r;
      }
    }
    if (h(imax, c) < 0.0) h.col(c) = -h.col(c);
  }
  Spectrum out;
  out.n_sites = spec.n_sites;
  out.spec_hash = spec.content_hash();
  out.energies = std::move(energies);
  out.basis = Basis::own(std::move(h));
  return out;
}

double gaussian_kernel(double x, double delta) {
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * delta * delta);
  return norm * std::exp(-x * x / (2.0 * delta * delta));
}

double broadened_dos(const Spectrum& spec, double lambda, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("broadened_dos: delta <= 0");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < spec.dim(); ++i)
    acc += gaussian_kernel(spec.energies(i) - lambda, delta);
  return acc;
}

DosFit fit_gaussian_density(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                            double total_weight, int n_sites,
                            double center0, double width0) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw std::invalid_argument("fit_gaussian_density: bad samples");
  // Parameters q = (log width, center); model = W * G_w(x - c).
  const auto model_vec = [&](const Eigen::VectorXd& q) {
    const double w = std::exp(q(0));
    Eigen::VectorXd m(xs.size());
    for (Eigen::Index i = 0; i < xs.size(); ++i)
      m(i) = total_weight * gaussian_kernel(xs(i) - q(1), w);
    return m;
  };
  const auto residuals = [&](const Eigen::VectorXd& q) {
    return Eigen::VectorXd(model_vec(q) - ys);
  };
  const auto jacobian = [&](const Eigen::VectorXd& q) {
    const double w = std::exp(q(0));
    const Eigen::VectorXd m = model_vec(q);
    Eigen::MatrixXd j(xs.size(), 2);
    for (Eigen::Index i = 0; i < xs.size(); ++i) {
      const double u = (xs(i) - q(1)) / w;
      j(i, 0) = m(i) * (u * u - 1.0);  // d/d log w
      j(i, 1) = m(i) * u / w;          // d/d c
    }
    return j;
  };
  Eigen::VectorXd q0(2);
  q0 << std::log(width0), center0;
  const num::LmResult res = num::levenberg_marquardt(residuals, jacobian, q0);
  if (!res.converged)
    throw FitError("fit_gaussian_density: least squares did not converge");
  DosFit fit;
  const double w = std::exp(res.x(0));
  fit.gamma = w * w / static_cast<double>(n_sites);
  fit.e_bar = res.x(1);
  fit.rms = res.rms;
  fit.iters = res.iters;
  return fit;
}

DosFit gaussian_dos_fit(const Spectrum& spec, double delta) {
  if (spec.n_sites < 8)
    throw std::invalid_argument("gaussian_dos_fit: n_sites < 8");
  const double e_min = spec.energies(0);
  const double band = spec.bandwidth();
  const double lo = e_min + 0.05 * band;
  const double hi = e_min + 0.95 * band;
  constexpr int kGrid = 201;
  Eigen::VectorXd xs(kGrid), ys(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    xs(i) = lo + (hi - lo) * i / (kGrid - 1);
    ys(i) = broadened_dos(spec, xs(i), delta);
  }
  const num::MeanVar mv = num::mean_var(spec.energies);
  return fit_gaussian_density(xs, ys,
                              static_cast<double>(spec.dim()), spec.n_sites,
                              mv.mean, std::sqrt(mv.var));
}

BroadenedEnsemble broadened_ensemble(const Spectrum& spec, double lambda,
                                     double delta) {
  if (delta <= 0.0)
    throw std::invalid_argument("broadened_ensemble: delta <= 0");
  if (lambda < spec.energies(0) || lambda > spec.energies(spec.dim() - 1))
    throw std::invalid_argument(
        "broadened_ensemble: lambda outside the spectrum range");
  BroadenedEnsemble ens;
  ens.lambda = lambda;
  ens.delta = delta;
  ens.weights.resize(spec.dim());
  for (Eigen::Index i = 0; i < spec.dim(); ++i)
    ens.weights(i) = gaussian_kernel(spec.energies(i) - lambda, delta);
  const double total = ens.weights.sum();
  if (!(total > 0.0))
    throw std::runtime_error("broadened_ensemble: vanishing window weight");
  ens.weights /= total;
  return ens;
}

Eigen::VectorXd diagonal_matrix_elements(const Spectrum& spec,
                                         const model::Observable& obs) {
  const auto basis = spec.basis.view();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(spec.dim());
  circuit::StateVector col;
  col.n_sites = spec.n_sites;
  for (Eigen::Index e = 0; e < spec.dim(); ++e) {
    col.amps = basis.col(e);
    out(e) = circuit::expectation(col, obs.terms);
  }
  return out;
}

double mc_expectation(const Spectrum& spec, const BroadenedEnsemble& ens,
                      const model::Observable& obs) {
  return ens.weights.dot(diagonal_matrix_elements(spec, obs));
}

double mc_fluctuation(const Spectrum& spec, const BroadenedEnsemble& ens,
                      const model::Observable& obs) {
  const Eigen::VectorXd d = diagonal_matrix_elements(spec, obs);
  const double mean = ens.weights.dot(d);
  const double var = ens.weights.dot(d.cwiseProduct(d)) - mean * mean;
  if (var < -1e-14)
    throw std::runtime_error("mc_fluctuation: negative variance beyond round-off");
  return var < 0.0 ? 0.0 : var;
}

Eigen::VectorXd coarse_grain(const Eigen::VectorXd& energies,
                             const Eigen::VectorXd& values, int k) {
  const Eigen::Index d = energies.size();
  if (values.size() != d)
    throw std::invalid_argument("coarse_grain: size mismatch");
  if (k < 1) throw std::invalid_argument("coarse_grain: k < 1");
  for (Eigen::Index i = 1; i < d; ++i)
    if (energies(i) < energies(i - 1))
      throw std::invalid_argument("coarse_grain: energies not ascending");
  Eigen::VectorXd out(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index span = std::min(i, d - 1 - i);
    const Eigen::Index ki = std::min<Eigen::Index>(k, 2 * span + 1);
    // Grow a contiguous window of the k_i nearest neighbours around i.
    Eigen::Index lo = i, hi = i;
    double acc = values(i);
    for (Eigen::Index taken = 1; taken < ki; ++taken) {
      const bool can_lo = lo > 0;
      const bool can_hi = hi + 1 < d;
      bool take_lo;
      if (can_lo && can_hi) {
        const double d_lo = energies(i) - energies(lo - 1);
        const double d_hi = energies(hi + 1) - energies(i);
        take_lo = d_lo <= d_hi;  // tie -> lower index
      } else {
        take_lo = can_lo;
      }
      if (take_lo)
        acc += values(--lo);
      else
        acc += values(++hi);
    }
    out(i) = acc / static_cast<double>(ki);
  }
  return out;
}

double SmoothEthFit::value(double e_over_n) const {
  return num::polyval(coeffs, e_over_n);
}

double SmoothEthFit::derivative(double e_over_n) const {
  return num::polyder(coeffs, e_over_n);
}

SmoothEthFit smooth_eth_fit(const Spectrum& spec, const model::Observable& obs,
                            int coarse_k) {
  const Eigen::VectorXd diag = diagonal_matrix_elements(spec, obs);
  const Eigen::VectorXd smooth = coarse_grain(spec.energies, diag, coarse_k);
  const Eigen::Index d = spec.dim();
  const double edge = 0.05;
  const Eigen::Index lo = static_cast<Eigen::Index>(std::ceil(edge * d));
  const Eigen::Index hi = d - lo;
  if (hi - lo < 6)
    throw std::invalid_argument("smooth_eth_fit: too few interior states");
  Eigen::VectorXd xs(hi - lo), ys(hi - lo);
  for (Eigen::Index i = lo; i < hi; ++i) {
    xs(i - lo) = spec.energies(i) / spec.n_sites;
    ys(i - lo) = smooth(i);
  }
  SmoothEthFit fit;
  fit.coeffs = num::polyfit(xs, ys, 4);
  fit.coarse_k = coarse_k;
  fit.edge_fraction = edge;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    const double r = num::polyval(fit.coeffs, xs(i)) - ys(i);
    acc += r * r;
  }
  fit.residual_rms = std::sqrt(acc / static_cast<double>(xs.size()));
  return fit;
}

double analytic_first_moment(double lambda, double delta,
                             double big_delta_sq) {
  const double delta_sq = delta * delta;
  const double second = -delta_sq * lambda / big_delta_sq;
  const double fourth = (3.0 * delta_sq * delta_sq /
                         (6.0 * big_delta_sq * big_delta_sq)) *
                        (3.0 * lambda - lambda * lambda * lambda / big_delta_sq);
  return second + fourth;
}

}  // namespace vme::spectral
