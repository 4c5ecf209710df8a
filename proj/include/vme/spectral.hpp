#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "vme/model.hpp"

namespace vme::spectral {

// Eigenbasis storage; either owned in memory or backed by a mapped cache file.
class Basis {
 public:
  Basis() = default;
  static Basis own(Eigen::MatrixXd m);
  // holder keeps the backing bytes alive; data must stay valid while held.
  static Basis view(std::shared_ptr<const void> holder, const double* data,
                    Eigen::Index dim);

  Eigen::Map<const Eigen::MatrixXd> view() const {
    return {data_, dim_, dim_};
  }
  Eigen::Index dim() const { return dim_; }
  bool empty() const { return data_ == nullptr; }

 private:
  std::shared_ptr<const void> holder_;
  const double* data_ = nullptr;
  Eigen::Index dim_ = 0;
};

// Full eigendecomposition of the chain Hamiltonian. energies ascending;
// basis column k is the eigenvector of energies(k), sign fixed so the
// largest-magnitude component (first such index on ties) is positive.
struct Spectrum {
  int n_sites = 0;
  std::uint64_t spec_hash = 0;  // HamiltonianSpec::content_hash of the source
  Eigen::VectorXd energies;
  Basis basis;

  Eigen::Index dim() const { return energies.size(); }
  double bandwidth() const {
    return energies(energies.size() - 1) - energies(0);
  }
};

// Dense symmetric eigensolve (divide and conquer). n_sites <= 14.
Spectrum exact_spectrum(const model::HamiltonianSpec& spec);

// Gaussian kernel (2 pi d^2)^{-1/2} exp(-x^2 / 2 d^2).
double gaussian_kernel(double x, double delta);

// Smoothed level density sum_E G_delta(E - lambda).
double broadened_dos(const Spectrum& spec, double lambda, double delta);

struct DosFit {
  double gamma = 0.0;  // Delta^2 / N
  double e_bar = 0.0;
  double rms = 0.0;
  int iters = 0;
};

// Fits W * G_w(x - c) with W fixed to the sample weight; returns (w^2, c) via
// gamma = w^2 / n_sites. Exposed for synthetic-data checks.
DosFit fit_gaussian_density(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys,
                            double total_weight, int n_sites,
                            double center0, double width0);

// Fits 2^N G_Delta(E - Ebar) to the broadened DOS on a 201-point uniform grid
// spanning the central 90% of the bandwidth. Throws FitError on
// non-convergence. n_sites >= 8 for a meaningful fit.
DosFit gaussian_dos_fit(const Spectrum& spec, double delta);

// Gaussian-filtered ensemble at (lambda, delta): weights w_E proportional to
// G_delta(E - lambda), normalized to sum 1. lambda must lie inside the
// spectrum range.
struct BroadenedEnsemble {
  double lambda = 0.0;
  double delta = 0.0;
  Eigen::VectorXd weights;
};

BroadenedEnsemble broadened_ensemble(const Spectrum& spec, double lambda,
                                     double delta);

// <E|A|E> for every eigenstate, via the sparse Pauli kernel per column.
Eigen::VectorXd diagonal_matrix_elements(const Spectrum& spec,
                                         const model::Observable& obs);

// Window average sum_E w_E <E|A|E>.
double mc_expectation(const Spectrum& spec, const BroadenedEnsemble& ens,
                      const model::Observable& obs);

// Eigenstate-to-eigenstate variance of <E|A|E> across the window:
// sum w <E|A|E>^2 - (sum w <E|A|E>)^2. Round-off in [-1e-14, 0) clamps to 0;
// anything more negative is an error.
double mc_fluctuation(const Spectrum& spec, const BroadenedEnsemble& ens,
                      const model::Observable& obs);

// values[i] -> mean of values over the k nearest energies to energies[i]
// (distance |E' - E_i|, ties to the lower index). Near the edges k shrinks to
// the available symmetric span: k_i = min(k, 2*min(i, D-1-i) + 1).
Eigen::VectorXd coarse_grain(const Eigen::VectorXd& energies,
                             const Eigen::VectorXd& values, int k);

// Degree-4 polynomial in x = E/N through the coarse-grained diagonal matrix
// elements, fitted over the central 90% of eigenstates (5% excluded per edge).
struct SmoothEthFit {
  Eigen::VectorXd coeffs;  // coeffs[k] multiplies (E/N)^k
  double residual_rms = 0.0;
  int coarse_k = 0;
  double edge_fraction = 0.0;

  double value(double e_over_n) const;
  double derivative(double e_over_n) const;
};

SmoothEthFit smooth_eth_fit(const Spectrum& spec, const model::Observable& obs,
                            int coarse_k = 32);

// Fourth-order Gaussian-DOS model of tr[(H - lambda) rho_{lambda,delta}]:
//   -delta^2 lambda / Delta^2 + (3 delta^4 / 6 Delta^4)(3 lambda - lambda^3 / Delta^2)
// big_delta_sq is Delta^2 of the Gaussian level density.
double analytic_first_moment(double lambda, double delta, double big_delta_sq);

}  // namespace vme::spectral
