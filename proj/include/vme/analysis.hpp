#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vme/model.hpp"
#include "vme/spectral.hpp"
#include "vme/vqa.hpp"

namespace vme::analysis {

// Ensemble of converged runs plus lazily built per-state data. States are
// reconstructed from (master_seed, run_index, angles); eigenbasis
// coefficients are cached against the supplied spectrum.
class EnsembleView {
 public:
  EnsembleView(const spectral::Spectrum* spectrum,
               std::vector<vqa::VariationalRun> runs);

  const spectral::Spectrum& spectrum() const { return *spectrum_; }
  const std::vector<vqa::VariationalRun>& runs() const { return runs_; }
  int n_sites() const;
  int size() const { return static_cast<int>(runs_.size()); }
  double lambda() const;
  double delta() const;

  // Column r = state of run r in the computational basis.
  const Eigen::MatrixXd& states();
  // Column r = eigenbasis coefficients basis^T psi_r.
  const Eigen::MatrixXd& coefficients();
  // rho_R(E): mean of squared coefficients over the first r_count runs.
  Eigen::VectorXd diagonal_weights(int r_count);
  // Mean computational-basis expectation over the first r_count runs.
  double ensemble_estimate(const model::Observable& obs, int r_count);
  // Per-run energies <H>_r (recorded at convergence), first r_count entries.
  Eigen::VectorXd energies(int r_count) const;

 private:
  const spectral::Spectrum* spectrum_;
  std::vector<vqa::VariationalRun> runs_;
  Eigen::MatrixXd states_;
  Eigen::MatrixXd coeffs_;
};

// sum_E <E|A|E> (w^mc_E - rho_R(E)), absolute value.
double diag_error(EnsembleView& view, const spectral::BroadenedEnsemble& mc,
                  const Eigen::VectorXd& a_diag, int r_count);
double diag_error(EnsembleView& view, const spectral::BroadenedEnsemble& mc,
                  const model::Observable& obs, int r_count);

// Predicted systematic diagonal error |a'(lambda/N) (tr[rho_R (H-lambda)] -
// tr[rho_mc (H-lambda)])| with tr[rho_R (H-lambda)] = mean_r <H>_r - lambda.
double chi_systematic(EnsembleView& view,
                      const spectral::BroadenedEnsemble& mc,
                      const spectral::SmoothEthFit& fit, int r_count);

struct DiagGaussFit {
  double mu = 0.0;
  double sigma = 0.0;
  double rms = 0.0;
  int iters = 0;
};

// Two-parameter fit of G_sigma(E - mu) / sum_E' G_sigma(E' - mu) to the
// diagonal ensemble weights, on a linear scale over the full spectrum.
DiagGaussFit fit_diagonal_gaussian(const spectral::Spectrum& spec,
                                   const Eigen::VectorXd& rho_diag);

enum class TruncationFlavor { kHat, kTilde };

// Observable rotated to the eigenbasis with its diagonal removed. Tilde
// restricts to the window |E - lambda| <= s delta; hat keeps the full
// spectrum (n_sites <= 12 for the dense block).
struct TruncatedOperator {
  TruncationFlavor flavor = TruncationFlavor::kTilde;
  Eigen::Index lo = 0, hi = 0;  // eigenindex range [lo, hi)
  double lambda = 0.0, delta = 0.0, s = 0.0;
  Eigen::MatrixXd block;        // symmetric, exactly zero diagonal
  Eigen::VectorXd eigenvalues;  // ascending

  Eigen::Index window_dim() const { return hi - lo; }
  double eig_min() const { return eigenvalues(0); }
  double eig_max() const { return eigenvalues(eigenvalues.size() - 1); }
  // Largest singular value; equals max |eigenvalue| for symmetric blocks.
  double max_singular_value() const;
};

TruncatedOperator build_truncated(const spectral::Spectrum& spec,
                                  const model::Observable& obs, double lambda,
                                  double delta, double s,
                                  TruncationFlavor flavor);

// Off-diagonal samples x_r = <psi_r|A_trunc|psi_r> for each run.
struct OffdiagSamples {
  Eigen::VectorXd x;
  std::vector<int> n_tags;  // per-run chain size, kept for pooling
  TruncationFlavor flavor = TruncationFlavor::kTilde;
  double lambda = 0.0, delta = 0.0, s = 0.0;
};

OffdiagSamples offdiag_samples(EnsembleView& view,
                               const TruncatedOperator& op);
// Hat flavor via the exact identity <psi|A|psi> - sum_E c_E^2 <E|A|E>,
// no dense block needed.
OffdiagSamples offdiag_samples_hat(EnsembleView& view,
                                   const model::Observable& obs);

// sqrt(mean x^2 - (mean x)^2) over the given samples.
double sigma_of_samples(const Eigen::VectorXd& xs);

// MSE_R = mean over `scrambles` random orderings of |mean of first R
// samples|^2; entry R-1 of the result is MSE_R.
Eigen::VectorXd scrambled_mse(const Eigen::VectorXd& xs, int scrambles,
                              std::uint64_t seed);

struct MseFit {
  double sigma = 0.0;
  double c = 0.0;
  bool converged = false;
  int iters = 0;
};

// Log-space least squares of y(R) = sigma^2 / R + c^2 to an MSE curve.
MseFit fit_mse_law(const Eigen::VectorXd& curve);

// Pointwise mean over curves, truncated to the shortest length.
Eigen::VectorXd n_averaged_mse(const std::vector<Eigen::VectorXd>& curves);

struct IidNull {
  double mc = 0.0;        // Monte-Carlo estimate of E[x_1^2]
  double analytic = 0.0;  // 4 D^-1 sum_{E>E'} c_E^2 c_E'^2
  double mc_stderr = 0.0;
};

// Independent-matrix-element null model with f == 1 and Rademacher signs:
// x_1 = 2 D^{-1/2} sum_{E>E'} c_E c_{E'} R_{EE'}.
IidNull iid_null_mse(const Eigen::VectorXd& coeffs, double dos_at_center,
                     int trials, std::uint64_t seed);

struct Histogram {
  Eigen::VectorXd centers;
  Eigen::VectorXd density;  // counts / (total * bin width)
  Eigen::VectorXd counts;
};

Histogram histogram(const Eigen::VectorXd& values, int bins = 101,
                    double lo = -1.1, double hi = 1.1);

// Reduced density matrix on the contiguous window [first, first+size).
// size <= 6.
Eigen::MatrixXd reduced_density(const circuit::StateVector& psi, int first,
                                int size);
Eigen::MatrixXd reduced_density(const spectral::Spectrum& spec,
                                const spectral::BroadenedEnsemble& ens,
                                int first, int size,
                                double weight_cutoff = 0.0);

// (1/2) ||rho - rho'||_1 for symmetric density matrices.
double trace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Von Neumann entropy, natural log.
double entropy_of_density(const Eigen::MatrixXd& rho);
double entanglement_entropy(const circuit::StateVector& psi, int first,
                            int size);

// Haar-average entanglement entropy sum_{k=n+1}^{mn} 1/k - (m-1)/(2n) with
// m = 2^subsystem <= n = 2^(N-subsystem) (sides swapped if needed).
double page_entropy(int n_sites, int subsystem);

// Window-weighted eigenstate entanglement; weights below the cutoff skipped.
double mc_entropy_average(const spectral::Spectrum& spec,
                          const spectral::BroadenedEnsemble& ens, int first,
                          int size, double weight_cutoff = 1e-12);

struct TraceSweepRow {
  int subsystem_size = 0;
  double mean_distance = 0.0;  // over realizations, spatially averaged
  double std_distance = 0.0;
  // min over (realization, window) of mixture bound minus distance; the
  // mixture inequality holds when this is >= -1e-12.
  double min_mixture_margin = 0.0;
};

// Random overlapping subsets of subset_size runs; per subset and contiguous
// window, the trace distance between the subset-averaged reduced state and
// the broadened-ensemble reduced state.
std::vector<TraceSweepRow> trace_distance_sweep(
    EnsembleView& view, const spectral::BroadenedEnsemble& ens,
    const std::vector<int>& sizes, int subset_size, int realizations,
    std::uint64_t seed);

}  // namespace vme::analysis
