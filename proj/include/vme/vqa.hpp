#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vme/circuit.hpp"
#include "vme/model.hpp"
#include "vme/spectral.hpp"

namespace vme::vqa {

enum class BandwidthMode { kApproximate, kExact };

// Squeezing schedule and budgets for one variational ensemble.
struct VmeConfig {
  double lambda_over_n = -0.5;  // target energy density lambda / N
  double window_exponent = -0.5;  // alpha in delta = (bandwidth/N) N^alpha
  BandwidthMode bandwidth_mode = BandwidthMode::kExact;
  double approx_bandwidth_per_site = 3.0;  // used in approximate mode

  double grad_tol_start = 10.0;
  double grad_tol_floor = 1e-3;
  double grad_tol_shrink = 0.5;
  int stage_iteration_cap = 500;
  int max_layers = 16;
  std::uint64_t max_cost_evals = 200'000'000;
  std::uint64_t master_seed = 1;
};

// delta = (bandwidth / N) * N^alpha; bandwidth is the full spectral width.
double window_width(int n_sites, double alpha, double bandwidth);

// Resolves the bandwidth for the configured mode; exact mode requires a
// spectrum computed from the same Hamiltonian.
double resolve_bandwidth(const VmeConfig& cfg, int n_sites,
                         const spectral::Spectrum* spectrum);

struct BfgsOptions {
  double grad_tol_inf = 1e-6;
  int max_iters = 200;
  double c1 = 1e-4;  // sufficient-decrease constant
  double c2 = 0.9;   // curvature constant
};

enum class BfgsStatus { kConverged, kIterationCap, kLineSearchFailure };

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd inv_hessian;
  int iters = 0;
  BfgsStatus status = BfgsStatus::kConverged;
};

// Quasi-Newton minimization with strong-Wolfe line search. Terminates when
// the gradient infinity norm reaches grad_tol_inf (checked on entry too) or
// the iteration cap is hit. Accepted steps never increase f. Dead line
// searches restart once from steepest descent with a reset Hessian;
// kLineSearchFailure means no decrease was found even along -grad.
// inv_hessian0 resumes from an earlier call; identity when absent.
BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    Eigen::VectorXd x0, const BfgsOptions& opts,
    const Eigen::MatrixXd* inv_hessian0 = nullptr);

// One (layer count, gradient tolerance) stage of the squeeze loop.
struct StageLog {
  int layers = 0;
  double grad_tol = 0.0;
  int iters = 0;
  double grad_inf = 0.0;
  double cost = 0.0;
  double variance = 0.0;
  double energy = 0.0;
  std::uint64_t cost_evals = 0;  // cumulative
  std::string note;              // "", "iteration-cap", "line-search"
};

struct VariationalRun {
  int n_sites = 0;
  double lambda_over_n = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double bandwidth = 0.0;
  std::uint64_t master_seed = 0;
  int run_index = 0;
  circuit::AnsatzParams params;  // converged angles, layers = p*
  double cost = 0.0;
  double variance = 0.0;
  double energy = 0.0;
  std::uint64_t cost_evals = 0;
  double wall_seconds = 0.0;
  std::vector<StageLog> stages;
};

// Squeeze one random product state onto the window until Var(H) <= delta^2:
// inner BFGS to gradient tolerance eps, eps halved from grad_tol_start down
// to grad_tol_floor, then a fresh zero-initialized layer is appended (old
// angles kept, inverse Hessian reset) and the schedule restarts. Throws
// NonConvergenceError when layer or evaluation budgets run out.
VariationalRun vme_run(const model::HamiltonianSpec& spec, const VmeConfig& cfg,
                       int run_index,
                       const spectral::Spectrum* spectrum = nullptr);

struct EnsembleResult {
  std::vector<VariationalRun> runs;  // ordered by run index
  std::vector<std::pair<int, std::string>> failures;
};

// R independent runs (run_index 0..n_runs-1) on a deterministic work pool;
// results are identical for any jobs count.
EnsembleResult generate_ensemble(const model::HamiltonianSpec& spec,
                                 const VmeConfig& cfg, int n_runs, int jobs,
                                 const spectral::Spectrum* spectrum = nullptr);

}  // namespace vme::vqa
