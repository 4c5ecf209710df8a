#include "vme/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vme/errors.hpp"
#include "vme/numerics.hpp"
#include "vme/rng.hpp"

namespace vme::analysis {

EnsembleView::EnsembleView(const spectral::Spectrum* spectrum,
                           std::vector<vqa::VariationalRun> runs)
    : spectrum_(spectrum), runs_(std::move(runs)) {
  if (spectrum_ == nullptr)
    throw std::invalid_argument("EnsembleView: null spectrum");
  if (runs_.empty()) throw std::invalid_argument("EnsembleView: no runs");
  for (const vqa::VariationalRun& r : runs_) {
    if (r.n_sites != spectrum_->n_sites)
      throw std::invalid_argument("EnsembleView: run size mismatch");
    if (r.lambda != runs_.front().lambda ||
        r.delta != runs_.front().delta ||
        r.master_seed != runs_.front().master_seed)
      throw std::invalid_argument("EnsembleView: inhomogeneous ensemble");
  }
}

int EnsembleView::n_sites() const { return spectrum_->n_sites; }
double EnsembleView::lambda() const { return runs_.front().lambda; }
double EnsembleView::delta() const { return runs_.front().delta; }

const Eigen::MatrixXd& EnsembleView::states() {
  if (states_.size() == 0) {
    const Eigen::Index dim = spectrum_->dim();
    states_.resize(dim, static_cast<Eigen::Index>(runs_.size()));
    for (std::size_t r = 0; r < runs_.size(); ++r) {
      const vqa::VariationalRun& run = runs_[r];
      const circuit::StateVector init = circuit::random_product_state(
          run.n_sites, {run.master_seed, run.run_index});
      states_.col(static_cast<Eigen::Index>(r)) =
          circuit::prepare_ansatz_state(init, run.params).amps;
    }
  }
  return states_;
}

const Eigen::MatrixXd& EnsembleView::coefficients() {
  if (coeffs_.size() == 0)
    coeffs_ = spectrum_->basis.view().transpose() * states();
  return coeffs_;
}

Eigen::VectorXd EnsembleView::diagonal_weights(int r_count) {
  if (r_count < 1 || r_count > size())
    throw std::invalid_argument("diagonal_weights: bad r_count");
  const Eigen::MatrixXd& c = coefficients();
  return c.leftCols(r_count).array().square().rowwise().mean().matrix();
}

double EnsembleView::ensemble_estimate(const model::Observable& obs,
                                       int r_count) {
  if (r_count < 1 || r_count > size())
    throw std::invalid_argument("ensemble_estimate: bad r_count");
  const Eigen::MatrixXd& s = states();
  circuit::StateVector psi;
  psi.n_sites = n_sites();
  double acc = 0.0;
  for (int r = 0; r < r_count; ++r) {
    psi.amps = s.col(r);
    acc += circuit::expectation(psi, obs.terms);
  }
  return acc / r_count;
}

Eigen::VectorXd EnsembleView::energies(int r_count) const {
  if (r_count < 1 || r_count > size())
    throw std::invalid_argument("energies: bad r_count");
  Eigen::VectorXd e(r_count);
  for (int r = 0; r < r_count; ++r) e(r) = runs_[static_cast<std::size_t>(r)].energy;
  return e;
}

double diag_error(EnsembleView& view, const spectral::BroadenedEnsemble& mc,
                  const Eigen::VectorXd& a_diag, int r_count) {
  const Eigen::VectorXd rho = view.diagonal_weights(r_count);
  return std::abs(a_diag.dot(mc.weights - rho));
}

double diag_error(EnsembleView& view, const spectral::BroadenedEnsemble& mc,
                  const model::Observable& obs, int r_count) {
  return diag_error(view, mc,
                    spectral::diagonal_matrix_elements(view.spectrum(), obs),
                    r_count);
}

double chi_systematic(EnsembleView& view,
                      const spectral::BroadenedEnsemble& mc,
                      const spectral::SmoothEthFit& fit, int r_count) {
  const double mean_energy = view.energies(r_count).mean();
  const double mc_energy = mc.weights.dot(view.spectrum().energies);
  const double slope = fit.derivative(view.lambda() / view.n_sites());
  return std::abs(slope * (mean_energy - mc_energy));
}

DiagGaussFit fit_diagonal_gaussian(const spectral::Spectrum& spec,
                                   const Eigen::VectorXd& rho_diag) {
  if (rho_diag.size() != spec.dim())
    throw std::invalid_argument("fit_diagonal_gaussian: size mismatch");
  const Eigen::VectorXd& e = spec.energies;
  // Moment start: weighted mean and variance of the diagonal weights.
  const double mu0 = rho_diag.dot(e);
  const double var0 =
      std::max(rho_diag.dot((e.array() - mu0).square().matrix()), 1e-12);
  // q = (mu, log sigma); model_E = G_sigma(E - mu) / sum G_sigma.
  const auto model_vec = [&](const Eigen::VectorXd& q) {
    const double sig = std::exp(q(1));
    Eigen::VectorXd g(e.size());
    for (Eigen::Index i = 0; i < e.size(); ++i)
      g(i) = spectral::gaussian_kernel(e(i) - q(0), sig);
    g /= g.sum();
    return g;
  };
  const auto residuals = [&](const Eigen::VectorXd& q) {
    return Eigen::VectorXd(model_vec(q) - rho_diag);
  };
  const auto jacobian = [&](const Eigen::VectorXd& q) {
    const double sig = std::exp(q(1));
    const Eigen::VectorXd m = model_vec(q);
    const Eigen::VectorXd u = (e.array() - q(0)).matrix() / sig;
    const double mean_u = m.dot(u);
    const double mean_uu = m.dot(u.cwiseProduct(u));
    Eigen::MatrixXd j(e.size(), 2);
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      j(i, 0) = m(i) * (u(i) - mean_u) / sig;        // d/d mu
      j(i, 1) = m(i) * (u(i) * u(i) - mean_uu);      // d/d log sigma
    }
    return j;
  };
  Eigen::VectorXd q0(2);
  q0 << mu0, 0.5 * std::log(var0);
  const num::LmResult res = num::levenberg_marquardt(residuals, jacobian, q0);
  if (!res.converged)
    throw FitError("fit_diagonal_gaussian: least squares did not converge");
  DiagGaussFit fit;
  fit.mu = res.x(0);
  fit.sigma = std::exp(res.x(1));
  fit.rms = res.rms;
  fit.iters = res.iters;
  return fit;
}

double TruncatedOperator::max_singular_value() const {
  return std::max(std::abs(eig_min()), std::abs(eig_max()));
}

TruncatedOperator build_truncated(const spectral::Spectrum& spec,
                                  const model::Observable& obs, double lambda,
                                  double delta, double s,
                                  TruncationFlavor flavor) {
  TruncatedOperator op;
  op.flavor = flavor;
  op.lambda = lambda;
  op.delta = delta;
  op.s = flavor == TruncationFlavor::kTilde ? s : 0.0;
  const Eigen::Index dim = spec.dim();
  if (flavor == TruncationFlavor::kTilde) {
    if (s <= 0.0 || delta <= 0.0)
      throw std::invalid_argument("build_truncated: bad window");
    const double half = s * delta;
    Eigen::Index lo = 0;
    while (lo < dim && spec.energies(lo) < lambda - half) ++lo;
    Eigen::Index hi = lo;
    while (hi < dim && spec.energies(hi) <= lambda + half) ++hi;
    if (hi <= lo)
      throw std::invalid_argument("build_truncated: empty energy window");
    op.lo = lo;
    op.hi = hi;
  } else {
    if (spec.n_sites > 12)
      throw std::invalid_argument(
          "build_truncated: full-spectrum block needs n_sites <= 12");
    op.lo = 0;
    op.hi = dim;
  }
  const Eigen::Index w = op.hi - op.lo;
  const auto basis = spec.basis.view();
  const auto window = basis.middleCols(op.lo, w);
  // A acting on each window column via the sparse Pauli kernel.
  Eigen::MatrixXd a_cols = Eigen::MatrixXd::Zero(dim, w);
  circuit::StateVector col, out;
  col.n_sites = spec.n_sites;
  for (Eigen::Index k = 0; k < w; ++k) {
    col.amps = window.col(k);
    circuit::apply_terms(obs.terms, col, out);
    a_cols.col(k) = out.amps;
  }
  op.block.noalias() = window.transpose() * a_cols;
  op.block = 0.5 * (op.block + op.block.transpose()).eval();
  op.block.diagonal().setZero();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      op.block, Eigen::EigenvaluesOnly);
  op.eigenvalues = es.eigenvalues();
  return op;
}

OffdiagSamples offdiag_samples(EnsembleView& view,
                               const TruncatedOperator& op) {
  const Eigen::MatrixXd& coeffs = view.coefficients();
  OffdiagSamples out;
  out.flavor = op.flavor;
  out.lambda = op.lambda;
  out.delta = op.delta;
  out.s = op.s;
  out.x.resize(view.size());
  for (int r = 0; r < view.size(); ++r) {
    const auto c = coeffs.col(r).segment(op.lo, op.window_dim());
    out.x(r) = c.dot(op.block * c);
  }
  out.n_tags.assign(static_cast<std::size_t>(view.size()), view.n_sites());
  return out;
}

OffdiagSamples offdiag_samples_hat(EnsembleView& view,
                                   const model::Observable& obs) {
  const Eigen::VectorXd a_diag =
      spectral::diagonal_matrix_elements(view.spectrum(), obs);
  const Eigen::MatrixXd& coeffs = view.coefficients();
  const Eigen::MatrixXd& states = view.states();
  OffdiagSamples out;
  out.flavor = TruncationFlavor::kHat;
  out.lambda = view.lambda();
  out.delta = view.delta();
  out.s = 0.0;
  out.x.resize(view.size());
  circuit::StateVector psi;
  psi.n_sites = view.n_sites();
  for (int r = 0; r < view.size(); ++r) {
    psi.amps = states.col(r);
    const double full = circuit::expectation(psi, obs.terms);
    const double diag = coeffs.col(r).array().square().matrix().dot(a_diag);
    out.x(r) = full - diag;
  }
  out.n_tags.assign(static_cast<std::size_t>(view.size()), view.n_sites());
  return out;
}

double sigma_of_samples(const Eigen::VectorXd& xs) {
  const num::MeanVar mv = num::mean_var(xs);
  return std::sqrt(std::max(mv.var, 0.0));
}

Eigen::VectorXd scrambled_mse(const Eigen::VectorXd& xs, int scrambles,
                              std::uint64_t seed) {
  if (xs.size() < 1) throw std::invalid_argument("scrambled_mse: no samples");
  if (scrambles < 1)
    throw std::invalid_argument("scrambled_mse: scrambles < 1");
  const int n = static_cast<int>(xs.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  const rng::CounterRng base =
      rng::CounterRng(seed).derive(rng::kTagScramble);
  for (int k = 0; k < scrambles; ++k) {
    std::iota(order.begin(), order.end(), 0);
    rng::Stream stream(base.derive(static_cast<std::uint64_t>(k)));
    stream.shuffle(order);
    double prefix = 0.0;
    for (int r = 0; r < n; ++r) {
      prefix += xs(order[static_cast<std::size_t>(r)]);
      const double mean = prefix / (r + 1);
      acc(r) += mean * mean;
    }
  }
  return acc / scrambles;
}

MseFit fit_mse_law(const Eigen::VectorXd& curve) {
  const Eigen::Index n = curve.size();
  if (n < 4) throw std::invalid_argument("fit_mse_law: curve too short");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(curve(i) > 0.0))
      throw std::invalid_argument("fit_mse_law: non-positive MSE value");
  // q = (log sigma^2, log c^2); y(R) = e^q0 / R + e^q1.
  const auto model = [&](const Eigen::VectorXd& q, Eigen::Index i) {
    return std::exp(q(0)) / static_cast<double>(i + 1) + std::exp(q(1));
  };
  const auto residuals = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i)
      r(i) = std::log(model(q, i)) - std::log(curve(i));
    return r;
  };
  const auto jacobian = [&](const Eigen::VectorXd& q) {
    Eigen::MatrixXd j(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double y = model(q, i);
      j(i, 0) = std::exp(q(0)) / static_cast<double>(i + 1) / y;
      j(i, 1) = std::exp(q(1)) / y;
    }
    return j;
  };
  const double s2_0 = curve(0);
  const double tail = curve(n - 1);
  const double c2_0 =
      std::max(tail - s2_0 / static_cast<double>(n), 1e-12 * s2_0);
  Eigen::VectorXd q0(2);
  q0 << std::log(s2_0), std::log(c2_0);
  num::LmOptions opts;
  opts.max_iters = 400;
  const num::LmResult res =
      num::levenberg_marquardt(residuals, jacobian, q0, opts);
  MseFit fit;
  fit.sigma = std::sqrt(std::exp(res.x(0)));
  fit.c = std::sqrt(std::exp(res.x(1)));
  fit.converged = res.converged;
  fit.iters = res.iters;
  return fit;
}

Eigen::VectorXd n_averaged_mse(const std::vector<Eigen::VectorXd>& curves) {
  if (curves.empty())
    throw std::invalid_argument("n_averaged_mse: no curves");
  Eigen::Index len = curves.front().size();
  for (const Eigen::VectorXd& c : curves) len = std::min(len, c.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(len);
  for (const Eigen::VectorXd& c : curves) out += c.head(len);
  return out / static_cast<double>(curves.size());
}

IidNull iid_null_mse(const Eigen::VectorXd& coeffs, double dos_at_center,
                     int trials, std::uint64_t seed) {
  const Eigen::Index w = coeffs.size();
  if (w < 2) throw std::invalid_argument("iid_null_mse: need >= 2 levels");
  if (dos_at_center <= 0.0)
    throw std::invalid_argument("iid_null_mse: dos <= 0");
  if (trials < 2) throw std::invalid_argument("iid_null_mse: trials < 2");
  const double sum_sq = coeffs.array().square().sum();
  const double sum_quad = coeffs.array().square().square().sum();
  IidNull out;
  out.analytic = 2.0 * (sum_sq * sum_sq - sum_quad) / dos_at_center;
  const rng::CounterRng base = rng::CounterRng(seed).derive(rng::kTagIidNull);
  double acc = 0.0, acc_sq = 0.0;
  const double scale = 2.0 / std::sqrt(dos_at_center);
  for (int t = 0; t < trials; ++t) {
    rng::Stream stream(base.derive(static_cast<std::uint64_t>(t)));
    double x = 0.0;
    for (Eigen::Index i = 1; i < w; ++i)
      for (Eigen::Index j = 0; j < i; ++j)
        x += coeffs(i) * coeffs(j) * stream.sign();
    x *= scale;
    acc += x * x;
    acc_sq += x * x * x * x;
  }
  out.mc = acc / trials;
  const double var = std::max(acc_sq / trials - out.mc * out.mc, 0.0);
  out.mc_stderr = std::sqrt(var / trials);
  return out;
}

Histogram histogram(const Eigen::VectorXd& values, int bins, double lo,
                    double hi) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram: bad bins");
  Histogram h;
  h.centers.resize(bins);
  h.counts = Eigen::VectorXd::Zero(bins);
  const double width = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) h.centers(b) = lo + width * (b + 0.5);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values(i);
    if (v < lo || v >= hi) continue;
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
    h.counts(b) += 1.0;
  }
  const double total = std::max(1.0, h.counts.sum());
  h.density = h.counts / (total * width);
  return h;
}

Eigen::MatrixXd reduced_density(const circuit::StateVector& psi, int first,
                                int size) {
  const int n = psi.n_sites;
  if (size < 1 || size > 6)
    throw std::invalid_argument("reduced_density: size out of [1,6]");
  if (first < 0 || first + size > n)
    throw std::invalid_argument(
        "reduced_density: window not contiguous inside the chain");
  const int env = n - size;
  const Eigen::Index sub_dim = Eigen::Index{1} << size;
  const std::uint64_t env_dim = std::uint64_t{1} << env;
  const std::uint64_t low_mask = (std::uint64_t{1} << first) - 1;
  Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(sub_dim, sub_dim);
  const double* a = psi.amps.data();
  for (std::uint64_t e = 0; e < env_dim; ++e) {
    const std::uint64_t low = e & low_mask;
    const std::uint64_t high = (e & ~low_mask) << size;
    const std::uint64_t base = high | low;
    for (Eigen::Index p = 0; p < sub_dim; ++p) {
      const double ap = a[base | (static_cast<std::uint64_t>(p) << first)];
      if (ap == 0.0) continue;
      for (Eigen::Index q = 0; q <= p; ++q)
        rho(p, q) += ap * a[base | (static_cast<std::uint64_t>(q) << first)];
    }
  }
  rho.triangularView<Eigen::StrictlyUpper>() =
      rho.triangularView<Eigen::StrictlyLower>().transpose();
  return rho;
}

Eigen::MatrixXd reduced_density(const spectral::Spectrum& spec,
                                const spectral::BroadenedEnsemble& ens,
                                int first, int size, double weight_cutoff) {
  const Eigen::Index sub_dim = Eigen::Index{1} << size;
  Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(sub_dim, sub_dim);
  const auto basis = spec.basis.view();
  circuit::StateVector col;
  col.n_sites = spec.n_sites;
  double total = 0.0;
  for (Eigen::Index e = 0; e < spec.dim(); ++e) {
    const double w = ens.weights(e);
    if (w <= weight_cutoff) continue;
    col.amps = basis.col(e);
    rho += w * reduced_density(col, first, size);
    total += w;
  }
  if (total > 0.0) rho /= total;
  return rho;
}

double trace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("trace_distance: shape mismatch");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      a - b, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

double entropy_of_density(const Eigen::MatrixXd& rho) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      rho, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double p = es.eigenvalues()(i);
    if (p > 1e-15) s -= p * std::log(p);
  }
  return s;
}

double entanglement_entropy(const circuit::StateVector& psi, int first,
                            int size) {
  return entropy_of_density(reduced_density(psi, first, size));
}

double page_entropy(int n_sites, int subsystem) {
  if (subsystem < 0 || subsystem > n_sites)
    throw std::invalid_argument("page_entropy: bad subsystem");
  int small = subsystem, large = n_sites - subsystem;
  if (small > large) std::swap(small, large);
  const std::uint64_t m = std::uint64_t{1} << small;
  const std::uint64_t n = std::uint64_t{1} << large;
  double s = 0.0;
  for (std::uint64_t k = n + 1; k <= m * n; ++k)
    s += 1.0 / static_cast<double>(k);
  s -= static_cast<double>(m - 1) / (2.0 * static_cast<double>(n));
  return s;
}

double mc_entropy_average(const spectral::Spectrum& spec,
                          const spectral::BroadenedEnsemble& ens, int first,
                          int size, double weight_cutoff) {
  const auto basis = spec.basis.view();
  circuit::StateVector col;
  col.n_sites = spec.n_sites;
  double acc = 0.0, total = 0.0;
  for (Eigen::Index e = 0; e < spec.dim(); ++e) {
    const double w = ens.weights(e);
    if (w < weight_cutoff) continue;
    col.amps = basis.col(e);
    acc += w * entanglement_entropy(col, first, size);
    total += w;
  }
  return total > 0.0 ? acc / total : 0.0;
}

std::vector<TraceSweepRow> trace_distance_sweep(
    EnsembleView& view, const spectral::BroadenedEnsemble& ens,
    const std::vector<int>& sizes, int subset_size, int realizations,
    std::uint64_t seed) {
  const int pool = view.size();
  if (subset_size < 1 || subset_size > pool)
    throw std::invalid_argument("trace_distance_sweep: bad subset size");
  if (realizations < 1)
    throw std::invalid_argument("trace_distance_sweep: bad realizations");
  const int n = view.n_sites();
  const Eigen::MatrixXd& states = view.states();
  const rng::CounterRng base = rng::CounterRng(seed).derive(rng::kTagSubset);

  std::vector<TraceSweepRow> rows;
  circuit::StateVector psi;
  psi.n_sites = n;
  for (const int size : sizes) {
    const int windows = n - size + 1;
    // Per-window ensemble target and per-run reduced states and distances.
    std::vector<Eigen::MatrixXd> target(static_cast<std::size_t>(windows));
    std::vector<std::vector<Eigen::MatrixXd>> run_rho(
        static_cast<std::size_t>(windows));
    std::vector<Eigen::VectorXd> run_dist(static_cast<std::size_t>(windows));
    for (int j = 0; j < windows; ++j) {
      target[static_cast<std::size_t>(j)] =
          reduced_density(view.spectrum(), ens, j, size);
      run_rho[static_cast<std::size_t>(j)].resize(
          static_cast<std::size_t>(pool));
      run_dist[static_cast<std::size_t>(j)].resize(pool);
      for (int r = 0; r < pool; ++r) {
        psi.amps = states.col(r);
        run_rho[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] =
            reduced_density(psi, j, size);
        run_dist[static_cast<std::size_t>(j)](r) = trace_distance(
            run_rho[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)],
            target[static_cast<std::size_t>(j)]);
      }
    }
    Eigen::VectorXd spatial(realizations);
    double min_margin = std::numeric_limits<double>::infinity();
    std::vector<int> order(static_cast<std::size_t>(pool));
    for (int k = 0; k < realizations; ++k) {
      std::iota(order.begin(), order.end(), 0);
      rng::Stream stream(base.derive(static_cast<std::uint64_t>(size))
                             .derive(static_cast<std::uint64_t>(k)));
      stream.shuffle_prefix(order, static_cast<std::size_t>(subset_size));
      double avg = 0.0;
      for (int j = 0; j < windows; ++j) {
        Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(Eigen::Index{1} << size,
                                                    Eigen::Index{1} << size);
        double bound = 0.0;
        for (int t = 0; t < subset_size; ++t) {
          const int r = order[static_cast<std::size_t>(t)];
          mix += run_rho[static_cast<std::size_t>(j)]
                        [static_cast<std::size_t>(r)];
          bound += run_dist[static_cast<std::size_t>(j)](r);
        }
        mix /= subset_size;
        bound /= subset_size;
        const double dist = trace_distance(mix, target[static_cast<std::size_t>(j)]);
        min_margin = std::min(min_margin, bound - dist);
        avg += dist;
      }
      spatial(k) = avg / windows;
    }
    const num::MeanVar mv = num::mean_var(spatial);
    TraceSweepRow row;
    row.subsystem_size = size;
    row.mean_distance = mv.mean;
    row.std_distance = std::sqrt(std::max(mv.var, 0.0));
    row.min_mixture_margin = min_margin;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vme::analysis
