#include "vme/vqa.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vme/errors.hpp"

namespace vme::vqa {

double window_width(int n_sites, double alpha, double bandwidth) {
  if (n_sites < 1) throw std::invalid_argument("window_width: n_sites < 1");
  if (bandwidth <= 0.0)
    throw std::invalid_argument("window_width: bandwidth <= 0");
  return bandwidth / n_sites * std::pow(static_cast<double>(n_sites), alpha);
}

double resolve_bandwidth(const VmeConfig& cfg, int n_sites,
                         const spectral::Spectrum* spectrum) {
  if (cfg.bandwidth_mode == BandwidthMode::kApproximate)
    return cfg.approx_bandwidth_per_site * n_sites;
  if (spectrum == nullptr)
    throw std::invalid_argument(
        "resolve_bandwidth: exact mode needs a spectrum");
  if (spectrum->n_sites != n_sites)
    throw std::invalid_argument("resolve_bandwidth: spectrum size mismatch");
  return spectrum->bandwidth();
}

namespace {

struct LinePoint {
  double alpha = 0.0;
  double phi = 0.0;
  double dphi = 0.0;
  Eigen::VectorXd g;
  bool has_grad = false;
};

struct LineSearchResult {
  bool ok = false;
  LinePoint accepted;
};

// Strong-Wolfe line search (bracket then zoom). phi(a) = f(x + a d).
class LineSearch {
 public:
  LineSearch(const std::function<double(const Eigen::VectorXd&)>& f,
             const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
             const Eigen::VectorXd& x, const Eigen::VectorXd& d, double phi0,
             double dphi0, double c1, double c2)
      : f_(f), g_(g), x_(x), d_(d), phi0_(phi0), dphi0_(dphi0), c1_(c1),
        c2_(c2) {}

  LineSearchResult run() {
    constexpr double kAlphaMax = 64.0;
    constexpr int kMaxBracket = 20;
    LinePoint prev;
    prev.alpha = 0.0;
    prev.phi = phi0_;
    prev.dphi = dphi0_;
    double alpha = 1.0;
    for (int i = 0; i < kMaxBracket; ++i) {
      LinePoint cur = probe(alpha);
      if (cur.phi > phi0_ + c1_ * alpha * dphi0_ ||
          (i > 0 && cur.phi >= prev.phi))
        return zoom(prev, cur);
      fill_grad(cur);
      if (std::abs(cur.dphi) <= -c2_ * dphi0_) return accept(cur);
      if (cur.dphi >= 0.0) return zoom(cur, prev);
      prev = cur;
      if (alpha >= kAlphaMax) break;
      alpha = std::min(2.0 * alpha, kAlphaMax);
    }
    return {};
  }

 private:
  LinePoint probe(double alpha) {
    LinePoint p;
    p.alpha = alpha;
    p.phi = f_(x_ + alpha * d_);
    return p;
  }

  void fill_grad(LinePoint& p) {
    if (p.has_grad) return;
    p.g = g_(x_ + p.alpha * d_);
    p.dphi = p.g.dot(d_);
    p.has_grad = true;
  }

  LineSearchResult accept(LinePoint p) {
    LineSearchResult r;
    r.ok = true;
    r.accepted = std::move(p);
    return r;
  }

  LineSearchResult zoom(LinePoint lo, LinePoint hi) {
    constexpr int kMaxZoom = 40;
    for (int i = 0; i < kMaxZoom; ++i) {
      if (std::abs(hi.alpha - lo.alpha) <
          1e-14 * std::max(1.0, std::abs(lo.alpha)))
        break;
      const double alpha = 0.5 * (lo.alpha + hi.alpha);
      LinePoint cur = probe(alpha);
      if (cur.phi > phi0_ + c1_ * alpha * dphi0_ || cur.phi >= lo.phi) {
        hi = cur;
      } else {
        fill_grad(cur);
        if (std::abs(cur.dphi) <= -c2_ * dphi0_) return accept(cur);
        if (cur.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    // No strong-Wolfe point isolated; keep the best sufficient-decrease
    // point so the outer loop still makes monotone progress.
    if (lo.alpha > 0.0 && lo.phi < phi0_) {
      fill_grad(lo);
      LineSearchResult r;
      r.ok = false;
      r.accepted = std::move(lo);
      return r;
    }
    return {};
  }

  const std::function<double(const Eigen::VectorXd&)>& f_;
  const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& d_;
  double phi0_, dphi0_, c1_, c2_;
};

}  // namespace

BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    Eigen::VectorXd x0, const BfgsOptions& opts,
    const Eigen::MatrixXd* inv_hessian0) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.f = f(res.x);
  res.grad = grad(res.x);
  res.inv_hessian = inv_hessian0 != nullptr
                        ? *inv_hessian0
                        : Eigen::MatrixXd::Identity(n, n);
  bool scaled = inv_hessian0 != nullptr;
  res.status = BfgsStatus::kIterationCap;
  for (res.iters = 0; res.iters < opts.max_iters; ++res.iters) {
    if (res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol_inf) {
      res.status = BfgsStatus::kConverged;
      return res;
    }
    Eigen::VectorXd d = -(res.inv_hessian * res.grad);
    double dphi0 = d.dot(res.grad);
    bool steepest = false;
    const auto restart = [&]() {
      res.inv_hessian = Eigen::MatrixXd::Identity(n, n);
      scaled = false;
      steepest = true;
      d = -res.grad;
      dphi0 = d.dot(res.grad);
    };
    if (!(dphi0 < 0.0)) {
      // Curvature got corrupted; restart from steepest descent.
      restart();
      if (!(dphi0 < 0.0)) {
        res.status = BfgsStatus::kConverged;
        return res;
      }
    }
    LineSearchResult ls =
        LineSearch(f, grad, res.x, d, res.f, dphi0, opts.c1, opts.c2).run();
    if (!ls.ok && !ls.accepted.has_grad && !steepest) {
      // A stale quasi-Newton direction can point along a floating-point
      // plateau (|dphi0| too small for a representable Armijo decrement).
      // Steepest descent with a clean Hessian usually still moves.
      restart();
      ls = LineSearch(f, grad, res.x, d, res.f, dphi0, opts.c1, opts.c2).run();
    }
    if (!ls.accepted.has_grad) {
      res.status = BfgsStatus::kLineSearchFailure;
      return res;
    }
    const Eigen::VectorXd s = ls.accepted.alpha * d;
    const Eigen::VectorXd y = ls.accepted.g - res.grad;
    res.x += s;
    res.f = ls.accepted.phi;
    res.grad = ls.accepted.g;
    if (!ls.ok) {
      // Sufficient decrease without the curvature condition: keep the
      // progress, drop the unusable pair, and continue from scratch.
      res.inv_hessian = Eigen::MatrixXd::Identity(n, n);
      scaled = false;
      continue;
    }
    const double ys = y.dot(s);
    if (ys > 1e-12 * y.norm() * s.norm()) {
      if (!scaled) {
        const double yy = y.squaredNorm();
        if (yy > 0.0)
          res.inv_hessian = Eigen::MatrixXd::Identity(n, n) * (ys / yy);
        scaled = true;
      }
      const double rho = 1.0 / ys;
      const Eigen::VectorXd hy = res.inv_hessian * y;
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      res.inv_hessian.noalias() -= rho * (s * hy.transpose());
      res.inv_hessian.noalias() -= rho * (hy * s.transpose());
      res.inv_hessian.noalias() +=
          (rho * rho * (y.dot(hy)) + rho) * (s * s.transpose());
    }
  }
  if (res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol_inf)
    res.status = BfgsStatus::kConverged;
  return res;
}

namespace {

std::string non_convergence_detail(const model::HamiltonianSpec& spec,
                                   const VmeConfig& cfg, int run_index,
                                   const std::vector<StageLog>& stages,
                                   double delta, const char* reason) {
  std::ostringstream os;
  os << "vme_run did not converge (" << reason << "): N=" << spec.n_sites
     << " lambda/N=" << cfg.lambda_over_n << " alpha=" << cfg.window_exponent
     << " run=" << run_index << " delta^2=" << delta * delta;
  if (!stages.empty()) {
    const StageLog& last = stages.back();
    os << " last stage: layers=" << last.layers << " eps=" << last.grad_tol
       << " variance=" << last.variance << " evals=" << last.cost_evals;
  }
  return os.str();
}

}  // namespace

VariationalRun vme_run(const model::HamiltonianSpec& spec, const VmeConfig& cfg,
                       int run_index, const spectral::Spectrum* spectrum) {
  const int n = spec.n_sites;
  if (cfg.bandwidth_mode == BandwidthMode::kExact && spectrum != nullptr &&
      spectrum->spec_hash != spec.content_hash())
    throw std::invalid_argument("vme_run: spectrum/spec mismatch");
  const auto t0 = std::chrono::steady_clock::now();
  const double bandwidth = resolve_bandwidth(cfg, n, spectrum);
  const double delta = window_width(n, cfg.window_exponent, bandwidth);
  const double lambda = cfg.lambda_over_n * n;

  const circuit::StateVector init = circuit::random_product_state(
      n, {cfg.master_seed, run_index});
  circuit::CostEvaluator eval(model::build_mfim(spec), init, lambda);

  circuit::AnsatzParams params = circuit::AnsatzParams::zeros(n, 1);
  circuit::AnsatzParams scratch = params;
  const auto fwrap = [&](const Eigen::VectorXd& x) {
    scratch.angles = x;
    return eval.cost(scratch);
  };
  const auto gwrap = [&](const Eigen::VectorXd& x) {
    scratch.angles = x;
    return eval.gradient(scratch);
  };

  VariationalRun run;
  run.n_sites = n;
  run.lambda_over_n = cfg.lambda_over_n;
  run.lambda = lambda;
  run.delta = delta;
  run.bandwidth = bandwidth;
  run.master_seed = cfg.master_seed;
  run.run_index = run_index;

  Eigen::MatrixXd h_inv;
  bool have_h = false;
  for (;;) {
    scratch = circuit::AnsatzParams::zeros(n, params.layers);  // resize scratch
    double eps = cfg.grad_tol_start;
    while (eps >= cfg.grad_tol_floor) {
      BfgsOptions bo;
      bo.grad_tol_inf = eps;
      bo.max_iters = cfg.stage_iteration_cap;
      const BfgsResult opt = bfgs_minimize(fwrap, gwrap, params.angles, bo,
                                           have_h ? &h_inv : nullptr);
      params.angles = opt.x;
      const circuit::CostReport rep = eval.report(params);

      StageLog log;
      log.layers = params.layers;
      log.grad_tol = eps;
      log.iters = opt.iters;
      log.grad_inf = opt.grad.lpNorm<Eigen::Infinity>();
      log.cost = rep.cost;
      log.variance = rep.variance;
      log.energy = rep.energy;
      log.cost_evals = eval.cost_evals();
      if (opt.status == BfgsStatus::kIterationCap) log.note = "iteration-cap";
      if (opt.status == BfgsStatus::kLineSearchFailure)
        log.note = "line-search";
      run.stages.push_back(log);

      if (opt.status == BfgsStatus::kLineSearchFailure) {
        have_h = false;  // stale curvature caused the failure; restart clean
      } else {
        h_inv = opt.inv_hessian;
        have_h = true;
      }

      if (rep.variance <= delta * delta) {
        run.params = params;
        run.cost = rep.cost;
        run.variance = rep.variance;
        run.energy = rep.energy;
        run.cost_evals = eval.cost_evals();
        run.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        return run;
      }
      if (eval.cost_evals() > cfg.max_cost_evals)
        throw NonConvergenceError(non_convergence_detail(
            spec, cfg, run_index, run.stages, delta, "cost-eval budget"));
      eps *= cfg.grad_tol_shrink;
    }
    if (params.layers + 1 > cfg.max_layers)
      throw NonConvergenceError(non_convergence_detail(
          spec, cfg, run_index, run.stages, delta, "layer budget"));
    params.append_zero_layer();  // warm start: old angles kept
    have_h = false;              // dimension changed
  }
}

EnsembleResult generate_ensemble(const model::HamiltonianSpec& spec,
                                 const VmeConfig& cfg, int n_runs, int jobs,
                                 const spectral::Spectrum* spectrum) {
  if (n_runs < 1) throw std::invalid_argument("generate_ensemble: n_runs < 1");
  jobs = std::max(1, std::min(jobs, n_runs));
  std::vector<std::optional<VariationalRun>> slots(
      static_cast<std::size_t>(n_runs));
  std::vector<std::string> errors(static_cast<std::size_t>(n_runs));
  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= n_runs) return;
      try {
        slots[static_cast<std::size_t>(r)] = vme_run(spec, cfg, r, spectrum);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(r)] = e.what();
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();

  EnsembleResult out;
  for (int r = 0; r < n_runs; ++r) {
    if (slots[static_cast<std::size_t>(r)].has_value())
      out.runs.push_back(std::move(*slots[static_cast<std::size_t>(r)]));
    else
      out.failures.emplace_back(r, errors[static_cast<std::size_t>(r)]);
  }
  return out;
}

}  // namespace vme::vqa
