#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "vme/analysis.hpp"
#include "vme/circuit.hpp"
#include "vme/model.hpp"
#include "vme/numerics.hpp"
#include "vme/rng.hpp"
#include "vme/spectral.hpp"
#include "vme/vqa.hpp"

using namespace vme;
using namespace vme::analysis;

namespace {

model::HamiltonianSpec chain(int n) {
  model::HamiltonianSpec s;
  s.n_sites = n;
  return s;
}

struct Fixture {
  model::HamiltonianSpec mspec;
  spectral::Spectrum spec;
  std::vector<vqa::VariationalRun> runs;
  vqa::VmeConfig cfg;

  explicit Fixture(int n, int n_runs) : mspec(chain(n)) {
    spec = spectral::exact_spectrum(mspec);
    cfg.master_seed = 5;
    auto res = vqa::generate_ensemble(mspec, cfg, n_runs, 1, &spec);
    REQUIRE(res.failures.empty());
    runs = std::move(res.runs);
  }

  EnsembleView view() { return EnsembleView(&spec, runs); }
};

Fixture& shared_fixture() {
  static Fixture fx(5, 8);
  return fx;
}

Eigen::MatrixXd random_density(rng::Stream& s, int d) {
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = 2.0 * s.uniform01() - 1.0;
  Eigen::MatrixXd rho = m.transpose() * m;
  return rho / rho.trace();
}

}  // namespace

TEST_CASE("ensemble view reconstructs states and coefficients") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  REQUIRE(view.size() == 8);
  const auto& states = view.states();
  const auto& coeffs = view.coefficients();
  const auto basis = fx.spec.basis.view();
  for (int r = 0; r < view.size(); ++r) {
    const auto psi = circuit::prepare_ansatz_state(
        circuit::random_product_state(5, {fx.cfg.master_seed, r}),
        fx.runs[static_cast<std::size_t>(r)].params);
    CHECK((states.col(r) - psi.amps).cwiseAbs().maxCoeff() < 1e-14);
    const Eigen::VectorXd c = basis.transpose() * psi.amps;
    CHECK((coeffs.col(r) - c).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(coeffs.col(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("diagonal weights are normalized means of squared coefficients") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  for (int r : {1, 4, 8}) {
    const Eigen::VectorXd rho = view.diagonal_weights(r);
    CHECK(rho.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rho.minCoeff() >= 0.0);
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(fx.spec.dim());
    for (int k = 0; k < r; ++k)
      ref += view.coefficients().col(k).cwiseAbs2();
    ref /= r;
    CHECK((rho - ref).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("ensemble estimate averages per-state expectations") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  const auto obs = model::local_observable(5, "X");
  double acc = 0.0;
  for (int r = 0; r < 5; ++r) {
    circuit::StateVector psi;
    psi.n_sites = 5;
    psi.amps = view.states().col(r);
    acc += circuit::expectation(psi, obs);
  }
  CHECK(view.ensemble_estimate(obs, 5) ==
        doctest::Approx(acc / 5).epsilon(1e-13));
  const Eigen::VectorXd e = view.energies(6);
  for (int r = 0; r < 6; ++r)
    CHECK(e(r) == fx.runs[static_cast<std::size_t>(r)].energy);
}

TEST_CASE("truncated window operator matches a dense construction") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  const auto obs = model::local_observable(5, "ZZ");
  const double lambda = view.lambda(), delta = view.delta(), s = 3.0;
  const auto op = build_truncated(fx.spec, obs, lambda, delta, s,
                                  TruncationFlavor::kTilde);
  // window bounds: exactly the eigenindices with |E - lambda| <= s delta
  for (Eigen::Index i = 0; i < fx.spec.dim(); ++i) {
    const bool inside = std::abs(fx.spec.energies(i) - lambda) <= s * delta;
    CHECK(inside == (i >= op.lo && i < op.hi));
  }
  REQUIRE(op.window_dim() == op.block.rows());
  // dense oracle: rotate, restrict, null the diagonal
  const auto basis = fx.spec.basis.view();
  const Eigen::MatrixXd dense = model::to_dense(obs.terms, 5);
  Eigen::MatrixXd ref = basis.middleCols(op.lo, op.window_dim()).transpose() *
                        dense * basis.middleCols(op.lo, op.window_dim());
  ref.diagonal().setZero();
  CHECK((op.block - ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((op.block - op.block.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(op.block.diagonal().cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(op.block.trace()) == 0.0);
  // spectral data: ascending, straddles zero (traceless), consistent norm
  for (Eigen::Index i = 1; i < op.eigenvalues.size(); ++i)
    CHECK(op.eigenvalues(i) >= op.eigenvalues(i - 1));
  CHECK(op.eig_min() < 0.0);
  CHECK(op.eig_max() > 0.0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ref);
  CHECK(op.max_singular_value() ==
        doctest::Approx(svd.singularValues()(0)).epsilon(1e-10));
}

TEST_CASE("window samples equal the quadratic form of window coefficients") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  const auto obs = model::local_observable(5, "Z");
  const auto op = build_truncated(fx.spec, obs, view.lambda(), view.delta(),
                                  3.0, TruncationFlavor::kTilde);
  const auto samples = offdiag_samples(view, op);
  REQUIRE(samples.x.size() == view.size());
  for (int r = 0; r < view.size(); ++r) {
    const Eigen::VectorXd cw =
        view.coefficients().col(r).segment(op.lo, op.window_dim());
    CHECK(samples.x(r) == doctest::Approx(cw.dot(op.block * cw)).epsilon(1e-12));
  }
}

TEST_CASE("full off-diagonal samples: identity path equals the dense block") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  for (const char* name : {"Z", "X", "ZZ"}) {
    const auto obs = model::local_observable(5, name);
    const auto hat = build_truncated(fx.spec, obs, view.lambda(), view.delta(),
                                     3.0, TruncationFlavor::kHat);
    CHECK(hat.lo == 0);
    CHECK(hat.window_dim() == fx.spec.dim());
    const auto via_block = offdiag_samples(view, hat);
    const auto via_identity = offdiag_samples_hat(view, obs);
    CHECK((via_block.x - via_identity.x).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("estimate decomposes into diagonal plus off-diagonal parts") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  for (const char* name : {"Z", "X", "ZZ"}) {
    const auto obs = model::local_observable(5, name);
    const auto a = spectral::diagonal_matrix_elements(fx.spec, obs);
    for (int r : {1, 3, 8}) {
      const double diag_part = view.diagonal_weights(r).dot(a);
      const double off_part =
          offdiag_samples_hat(view, obs).x.head(r).mean();
      CHECK(view.ensemble_estimate(obs, r) ==
            doctest::Approx(diag_part + off_part).epsilon(1e-10));
    }
  }
}

TEST_CASE("diagonal error and its systematic model match hand evaluation") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  const auto ens = spectral::broadened_ensemble(fx.spec, view.lambda(),
                                                view.delta());
  const auto obs = model::local_observable(5, "Z");
  const auto a = spectral::diagonal_matrix_elements(fx.spec, obs);
  const int r = 6;
  const double ref = std::abs(a.dot(ens.weights - view.diagonal_weights(r)));
  CHECK(diag_error(view, ens, a, r) == doctest::Approx(ref).epsilon(1e-13));
  CHECK(diag_error(view, ens, obs, r) == doctest::Approx(ref).epsilon(1e-13));

  const auto fit = spectral::smooth_eth_fit(fx.spec, obs);
  const double mean_e = view.energies(r).mean();
  const double mc_e = ens.weights.dot(fx.spec.energies);
  const double want =
      std::abs(fit.derivative(view.lambda() / 5) * (mean_e - mc_e));
  CHECK(chi_systematic(view, ens, fit, r) ==
        doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("diagonal gaussian fit recovers synthetic window weights") {
  auto& fx = shared_fixture();
  const double mu = -2.1, sigma = 0.9;
  Eigen::VectorXd rho(fx.spec.dim());
  for (Eigen::Index i = 0; i < fx.spec.dim(); ++i)
    rho(i) = spectral::gaussian_kernel(fx.spec.energies(i) - mu, sigma);
  rho /= rho.sum();
  const auto fit = fit_diagonal_gaussian(fx.spec, rho);
  CHECK(fit.mu == doctest::Approx(mu).epsilon(1e-6));
  CHECK(fit.sigma == doctest::Approx(sigma).epsilon(1e-6));
  CHECK(fit.rms < 1e-10);
}

TEST_CASE("sample dispersion uses the population convention") {
  Eigen::VectorXd xs(4);
  xs << 1.0, 2.0, 3.0, 4.0;
  CHECK(sigma_of_samples(xs) == doctest::Approx(std::sqrt(1.25)).epsilon(1e-14));
}

TEST_CASE("scrambled averages reproduce the 1/R law for centered samples") {
  rng::Stream s{rng::CounterRng(123)};
  const int n = 96;
  Eigen::VectorXd xs(n);
  for (int i = 0; i < n; ++i) xs(i) = 2.0 * s.uniform01() - 1.0;
  xs.array() -= xs.mean();  // exactly centered: c = 0
  const double var = xs.squaredNorm() / n;
  const auto mse = scrambled_mse(xs, 2000, 9);
  REQUIRE(mse.size() == n);
  // the full average is permutation invariant: MSE_n = (mean)^2 = 0
  CHECK(mse(n - 1) < 1e-28);
  // MSE_1 estimates mean(x^2)
  CHECK(mse(0) == doctest::Approx(var).epsilon(0.1));
  // log-log slope over the small-R window is close to -1
  Eigen::VectorXd lx(11), ly(11);
  for (int r = 2; r <= 12; ++r) {
    lx(r - 2) = std::log(static_cast<double>(r));
    ly(r - 2) = std::log(mse(r - 1));
  }
  const auto [intercept, slope] = num::linear_fit(lx, ly);
  (void)intercept;
  CHECK(slope == doctest::Approx(-1.0).epsilon(0.15));
  // deterministic in the seed
  const auto again = scrambled_mse(xs, 2000, 9);
  CHECK((mse - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mse law fit recovers planted parameters") {
  const double sigma = 0.31, c = 0.047;
  Eigen::VectorXd curve(96);
  for (int r = 1; r <= 96; ++r)
    curve(r - 1) = sigma * sigma / r + c * c;
  const auto fit = fit_mse_law(curve);
  CHECK(fit.converged);
  CHECK(fit.sigma == doctest::Approx(sigma).epsilon(1e-6));
  CHECK(fit.c == doctest::Approx(c).epsilon(1e-6));
}

TEST_CASE("curve averaging truncates to the shortest member") {
  Eigen::VectorXd a(3), b(2);
  a << 1.0, 2.0, 3.0;
  b << 3.0, 4.0;
  const auto m = n_averaged_mse({a, b});
  REQUIRE(m.size() == 2);
  CHECK(m(0) == doctest::Approx(2.0));
  CHECK(m(1) == doctest::Approx(3.0));
}

TEST_CASE("independent-element null: two equal levels are exact") {
  Eigen::VectorXd c(2);
  c << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const double dos = 5.0;
  const auto null = iid_null_mse(c, dos, 50, 3);
  CHECK(null.analytic == doctest::Approx(1.0 / dos).epsilon(1e-14));
  // |x_1| = dos^{-1/2} for every sign draw, so the MC mean is exact and the
  // spread is pure round-off (a real spread would be ~ x^2/sqrt(trials))
  CHECK(null.mc == doctest::Approx(1.0 / dos).epsilon(1e-13));
  CHECK(null.mc_stderr < 1e-6);
}

TEST_CASE("independent-element null: random weights agree within errors") {
  rng::Stream s{rng::CounterRng(4)};
  Eigen::VectorXd c(32);
  for (int i = 0; i < 32; ++i) c(i) = 2.0 * s.uniform01() - 1.0;
  c /= c.norm();
  const auto null = iid_null_mse(c, 12.0, 4000, 17);
  CHECK(std::abs(null.mc - null.analytic) <= 3.0 * null.mc_stderr + 1e-12);
}

TEST_CASE("histogram bins, counts and density normalization") {
  Eigen::VectorXd v(6);
  v << -0.9, -0.3, 0.0, 0.0, 0.3, 0.9;
  const auto h = histogram(v, 4, -1.0, 1.0);
  REQUIRE(h.centers.size() == 4);
  CHECK(h.counts.sum() == doctest::Approx(6.0));
  CHECK(h.counts(0) == doctest::Approx(1.0));  // [-1.0, -0.5)
  CHECK(h.counts(1) == doctest::Approx(1.0));  // [-0.5, 0.0)
  CHECK(h.counts(2) == doctest::Approx(3.0));  // [0.0, 0.5)
  CHECK(h.counts(3) == doctest::Approx(1.0));  // [0.5, 1.0]
  const double width = h.centers(1) - h.centers(0);
  CHECK(h.density.sum() * width == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.centers(0) == doctest::Approx(-0.75));
}

TEST_CASE("reduced states: purity, normalization and base cases") {
  const auto prod = circuit::random_product_state(6, {2, 0});
  const Eigen::MatrixXd rho = reduced_density(prod, 1, 2);
  CHECK(rho.rows() == 4);
  CHECK(rho.trace() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK((rho - rho.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  // a product state has a pure reduced state: rho^2 = rho
  CHECK((rho * rho - rho).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(entropy_of_density(rho) < 1e-10);

  // an entangled circuit state: still a valid density, now mixed
  auto params = circuit::AnsatzParams::zeros(6, 1);
  rng::Stream s{rng::CounterRng(9)};
  for (Eigen::Index k = 0; k < params.angles.size(); ++k)
    params.angles(k) = s.uniform01();
  const auto psi = circuit::prepare_ansatz_state(prod, params);
  const Eigen::MatrixXd rho2 = reduced_density(psi, 0, 3);
  CHECK(rho2.trace() == doctest::Approx(1.0).epsilon(1e-13));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rho2);
  CHECK(es.eigenvalues().minCoeff() > -1e-13);
  CHECK(entropy_of_density(rho2) > 1e-3);
}

TEST_CASE("pure-state entanglement is symmetric under complementation") {
  const auto psi = circuit::prepare_ansatz_state(
      circuit::random_product_state(6, {3, 1}), [] {
        auto p = circuit::AnsatzParams::zeros(6, 2);
        rng::Stream s{rng::CounterRng(31)};
        for (Eigen::Index k = 0; k < p.angles.size(); ++k)
          p.angles(k) = 2.0 * s.uniform01() - 1.0;
        return p;
      }());
  for (int k : {1, 2, 3}) {
    const double left = entanglement_entropy(psi, 0, k);
    const double right = entanglement_entropy(psi, k, 6 - k);
    CHECK(left == doctest::Approx(right).epsilon(1e-10));
  }
}

TEST_CASE("window-averaged reduced state is the weighted eigenstate mixture") {
  auto& fx = shared_fixture();
  const auto ens = spectral::broadened_ensemble(fx.spec, -2.5, 1.0);
  const Eigen::MatrixXd mix = reduced_density(fx.spec, ens, 1, 2);
  Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(4, 4);
  const auto basis = fx.spec.basis.view();
  for (Eigen::Index e = 0; e < fx.spec.dim(); ++e) {
    circuit::StateVector v;
    v.n_sites = 5;
    v.amps = basis.col(e);
    ref += ens.weights(e) * reduced_density(v, 1, 2);
  }
  CHECK((mix - ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(mix.trace() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("trace distance is a metric with the diagonal closed form") {
  Eigen::MatrixXd a = Eigen::Vector2d(0.7, 0.3).asDiagonal();
  Eigen::MatrixXd b = Eigen::Vector2d(0.4, 0.6).asDiagonal();
  CHECK(trace_distance(a, b) == doctest::Approx(0.3).epsilon(1e-14));
  rng::Stream s{rng::CounterRng(8)};
  const auto x = random_density(s, 4);
  const auto y = random_density(s, 4);
  const auto z = random_density(s, 4);
  CHECK(trace_distance(x, x) < 1e-13);
  CHECK(trace_distance(x, y) ==
        doctest::Approx(trace_distance(y, x)).epsilon(1e-12));
  CHECK(trace_distance(x, z) <=
        trace_distance(x, y) + trace_distance(y, z) + 1e-12);
  CHECK(trace_distance(x, y) > 0.0);
  CHECK(trace_distance(x, y) <= 1.0 + 1e-12);
}

TEST_CASE("entropy base cases and the haar average") {
  Eigen::MatrixXd pure = Eigen::MatrixXd::Zero(4, 4);
  pure(2, 2) = 1.0;
  CHECK(entropy_of_density(pure) == doctest::Approx(0.0));
  const Eigen::MatrixXd mixed = Eigen::MatrixXd::Identity(8, 8) / 8.0;
  CHECK(entropy_of_density(mixed) ==
        doctest::Approx(std::log(8.0)).epsilon(1e-13));
  // two sites, one-site subsystem: 1/3 + 1/4 - 1/4 = 1/3
  CHECK(page_entropy(2, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(page_entropy(6, 2) == doctest::Approx(page_entropy(6, 4)).epsilon(1e-14));
  CHECK(page_entropy(8, 4) > page_entropy(8, 2));
  CHECK(page_entropy(8, 4) < 4 * std::log(2.0));
}

TEST_CASE("window entropy average matches a direct weighted sum") {
  auto& fx = shared_fixture();
  const auto ens = spectral::broadened_ensemble(fx.spec, -2.5, 1.0);
  const auto basis = fx.spec.basis.view();
  double ref = 0.0;
  for (Eigen::Index e = 0; e < fx.spec.dim(); ++e) {
    circuit::StateVector v;
    v.n_sites = 5;
    v.amps = basis.col(e);
    ref += ens.weights(e) * entanglement_entropy(v, 0, 2);
  }
  CHECK(mc_entropy_average(fx.spec, ens, 0, 2, 0.0) ==
        doctest::Approx(ref).epsilon(1e-10));
}

TEST_CASE("trace-distance sweep is deterministic and convexity-safe") {
  auto& fx = shared_fixture();
  auto view = fx.view();
  const auto ens = spectral::broadened_ensemble(fx.spec, view.lambda(),
                                                view.delta());
  const auto rows = trace_distance_sweep(view, ens, {1, 2}, 4, 5, 21);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].subsystem_size == 1);
  CHECK(rows[1].subsystem_size == 2);
  for (const auto& row : rows) {
    CHECK(row.mean_distance > 0.0);
    CHECK(row.mean_distance <= 1.0);
    CHECK(row.std_distance >= 0.0);
    // averaging states can only tighten the distance to the target
    CHECK(row.min_mixture_margin >= -1e-12);
  }
  auto view2 = fx.view();
  const auto again = trace_distance_sweep(view2, ens, {1, 2}, 4, 5, 21);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].mean_distance == again[i].mean_distance);
    CHECK(rows[i].std_distance == again[i].std_distance);
  }
}
