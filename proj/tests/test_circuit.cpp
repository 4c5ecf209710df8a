#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "vme/circuit.hpp"
#include "vme/model.hpp"
#include "vme/rng.hpp"

using namespace vme;
using namespace vme::circuit;

namespace {

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
const std::complex<double> kI(0.0, 1.0);

CMat ckron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

CMat cpauli(model::Pauli p) {
  CMat m(2, 2);
  switch (p) {
    case model::Pauli::I: m << 1, 0, 0, 1; break;
    case model::Pauli::X: m << 0, 1, 1, 0; break;
    case model::Pauli::Y: m << 0, -kI, kI, 0; break;
    case model::Pauli::Z: m << 1, 0, 0, -1; break;
  }
  return m;
}

// Full complex operator for one Pauli string, site 0 = least significant bit.
CMat string_op(const std::vector<model::Pauli>& letters) {
  CMat m = CMat::Identity(1, 1);
  for (int j = static_cast<int>(letters.size()) - 1; j >= 0; --j)
    m = ckron(m, cpauli(letters[j]));
  return m;
}

CMat single_site(int n, int site, const CMat& u) {
  std::vector<model::Pauli> id(n, model::Pauli::I);
  CMat m = CMat::Identity(1, 1);
  for (int j = n - 1; j >= 0; --j)
    m = ckron(m, j == site ? u : cpauli(model::Pauli::I));
  return m;
}

// exp(i a G) for an involution G (G^2 = 1): cos(a) + i sin(a) G.
CMat exp_involution(double a, const CMat& g) {
  const Eigen::Index d = g.rows();
  return std::cos(a) * CMat::Identity(d, d) + kI * std::sin(a) * g;
}

// Dense-complex reference implementation of the whole layered circuit.
CVec dense_circuit(const StateVector& init, const AnsatzParams& p) {
  const int n = p.n_sites;
  CVec psi = init.amps.cast<std::complex<double>>();
  const auto odd = odd_block_bonds(n);
  const auto even = even_block_bonds(n);
  for (int l = 0; l < p.layers; ++l) {
    const double* a = p.angles.data() + static_cast<std::ptrdiff_t>(l) *
                                            p.per_layer();
    int k = 0;
    for (const auto& g : odd) {
      const CMat yz = string_op([&] {
        std::vector<model::Pauli> s(n, model::Pauli::I);
        s[g.y_site] = model::Pauli::Y;
        s[g.z_site] = model::Pauli::Z;
        return s;
      }());
      psi = exp_involution(a[k++], yz) * psi;
    }
    for (const auto& g : even) {
      const CMat yz = string_op([&] {
        std::vector<model::Pauli> s(n, model::Pauli::I);
        s[g.y_site] = model::Pauli::Y;
        s[g.z_site] = model::Pauli::Z;
        return s;
      }());
      psi = exp_involution(a[k++], yz) * psi;
    }
    for (int j = 0; j < n; ++j)
      psi = exp_involution(a[k++], single_site(n, j, cpauli(model::Pauli::Y))) *
            psi;
  }
  return psi;
}

AnsatzParams random_params(int n, int layers, std::uint64_t seed) {
  auto p = AnsatzParams::zeros(n, layers);
  rng::Stream s{rng::CounterRng(seed)};
  for (Eigen::Index i = 0; i < p.angles.size(); ++i)
    p.angles(i) = 2.0 * (s.uniform01() - 0.5) * 3.0;
  return p;
}

}  // namespace

TEST_CASE("zero state and product states are normalized and deterministic") {
  const auto z = StateVector::zero_state(3);
  CHECK(z.dim() == 8);
  CHECK(z.amps(0) == 1.0);
  CHECK(z.amps.tail(7).cwiseAbs().maxCoeff() == 0.0);

  const auto a = random_product_state(5, {42, 3});
  const auto b = random_product_state(5, {42, 3});
  const auto c = random_product_state(5, {42, 4});
  CHECK(a.norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((a.amps - b.amps).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.amps - c.amps).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("product state is an exact tensor product of site rotations") {
  const int n = 4;
  const auto psi = random_product_state(n, {7, 0});
  // reconstruct the per-site angles from the single-qubit marginals of the
  // first basis column: amps(b) = prod_j (bit j ? sin ph_j : cos ph_j)
  Eigen::VectorXd cosines(n), sines(n);
  for (int j = 0; j < n; ++j) {
    // amplitude ratio between b = (1<<j) and b = 0 gives tan(ph_j)
    cosines(j) = 0;
    sines(j) = 0;
  }
  // check product structure directly: amps(b) * amps(0) ==
  // amps(b & mask) * amps(b & ~mask) for any split mask
  for (int b = 0; b < (1 << n); ++b) {
    const int mask = 0b0011;
    CHECK(psi.amps(b) * psi.amps(0) ==
          doctest::Approx(psi.amps(b & mask) * psi.amps(b & ~mask))
              .epsilon(1e-12));
  }
}

TEST_CASE("bond pattern: even N pairs all sites, odd N adds the end gate") {
  const auto o6 = odd_block_bonds(6);
  REQUIRE(o6.size() == 3);
  CHECK(o6[0].y_site == 0);
  CHECK(o6[0].z_site == 1);
  CHECK(o6[2].y_site == 4);
  CHECK(o6[2].z_site == 5);
  const auto e6 = even_block_bonds(6);
  REQUIRE(e6.size() == 3);
  CHECK(e6[0].y_site == 1);
  CHECK(e6[0].z_site == 2);
  CHECK(e6[2].y_site == 5);
  CHECK(e6[2].z_site == 0);  // wrap bond

  const auto o5 = odd_block_bonds(5);
  REQUIRE(o5.size() == 2);  // (0,1), (2,3)
  const auto e5 = even_block_bonds(5);
  REQUIRE(e5.size() == 3);  // (1,2), (3,4), end gate (0, 4)
  CHECK(e5[2].y_site == 0);
  CHECK(e5[2].z_site == 4);
  // per layer: bonds + N Y rotations = 2N angles
  CHECK(o5.size() + e5.size() + 5 == 2 * 5);
  CHECK(o6.size() + e6.size() + 6 == 2 * 6);
}

TEST_CASE("single Y rotation matches exp(i theta Y) exactly") {
  // exp(i th Y)|0> = cos(th)|0> - sin(th)|1>
  auto psi = StateVector::zero_state(1);
  apply_y_rotation(psi, 0, 0.3);
  CHECK(psi.amps(0) == doctest::Approx(std::cos(0.3)).epsilon(1e-15));
  CHECK(psi.amps(1) == doctest::Approx(-std::sin(0.3)).epsilon(1e-15));
}

TEST_CASE("layered circuit matches the dense complex oracle at N=4 and N=5") {
  for (int n : {4, 5}) {
    const auto init = random_product_state(n, {11, 1});
    const auto params = random_params(n, 3, 17);
    const auto fast = prepare_ansatz_state(init, params);
    const CVec ref = dense_circuit(init, params);
    // the evolved state must be real up to numerical noise
    CHECK(ref.imag().cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fast.amps - ref.real()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(fast.norm() == doctest::Approx(1.0).epsilon(1e-13));
  }
}

TEST_CASE("gate order inside a layer is odd bonds, even bonds, then Y") {
  // with distinct angles the order is visible: compare against the oracle
  // with a deliberately permuted application order and require disagreement
  const int n = 4;
  const auto init = random_product_state(n, {23, 0});
  auto params = random_params(n, 1, 5);
  const auto fast = prepare_ansatz_state(init, params);
  const CVec ref = dense_circuit(init, params);
  CHECK((fast.amps - ref.real()).cwiseAbs().maxCoeff() < 1e-12);

  // reversed order within the layer gives a different state (gates do not
  // commute), so a sign/order bug cannot silently pass the oracle above
  AnsatzParams rev = params;
  std::reverse(rev.angles.data(), rev.angles.data() + rev.angles.size());
  const auto swapped = prepare_ansatz_state(init, rev);
  CHECK((swapped.amps - fast.amps).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("circuit is 2-pi periodic in every angle") {
  const int n = 3;
  const auto init = random_product_state(n, {3, 2});
  auto params = random_params(n, 2, 29);
  const auto base = prepare_ansatz_state(init, params);
  for (int k : {0, 4, 7}) {
    auto shifted = params;
    shifted.angles(k) += 2.0 * std::acos(-1.0);
    const auto s = prepare_ansatz_state(init, shifted);
    CHECK((s.amps - base.amps).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("expectation values match the dense operator") {
  const int n = 5;
  const auto psi = prepare_ansatz_state(random_product_state(n, {1, 0}),
                                        random_params(n, 2, 31));
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const CVec cpsi = psi.amps.cast<std::complex<double>>();
  double ref = 0.0;
  for (const auto& t : terms)
    ref += (t.coeff * cpsi.dot(string_op(t.letters) * cpsi)).real();
  CHECK(expectation(psi, terms) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("odd-Y strings have exactly zero expectation in a real state") {
  const int n = 3;
  const auto psi = prepare_ansatz_state(random_product_state(n, {5, 1}),
                                        random_params(n, 1, 7));
  model::PauliTerm y{0.8, {model::Pauli::Y, model::Pauli::I, model::Pauli::I}};
  CHECK(expectation(psi, y) == 0.0);
  model::PauliTerm xyz{1.2, {model::Pauli::X, model::Pauli::Y, model::Pauli::Z}};
  CHECK(expectation(psi, xyz) == 0.0);
}

TEST_CASE("apply_terms matches dense matrix-vector product") {
  const int n = 4;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const auto dense = model::to_dense(terms, n);
  const auto psi = random_product_state(n, {9, 9});
  StateVector out;
  apply_terms(terms, psi, out);
  const Eigen::VectorXd ref = dense * psi.amps;
  CHECK((out.amps - ref).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("cost identity: <phi|phi> = Var + (E - lambda)^2, 100 random states") {
  const int n = 4;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const double lambda = -0.5 * n;
  for (int r = 0; r < 100; ++r) {
    const auto psi = prepare_ansatz_state(random_product_state(n, {77, r}),
                                          random_params(n, 1, 1000 + r));
    const auto rep = cost_and_variance(terms, psi, lambda);
    const double lhs = rep.cost;
    const double rhs =
        rep.variance + (rep.energy - lambda) * (rep.energy - lambda);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    CHECK(rep.variance >= -1e-12);
  }
}

TEST_CASE("cost against dense (H - lambda)^2") {
  const int n = 4;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const auto dense = model::to_dense(terms, n);
  const double lambda = -1.7;
  const auto psi = prepare_ansatz_state(random_product_state(n, {2, 5}),
                                        random_params(n, 2, 13));
  const Eigen::MatrixXd m =
      (dense - lambda * Eigen::MatrixXd::Identity(16, 16));
  const double ref = psi.amps.dot(m * m * psi.amps);
  const auto rep = cost_and_variance(terms, psi, lambda);
  CHECK(rep.cost == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("parameter-shift gradient equals central finite differences") {
  const int n = 6, layers = 2;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const auto init = random_product_state(n, {4, 0});
  const auto params = random_params(n, layers, 99);
  const double lambda = -0.5 * n;

  const auto grad = parameter_shift_gradient(terms, init, params, lambda);
  REQUIRE(grad.size() == params.angles.size());

  CostEvaluator eval(terms, init, lambda);
  const double h = 1e-5;
  for (int k = 0; k < grad.size(); k += 5) {
    auto plus = params, minus = params;
    plus.angles(k) += h;
    minus.angles(k) -= h;
    const double fd = (eval.cost(plus) - eval.cost(minus)) / (2 * h);
    CHECK(grad(k) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("parameter-shift uses the exact pi/4 rule") {
  const int n = 3;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const auto init = random_product_state(n, {21, 2});
  const auto params = random_params(n, 1, 55);
  const double lambda = 0.3;
  CostEvaluator eval(terms, init, lambda);
  const auto grad = eval.gradient(params);
  const double q = std::acos(-1.0) / 4.0;
  for (int k = 0; k < grad.size(); ++k) {
    auto plus = params, minus = params;
    plus.angles(k) += q;
    minus.angles(k) -= q;
    CHECK(grad(k) ==
          doctest::Approx(eval.cost(plus) - eval.cost(minus)).epsilon(1e-12));
  }
}

TEST_CASE("evaluator counts cost evaluations including gradient shifts") {
  const int n = 3;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  CostEvaluator eval(model::build_mfim(spec), random_product_state(n, {0, 0}),
                     0.0);
  auto params = AnsatzParams::zeros(n, 1);
  CHECK(eval.cost_evals() == 0);
  (void)eval.cost(params);
  CHECK(eval.cost_evals() == 1);
  (void)eval.gradient(params);
  CHECK(eval.cost_evals() == 1 + 2 * static_cast<std::uint64_t>(
                                       params.angles.size()));
}

TEST_CASE("all-zero circuit on |0...0> reproduces the classical energy") {
  const int n = 5;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  const auto psi = prepare_ansatz_state(StateVector::zero_state(n),
                                        AnsatzParams::zeros(n, 3));
  // identity circuit: all Z eigenvalues +1, X terms average to zero
  const double e_ref = n * spec.coupling_j + n * spec.field_z;
  const auto rep = cost_and_variance(terms, psi, 0.0);
  CHECK(rep.energy == doctest::Approx(e_ref).epsilon(1e-13));
  // Var(H) on |00...0> is sum_j h_{x,j}^2 (only X terms fluctuate)
  double var_ref = 0.0;
  for (double h : spec.disordered_fields()) var_ref += h * h;
  CHECK(rep.variance == doctest::Approx(var_ref).epsilon(1e-12));
}

TEST_CASE("ensemble-average product-state variance matches the closed form") {
  // E_phi[Var(H)] = sum_j h_xj^2 / 2 + N h_z^2 / 2 + (3/4) N J^2 for angles
  // drawn uniformly on [0, pi)
  const int n = 6;
  model::HamiltonianSpec spec;
  spec.n_sites = n;
  const auto terms = model::build_mfim(spec);
  double expect = 0.75 * n * spec.coupling_j * spec.coupling_j +
                  0.5 * n * spec.field_z * spec.field_z;
  for (double h : spec.disordered_fields()) expect += 0.5 * h * h;
  double acc = 0.0;
  const int seeds = 100;
  for (int r = 0; r < seeds; ++r) {
    const auto psi = random_product_state(n, {1234, r});
    acc += cost_and_variance(terms, psi, 0.0).variance;
  }
  acc /= seeds;
  // Monte Carlo estimate: generous 20% window around the analytic mean
  CHECK(acc > 0.8 * expect);
  CHECK(acc < 1.2 * expect);
}

TEST_CASE("append_zero_layer keeps the prepared state unchanged") {
  const int n = 4;
  const auto init = random_product_state(n, {8, 0});
  auto params = random_params(n, 2, 3);
  const auto before = prepare_ansatz_state(init, params);
  params.append_zero_layer();
  CHECK(params.layers == 3);
  const auto after = prepare_ansatz_state(init, params);
  CHECK((before.amps - after.amps).cwiseAbs().maxCoeff() < 1e-15);
}
