#include "vme/circuit.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vme/rng.hpp"

namespace vme::circuit {

StateVector StateVector::zero_state(int n_sites) {
  StateVector s;
  s.n_sites = n_sites;
  s.amps = Eigen::VectorXd::Zero(Eigen::Index{1} << n_sites);
  s.amps(0) = 1.0;
  return s;
}

StateVector random_product_state(int n_sites, ProductStateSeed seed) {
  if (n_sites < 1 || n_sites > 24)
    throw std::invalid_argument("random_product_state: bad n_sites");
  const rng::CounterRng base = rng::CounterRng(seed.master_seed)
                                   .derive(rng::kTagProductState)
                                   .derive(static_cast<std::uint64_t>(seed.run_index));
  std::vector<double> c(static_cast<std::size_t>(n_sites)),
      s(static_cast<std::size_t>(n_sites));
  for (int j = 0; j < n_sites; ++j) {
    const double phi =
        std::numbers::pi * base.uniform01(static_cast<std::uint64_t>(j));
    c[static_cast<std::size_t>(j)] = std::cos(phi);
    s[static_cast<std::size_t>(j)] = std::sin(phi);
  }
  StateVector out;
  out.n_sites = n_sites;
  const Eigen::Index dim = Eigen::Index{1} << n_sites;
  out.amps.resize(dim);
  for (Eigen::Index b = 0; b < dim; ++b) {
    double a = 1.0;
    for (int j = 0; j < n_sites; ++j)
      a *= (b >> j & 1) ? s[static_cast<std::size_t>(j)]
                        : c[static_cast<std::size_t>(j)];
    out.amps(b) = a;
  }
  return out;
}

AnsatzParams AnsatzParams::zeros(int n_sites, int layers) {
  AnsatzParams p;
  p.n_sites = n_sites;
  p.layers = layers;
  p.angles = Eigen::VectorXd::Zero(Eigen::Index{layers} * 2 * n_sites);
  return p;
}

void AnsatzParams::append_zero_layer() {
  angles.conservativeResize(angles.size() + per_layer());
  angles.tail(per_layer()).setZero();
  ++layers;
}

std::vector<BondGate> odd_block_bonds(int n_sites) {
  std::vector<BondGate> out;
  for (int s = 0; s + 1 < n_sites; s += 2) out.push_back({s, s + 1});
  return out;
}

std::vector<BondGate> even_block_bonds(int n_sites) {
  std::vector<BondGate> out;
  for (int s = 1; s < n_sites; s += 2) out.push_back({s, (s + 1) % n_sites});
  if (n_sites % 2 != 0) out.push_back({0, n_sites - 1});  // end gate
  return out;
}

void apply_y_rotation(StateVector& psi, int site, double theta) {
  // exp(i th Y) = [[cos, sin], [-sin, cos]] on (a0, a1).
  const double c = std::cos(theta), s = std::sin(theta);
  double* a = psi.amps.data();
  const std::uint64_t dim = std::uint64_t{1} << psi.n_sites;
  const std::uint64_t stride = std::uint64_t{1} << site;
  for (std::uint64_t base = 0; base < dim; base += 2 * stride) {
    for (std::uint64_t l = base; l < base + stride; ++l) {
      const double a0 = a[l];
      const double a1 = a[l + stride];
      a[l] = c * a0 + s * a1;
      a[l + stride] = c * a1 - s * a0;
    }
  }
}

void apply_bond_gate(StateVector& psi, const BondGate& g, double phi) {
  // exp(i ph Y_y Z_z): the Z eigenvalue of site z flips the rotation sense.
  const double c = std::cos(phi), s = std::sin(phi);
  double* a = psi.amps.data();
  const std::uint64_t dim = std::uint64_t{1} << psi.n_sites;
  const std::uint64_t stride = std::uint64_t{1} << g.y_site;
  for (std::uint64_t base = 0; base < dim; base += 2 * stride) {
    for (std::uint64_t l = base; l < base + stride; ++l) {
      const double sgn = (l >> g.z_site & 1) ? -s : s;
      const double a0 = a[l];
      const double a1 = a[l + stride];
      a[l] = c * a0 + sgn * a1;
      a[l + stride] = c * a1 - sgn * a0;
    }
  }
}

void apply_layer(StateVector& psi, const double* layer_angles) {
  const int n = psi.n_sites;
  const std::vector<BondGate> odd = odd_block_bonds(n);
  const std::vector<BondGate> even = even_block_bonds(n);
  const double* ang = layer_angles;
  for (const BondGate& g : odd) apply_bond_gate(psi, g, *ang++);
  for (const BondGate& g : even) apply_bond_gate(psi, g, *ang++);
  for (int j = 0; j < n; ++j) apply_y_rotation(psi, j, *ang++);
}

StateVector prepare_ansatz_state(const StateVector& init,
                                 const AnsatzParams& params) {
  if (init.n_sites != params.n_sites)
    throw std::invalid_argument("prepare_ansatz_state: size mismatch");
  StateVector psi = init;
  for (int l = 0; l < params.layers; ++l)
    apply_layer(psi, params.angles.data() +
                         static_cast<Eigen::Index>(l) * params.per_layer());
  return psi;
}

double expectation(const StateVector& psi, const model::PauliTerm& term) {
  if (term.n_sites() != psi.n_sites)
    throw std::invalid_argument("expectation: term size mismatch");
  const int y = term.y_count();
  if (y % 2 != 0) return 0.0;  // antisymmetric real kernel
  const double unit = (y / 2) % 2 == 0 ? term.coeff : -term.coeff;
  const std::uint64_t flip = term.flip_mask();
  const std::uint64_t sign = term.sign_mask();
  const double* a = psi.amps.data();
  const std::uint64_t dim = std::uint64_t{1} << psi.n_sites;
  double acc = 0.0;
  for (std::uint64_t b = 0; b < dim; ++b) {
    const double v = (std::popcount(b & sign) & 1) ? -a[b] : a[b];
    acc += a[b ^ flip] * v;
  }
  return unit * acc;
}

double expectation(const StateVector& psi,
                   const std::vector<model::PauliTerm>& terms) {
  double acc = 0.0;
  for (const model::PauliTerm& t : terms) acc += expectation(psi, t);
  return acc;
}

double expectation(const StateVector& psi, const model::Observable& obs) {
  return expectation(psi, obs.terms);
}

void apply_terms(const std::vector<model::PauliTerm>& terms,
                 const StateVector& psi, StateVector& out) {
  out.n_sites = psi.n_sites;
  out.amps.setZero(psi.amps.size());
  const double* a = psi.amps.data();
  double* o = out.amps.data();
  const std::uint64_t dim = static_cast<std::uint64_t>(psi.amps.size());
  for (const model::PauliTerm& t : terms) {
    if (t.n_sites() != psi.n_sites)
      throw std::invalid_argument("apply_terms: term size mismatch");
    const int y = t.y_count();
    if (y % 2 != 0)
      throw std::invalid_argument("apply_terms: odd Y count not real");
    const double unit = (y / 2) % 2 == 0 ? t.coeff : -t.coeff;
    const std::uint64_t flip = t.flip_mask();
    const std::uint64_t sign = t.sign_mask();
    if (flip == 0) {
      for (std::uint64_t b = 0; b < dim; ++b)
        o[b] += (std::popcount(b & sign) & 1) ? -unit * a[b] : unit * a[b];
    } else {
      for (std::uint64_t b = 0; b < dim; ++b) {
        const double v = (std::popcount(b & sign) & 1) ? -unit : unit;
        o[b ^ flip] += v * a[b];
      }
    }
  }
}

CostReport cost_and_variance(const std::vector<model::PauliTerm>& hamiltonian,
                             const StateVector& psi, double lambda) {
  StateVector hpsi;
  apply_terms(hamiltonian, psi, hpsi);
  CostReport r;
  r.energy = psi.amps.dot(hpsi.amps);
  r.cost = (hpsi.amps - lambda * psi.amps).squaredNorm();
  const double shifted = r.energy - lambda;
  r.variance = r.cost - shifted * shifted;
  return r;
}

CostEvaluator::CostEvaluator(std::vector<model::PauliTerm> hamiltonian,
                             StateVector init, double lambda)
    : h_(std::move(hamiltonian)), init_(std::move(init)), lambda_(lambda) {
  psi_.n_sites = init_.n_sites;
  hpsi_.n_sites = init_.n_sites;
  psi_.amps.resize(init_.amps.size());
  hpsi_.amps.resize(init_.amps.size());
}

double CostEvaluator::cost(const AnsatzParams& params) {
  return report(params).cost;
}

CostReport CostEvaluator::report(const AnsatzParams& params) {
  psi_.amps = init_.amps;
  for (int l = 0; l < params.layers; ++l)
    apply_layer(psi_, params.angles.data() +
                          static_cast<Eigen::Index>(l) * params.per_layer());
  apply_terms(h_, psi_, hpsi_);
  CostReport r;
  r.energy = psi_.amps.dot(hpsi_.amps);
  hpsi_.amps -= lambda_ * psi_.amps;
  r.cost = hpsi_.amps.squaredNorm();
  const double shifted = r.energy - lambda_;
  r.variance = r.cost - shifted * shifted;
  ++cost_evals_;
  return r;
}

Eigen::VectorXd CostEvaluator::gradient(const AnsatzParams& params) {
  static const double kShift = std::numbers::pi / 4.0;
  AnsatzParams shifted = params;
  Eigen::VectorXd grad(params.angles.size());
  for (Eigen::Index k = 0; k < params.angles.size(); ++k) {
    shifted.angles(k) = params.angles(k) + kShift;
    const double plus = cost(shifted);
    shifted.angles(k) = params.angles(k) - kShift;
    const double minus = cost(shifted);
    shifted.angles(k) = params.angles(k);
    grad(k) = plus - minus;
  }
  return grad;
}

Eigen::VectorXd parameter_shift_gradient(
    const std::vector<model::PauliTerm>& hamiltonian, const StateVector& init,
    const AnsatzParams& params, double lambda) {
  CostEvaluator eval(hamiltonian, init, lambda);
  return eval.gradient(params);
}

}  // namespace vme::circuit
