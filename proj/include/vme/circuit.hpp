#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vme/model.hpp"

namespace vme::circuit {

// Real-amplitude state on n_sites qubits. The ansatz pool {exp(i th Y_j),
// exp(i ph Y_j Z_k)} and the MFIM Hamiltonian are real orthogonal/symmetric in
// the computational basis, so no imaginary parts ever appear.
struct StateVector {
  int n_sites = 0;
  Eigen::VectorXd amps;

  static StateVector zero_state(int n_sites);
  double norm() const { return amps.norm(); }
  Eigen::Index dim() const { return amps.size(); }
};

struct ProductStateSeed {
  std::uint64_t master_seed = 0;
  int run_index = 0;
};

// Tensor product of (cos ph_j)|0> + (sin ph_j)|1> with ph_j uniform in [0, pi),
// drawn per (master_seed, run_index, j).
StateVector random_product_state(int n_sites, ProductStateSeed seed);

// Layered ansatz angles, layout tag "psa-v1". Per layer, in order:
//   odd-block bond angles   (bonds (s, s+1) with s even, s+1 < N, s ascending)
//   even-block bond angles  (bonds (s, (s+1) mod N) with s odd, s ascending;
//                            for odd N one extra end gate with Y on site 0
//                            and Z on site N-1, placed last)
//   single-site Y angles    (sites 0..N-1)
// Bond gates exp(i ph Y_s Z_{s'}) apply first (odd block, then even block),
// Y rotations exp(i th Y_j) last. 2N angles per layer.
struct AnsatzParams {
  int n_sites = 0;
  int layers = 0;
  Eigen::VectorXd angles;  // layers * 2 * n_sites, layer-major

  static constexpr const char* kLayout = "psa-v1";
  static AnsatzParams zeros(int n_sites, int layers);
  int per_layer() const { return 2 * n_sites; }
  void append_zero_layer();
};

// Bond pattern helpers shared by the kernels and the dense oracle in tests.
struct BondGate {
  int y_site;  // rotation site
  int z_site;  // control-sign site
};
std::vector<BondGate> odd_block_bonds(int n_sites);
std::vector<BondGate> even_block_bonds(int n_sites);  // includes odd-N end gate

void apply_y_rotation(StateVector& psi, int site, double theta);
void apply_bond_gate(StateVector& psi, const BondGate& g, double phi);
void apply_layer(StateVector& psi, const double* layer_angles);

// Returns the circuit applied to a copy of init; init itself is untouched.
[[nodiscard]] StateVector prepare_ansatz_state(const StateVector& init,
                                               const AnsatzParams& params);

// <psi|P|psi>. Terms with odd Y count have exactly zero expectation in a real
// state and return 0.0 without touching the amplitudes.
double expectation(const StateVector& psi, const model::PauliTerm& term);
double expectation(const StateVector& psi,
                   const std::vector<model::PauliTerm>& terms);
double expectation(const StateVector& psi, const model::Observable& obs);

// out = (sum of terms)|psi>. Requires every term to have even Y count.
void apply_terms(const std::vector<model::PauliTerm>& terms,
                 const StateVector& psi, StateVector& out);

struct CostReport {
  double cost = 0.0;      // <(H - lambda)^2>
  double variance = 0.0;  // <H^2> - <H>^2
  double energy = 0.0;    // <H>
};

// Single pass: |phi> = (H - lambda)|psi>, cost = <phi|phi>, no dense H^2.
CostReport cost_and_variance(const std::vector<model::PauliTerm>& hamiltonian,
                             const StateVector& psi, double lambda);

// Reusable buffers for the optimizer's hot loop; counts cost evaluations.
class CostEvaluator {
 public:
  CostEvaluator(std::vector<model::PauliTerm> hamiltonian, StateVector init,
                double lambda);

  double cost(const AnsatzParams& params);
  CostReport report(const AnsatzParams& params);
  // Exact gradient: dC/dtheta_k = C(theta + pi/4 e_k) - C(theta - pi/4 e_k).
  Eigen::VectorXd gradient(const AnsatzParams& params);

  std::uint64_t cost_evals() const { return cost_evals_; }
  double lambda() const { return lambda_; }
  const StateVector& init() const { return init_; }

 private:
  std::vector<model::PauliTerm> h_;
  StateVector init_;
  double lambda_;
  StateVector psi_, hpsi_;
  std::uint64_t cost_evals_ = 0;
};

// Convenience wrapper for tests and one-off evaluations.
Eigen::VectorXd parameter_shift_gradient(
    const std::vector<model::PauliTerm>& hamiltonian, const StateVector& init,
    const AnsatzParams& params, double lambda);

}  // namespace vme::circuit
