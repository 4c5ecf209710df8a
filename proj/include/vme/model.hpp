#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace vme::model {

enum class Pauli : std::uint8_t { I = 0, X = 1, Y = 2, Z = 3 };

// One Pauli string c * P_0 x P_1 x ... x P_{N-1}; site j acts on bit j of the
// computational-basis index (site 0 = least significant bit, bit 0 <-> |0>,
// Z|0> = +|0>).
struct PauliTerm {
  double coeff = 0.0;
  std::vector<Pauli> letters;

  int n_sites() const { return static_cast<int>(letters.size()); }
  int y_count() const;

  // Bit masks for kernel evaluation: flip = X|Y sites, sign = Z|Y sites.
  std::uint64_t flip_mask() const;
  std::uint64_t sign_mask() const;
};

// Mixed-field Ising chain on a ring: sum_j ( J Z_j Z_{j+1} + h_{x,j} X_j + h_z Z_j ),
// site N interpreted as site 0. The transverse field carries weak site disorder
// h_{x,j} = field_x + r_j, r_j uniform in [-disorder_amplitude, +disorder_amplitude]
// drawn from a counter-based stream keyed by (disorder_seed, j), so site fields
// do not change when n_sites changes.
struct HamiltonianSpec {
  int n_sites = 0;
  double coupling_j = 1.0;
  double field_x = -1.05;
  double field_z = 0.5;
  double disorder_amplitude = 0.01;
  std::uint64_t disorder_seed = 1;

  std::vector<double> disordered_fields() const;
  std::uint64_t content_hash() const;
};

// Hermitian sum of Pauli strings with a display label and support sites.
struct Observable {
  std::string label;
  std::vector<PauliTerm> terms;
  std::vector<int> support;
};

// Terms in canonical order: ZZ bonds (j ascending, bond j = (j, j+1 mod N)),
// then X fields, then Z fields. 3N terms, traceless.
std::vector<PauliTerm> build_mfim(const HamiltonianSpec& spec);

// Dense symmetric matrix in the computational basis. Rejects terms whose Y
// count is odd (not representable over the reals); n_sites <= 14.
Eigen::MatrixXd to_dense(const std::vector<PauliTerm>& terms, int n_sites);

// Mid-chain probes: "Z" and "X" at site floor(N/2), "ZZ" and "XX" on sites
// (floor(N/2), floor(N/2)+1). Coefficient 1.
Observable local_observable(int n_sites, const std::string& kind);

}  // namespace vme::model
