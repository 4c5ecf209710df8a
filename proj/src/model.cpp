#include "vme/model.hpp"

#include <bit>
#include <stdexcept>

#include "vme/hash.hpp"
#include "vme/rng.hpp"

namespace vme::model {

int PauliTerm::y_count() const {
  int c = 0;
  for (Pauli p : letters) c += (p == Pauli::Y);
  return c;
}

std::uint64_t PauliTerm::flip_mask() const {
  std::uint64_t m = 0;
  for (int j = 0; j < n_sites(); ++j)
    if (letters[j] == Pauli::X || letters[j] == Pauli::Y) m |= 1ull << j;
  return m;
}

std::uint64_t PauliTerm::sign_mask() const {
  std::uint64_t m = 0;
  for (int j = 0; j < n_sites(); ++j)
    if (letters[j] == Pauli::Z || letters[j] == Pauli::Y) m |= 1ull << j;
  return m;
}

std::vector<double> HamiltonianSpec::disordered_fields() const {
  // r_j depends on (disorder_seed, j) only.
  const rng::CounterRng base =
      rng::CounterRng(disorder_seed).derive(rng::kTagDisorder);
  std::vector<double> h(static_cast<std::size_t>(n_sites));
  for (int j = 0; j < n_sites; ++j)
    h[static_cast<std::size_t>(j)] =
        field_x + base.uniform(static_cast<std::uint64_t>(j),
                               -disorder_amplitude, disorder_amplitude);
  return h;
}

std::uint64_t HamiltonianSpec::content_hash() const {
  std::uint64_t h = hash::kFnvOffset;
  h = hash::absorb(h, std::string("mfim-ring-v1"));
  h = hash::absorb(h, static_cast<std::uint64_t>(n_sites));
  h = hash::absorb(h, coupling_j);
  h = hash::absorb(h, field_x);
  h = hash::absorb(h, field_z);
  h = hash::absorb(h, disorder_amplitude);
  h = hash::absorb(h, disorder_seed);
  return h;
}

std::vector<PauliTerm> build_mfim(const HamiltonianSpec& spec) {
  const int n = spec.n_sites;
  if (n < 2) throw std::invalid_argument("build_mfim: need at least 2 sites");
  const std::vector<double> hx = spec.disordered_fields();
  std::vector<PauliTerm> terms;
  terms.reserve(static_cast<std::size_t>(3 * n));
  for (int j = 0; j < n; ++j) {
    PauliTerm t;
    t.coeff = spec.coupling_j;
    t.letters.assign(static_cast<std::size_t>(n), Pauli::I);
    t.letters[static_cast<std::size_t>(j)] = Pauli::Z;
    t.letters[static_cast<std::size_t>((j + 1) % n)] = Pauli::Z;
    terms.push_back(std::move(t));
  }
  for (int j = 0; j < n; ++j) {
    PauliTerm t;
    t.coeff = hx[static_cast<std::size_t>(j)];
    t.letters.assign(static_cast<std::size_t>(n), Pauli::I);
    t.letters[static_cast<std::size_t>(j)] = Pauli::X;
    terms.push_back(std::move(t));
  }
  for (int j = 0; j < n; ++j) {
    PauliTerm t;
    t.coeff = spec.field_z;
    t.letters.assign(static_cast<std::size_t>(n), Pauli::I);
    t.letters[static_cast<std::size_t>(j)] = Pauli::Z;
    terms.push_back(std::move(t));
  }
  return terms;
}

Eigen::MatrixXd to_dense(const std::vector<PauliTerm>& terms, int n_sites) {
  if (n_sites < 1 || n_sites > 14)
    throw std::invalid_argument("to_dense: n_sites out of [1,14]");
  const std::size_t dim = std::size_t{1} << n_sites;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                            static_cast<Eigen::Index>(dim));
  for (const PauliTerm& t : terms) {
    if (t.n_sites() != n_sites)
      throw std::invalid_argument("to_dense: term size mismatch");
    const int y = t.y_count();
    if (y % 2 != 0)
      throw std::invalid_argument(
          "to_dense: odd Y count has imaginary matrix elements");
    // P|b> = i^y (-1)^{popcount(b & sign)} |b ^ flip>; even y makes i^y real.
    const double unit = (y / 2) % 2 == 0 ? t.coeff : -t.coeff;
    const std::uint64_t flip = t.flip_mask();
    const std::uint64_t sign = t.sign_mask();
    for (std::uint64_t b = 0; b < dim; ++b) {
      const double v = (std::popcount(b & sign) & 1) ? -unit : unit;
      m(static_cast<Eigen::Index>(b ^ flip), static_cast<Eigen::Index>(b)) += v;
    }
  }
  return m;
}

Observable local_observable(int n_sites, const std::string& kind) {
  if (n_sites < 3)
    throw std::invalid_argument("local_observable: need at least 3 sites");
  const int mid = n_sites / 2;
  Observable obs;
  obs.label = kind;
  PauliTerm t;
  t.coeff = 1.0;
  t.letters.assign(static_cast<std::size_t>(n_sites), Pauli::I);
  if (kind == "Z") {
    t.letters[static_cast<std::size_t>(mid)] = Pauli::Z;
    obs.support = {mid};
  } else if (kind == "X") {
    t.letters[static_cast<std::size_t>(mid)] = Pauli::X;
    obs.support = {mid};
  } else if (kind == "ZZ") {
    t.letters[static_cast<std::size_t>(mid)] = Pauli::Z;
    t.letters[static_cast<std::size_t>(mid + 1)] = Pauli::Z;
    obs.support = {mid, mid + 1};
  } else if (kind == "XX") {
    t.letters[static_cast<std::size_t>(mid)] = Pauli::X;
    t.letters[static_cast<std::size_t>(mid + 1)] = Pauli::X;
    obs.support = {mid, mid + 1};
  } else {
    throw std::invalid_argument("local_observable: unknown kind " + kind);
  }
  obs.terms.push_back(std::move(t));
  return obs;
}

}  // namespace vme::model
