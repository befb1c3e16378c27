// Copyright 2026 The opdtraj Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "opdtraj/frames.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

namespace opdtraj {

namespace {

Matrix symmetric_generator(int d, int i, int j) {
  Matrix m = Matrix::Zero(d, d);
  m(i, j) = 1.0;
  m(j, i) = 1.0;
  return m;
}

Matrix antisymmetric_generator(int d, int i, int j) {
  Matrix m = Matrix::Zero(d, d);
  m(i, j) = Complex(0, -1);
  m(j, i) = Complex(0, 1);
  return m;
}

Matrix gell_mann_diagonal(int d, int l) {
  Matrix m = Matrix::Zero(d, d);
  const double s = std::sqrt(2.0 / (l * (l + 1.0)));
  for (int k = 0; k < l; ++k) m(k, k) = s;
  m(l, l) = -l * s;
  return m;
}

struct Split {
  int top;
  int width;
  Matrix op;
};

// +a on [lo,mid), -b on [mid,hi) with b² = 2p/(q(p+q)), a = q b / p, where
// p = mid-lo <= q = hi-mid. Then tr σ² = 2, tr σ = 0 and b <= 1.
void collect_splits(int d, int lo, int hi, std::vector<Split>& out) {
  const int n = hi - lo;
  if (n < 2) return;
  const int mid = lo + n / 2;
  const double p = mid - lo;
  const double q = hi - mid;
  const double b = std::sqrt(2.0 * p / (q * (p + q)));
  const double a = q * b / p;
  Matrix m = Matrix::Zero(d, d);
  for (int k = lo; k < mid; ++k) m(k, k) = a;
  for (int k = mid; k < hi; ++k) m(k, k) = -b;
  out.push_back({hi - 1, n, m});
  collect_splits(d, lo, mid, out);
  collect_splits(d, mid, hi, out);
}

std::vector<Matrix> balanced_diagonals(int d) {
  std::vector<Split> splits;
  collect_splits(d, 0, d, splits);
  std::stable_sort(splits.begin(), splits.end(), [](const Split& x, const Split& y) {
    return std::tie(x.top, x.width) < std::tie(y.top, y.width);
  });
  std::vector<Matrix> out;
  for (auto& s : splits) out.push_back(s.op);
  return out;
}

double real_trace_product(const Matrix& a, const Matrix& b) {
  return (a * b).trace().real();
}

}  // namespace

int Frame::index_of(const std::string& label) const {
  for (int i = 0; i < size(); ++i)
    if (labels[i] == label) return i;
  return -1;
}

std::vector<Matrix> hermitian_orthonormal_basis(int d) {
  std::vector<Matrix> basis;
  basis.push_back(identity(d) / std::sqrt(static_cast<double>(d)));
  for (int j = 1; j < d; ++j) {
    for (int i = 0; i < j; ++i) {
      basis.push_back(symmetric_generator(d, i, j) / std::numbers::sqrt2);
      basis.push_back(antisymmetric_generator(d, i, j) / std::numbers::sqrt2);
    }
    basis.push_back(gell_mann_diagonal(d, j) / std::numbers::sqrt2);
  }
  return basis;
}

std::vector<Matrix> generalized_paulis(int d, PauliFrameVariant variant) {
  if (d < 2) throw DimensionError("generalized_paulis: d must be at least 2");
  if (d == 2) return {qubit::sigma_x(), qubit::sigma_y(), qubit::sigma_z()};
  std::vector<Matrix> diagonals;
  if (variant == PauliFrameVariant::balanced) diagonals = balanced_diagonals(d);
  std::vector<Matrix> out;
  for (int j = 1; j < d; ++j) {
    for (int i = 0; i < j; ++i) {
      out.push_back(symmetric_generator(d, i, j));
      out.push_back(antisymmetric_generator(d, i, j));
    }
    out.push_back(variant == PauliFrameVariant::balanced ? diagonals[j - 1]
                                                         : gell_mann_diagonal(d, j));
  }
  return out;
}

std::vector<Matrix> build_dual_frame(const std::vector<Matrix>& elements,
                                     const std::vector<Matrix>& basis) {
  const int n = static_cast<int>(elements.size());
  const int m = static_cast<int>(basis.size());
  RealMatrix t(n, m);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < m; ++b) t(a, b) = real_trace_product(elements[a], basis[b]);
  Eigen::JacobiSVD<RealMatrix> svd(t);
  svd.setThreshold(1e-10);
  const int rank = static_cast<int>(svd.rank());
  if (rank < m) {
    throw SingularFrameError("build_dual_frame: frame spans rank " + std::to_string(rank) +
                                 " of the required " + std::to_string(m),
                             rank, m);
  }
  // Canonical dual: G-coordinates of P_α are the rows of T (TᵀT)^{-1}.
  const RealMatrix coords = t * (t.transpose() * t).inverse();
  std::vector<Matrix> dual;
  for (int a = 0; a < n; ++a) {
    Matrix p = Matrix::Zero(basis[0].rows(), basis[0].cols());
    for (int b = 0; b < m; ++b) p += coords(a, b) * basis[b];
    dual.push_back(hermitian_part(p));
  }
  return dual;
}

Frame make_frame(std::vector<Matrix> elements, std::vector<std::string> labels) {
  if (elements.empty()) throw DimensionError("make_frame: empty element list");
  Frame f;
  f.d = static_cast<int>(elements[0].rows());
  for (const auto& q : elements) {
    if (q.rows() != f.d || q.cols() != f.d) throw DimensionError("make_frame: mixed dimensions");
    if (!is_hermitian(q)) throw NotHermitianError("make_frame: frame element is not Hermitian");
  }
  f.dual = build_dual_frame(elements, hermitian_orthonormal_basis(f.d));
  f.elements = std::move(elements);
  if (labels.empty())
    for (int i = 0; i < f.size(); ++i) labels.push_back(std::to_string(i));
  f.labels = std::move(labels);
  return f;
}

Frame build_pauli_frame(int d, PauliFrameVariant variant) {
  const auto sig = generalized_paulis(d, variant);
  std::vector<Matrix> q;
  Matrix q0 = identity(d) / static_cast<double>(d);
  for (const auto& s : sig) q0 -= 0.5 * s;
  q.push_back(q0);
  for (const auto& s : sig) q.push_back(0.5 * s);
  std::vector<std::string> labels;
  if (d == 2) {
    labels = {"0", "x", "y", "z"};
  } else {
    for (int i = 0; i < d * d; ++i) labels.push_back(std::to_string(i));
  }
  return make_frame(std::move(q), std::move(labels));
}

RealMatrix duality_table(const Frame& frame) {
  const int n = frame.size();
  RealMatrix t(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) t(a, b) = real_trace_product(frame.dual[a], frame.elements[b]);
  return t;
}

int OPDecomposition::branch_position(int alpha) const {
  auto it = std::find(branches.begin(), branches.end(), alpha);
  return it == branches.end() ? -1 : static_cast<int>(it - branches.begin());
}

Matrix OPDecomposition::reconstruct() const {
  Matrix out = Matrix::Zero(dS * dE, dS * dE);
  for (std::size_t k = 0; k < branches.size(); ++k)
    out += weights[k] * tensor_product(frame.elements[branches[k]], env_states[k]);
  return out;
}

Matrix OPDecomposition::reduced_state() const {
  Matrix out = Matrix::Zero(dS, dS);
  for (std::size_t k = 0; k < branches.size(); ++k) out += weights[k] * frame.elements[branches[k]];
  return out;
}

OPDecomposition decompose(const BipartiteState& state, const Frame& frame) {
  if (state.dS() != frame.d) {
    throw DimensionError("decompose: frame dimension " + std::to_string(frame.d) +
                         " differs from system dimension " + std::to_string(state.dS()));
  }
  OPDecomposition out;
  out.frame = frame;
  out.dS = state.dS();
  out.dE = state.dE();
  for (int a = 0; a < frame.size(); ++a) {
    out.splits.push_back(positive_negative_parts(frame.elements[a]));
    // w_α ρ_α = tr_S[(P_α ⊗ 1_E) ρ_SE]
    Matrix x = Matrix::Zero(out.dE, out.dE);
    for (int i = 0; i < out.dS; ++i)
      for (int j = 0; j < out.dS; ++j)
        if (frame.dual[a](i, j) != 0.0)
          x += frame.dual[a](i, j) * state.rho().block(j * out.dE, i * out.dE, out.dE, out.dE);
    x = hermitian_part(x);
    const double w = x.trace().real();
    if (w < kWeightCutoff) {
      if (w < -kWeightCutoff) {
        throw DecompositionError("decompose: negative weight " + std::to_string(w) +
                                     " for frame element " + frame.labels[a],
                                 a);
      }
      out.dropped.push_back(a);
      continue;
    }
    Matrix rho = x / w;
    const EigenSystem es = hermitian_eig(rho);
    const double lmin = es.values(0);
    double clamped = 0.0;
    if (lmin < -kEigenFloor) {
      throw DecompositionError("decompose: environmental state for frame element " +
                                   frame.labels[a] + " has eigenvalue " + std::to_string(lmin),
                               a);
    }
    if (lmin < 0.0) {
      RealVector lam = es.values;
      for (int i = 0; i < lam.size(); ++i) {
        if (lam(i) < 0.0) {
          clamped += -lam(i);
          lam(i) = 0.0;
        }
      }
      lam /= lam.sum();
      rho = es.vectors * lam.cast<Complex>().asDiagonal() * es.vectors.adjoint();
    }
    out.branches.push_back(a);
    out.weights.push_back(w);
    out.env_states.push_back(hermitian_part(rho));
    out.clamped_mass.push_back(clamped);
  }
  return out;
}

std::vector<MapTerm> recombination_terms(const OPDecomposition& decomposition) {
  std::vector<MapTerm> terms;
  for (std::size_t k = 0; k < decomposition.branches.size(); ++k) {
    const int a = decomposition.branches[k];
    const auto& s = decomposition.splits[a];
    const double w = decomposition.weights[k];
    if (s.mu_plus > 0.0) terms.push_back({a, a, +1, w * s.mu_plus});
    if (s.mu_minus > 0.0) terms.push_back({a, a, -1, -w * s.mu_minus});
  }
  return terms;
}

Matrix evaluate_terms(const std::vector<MapTerm>& terms, const EvolvedPairs& evolved) {
  Matrix out;
  for (const auto& term : terms) {
    auto it = evolved.find({term.alpha, term.alpha_prime});
    if (it == evolved.end()) {
      throw Error("evaluate_terms: missing evolved pair (" + std::to_string(term.alpha) + ", " +
                  std::to_string(term.alpha_prime) + ")");
    }
    const Matrix& x = term.sign > 0 ? it->second.plus : it->second.minus;
    if (out.size() == 0) out = Matrix::Zero(x.rows(), x.cols());
    out += term.coefficient * x;
  }
  return out;
}

Matrix recombine(const std::map<int, BranchPair>& evolved, const OPDecomposition& decomposition) {
  EvolvedPairs pairs;
  for (int a : decomposition.branches) {
    auto it = evolved.find(a);
    if (it == evolved.end()) {
      throw Error("recombine: missing evolved branch " + decomposition.frame.labels[a]);
    }
    pairs[{a, a}] = it->second;
  }
  return evaluate_terms(recombination_terms(decomposition), pairs);
}

Matrix CpMap::apply(const Matrix& x) const {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (const auto& k : kraus) out += k * x * k.adjoint();
  return out;
}

CpMap identity_map(int d) { return {"identity", {identity(d)}}; }

CpMap bell_repreparation(int d, int n, int m) {
  Matrix u = Matrix::Zero(d, d);
  for (int k = 0; k < d; ++k)
    u((k + m) % d, k) = std::polar(1.0, 2.0 * std::numbers::pi * k * n / d);
  return {"bell(" + std::to_string(n) + "," + std::to_string(m) + ")", {u}};
}

CpMap zero_discord_repreparation(const std::vector<double>& p) {
  const int d = static_cast<int>(p.size());
  CpMap map{"zero-discord", {}};
  for (int k = 0; k < d; ++k) {
    if (p[k] < 0.0) throw Error("zero_discord_repreparation: negative weight");
    map.kraus.push_back(std::sqrt(p[k]) * ket_bra(d, k, k));
  }
  return map;
}

CpMap factorize_repreparation(int d) {
  CpMap map{"factorize", {}};
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) map.kraus.push_back(s * ket_bra(d, j, k));
  return map;
}

RepreparationMatrix expand_repreparation(const CpMap& map, const Frame& frame) {
  const int n = frame.size();
  RepreparationMatrix r;
  r.entries = RealMatrix::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    const Matrix image = map.apply(frame.elements[a]);
    r.norm_weights.push_back(image.trace().real());
    for (int b = 0; b < n; ++b) r.entries(a, b) = real_trace_product(frame.dual[b], image);
  }
  return r;
}

std::vector<MapTerm> repreparation_terms(const OPDecomposition& decomposition,
                                         const RepreparationMatrix& reprep) {
  double norm = 0.0;
  for (std::size_t k = 0; k < decomposition.branches.size(); ++k)
    norm += decomposition.weights[k] * reprep.norm_weights[decomposition.branches[k]];
  if (std::abs(norm) < 1e-12) {
    throw Error("repreparation_terms: normalization vanishes; the repreparation annihilates "
                "the initial state");
  }
  std::vector<MapTerm> terms;
  for (std::size_t k = 0; k < decomposition.branches.size(); ++k) {
    const int a = decomposition.branches[k];
    for (int b = 0; b < decomposition.frame.size(); ++b) {
      const double r = reprep.entries(a, b);
      if (std::abs(r) < 1e-14) continue;
      const auto& s = decomposition.splits[b];
      const double c = decomposition.weights[k] * r / norm;
      if (s.mu_plus > 0.0) terms.push_back({a, b, +1, c * s.mu_plus});
      if (s.mu_minus > 0.0) terms.push_back({a, b, -1, -c * s.mu_minus});
    }
  }
  return terms;
}

Matrix reprepared_state(const EvolvedPairs& evolved, const OPDecomposition& decomposition,
                        const RepreparationMatrix& reprep) {
  return evaluate_terms(repreparation_terms(decomposition, reprep), evolved);
}

}  // namespace opdtraj
