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

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "opdtraj/operator.hpp"

namespace opdtraj {

// d >= 3 only: how the d-1 diagonal generators are chosen. The off-diagonal
// generators always follow the symmetric/antisymmetric Gell-Mann pattern.
//   gell_mann : diag(1,..,1,-l,0..)/sqrt(l(l+1)/2). 1+σ is not PSD for l >= 2.
//   balanced  : nested halving splits, scaled so tr σ² = 2 and 1+σ >= 0.
enum class PauliFrameVariant { balanced, gell_mann };

struct Frame {
  int d = 0;
  std::vector<Matrix> elements;  // Q_α
  std::vector<Matrix> dual;      // P_α
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(elements.size()); }
  int index_of(const std::string& label) const;
};

// Orthonormal Hermitian basis: 1/sqrt(d) followed by the generalized
// Gell-Mann matrices divided by sqrt(2).
std::vector<Matrix> hermitian_orthonormal_basis(int d);

// The d²-1 traceless generators with tr σ² = 2, in the row-by-row order
// (sym(0,1), asym(0,1), diag_1, sym(0,2), ...). d = 2 returns the qubit
// Paulis (σx, σy, σz) in this library's convention.
std::vector<Matrix> generalized_paulis(int d, PauliFrameVariant variant);

std::vector<Matrix> build_dual_frame(const std::vector<Matrix>& elements,
                                     const std::vector<Matrix>& basis);

Frame make_frame(std::vector<Matrix> elements, std::vector<std::string> labels);
Frame build_pauli_frame(int d, PauliFrameVariant variant = PauliFrameVariant::balanced);

// tr[P_α Q_β]
RealMatrix duality_table(const Frame& frame);

struct OPDecomposition {
  Frame frame;
  int dS = 0;
  int dE = 0;
  std::vector<int> branches;          // frame indices kept (w_α >= cutoff)
  std::vector<double> weights;        // aligned with branches
  std::vector<Matrix> env_states;     // aligned with branches
  std::vector<int> dropped;           // frame indices with w_α below cutoff
  std::vector<double> clamped_mass;   // eigenvalue mass clamped per branch
  std::vector<PositiveNegativeSplit> splits;  // one per frame element

  int branch_position(int alpha) const;  // -1 when not kept
  Matrix reconstruct() const;            // Σ w_α Q_α ⊗ ρ_α
  Matrix reduced_state() const;          // Σ w_α Q_α
};

inline constexpr double kWeightCutoff = 1e-12;
inline constexpr double kEigenFloor = 1e-8;

OPDecomposition decompose(const BipartiteState& state, const Frame& frame);

// Evolved split states Φ^α[Σ^+], Φ^α[Σ^-] (zero matrices where μ = 0).
struct BranchPair {
  Matrix plus;
  Matrix minus;
};

// One term c·Φ^α[Σ_{α'}^{sign}] of a recombination.
struct MapTerm {
  int alpha = 0;
  int alpha_prime = 0;
  int sign = +1;
  double coefficient = 0.0;
};

std::vector<MapTerm> recombination_terms(const OPDecomposition& decomposition);

Matrix recombine(const std::map<int, BranchPair>& evolved, const OPDecomposition& decomposition);

// Completely positive map in operator-sum form X ↦ Σ K X K†.
struct CpMap {
  std::string name;
  std::vector<Matrix> kraus;
  Matrix apply(const Matrix& x) const;
};

CpMap identity_map(int d);
CpMap bell_repreparation(int d, int n, int m);  // |k⟩ ↦ e^{2πikn/d}|k⊕m⟩
CpMap zero_discord_repreparation(const std::vector<double>& p);
CpMap factorize_repreparation(int d);  // X ↦ tr[X]·1/d

struct RepreparationMatrix {
  RealMatrix entries;                // R_{α,α'} = tr[P_α' R[Q_α]]
  std::vector<double> norm_weights;  // tr R[Q_α]
};

RepreparationMatrix expand_repreparation(const CpMap& map, const Frame& frame);

// Terms already divided by the normalization Σ_α w_α tr R[Q_α].
std::vector<MapTerm> repreparation_terms(const OPDecomposition& decomposition,
                                         const RepreparationMatrix& reprep);

using EvolvedPairs = std::map<std::pair<int, int>, BranchPair>;  // (α, α') → pair

Matrix reprepared_state(const EvolvedPairs& evolved, const OPDecomposition& decomposition,
                        const RepreparationMatrix& reprep);

Matrix evaluate_terms(const std::vector<MapTerm>& terms, const EvolvedPairs& evolved);

}  // namespace opdtraj
