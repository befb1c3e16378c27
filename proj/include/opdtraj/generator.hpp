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

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "opdtraj/operator.hpp"

namespace opdtraj {

struct Channel {
  double rate = 0.0;
  Matrix op;
};

// J[X] += A X Ã + Ã X A
struct JumpPair {
  Matrix a;
  Matrix a_tilde;
};

// Generator at one instant:
//   L[X] = -i[H,X] + J[X] - ½{Γ,X},  J[X] = Σ γ L X L† + Σ (A X Ã + Ã X A),
// with Γ chosen so that tr L[X] = 0.
struct GeneratorSample {
  Matrix hamiltonian;
  std::vector<Channel> channels;
  std::vector<JumpPair> pairs;

  int dim() const { return static_cast<int>(hamiltonian.rows()); }
  Matrix decay() const;
  Matrix jump(const Matrix& x) const;
  Matrix apply(const Matrix& x) const;
  Matrix effective_hamiltonian() const;  // H - iΓ/2
  bool has_negative_rate(double tol) const;
};

// Superoperators act on row-major vectorizations: vec(X)[i*d+j] = X_ij, so
// X ↦ A X B is A ⊗ Bᵀ.
Vector vec(const Matrix& x);
Matrix unvec(const Vector& v, int d);
Matrix superoperator(const GeneratorSample& sample);
Matrix apply_superoperator(const Matrix& s, const Matrix& x);
Matrix choi_matrix(const Matrix& s, int d);

struct LindbladForm {
  GeneratorSample sample;        // Hamiltonian plus diagonal channels
  Matrix kossakowski;            // coefficients c_ij over the supplied basis
  double trace_residual = 0.0;   // ‖G + ½Σ c_ij F_j†F_i‖, zero for trace preserving maps
};

// GKS decomposition of a superoperator over a traceless orthonormal basis
// {F_i} (defaults to the normalized Gell-Mann matrices). Jump operators are
// rescaled to tr L†L = jump_norm with rates divided accordingly.
LindbladForm lindblad_form(const Matrix& superop, int d, const std::vector<Matrix>& basis = {},
                           double jump_norm = 1.0);

// Rewrites pairs and channels into Hamiltonian plus diagonal channels.
GeneratorSample diagonal_form(const GeneratorSample& sample, double jump_norm = 1.0);

class Generator {
 public:
  using Sampler = std::function<GeneratorSample(double)>;

  Generator() = default;
  Generator(int dim, Sampler sampler, std::string name = {});

  int dim() const { return dim_; }
  const std::string& name() const { return name_; }
  bool valid() const { return static_cast<bool>(sampler_); }

  GeneratorSample at(double t) const { return sampler_(t); }
  Matrix apply(double t, const Matrix& x) const { return sampler_(t).apply(x); }

  static Generator constant(GeneratorSample sample, std::string name = {});

 private:
  int dim_ = 0;
  Sampler sampler_;
  std::string name_;
};

// Samples gen on t0 + k*dt, k = 0..steps, and serves queries from the table
// (exact at grid points, piecewise linear between them). Channels are matched
// to the previous grid point by operator overlap and phase aligned, so rate
// curves stay continuous through eigenvalue crossings.
Generator tabulate(const Generator& gen, double t0, double dt, int steps, bool to_diagonal = false,
                   double jump_norm = 1.0);

// Orders channels of next to follow those of prev.
void match_channels(const std::vector<Channel>& prev, std::vector<Channel>& next);

}  // namespace opdtraj
