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

#include <cstdint>
#include <memory>
#include <vector>

#include "opdtraj/exact.hpp"
#include "opdtraj/generator.hpp"
#include "opdtraj/operator.hpp"
#include "opdtraj/quadrature.hpp"

namespace opdtraj {

// Time-independent decay: L = σ₋ at rate γ.
Generator decay_generator(double gamma);

// ---------------------------------------------------------------- dephasing

// H = H_S⊗1 + 1⊗H_E + Σ_k |k⟩⟨k| ⊗ B_k with diagonal H_S.
struct DephasingModel {
  Matrix h_s;
  Matrix h_e;
  std::vector<Matrix> couplings;  // B_k, one per system level

  int dS() const { return static_cast<int>(h_s.rows()); }
  int dE() const { return static_cast<int>(h_e.rows()); }
  Matrix global_hamiltonian() const;
  void validate() const;
};

// d = 4: H_S = H_E = Ω diag(1,2,3,4), B_k = g(|k⟩⟨k+1| + h.c.) for k < 4, B_4 = 0.
DephasingModel dephasing_d4_model(double g, double omega = 1.0);

// S_ℓ = (Σ_{k<ℓ}|k⟩⟨k| − ℓ|ℓ⟩⟨ℓ|)/sqrt(ℓ(ℓ+1)), ℓ = 1..d-1.
std::vector<Matrix> dephasing_jump_basis(int d);

// S_ℓ followed by the off-diagonal Gell-Mann matrices divided by sqrt(2).
std::vector<Matrix> dephasing_projection_basis(int d);

struct DephasingSample {
  GeneratorSample sample;  // Hamiltonian plus diagonalized S-channels
  Matrix kossakowski;      // K_{kℓ} over S_1..S_{d-1}
  double off_block = 0.0;  // largest coefficient outside the S block
};

DephasingSample dephasing_sample(const MapFamily& maps, int d, double t, double h);

// Generator of Φ_t[X] = tr_E[U(X⊗ρ_α)U†], extracted with step h and projected
// onto the S-channels.
Generator dephasing_generator(const DephasingModel& model, const Matrix& env_state, double h);

// Same, sharing one global eigendecomposition across branches.
Generator dephasing_generator(std::shared_ptr<const GlobalPropagator> propagator,
                              const Matrix& env_state, int dS, double h);

// --------------------------------------------------------------------- APO

struct InteractionTerm {
  Matrix a;  // system side
  Matrix b;  // environment side
};

struct ApoModel {
  Matrix h_s;
  Matrix h_e;
  std::vector<InteractionTerm> terms;
  double coupling = 1.0;

  int dS() const { return static_cast<int>(h_s.rows()); }
  int dE() const { return static_cast<int>(h_e.rows()); }
  Matrix global_hamiltonian() const;  // H_S⊗1 + 1⊗H_E + g Σ A_j⊗B_j
};

struct ApoOptions {
  QuadratureOptions quadrature;
  bool pair_form = true;   // emit (A, Ã) pairs when the structure allows it
  double jump_norm = 1.0;  // normalization of diagonal channels otherwise
};

// Second-order time-local generator in the interaction picture of H_S + H_E:
//   L[X] = -ig Σ_j ⟨B_j(t)⟩[A_j(t),X]
//          - g² Σ_jj' ∫_0^t [A_j(t), A_j'(τ)X] Cov_jj'(t,τ) dτ
//          + g² Σ_jj' ∫_0^t [A_j(t), X A_j'(τ)] Cov_j'j(τ,t) dτ.
class ApoGenerator {
 public:
  ApoGenerator(ApoModel model, Matrix env_state, ApoOptions opts = {});

  int dim() const { return model_.dS(); }
  Matrix superoperator(double t) const;
  GeneratorSample sample(double t) const;
  Generator generator() const;

 private:
  struct Integrals {
    std::vector<Matrix> a;       // A_j(t)
    std::vector<Complex> mean;   // ⟨B_j(t)⟩
    std::vector<Matrix> m;       // Σ_j' ∫ A_j'(τ) Cov_jj'(t,τ)
    std::vector<Matrix> n;       // Σ_j' ∫ A_j'(τ) Cov_j'j(τ,t)
  };
  Integrals integrals(double t) const;
  Matrix heisenberg_system(const Matrix& x, double t) const;
  Matrix heisenberg_environment(const Matrix& x, double t) const;

  ApoModel model_;
  Matrix env_state_;
  ApoOptions opts_;
  EigenSystem sys_eig_;
  EigenSystem env_eig_;
  std::vector<int> active_;  // terms whose A_j is not proportional to 1
};

// --------------------------------------------------------- two-qubit model

struct TwoQubitParams {
  double g = 1.0;
  double omega1 = 1.0;
  double omega2 = 1.0;
  double omega = 1.0;
  double mu = 1.0;
  int cutoff = 8;  // oscillator Fock cutoff
};

// System qubit; environment = qubit ⊗ oscillator. The μ exchange term enters
// with system operator 1.
ApoModel two_qubit_model(const TwoQubitParams& p);

// (|0,0,vac⟩ + |1,1,vac⟩)/sqrt(2)
Vector two_qubit_initial_state(const TwoQubitParams& p);

// Closed form for the 0/x/y branches: H = (g²/ω₁)(1−cos ω₁t)σz,
// pairs A(t) = g[cos σx − sin σy], Ã(t) = (g/ω₁)[sin σx − (1−cos)σy].
GeneratorSample two_qubit_reference_sample(const TwoQubitParams& p, double t);

// Pauli-normalized rates γ_± = (g²/ω₁)(sin ω₁t ± 2 sin(ω₁t/2)).
std::pair<double, double> two_qubit_rates(const TwoQubitParams& p, double t);

// ------------------------------------------------------------ Jaynes-Cummings

// Which channel carries the (n+1) factor.
//   printed  : γ₋ = g² n K on σ₋, γ₊ = g²(n+1) K on σ₊
//   physical : 2g²(n+1) K on σ₋, 2g² n K on σ₊
enum class JcLabeling { printed, physical };

double sin_kernel(double delta, double t);  // sin(Δt)/Δ, → t at Δ = 0
double cos_kernel(double delta, double t);  // (1−cos Δt)/Δ, → 0 at Δ = 0

// ∫_0^t sin(Δs) ds by quadrature.
double shift_integral(double delta, double t);

struct JcRates {
  double sigma_minus_rate = 0.0;
  double sigma_plus_rate = 0.0;
  double emission_shift = 0.0;    // coefficient of σ₊σ₋ in H
  double absorption_shift = 0.0;  // coefficient of σ₋σ₊ in H
};

GeneratorSample jc_sample(const JcRates& r);

JcRates jc_single_mode_rates(double n_alpha, double omega0, double omega, double g, double t,
                             JcLabeling labeling);
Generator jc_single_mode_generator(double n_alpha, double omega0, double omega, double g,
                                   JcLabeling labeling = JcLabeling::printed);

struct JcSingleModeParams {
  double omega0 = 1.0;
  double omega = 0.1;
  double g = 0.5;
  int n0 = 1;
  int n1 = 0;
  int cutoff = -1;  // -1: max(n0, n1) + 8

  int fock_cutoff() const;
};

// H = ω₀/2 σz + ω b†b + g(σ₊⊗b + σ₋⊗b†), truncated.
ApoModel jc_single_mode_model(const JcSingleModeParams& p);
Vector jc_single_mode_initial_state(const JcSingleModeParams& p);  // (|0,n0⟩ + |1,n1⟩)/sqrt(2)

double mean_occupation(const Matrix& env_state);  // tr[n̂ρ]

struct JcContinuumParams {
  double g = 0.05;
  double occupation = 10.0;  // N below the cutoff
  double omega_c = 2.0;
  double omega0 = 1.0;
};

struct FrequencyIntegrals {
  double sin_part = 0.0;  // ∫ ω sin((ω₀−ω)t)/(ω₀−ω) dω over [0, ω_c]
  double cos_part = 0.0;  // ∫ ω (1−cos((ω₀−ω)t))/(ω₀−ω) dω
  double error = 0.0;
};

FrequencyIntegrals jc_frequency_integrals(double omega0, double omega_c, double t, double rtol = 1e-8);

// fraction: weight of the occupied environment component in ρ_α, so that
// n_α(ω) = fraction·N·Θ(ω_c−ω).
JcRates jc_continuum_rates(const JcContinuumParams& p, double fraction, double t,
                           JcLabeling labeling);
Generator jc_continuum_generator(const JcContinuumParams& p, double fraction,
                                 JcLabeling labeling = JcLabeling::printed);

// ------------------------------------------------------- fixed correlations

struct CorrelationOperator {
  Matrix chi;
  Matrix env_state;
  int dS = 0;

  int dE() const { return static_cast<int>(env_state.rows()); }
  void validate() const;
};

CorrelationOperator correlations_of(const BipartiteState& state);

// ρ_SE(λ) = λ|Ψ⟩⟨Ψ| + (1−λ)1/n⊗1/n, maximally entangled |Ψ⟩ = Σ|ii⟩/sqrt(n).
CorrelationOperator lambda_family(int n, double lambda);

double compatibility_margin(const CorrelationOperator& corr, const Matrix& rho_s);
bool compatible_state_check(const CorrelationOperator& corr, const Matrix& rho_s,
                            double tol = 1e-10);

struct FixedCorrelationsSample {
  GeneratorSample sample;  // Lindblad form of L_t plus the Δ channels
  Matrix base;             // L_t as a superoperator
  Matrix delta;            // Δ_t
  RealVector b;            // eigenvalues of Δ_t
  Matrix xi;               // eigenvectors of Δ_t (columns)
  std::vector<double> eta; // rates η_i, i = (j, j')
  double eta_sum = 0.0;
  double condition = 0.0;
};

class FixedCorrelations {
 public:
  FixedCorrelations(const Matrix& hamiltonian, CorrelationOperator corr, double h,
                    int cap = kDefaultOracleCap);

  int dim() const { return corr_.dS; }
  Matrix map(double t) const;           // Φ_t
  Matrix inhomogeneity(double t) const; // I_t
  Matrix evolve(double t, const Matrix& rho_s) const;  // Φ_t[ρ] + I_t
  FixedCorrelationsSample sample(double t) const;
  Generator generator() const;

 private:
  std::shared_ptr<const GlobalPropagator> prop_;
  CorrelationOperator corr_;
  ReducedMapFamily maps_;
  double h_;
};

struct FixedCorrelationsPoint {
  double t = 0.0;
  RealVector b;
  Matrix xi;
  std::vector<double> eta;
  double eta_sum = 0.0;
  double min_eta = 0.0;
};

struct FixedCorrelationsReport {
  std::vector<FixedCorrelationsPoint> points;
  bool truncated = false;
  double truncated_at = 0.0;
};

// Eigen-data of Δ_t on the grid with eigenvectors matched to the previous
// time by overlap; stops at the first ill-conditioned Φ_t.
FixedCorrelationsReport fixed_correlations_diagnostics(const FixedCorrelations& fc,
                                                       const std::vector<double>& times);

// ------------------------------------------------------------- divisibility

struct DivisibilityPoint {
  double t = 0.0;
  double min_rate = 0.0;
  bool cp_divisible = false;
  double kossakowski_min = 0.0;  // min over sampled bases and μ≠ν
  bool p_not_falsified = false;
};

std::vector<DivisibilityPoint> divisibility_report(const Generator& gen,
                                                   const std::vector<double>& times,
                                                   int bases = 200, std::uint64_t seed = 1,
                                                   double tol = 1e-12);

}  // namespace opdtraj
