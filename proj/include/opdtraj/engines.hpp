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
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "opdtraj/frames.hpp"
#include "opdtraj/generator.hpp"
#include "opdtraj/operator.hpp"

namespace opdtraj {

enum class Method { mcwf, nmqj, ro, psi_ro, qsd };

// Ψ-RO choice of C_ψ.
//   zero          : C = 0, the plain rate operator
//   basis_targets : qubit only; Ψ-R_ψ = c_ψ 1 so every jump lands on |0⟩ or |1⟩
enum class PsiRoPolicy { zero, basis_targets };

// QSD drift.
//   norm_preserving : Σγ(⟨L†⟩L − ½L†L − ½|⟨L⟩|²)
//   printed         : Σγ(⟨L†⟩L − L†L − |⟨L⟩|²)
enum class QsdDrift { norm_preserving, printed };

enum class InitialSampling { proportional, multinomial };

Method parse_method(const std::string& name);
std::string to_string(Method m);

struct UnravelConfig {
  Method method = Method::mcwf;
  double dt = 1e-3;
  int n_traj = 1000;
  double t_max = 1.0;
  int output_every = 1;  // record every k-th step
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;  // distinguishes runs sharing a seed
  PsiRoPolicy policy = PsiRoPolicy::basis_targets;
  QsdDrift qsd_drift = QsdDrift::norm_preserving;
  InitialSampling sampling = InitialSampling::proportional;
  int batches = 20;         // NMQJ replicas
  int threads = 0;          // 0: OPDTRAJ_THREADS or hardware concurrency
  double rate_tol = 1e-9;   // |γ| below this counts as zero
  double fidelity_tol = 1e-8;

  int steps() const;
};

int resolve_threads(int requested);

// ------------------------------------------------------------------ stats

// Hermitian d×d matrices as d² real parameters: diagonal, then Re and Im of
// the upper triangle.
RealVector hermitian_params(const Matrix& rho);

struct Estimate {
  Complex mean;
  double se_re = 0.0;
  double se_im = 0.0;
};

// Averaged density operators with the covariance of the mean estimate.
struct Series {
  int d = 0;
  std::vector<double> times;
  std::vector<Matrix> mean;
  std::vector<RealMatrix> cov;

  // tr[O ρ̂(t_k)] with its standard error
  Estimate estimate(std::size_t k, const Matrix& observable) const;
  // ½‖ρ̂ − ref‖₁ and its delta-method standard error
  std::pair<double, double> trace_distance(std::size_t k, const Matrix& reference) const;
};

// ----------------------------------------------------------------- schedule

// Generator samples on the step grid, with everything the steps need
// precomputed once and shared read-only by all trajectories.
struct StepData {
  GeneratorSample sample;  // diagonal channels when the method needs them
  Matrix k_eff;            // H − iΓ/2
  Matrix decay;            // Γ
};

struct Schedule {
  double dt = 0.0;
  int steps = 0;
  int dim = 0;
  std::vector<StepData> data;  // steps entries, data[k] at t = k·dt
  double stiffness = 0.0;      // dt · max_t Σ|γ_j| ‖L_j‖²
  double min_rate = 0.0;
  double min_rate_time = 0.0;
};

Schedule build_schedule(const Generator& gen, double dt, int steps, bool diagonal);

// Last grid time before the first negative rate (t_max when none).
double cp_divisible_until(const Schedule& schedule, double tol);

// ------------------------------------------------------------------- steps

// Jump probabilities γ_j‖L_jψ‖²dt; throws MethodInapplicableError on γ_j < −tol.
std::vector<double> jump_probabilities(const Vector& psi, const GeneratorSample& s, double dt,
                                       double t, double tol);

// One MCWF step given a uniform draw u. Returns the jump channel or -1.
int mcwf_step(Vector& psi, const StepData& step, double dt, double u, double t, double tol);

// Rate operator R_ψ = J[|ψ⟩⟨ψ|], eigenvalues ascending.
EigenSystem rate_operator(const Vector& psi, const GeneratorSample& s);

// One RO / Ψ-RO step. Returns the index of the eigenvector jumped to or -1.
int ro_step(Vector& psi, const StepData& step, double dt, double u, double t, double tol);
int psi_ro_step(Vector& psi, const StepData& step, double dt, double u, double t, double tol,
                PsiRoPolicy policy);

// Raw drift vector f(ψ) of the diffusive update dψ = f dt + Σ√γ(L−⟨L⟩)ψ dW.
Vector qsd_drift(const Vector& psi, const GeneratorSample& s, QsdDrift drift);

// Complex Wiener increments, Re and Im independent with variance dt/2 each.
std::vector<Complex> wiener_increments(std::mt19937_64& rng, int n, double dt);

void qsd_step(Vector& psi, const StepData& step, double dt, const std::vector<Complex>& dw,
              QsdDrift drift, double t, double tol);

// ---------------------------------------------------------------- ensemble

struct EnsembleResult {
  Series series;
  std::int64_t jumps = 0;
  std::int64_t reverse_jumps = 0;
  int max_distinct_states = 0;  // NMQJ registry size
  std::vector<std::string> warnings;
};

// Largest-remainder allocation of n over the weights.
std::vector<int> proportional_allocation(const std::vector<double>& weights, int n);

EnsembleResult run_ensemble(const Generator& gen, const Matrix& rho0, const UnravelConfig& cfg);
EnsembleResult run_ensemble(const Schedule& schedule, const Matrix& rho0, const UnravelConfig& cfg);

bool needs_diagonal_channels(Method m);

// --------------------------------------------------------------- OPD runs

struct OpdRun {
  int generator_class = 0;  // representative branch position
  int alpha_prime = 0;      // frame index of the initial split state
  int sign = +1;
  EnsembleResult result;
};

struct OpdUnravelResult {
  std::vector<int> generator_class;  // per branch position → representative position
  int distinct_generators = 0;
  std::vector<OpdRun> runs;
  std::vector<Series> branch_maps;  // Φ^α_t[Q_α] per branch position
  Series recombined;
  std::vector<std::pair<std::string, Series>> reprepared;
  std::vector<std::string> warnings;
};

struct NamedRepreparation {
  std::string name;
  RepreparationMatrix matrix;
};

// Runs one ensemble per distinct (generator, Σ^±_α') pair needed by the
// recombination and by every repreparation, then combines them. generators
// are aligned with decomposition.branches.
OpdUnravelResult unravel_opd(const OPDecomposition& decomposition,
                             const std::vector<Generator>& generators, const UnravelConfig& cfg,
                             const std::vector<NamedRepreparation>& repreparations = {});

// Same with the step schedules already built (all on cfg's grid).
OpdUnravelResult unravel_opd(const OPDecomposition& decomposition,
                             const std::vector<Schedule>& schedules, const UnravelConfig& cfg,
                             const std::vector<NamedRepreparation>& repreparations = {});

// Schedule restricted to its first `steps` steps.
Schedule truncate_schedule(const Schedule& schedule, int steps);

// Generator classes: branches whose samples agree on the step grid within tol.
std::vector<int> generator_classes(const std::vector<Schedule>& schedules, double tol = 1e-12);

}  // namespace opdtraj
