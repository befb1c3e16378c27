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
#include <vector>

#include "opdtraj/generator.hpp"
#include "opdtraj/operator.hpp"

namespace opdtraj {

inline constexpr int kDefaultOracleCap = 4096;

// U(t) = V e^{-iΛt} V† from one eigendecomposition of H.
class GlobalPropagator {
 public:
  explicit GlobalPropagator(const Matrix& hamiltonian, int cap = kDefaultOracleCap);

  int dim() const { return static_cast<int>(vectors_.rows()); }
  Matrix unitary(double t) const;
  Matrix evolve(const Matrix& rho, double t) const;

 private:
  RealVector values_;
  Matrix vectors_;
};

std::vector<BipartiteState> propagate_global(const Matrix& hamiltonian, const BipartiteState& rho0,
                                             const std::vector<double>& times,
                                             int cap = kDefaultOracleCap);

// Φ_t[X] = tr_E[U(t)(X ⊗ ρ_E)U†(t)] as a d²×d² matrix.
class ReducedMapFamily {
 public:
  ReducedMapFamily(const Matrix& hamiltonian, const Matrix& env_state, int dS,
                   int cap = kDefaultOracleCap);
  ReducedMapFamily(std::shared_ptr<const GlobalPropagator> propagator, const Matrix& env_state,
                   int dS);

  int dS() const { return dS_; }
  int dE() const { return dE_; }
  Matrix at(double t) const;
  Matrix apply(double t, const Matrix& x) const;

 private:
  std::shared_ptr<const GlobalPropagator> propagator_;
  Matrix env_state_;
  int dS_;
  int dE_;
};

Matrix reduced_map(const Matrix& hamiltonian, const Matrix& env_state, int dS, double t,
                   int cap = kDefaultOracleCap);

struct CptpReport {
  double choi_min_eigenvalue = 0.0;
  double trace_preservation_error = 0.0;
  bool cptp = false;
};

CptpReport check_cptp(const Matrix& superop, int d, double psd_tol = 1e-8, double tp_tol = 1e-10);

struct OdeOptions {
  double rtol = 1e-9;
  double atol = 1e-12;
  double initial_step = 1e-3;
  double min_step = 1e-14;
  double max_step = 0.0;  // 0 = unbounded
};

using MatrixOde = std::function<Matrix(double, const Matrix&)>;

// Dormand–Prince 5(4) with embedded error control; returns y at each time.
std::vector<Matrix> integrate_ode(const MatrixOde& f, const Matrix& y0, double t0,
                                  const std::vector<double>& times, const OdeOptions& opts = {});

std::vector<Matrix> lindblad_ode_solve(const Generator& gen, const Matrix& rho0,
                                       const std::vector<double>& times,
                                       const OdeOptions& opts = {});

using MapFamily = std::function<Matrix(double)>;

struct ExtractedGenerator {
  std::vector<double> times;         // grid actually covered
  std::vector<Matrix> superops;      // L_t on that grid
  std::vector<double> condition;     // cond(Φ_t)
  bool truncated = false;
  double truncated_at = 0.0;
};

inline constexpr double kMapConditionLimit = 1e8;

// L_t = Φ̇_t Φ_t^{-1}, five-point central differences with step h. Stops at the first
// grid time where cond(Φ_t) exceeds the limit and records the truncation.
ExtractedGenerator generator_from_maps(const MapFamily& maps, const std::vector<double>& times,
                                       double h, double condition_limit = kMapConditionLimit);

Matrix generator_superop_at(const MapFamily& maps, double t, double h, double* condition = nullptr);

// On-demand generator built from a map family: each sample is the Lindblad
// form of Φ̇_t Φ_t^{-1} at that instant.
Generator generator_from_map_family(const MapFamily& maps, int d, double h,
                                    std::vector<Matrix> basis = {}, double jump_norm = 1.0);

}  // namespace opdtraj
