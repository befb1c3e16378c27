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

#include "opdtraj/exact.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace opdtraj {

GlobalPropagator::GlobalPropagator(const Matrix& hamiltonian, int cap) {
  if (hamiltonian.rows() > cap) {
    throw OracleCapError("oracle dimension " + std::to_string(hamiltonian.rows()) +
                         " exceeds the cap " + std::to_string(cap));
  }
  const EigenSystem es = hermitian_eig(hamiltonian);
  values_ = es.values;
  vectors_ = es.vectors;
}

Matrix GlobalPropagator::unitary(double t) const {
  Vector phases(values_.size());
  for (int i = 0; i < values_.size(); ++i) phases(i) = std::polar(1.0, -values_(i) * t);
  return vectors_ * phases.asDiagonal() * vectors_.adjoint();
}

Matrix GlobalPropagator::evolve(const Matrix& rho, double t) const {
  const Matrix u = unitary(t);
  return u * rho * u.adjoint();
}

std::vector<BipartiteState> propagate_global(const Matrix& hamiltonian, const BipartiteState& rho0,
                                             const std::vector<double>& times, int cap) {
  if (hamiltonian.rows() != rho0.rho().rows()) {
    throw DimensionError("propagate_global: Hamiltonian and state dimensions differ");
  }
  const GlobalPropagator prop(hamiltonian, cap);
  std::vector<BipartiteState> out;
  out.reserve(times.size());
  for (double t : times) {
    out.emplace_back(hermitian_part(prop.evolve(rho0.rho(), t)), rho0.dS(), rho0.dE(), 1e-9);
  }
  return out;
}

ReducedMapFamily::ReducedMapFamily(const Matrix& hamiltonian, const Matrix& env_state, int dS,
                                   int cap)
    : ReducedMapFamily(std::make_shared<const GlobalPropagator>(hamiltonian, cap), env_state, dS) {}

ReducedMapFamily::ReducedMapFamily(std::shared_ptr<const GlobalPropagator> propagator,
                                   const Matrix& env_state, int dS)
    : propagator_(std::move(propagator)),
      env_state_(env_state),
      dS_(dS),
      dE_(static_cast<int>(env_state.rows())) {
  if (propagator_->dim() != dS_ * dE_) {
    throw DimensionError("ReducedMapFamily: Hamiltonian dimension " +
                         std::to_string(propagator_->dim()) + " differs from dS*dE = " +
                         std::to_string(dS_ * dE_));
  }
}

Matrix ReducedMapFamily::at(double t) const {
  const Matrix u = propagator_->unitary(t);
  const int d = dS_;
  Matrix s(d * d, d * d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      // U (|a⟩⟨b| ⊗ ρ_E) U† = (U_{:,a-block}) ρ_E (U_{:,b-block})†
      const Matrix left = u.middleCols(a * dE_, dE_) * env_state_;
      const Matrix out = left * u.middleCols(b * dE_, dE_).adjoint();
      s.col(a * d + b) = vec(partial_trace(out, dS_, dE_, Subsystem::system));
    }
  }
  return s;
}

Matrix ReducedMapFamily::apply(double t, const Matrix& x) const {
  const Matrix u = propagator_->unitary(t);
  return partial_trace(u * tensor_product(x, env_state_) * u.adjoint(), dS_, dE_,
                       Subsystem::system);
}

Matrix reduced_map(const Matrix& hamiltonian, const Matrix& env_state, int dS, double t, int cap) {
  return ReducedMapFamily(hamiltonian, env_state, dS, cap).at(t);
}

CptpReport check_cptp(const Matrix& superop, int d, double psd_tol, double tp_tol) {
  CptpReport r;
  r.choi_min_eigenvalue = min_eigenvalue(choi_matrix(superop, d));
  // tr Φ[X] = tr X for all X ⇔ Σ_i S[(i,i),(a,b)] = δ_ab
  double err = 0.0;
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      Complex tr = 0.0;
      for (int i = 0; i < d; ++i) tr += superop(i * d + i, a * d + b);
      err = std::max(err, std::abs(tr - (a == b ? 1.0 : 0.0)));
    }
  }
  r.trace_preservation_error = err;
  r.cptp = r.choi_min_eigenvalue >= -psd_tol && err <= tp_tol;
  return r;
}

namespace {

// Dormand–Prince tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695, e4 = b4 - 393.0 / 640,
                 e5 = b5 + 92097.0 / 339200, e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;

}  // namespace

std::vector<Matrix> integrate_ode(const MatrixOde& f, const Matrix& y0, double t0,
                                  const std::vector<double>& times, const OdeOptions& opts) {
  std::vector<Matrix> out;
  out.reserve(times.size());
  Matrix y = y0;
  double t = t0;
  double h = opts.initial_step;
  Matrix k1 = f(t, y);
  for (double target : times) {
    if (target < t - 1e-15) throw Error("integrate_ode: output times must be non-decreasing");
    while (t < target) {
      double step = std::min(h, target - t);
      if (opts.max_step > 0.0) step = std::min(step, opts.max_step);
      if (step < opts.min_step && target - t > opts.min_step) {
        throw NumericalError("integrate_ode: step size underflow at t = " + std::to_string(t));
      }
      const Matrix k2 = f(t + c2 * step, y + step * (a21 * k1));
      const Matrix k3 = f(t + c3 * step, y + step * (a31 * k1 + a32 * k2));
      const Matrix k4 = f(t + c4 * step, y + step * (a41 * k1 + a42 * k2 + a43 * k3));
      const Matrix k5 =
          f(t + c5 * step, y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const Matrix k6 =
          f(t + step, y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const Matrix ynew = y + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Matrix k7 = f(t + step, ynew);
      const Matrix err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double norm = 0.0;
      for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double scale =
            opts.atol + opts.rtol * std::max(std::abs(y.data()[i]), std::abs(ynew.data()[i]));
        norm = std::max(norm, std::abs(err.data()[i]) / scale);
      }
      if (norm <= 1.0) {
        t = (target - t - step < 1e-15) ? target : t + step;
        y = ynew;
        k1 = k7;
      }
      const double factor = norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
      h = step * factor;
      if (norm > 1.0 && h < opts.min_step) {
        throw NumericalError("integrate_ode: step size underflow at t = " + std::to_string(t));
      }
    }
    out.push_back(y);
  }
  return out;
}

std::vector<Matrix> lindblad_ode_solve(const Generator& gen, const Matrix& rho0,
                                       const std::vector<double>& times, const OdeOptions& opts) {
  if (rho0.rows() != gen.dim()) throw DimensionError("lindblad_ode_solve: dimension mismatch");
  const MatrixOde f = [&gen](double t, const Matrix& x) { return gen.apply(t, x); };
  return integrate_ode(f, rho0, times.empty() ? 0.0 : std::min(0.0, times.front()), times, opts);
}

Matrix generator_superop_at(const MapFamily& maps, double t, double h, double* condition) {
  const Matrix phi = maps(t);
  const Matrix dphi =
      (8.0 * (maps(t + h) - maps(t - h)) - (maps(t + 2 * h) - maps(t - 2 * h))) / (12.0 * h);
  Eigen::JacobiSVD<Matrix> svd(phi);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
  if (condition) *condition = cond;
  // L = Φ̇ Φ^{-1}  ⇔  Φᵀ Lᵀ = Φ̇ᵀ
  return phi.transpose().fullPivLu().solve(dphi.transpose()).transpose();
}

ExtractedGenerator generator_from_maps(const MapFamily& maps, const std::vector<double>& times,
                                       double h, double condition_limit) {
  ExtractedGenerator out;
  for (double t : times) {
    double cond = 0.0;
    Matrix l = generator_superop_at(maps, t, h, &cond);
    if (!(cond < condition_limit)) {
      out.truncated = true;
      out.truncated_at = t;
      break;
    }
    out.times.push_back(t);
    out.superops.push_back(std::move(l));
    out.condition.push_back(cond);
  }
  return out;
}

Generator generator_from_map_family(const MapFamily& maps, int d, double h,
                                    std::vector<Matrix> basis, double jump_norm) {
  auto sampler = [maps, d, h, basis = std::move(basis), jump_norm](double t) {
    double cond = 0.0;
    const Matrix l = generator_superop_at(maps, t, h, &cond);
    if (!(cond < kMapConditionLimit)) {
      throw NumericalError("generator_from_map_family: map is ill-conditioned at t = " +
                           std::to_string(t));
    }
    return lindblad_form(l, d, basis, jump_norm).sample;
  };
  return Generator(d, std::move(sampler));
}

}  // namespace opdtraj
