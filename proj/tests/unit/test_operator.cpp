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

#include <doctest.h>

#include <cmath>

#include "opdtraj/frames.hpp"
#include "opdtraj/operator.hpp"

using namespace opdtraj;

namespace {

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

// Explicit index contraction: (tr_E ρ)_{ij} = Σ_a ρ_{(i,a),(j,a)}.
Matrix contract_environment(const Matrix& rho, int dS, int dE) {
  Matrix out = Matrix::Zero(dS, dS);
  for (int i = 0; i < dS; ++i)
    for (int j = 0; j < dS; ++j)
      for (int a = 0; a < dE; ++a) out(i, j) += rho(i * dE + a, j * dE + a);
  return out;
}

Matrix contract_system(const Matrix& rho, int dS, int dE) {
  Matrix out = Matrix::Zero(dE, dE);
  for (int a = 0; a < dE; ++a)
    for (int b = 0; b < dE; ++b)
      for (int i = 0; i < dS; ++i) out(a, b) += rho(i * dE + a, i * dE + b);
  return out;
}

}  // namespace

TEST_CASE("tensor product follows the system-first layout") {
  CHECK(max_abs(tensor_product(identity(2), identity(2)) - identity(4)) == 0.0);

  const Matrix out = tensor_product(qubit::sigma_z(), ket_bra(2, 0, 0));
  Matrix expected = Matrix::Zero(4, 4);
  expected(0, 0) = -1.0;
  expected(2, 2) = 1.0;
  CHECK(max_abs(out - expected) == 0.0);

  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix a = random_hermitian(3, rng);
    const Matrix b = random_hermitian(2, rng);
    CHECK(std::abs(tensor_product(a, b).trace() - a.trace() * b.trace()) < 1e-12);
  }
}

TEST_CASE("partial trace") {
  const BipartiteState prod = BipartiteState::product(ket_bra(2, 0, 0), ket_bra(2, 1, 1));
  CHECK(max_abs(partial_trace(prod, Subsystem::system) - ket_bra(2, 0, 0)) < 1e-15);
  CHECK(max_abs(partial_trace(prod, Subsystem::environment) - ket_bra(2, 1, 1)) < 1e-15);

  Vector psi = Vector::Zero(16);
  for (int k = 0; k < 4; ++k) psi(k * 4 + k) = 0.5;
  const BipartiteState bell = BipartiteState::pure(psi, 4, 4);
  CHECK(max_abs(partial_trace(bell, Subsystem::system) - identity(4) / 4.0) < 1e-15);

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix rho = random_density_matrix(6, rng);
    const BipartiteState st(rho, 2, 3);
    CHECK(max_abs(partial_trace(st, Subsystem::system) - contract_environment(rho, 2, 3)) < 1e-14);
    CHECK(max_abs(partial_trace(st, Subsystem::environment) - contract_system(rho, 2, 3)) < 1e-14);
  }

  for (int rep = 0; rep < 5; ++rep) {
    const Matrix rs = random_density_matrix(3, rng);
    const Matrix re = random_hermitian(4, rng);
    CHECK(max_abs(partial_trace(tensor_product(rs, re), 3, 4, Subsystem::system) -
                  rs * re.trace()) < 1e-12);
  }

  CHECK_THROWS_AS(partial_trace(identity(6), 2, 2, Subsystem::system), DimensionError);
  CHECK_THROWS_AS(BipartiteState(identity(5), 2, 2), DimensionError);
  CHECK_THROWS_AS(BipartiteState(identity(4), 2, 2), InvalidStateError);
}

TEST_CASE("hermitian_eig") {
  const EigenSystem z = hermitian_eig(qubit::sigma_z());
  CHECK(z.values(0) == doctest::Approx(-1.0));
  CHECK(z.values(1) == doctest::Approx(1.0));

  const EigenSystem s = hermitian_eig(qubit::sigma_x() + qubit::sigma_y() + qubit::sigma_z());
  CHECK(std::abs(s.values(0) + std::sqrt(3.0)) < 1e-12);
  CHECK(std::abs(s.values(1) - std::sqrt(3.0)) < 1e-12);

  const Frame f = build_pauli_frame(2);
  const EigenSystem q0 = hermitian_eig(f.elements[0]);
  CHECK(std::abs(q0.values(0) - (1.0 - std::sqrt(3.0)) / 2.0) < 1e-12);
  CHECK(std::abs(q0.values(1) - (1.0 + std::sqrt(3.0)) / 2.0) < 1e-12);

  std::mt19937_64 rng(5);
  for (int d : {2, 3, 5, 8}) {
    const Matrix h = random_hermitian(d, rng);
    const EigenSystem es = hermitian_eig(h);
    const Matrix& v = es.vectors;
    CHECK(max_abs(v * es.values.cast<Complex>().asDiagonal() * v.adjoint() - h) < 1e-10);
    CHECK(max_abs(v.adjoint() * v - identity(d)) < 1e-10);
    for (int i = 1; i < d; ++i) CHECK(es.values(i) >= es.values(i - 1));
  }

  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 1) = 1.0;
  CHECK_THROWS_AS(hermitian_eig(bad), NotHermitianError);
}

TEST_CASE("positive and negative parts") {
  const PositiveNegativeSplit z = positive_negative_parts(qubit::sigma_z());
  CHECK(z.mu_plus == doctest::Approx(1.0));
  CHECK(z.mu_minus == doctest::Approx(1.0));
  CHECK(max_abs(z.sigma_plus - ket_bra(2, 1, 1)) < 1e-14);
  CHECK(max_abs(z.sigma_minus - ket_bra(2, 0, 0)) < 1e-14);

  const Frame f = build_pauli_frame(2);
  const PositiveNegativeSplit q0 = positive_negative_parts(f.elements[0]);
  CHECK(std::abs(q0.mu_plus - (std::sqrt(3.0) + 1.0) / 2.0) < 1e-12);
  CHECK(std::abs(q0.mu_minus - (std::sqrt(3.0) - 1.0) / 2.0) < 1e-12);

  std::mt19937_64 rng(7);
  const Matrix rho = random_density_matrix(3, rng);
  const PositiveNegativeSplit pr = positive_negative_parts(rho);
  CHECK(pr.mu_plus == doctest::Approx(1.0));
  CHECK(pr.mu_minus == 0.0);
  CHECK(max_abs(pr.sigma_plus - rho) < 1e-12);

  for (int rep = 0; rep < 50; ++rep) {
    const int d = 2 + rep % 4;
    const Matrix q = random_hermitian(d, rng);
    const PositiveNegativeSplit s = positive_negative_parts(q);
    CHECK(max_abs(s.mu_plus * s.sigma_plus - s.mu_minus * s.sigma_minus - q) < 1e-12);
    CHECK(std::abs(s.mu_plus - s.mu_minus - q.trace().real()) < 1e-12);
    // q_± = (|q| ± q)/2 as an independent route
    const Matrix absq = operator_abs(q);
    CHECK(max_abs(s.mu_plus * s.sigma_plus - 0.5 * (absq + q)) < 1e-10);
    if (s.mu_plus > 0) CHECK(is_psd(s.sigma_plus));
    if (s.mu_minus > 0) CHECK(is_psd(s.sigma_minus));
  }
}

TEST_CASE("trace distance") {
  std::mt19937_64 rng(9);
  const Matrix rho = random_density_matrix(3, rng);
  const Matrix sigma = random_density_matrix(3, rng);
  CHECK(trace_distance(rho, rho) < 1e-15);
  CHECK(trace_distance(ket_bra(2, 0, 0), ket_bra(2, 1, 1)) == doctest::Approx(1.0));
  CHECK(trace_distance(ket_bra(2, 0, 0), identity(2) / 2.0) == doctest::Approx(0.5));
  CHECK(trace_distance(rho, sigma) == doctest::Approx(trace_distance(sigma, rho)));
  CHECK_THROWS_AS(trace_distance(identity(2), identity(3)), DimensionError);
}

TEST_CASE("qubit operator conventions") {
  const Matrix sm = qubit::sigma_minus();
  const Vector one = basis_ket(2, 1);
  CHECK(max_abs(sm * one - basis_ket(2, 0)) == 0.0);
  const Complex i(0, 1);
  const Matrix comm = qubit::sigma_x() * qubit::sigma_y() - qubit::sigma_y() * qubit::sigma_x();
  CHECK(max_abs(comm - 2.0 * i * qubit::sigma_z()) < 1e-15);
  CHECK(max_abs(qubit::sigma_plus() * qubit::sigma_minus() - ket_bra(2, 1, 1)) == 0.0);
}
