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

#include <Eigen/Dense>
#include <complex>
#include <random>
#include <vector>

#include "opdtraj/errors.hpp"

namespace opdtraj {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;

inline constexpr double kHermitianTol = 1e-10;

// Bipartite index layout is system first everywhere: |i⟩_S|a⟩_E ↦ i*dE + a.
enum class Subsystem { system, environment };

bool is_hermitian(const Matrix& x, double tol = kHermitianTol);
bool is_psd(const Matrix& x, double tol = kHermitianTol);
bool is_trace_one(const Matrix& x, double tol = kHermitianTol);

Matrix hermitian_part(const Matrix& x);
Matrix dagger(const Matrix& x);

Matrix tensor_product(const Matrix& a, const Matrix& b);
Matrix partial_trace(const Matrix& rho, int dS, int dE, Subsystem keep);

class BipartiteState {
 public:
  BipartiteState(Matrix rho, int dS, int dE, double tol = kHermitianTol);

  int dS() const { return dS_; }
  int dE() const { return dE_; }
  const Matrix& rho() const { return rho_; }

  static BipartiteState product(const Matrix& rho_s, const Matrix& rho_e);
  static BipartiteState pure(const Vector& psi, int dS, int dE);

 private:
  struct Trusted {};
  BipartiteState(Matrix rho, int dS, int dE, Trusted);

  Matrix rho_;
  int dS_;
  int dE_;
};

Matrix partial_trace(const BipartiteState& state, Subsystem keep);

struct EigenSystem {
  RealVector values;  // ascending
  Matrix vectors;     // orthonormal columns
};

EigenSystem hermitian_eig(const Matrix& h, double tol = kHermitianTol);

// |X| = sqrt(X†X)
Matrix operator_abs(const Matrix& x);

struct PositiveNegativeSplit {
  double mu_plus = 0.0;
  Matrix sigma_plus;
  double mu_minus = 0.0;
  Matrix sigma_minus;
};

PositiveNegativeSplit positive_negative_parts(const Matrix& q);

double trace_distance(const Matrix& a, const Matrix& b);
double min_eigenvalue(const Matrix& h);

// Small operator zoo.
Matrix identity(int d);
Vector basis_ket(int d, int k);
Matrix projector(const Vector& psi);
Matrix ket_bra(int d, int k, int l);

namespace qubit {
Matrix sigma_x();
Matrix sigma_y();
Matrix sigma_z();
Matrix sigma_plus();   // |1⟩⟨0|
Matrix sigma_minus();  // |0⟩⟨1|
}  // namespace qubit

// Truncated bosonic mode on Fock states 0..cutoff-1.
Matrix annihilation(int cutoff);
Matrix number_operator(int cutoff);

// Random objects for property tests and Monte-Carlo scans.
Vector random_pure_state(int d, std::mt19937_64& rng);
Matrix random_density_matrix(int d, std::mt19937_64& rng, int rank = -1);
Matrix random_hermitian(int d, std::mt19937_64& rng);
Matrix random_unitary(int d, std::mt19937_64& rng);

}  // namespace opdtraj
