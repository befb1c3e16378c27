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

#include "opdtraj/operator.hpp"

#include <unsupported/Eigen/KroneckerProduct>
#include <algorithm>
#include <cmath>
#include <string>

namespace opdtraj {

namespace {

void require_square(const Matrix& x, const char* what) {
  if (x.rows() != x.cols() || x.rows() == 0) {
    throw DimensionError(std::string(what) + ": operator must be square and non-empty");
  }
}

}  // namespace

bool is_hermitian(const Matrix& x, double tol) {
  if (x.rows() != x.cols()) return false;
  return (x - x.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

bool is_psd(const Matrix& x, double tol) {
  if (!is_hermitian(x, tol)) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(x), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

bool is_trace_one(const Matrix& x, double tol) {
  return x.rows() == x.cols() && std::abs(x.trace() - Complex(1.0, 0.0)) <= tol;
}

Matrix hermitian_part(const Matrix& x) { return 0.5 * (x + x.adjoint()); }

Matrix dagger(const Matrix& x) { return x.adjoint(); }

Matrix tensor_product(const Matrix& a, const Matrix& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

Matrix partial_trace(const Matrix& rho, int dS, int dE, Subsystem keep) {
  if (dS <= 0 || dE <= 0 || rho.rows() != dS * dE || rho.cols() != dS * dE) {
    throw DimensionError("partial_trace: operator of side " + std::to_string(rho.rows()) +
                         " does not match dS*dE = " + std::to_string(dS) + "*" +
                         std::to_string(dE));
  }
  if (keep == Subsystem::system) {
    Matrix out = Matrix::Zero(dS, dS);
    for (int i = 0; i < dS; ++i)
      for (int j = 0; j < dS; ++j) out(i, j) = rho.block(i * dE, j * dE, dE, dE).trace();
    return out;
  }
  Matrix out = Matrix::Zero(dE, dE);
  for (int i = 0; i < dS; ++i) out += rho.block(i * dE, i * dE, dE, dE);
  return out;
}

BipartiteState::BipartiteState(Matrix rho, int dS, int dE, double tol)
    : rho_(std::move(rho)), dS_(dS), dE_(dE) {
  if (dS <= 0 || dE <= 0 || rho_.rows() != dS * dE || rho_.cols() != dS * dE) {
    throw DimensionError("BipartiteState: rho has side " + std::to_string(rho_.rows()) +
                         ", expected " + std::to_string(dS * dE));
  }
  if (!is_hermitian(rho_, tol)) throw InvalidStateError("BipartiteState: rho is not Hermitian");
  rho_ = hermitian_part(rho_);
  if (!is_trace_one(rho_, tol)) throw InvalidStateError("BipartiteState: trace differs from one");
  if (min_eigenvalue(rho_) < -tol) throw InvalidStateError("BipartiteState: rho is not PSD");
}

BipartiteState BipartiteState::product(const Matrix& rho_s, const Matrix& rho_e) {
  return BipartiteState(tensor_product(rho_s, rho_e), static_cast<int>(rho_s.rows()),
                        static_cast<int>(rho_e.rows()));
}

BipartiteState::BipartiteState(Matrix rho, int dS, int dE, Trusted)
    : rho_(std::move(rho)), dS_(dS), dE_(dE) {}

// a normalized projector needs no spectral check
BipartiteState BipartiteState::pure(const Vector& psi, int dS, int dE) {
  if (dS <= 0 || dE <= 0 || psi.size() != dS * dE) {
    throw DimensionError("BipartiteState::pure: vector has length " + std::to_string(psi.size()) +
                         ", expected " + std::to_string(dS * dE));
  }
  if (!(psi.norm() > 0.0)) throw InvalidStateError("BipartiteState::pure: zero vector");
  return BipartiteState(projector(psi.normalized()), dS, dE, Trusted{});
}

Matrix partial_trace(const BipartiteState& state, Subsystem keep) {
  return partial_trace(state.rho(), state.dS(), state.dE(), keep);
}

EigenSystem hermitian_eig(const Matrix& h, double tol) {
  require_square(h, "hermitian_eig");
  if (!is_hermitian(h, tol)) throw NotHermitianError("hermitian_eig: input is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(h));
  return {es.eigenvalues(), es.eigenvectors()};
}

Matrix operator_abs(const Matrix& x) {
  require_square(x, "operator_abs");
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(x.adjoint() * x));
  RealVector lam = es.eigenvalues();
  // X†X is PSD up to round-off; tiny negative eigenvalues are clamped.
  for (int i = 0; i < lam.size(); ++i) lam(i) = std::sqrt(std::max(lam(i), 0.0));
  return es.eigenvectors() * lam.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint();
}

PositiveNegativeSplit positive_negative_parts(const Matrix& q) {
  // For Hermitian q, |q| shares eigenvectors with q, so q_± = (|q| ± q)/2 keep
  // the eigenvalues of one sign.
  const EigenSystem es = hermitian_eig(q);
  const auto n = es.values.size();
  RealVector plus(n), minus(n);
  for (int i = 0; i < n; ++i) {
    const double l = es.values(i);
    plus(i) = l > 0.0 ? l : 0.0;
    minus(i) = l < 0.0 ? -l : 0.0;
  }
  const Matrix& v = es.vectors;
  PositiveNegativeSplit out;
  const Matrix qp = v * plus.cast<Complex>().asDiagonal() * v.adjoint();
  const Matrix qm = v * minus.cast<Complex>().asDiagonal() * v.adjoint();
  out.mu_plus = plus.sum();
  out.mu_minus = minus.sum();
  const auto d = q.rows();
  out.sigma_plus = out.mu_plus > 0.0 ? Matrix(qp / out.mu_plus) : Matrix(Matrix::Zero(d, d));
  out.sigma_minus = out.mu_minus > 0.0 ? Matrix(qm / out.mu_minus) : Matrix(Matrix::Zero(d, d));
  return out;
}

double trace_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("trace_distance: dimension mismatch");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(a - b), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

double min_eigenvalue(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(h), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

Matrix identity(int d) { return Matrix::Identity(d, d); }

Vector basis_ket(int d, int k) {
  if (k < 0 || k >= d) throw DimensionError("basis_ket: index out of range");
  Vector v = Vector::Zero(d);
  v(k) = 1.0;
  return v;
}

Matrix projector(const Vector& psi) { return psi * psi.adjoint(); }

Matrix ket_bra(int d, int k, int l) {
  Matrix m = Matrix::Zero(d, d);
  m(k, l) = 1.0;
  return m;
}

namespace qubit {

Matrix sigma_x() {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

Matrix sigma_y() {
  const Complex i(0, 1);
  Matrix m(2, 2);
  m << 0, i, -i, 0;
  return m;
}

Matrix sigma_z() {
  Matrix m(2, 2);
  m << -1, 0, 0, 1;
  return m;
}

Matrix sigma_plus() { return ket_bra(2, 1, 0); }
Matrix sigma_minus() { return ket_bra(2, 0, 1); }

}  // namespace qubit

Matrix annihilation(int cutoff) {
  Matrix b = Matrix::Zero(cutoff, cutoff);
  for (int n = 1; n < cutoff; ++n) b(n - 1, n) = std::sqrt(static_cast<double>(n));
  return b;
}

Matrix number_operator(int cutoff) {
  Matrix n = Matrix::Zero(cutoff, cutoff);
  for (int k = 0; k < cutoff; ++k) n(k, k) = k;
  return n;
}

Vector random_pure_state(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = Complex(g(rng), g(rng));
  return v.normalized();
}

Matrix random_density_matrix(int d, std::mt19937_64& rng, int rank) {
  // Ginibre construction: Hilbert-Schmidt measure for full rank.
  if (rank <= 0) rank = d;
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix a(d, rank);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < rank; ++j) a(i, j) = Complex(g(rng), g(rng));
  Matrix rho = a * a.adjoint();
  rho /= rho.trace();
  return hermitian_part(rho);
}

Matrix random_hermitian(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = Complex(g(rng), g(rng));
  return hermitian_part(a);
}

Matrix random_unitary(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = Complex(g(rng), g(rng));
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j) q.col(j) *= std::polar(1.0, std::arg(r(j, j)));
  return q;
}

}  // namespace opdtraj
