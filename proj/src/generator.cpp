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

#include "opdtraj/generator.hpp"

#include <algorithm>
#include <cmath>

#include "opdtraj/frames.hpp"

namespace opdtraj {

Matrix GeneratorSample::decay() const {
  const int d = dim();
  Matrix g = Matrix::Zero(d, d);
  for (const auto& c : channels) g += c.rate * c.op.adjoint() * c.op;
  for (const auto& p : pairs) g += p.a_tilde * p.a + p.a * p.a_tilde;
  return g;
}

Matrix GeneratorSample::jump(const Matrix& x) const {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (const auto& c : channels) out += c.rate * c.op * x * c.op.adjoint();
  for (const auto& p : pairs) out += p.a * x * p.a_tilde + p.a_tilde * x * p.a;
  return out;
}

Matrix GeneratorSample::apply(const Matrix& x) const {
  const Complex i(0, 1);
  const Matrix g = decay();
  return -i * (hamiltonian * x - x * hamiltonian) + jump(x) - 0.5 * (g * x + x * g);
}

Matrix GeneratorSample::effective_hamiltonian() const {
  return hamiltonian - Complex(0, 0.5) * decay();
}

bool GeneratorSample::has_negative_rate(double tol) const {
  for (const auto& c : channels)
    if (c.rate < -tol) return true;
  return false;
}

Vector vec(const Matrix& x) {
  const auto d = x.rows();
  Vector v(d * x.cols());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < x.cols(); ++j) v(i * x.cols() + j) = x(i, j);
  return v;
}

Matrix unvec(const Vector& v, int d) {
  Matrix x(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = v(i * d + j);
  return x;
}

Matrix superoperator(const GeneratorSample& sample) {
  const int d = sample.dim();
  Matrix s(d * d, d * d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) s.col(a * d + b) = vec(sample.apply(ket_bra(d, a, b)));
  return s;
}

Matrix apply_superoperator(const Matrix& s, const Matrix& x) {
  const int d = static_cast<int>(x.rows());
  return unvec(s * vec(x), d);
}

Matrix choi_matrix(const Matrix& s, int d) {
  // J = Σ_ab S[|a⟩⟨b|] ⊗ |a⟩⟨b|;  J[(i,a),(j,b)] = S[(i,j),(a,b)]
  Matrix j(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int a = 0; a < d; ++a)
      for (int k = 0; k < d; ++k)
        for (int b = 0; b < d; ++b) j(i * d + a, k * d + b) = s(i * d + k, a * d + b);
  return j;
}

LindbladForm lindblad_form(const Matrix& superop, int d, const std::vector<Matrix>& basis_in,
                           double jump_norm) {
  std::vector<Matrix> basis = basis_in;
  if (basis.empty()) {
    basis = hermitian_orthonormal_basis(d);
    basis.erase(basis.begin());
  }
  std::vector<Matrix> f;
  f.push_back(identity(d) / std::sqrt(static_cast<double>(d)));
  for (const auto& b : basis) f.push_back(b);
  const int n = static_cast<int>(f.size());
  const Matrix choi = choi_matrix(superop, d);
  std::vector<Vector> fv;
  for (const auto& m : f) fv.push_back(vec(m));
  Matrix c(n, n);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l) c(k, l) = fv[k].dot(choi * fv[l]);
  c = hermitian_part(c);

  const double sd = std::sqrt(static_cast<double>(d));
  Matrix fop = c(0, 0) / (2.0 * d) * identity(d);
  for (int i = 1; i < n; ++i) fop += c(i, 0) / sd * f[i];
  const Matrix h = (fop.adjoint() - fop) / Complex(0, 2);

  LindbladForm out;
  out.kossakowski = c.bottomRightCorner(n - 1, n - 1);
  Matrix g = 0.5 * (fop + fop.adjoint());
  for (int i = 1; i < n; ++i)
    for (int j = 1; j < n; ++j) g += 0.5 * c(i, j) * f[j].adjoint() * f[i];
  out.trace_residual = g.norm();

  out.sample.hamiltonian = hermitian_part(h);
  Eigen::SelfAdjointEigenSolver<Matrix> es(out.kossakowski);
  const double s = std::sqrt(jump_norm);
  for (int k = 0; k < n - 1; ++k) {
    Matrix l = Matrix::Zero(d, d);
    for (int i = 0; i < n - 1; ++i) l += es.eigenvectors()(i, k) * f[i + 1];
    out.sample.channels.push_back({es.eigenvalues()(k) / jump_norm, s * l});
  }
  return out;
}

GeneratorSample diagonal_form(const GeneratorSample& sample, double jump_norm) {
  return lindblad_form(superoperator(sample), sample.dim(), {}, jump_norm).sample;
}

Generator::Generator(int dim, Sampler sampler, std::string name)
    : dim_(dim), sampler_(std::move(sampler)), name_(std::move(name)) {}

Generator Generator::constant(GeneratorSample sample, std::string name) {
  const int d = sample.dim();
  auto shared = std::make_shared<const GeneratorSample>(std::move(sample));
  return Generator(d, [shared](double) { return *shared; }, std::move(name));
}

void match_channels(const std::vector<Channel>& prev, std::vector<Channel>& next) {
  if (prev.size() != next.size() || prev.empty()) return;
  const std::size_t n = next.size();
  std::vector<bool> used(n, false);
  std::vector<Channel> ordered(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1.0;
    std::size_t pick = 0;
    Complex overlap(1.0, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      const Complex o = (prev[i].op.adjoint() * next[j].op).trace();
      const double denom = prev[i].op.norm() * next[j].op.norm();
      const double score = denom > 0.0 ? std::abs(o) / denom : 0.0;
      if (score > best) {
        best = score;
        pick = j;
        overlap = o;
      }
    }
    used[pick] = true;
    ordered[i] = next[pick];
    if (std::abs(overlap) > 0.0) ordered[i].op *= std::conj(overlap) / std::abs(overlap);
  }
  next = std::move(ordered);
}

namespace {

bool same_structure(const GeneratorSample& a, const GeneratorSample& b) {
  return a.channels.size() == b.channels.size() && a.pairs.size() == b.pairs.size();
}

GeneratorSample blend(const GeneratorSample& a, const GeneratorSample& b, double f) {
  GeneratorSample out;
  out.hamiltonian = (1.0 - f) * a.hamiltonian + f * b.hamiltonian;
  for (std::size_t k = 0; k < a.channels.size(); ++k) {
    out.channels.push_back({(1.0 - f) * a.channels[k].rate + f * b.channels[k].rate,
                            (1.0 - f) * a.channels[k].op + f * b.channels[k].op});
  }
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    out.pairs.push_back({(1.0 - f) * a.pairs[k].a + f * b.pairs[k].a,
                         (1.0 - f) * a.pairs[k].a_tilde + f * b.pairs[k].a_tilde});
  }
  return out;
}

}  // namespace

Generator tabulate(const Generator& gen, double t0, double dt, int steps, bool to_diagonal,
                   double jump_norm) {
  auto table = std::make_shared<std::vector<GeneratorSample>>();
  table->reserve(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    GeneratorSample s = gen.at(t0 + k * dt);
    if (to_diagonal) s = diagonal_form(s, jump_norm);
    if (!table->empty()) match_channels(table->back().channels, s.channels);
    table->push_back(std::move(s));
  }
  auto sampler = [table, t0, dt, steps](double t) -> GeneratorSample {
    const double s = (t - t0) / dt;
    const double r = std::round(s);
    if (std::abs(s - r) < 1e-9) {
      const int k = std::clamp(static_cast<int>(r), 0, steps);
      return (*table)[k];
    }
    if (s <= 0.0) return table->front();
    if (s >= steps) return table->back();
    const int k = static_cast<int>(std::floor(s));
    const auto& a = (*table)[k];
    const auto& b = (*table)[k + 1];
    if (!same_structure(a, b)) return a;
    return blend(a, b, s - k);
  };
  return Generator(gen.dim(), std::move(sampler), gen.name());
}

}  // namespace opdtraj
