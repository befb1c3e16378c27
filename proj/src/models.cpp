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

#include "opdtraj/models.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <string>

namespace opdtraj {

namespace {

Matrix evolution(const EigenSystem& es, double t) {
  Vector phases(es.values.size());
  for (int i = 0; i < es.values.size(); ++i) phases(i) = std::polar(1.0, -es.values(i) * t);
  return es.vectors * phases.asDiagonal() * es.vectors.adjoint();
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

Complex trace_product(const Matrix& a, const Matrix& b) {
  return a.transpose().cwiseProduct(b).sum();
}

// five-point central difference
template <class F>
Matrix derivative(const F& f, double t, double h) {
  return (8.0 * (f(t + h) - f(t - h)) - (f(t + 2 * h) - f(t - 2 * h))) / (12.0 * h);
}

}  // namespace

Generator decay_generator(double gamma) {
  GeneratorSample s;
  s.hamiltonian = Matrix::Zero(2, 2);
  s.channels.push_back({gamma, qubit::sigma_minus()});
  return Generator::constant(std::move(s), "decay");
}

// ---------------------------------------------------------------- dephasing

Matrix DephasingModel::global_hamiltonian() const {
  validate();
  const int ds = dS(), de = dE();
  Matrix h = tensor_product(h_s, identity(de)) + tensor_product(identity(ds), h_e);
  for (int k = 0; k < ds; ++k) h += tensor_product(ket_bra(ds, k, k), couplings[k]);
  return h;
}

void DephasingModel::validate() const {
  if (h_s.rows() != h_s.cols() || h_e.rows() != h_e.cols()) {
    throw DimensionError("dephasing model: free Hamiltonians must be square");
  }
  if (static_cast<int>(couplings.size()) != dS()) {
    throw DimensionError("dephasing model: need one coupling per system level");
  }
  if (!is_hermitian(h_s) || !is_hermitian(h_e)) {
    throw NotHermitianError("dephasing model: free Hamiltonian is not Hermitian");
  }
  if (max_abs(h_s - Matrix(h_s.diagonal().asDiagonal())) > kHermitianTol) {
    throw Error("dephasing model: H_S must be diagonal in the pointer basis");
  }
  for (std::size_t k = 0; k < couplings.size(); ++k) {
    if (couplings[k].rows() != dE() || couplings[k].cols() != dE()) {
      throw DimensionError("dephasing model: coupling B_" + std::to_string(k) +
                           " has the wrong dimension");
    }
    if (!is_hermitian(couplings[k])) {
      throw NotHermitianError("dephasing model: coupling B_" + std::to_string(k) +
                              " is not Hermitian");
    }
  }
}

DephasingModel dephasing_d4_model(double g, double omega) {
  DephasingModel m;
  m.h_s = Matrix::Zero(4, 4);
  for (int k = 0; k < 4; ++k) m.h_s(k, k) = omega * (k + 1);
  m.h_e = m.h_s;
  for (int k = 0; k < 4; ++k) {
    Matrix b = Matrix::Zero(4, 4);
    if (k < 3) b = g * (ket_bra(4, k, k + 1) + ket_bra(4, k + 1, k));
    m.couplings.push_back(b);
  }
  return m;
}

std::vector<Matrix> dephasing_jump_basis(int d) {
  std::vector<Matrix> out;
  for (int l = 1; l < d; ++l) {
    Matrix s = Matrix::Zero(d, d);
    for (int k = 0; k < l; ++k) s(k, k) = 1.0;
    s(l, l) = -static_cast<double>(l);
    out.push_back(s / std::sqrt(static_cast<double>(l * (l + 1))));
  }
  return out;
}

std::vector<Matrix> dephasing_projection_basis(int d) {
  std::vector<Matrix> out = dephasing_jump_basis(d);
  const double r = 1.0 / std::sqrt(2.0);
  const Complex i(0, 1);
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      out.push_back(r * (ket_bra(d, a, b) + ket_bra(d, b, a)));
      out.push_back(r * (-i * ket_bra(d, a, b) + i * ket_bra(d, b, a)));
    }
  }
  return out;
}

DephasingSample dephasing_sample(const MapFamily& maps, int d, double t, double h) {
  double cond = 0.0;
  const Matrix l = generator_superop_at(maps, t, h, &cond);
  if (!(cond < kMapConditionLimit)) {
    throw NumericalError("dephasing generator: map is ill-conditioned at t = " + std::to_string(t));
  }
  const std::vector<Matrix> basis = dephasing_projection_basis(d);
  const LindbladForm lf = lindblad_form(l, d, basis);
  const int m = d - 1;

  DephasingSample out;
  out.kossakowski = hermitian_part(lf.kossakowski.topLeftCorner(m, m));
  Matrix rest = lf.kossakowski;
  rest.topLeftCorner(m, m).setZero();
  out.off_block = max_abs(rest);

  out.sample.hamiltonian = lf.sample.hamiltonian;
  const EigenSystem es = hermitian_eig(out.kossakowski);
  for (int k = 0; k < m; ++k) {
    Matrix op = Matrix::Zero(d, d);
    for (int i = 0; i < m; ++i) op += es.vectors(i, k) * basis[i];
    out.sample.channels.push_back({es.values(k), op});
  }
  return out;
}

Generator dephasing_generator(const DephasingModel& model, const Matrix& env_state, double h) {
  return dephasing_generator(std::make_shared<const GlobalPropagator>(model.global_hamiltonian()),
                             env_state, model.dS(), h);
}

Generator dephasing_generator(std::shared_ptr<const GlobalPropagator> propagator,
                              const Matrix& env_state, int dS, double h) {
  auto maps = std::make_shared<const ReducedMapFamily>(std::move(propagator), env_state, dS);
  const MapFamily family = [maps](double t) { return maps->at(t); };
  return Generator(
      dS, [family, dS, h](double t) { return dephasing_sample(family, dS, t, h).sample; },
      "dephasing");
}

// --------------------------------------------------------------------- APO

Matrix ApoModel::global_hamiltonian() const {
  Matrix h = tensor_product(h_s, identity(dE())) + tensor_product(identity(dS()), h_e);
  for (const auto& term : terms) h += coupling * tensor_product(term.a, term.b);
  return h;
}

ApoGenerator::ApoGenerator(ApoModel model, Matrix env_state, ApoOptions opts)
    : model_(std::move(model)), env_state_(std::move(env_state)), opts_(opts) {
  if (env_state_.rows() != model_.dE()) {
    throw DimensionError("apo generator: environment state has the wrong dimension");
  }
  for (const auto& term : model_.terms) {
    if (term.a.rows() != model_.dS() || term.b.rows() != model_.dE()) {
      throw DimensionError("apo generator: interaction term has the wrong dimension");
    }
  }
  sys_eig_ = hermitian_eig(model_.h_s);
  env_eig_ = hermitian_eig(model_.h_e);
  const int d = model_.dS();
  for (std::size_t j = 0; j < model_.terms.size(); ++j) {
    const Matrix& a = model_.terms[j].a;
    const Matrix traceless = a - a.trace() / static_cast<double>(d) * identity(d);
    // A ∝ 1 commutes with everything and drops out of every term
    if (max_abs(traceless) > 1e-14 * std::max(1.0, max_abs(a))) active_.push_back(static_cast<int>(j));
  }
}

Matrix ApoGenerator::heisenberg_system(const Matrix& x, double t) const {
  const Matrix u = evolution(sys_eig_, t);
  return u.adjoint() * x * u;
}

Matrix ApoGenerator::heisenberg_environment(const Matrix& x, double t) const {
  const Matrix u = evolution(env_eig_, t);
  return u.adjoint() * x * u;
}

ApoGenerator::Integrals ApoGenerator::integrals(double t) const {
  const int d = model_.dS();
  const int nt = static_cast<int>(model_.terms.size());
  const int na = static_cast<int>(active_.size());
  Integrals out;
  std::vector<Matrix> r(nt), s(nt);
  for (int j = 0; j < nt; ++j) {
    out.a.push_back(heisenberg_system(model_.terms[j].a, t));
    const Matrix bt = heisenberg_environment(model_.terms[j].b, t);
    out.mean.push_back(trace_product(env_state_, bt));
    r[j] = env_state_ * bt;  // tr[ρ B_j(t) X] = tr[r_j X]
    s[j] = bt * env_state_;  // tr[ρ X B_j(t)] = tr[s_j X]
  }
  // columns [M_0 .. M_{na-1} | N_0 .. N_{na-1}]
  auto integrand = [&](double tau) -> Matrix {
    Matrix acc = Matrix::Zero(d, 2 * na * d);
    for (int jp = 0; jp < nt; ++jp) {
      const Matrix atau = heisenberg_system(model_.terms[jp].a, tau);
      const Matrix btau = heisenberg_environment(model_.terms[jp].b, tau);
      const Complex mtau = trace_product(env_state_, btau);
      for (int k = 0; k < na; ++k) {
        const int j = active_[k];
        const Complex cov = trace_product(r[j], btau) - out.mean[j] * mtau;      // Cov_jj'(t,τ)
        const Complex cov_rev = trace_product(s[j], btau) - mtau * out.mean[j];  // Cov_j'j(τ,t)
        acc.middleCols(k * d, d) += cov * atau;
        acc.middleCols((na + k) * d, d) += cov_rev * atau;
      }
    }
    return acc;
  };
  const QuadratureResult q = integrate_matrix(integrand, 0.0, t, opts_.quadrature);
  for (int k = 0; k < na; ++k) {
    out.m.push_back(q.value.middleCols(k * d, d));
    out.n.push_back(q.value.middleCols((na + k) * d, d));
  }
  return out;
}

Matrix ApoGenerator::superoperator(double t) const {
  const int d = model_.dS();
  const double g = model_.coupling;
  const Integrals in = integrals(t);
  const Complex i(0, 1);
  Matrix sup(d * d, d * d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      const Matrix x = ket_bra(d, a, b);
      Matrix y = Matrix::Zero(d, d);
      for (std::size_t k = 0; k < active_.size(); ++k) {
        const int j = active_[k];
        const Matrix& aj = in.a[j];
        y += -i * g * in.mean[j] * (aj * x - x * aj);
        const Matrix mx = in.m[k] * x;
        const Matrix xn = x * in.n[k];
        y += -g * g * (aj * mx - mx * aj) + g * g * (aj * xn - xn * aj);
      }
      sup.col(a * d + b) = vec(y);
    }
  }
  return sup;
}

GeneratorSample ApoGenerator::sample(double t) const {
  const int d = model_.dS();
  const double g = model_.coupling;
  if (opts_.pair_form) {
    const Integrals in = integrals(t);
    bool ok = true;
    for (std::size_t k = 0; k < active_.size() && ok; ++k) {
      const int j = active_[k];
      const double scale = std::max(1.0, max_abs(in.m[k]));
      ok = is_hermitian(in.a[j]) && max_abs(in.m[k] - in.m[k].adjoint()) <= 1e-9 * scale &&
           max_abs(in.m[k] - in.n[k]) <= 1e-9 * scale &&
           std::abs(in.mean[j].imag()) <= 1e-12 * std::max(1.0, std::abs(in.mean[j]));
    }
    if (ok) {
      GeneratorSample s;
      s.hamiltonian = Matrix::Zero(d, d);
      for (std::size_t k = 0; k < active_.size(); ++k) {
        const int j = active_[k];
        const Matrix& aj = in.a[j];
        const Matrix mk = hermitian_part(in.m[k]);
        s.hamiltonian += g * in.mean[j].real() * aj;
        s.hamiltonian += g * g * (aj * mk - mk * aj) / Complex(0, 2);
        s.pairs.push_back({g * hermitian_part(aj), g * mk});
      }
      s.hamiltonian = hermitian_part(s.hamiltonian);
      return s;
    }
  }
  return lindblad_form(superoperator(t), d, {}, opts_.jump_norm).sample;
}

Generator ApoGenerator::generator() const {
  auto self = std::make_shared<const ApoGenerator>(*this);
  return Generator(dim(), [self](double t) { return self->sample(t); }, "apo");
}

// --------------------------------------------------------- two-qubit model

ApoModel two_qubit_model(const TwoQubitParams& p) {
  const int c = p.cutoff;
  if (c < 1) throw Error("two-qubit model: oscillator cutoff must be positive");
  const Matrix b = annihilation(c);
  ApoModel m;
  m.h_s = 0.5 * p.omega1 * qubit::sigma_z();
  m.h_e = 0.5 * p.omega2 * tensor_product(qubit::sigma_z(), identity(c)) +
          p.omega * tensor_product(identity(2), number_operator(c));
  m.terms.push_back({qubit::sigma_x(), p.g * tensor_product(qubit::sigma_z(), identity(c))});
  m.terms.push_back({identity(2), p.mu * (tensor_product(qubit::sigma_plus(), b) +
                                          tensor_product(qubit::sigma_minus(), b.adjoint()))});
  m.coupling = 1.0;
  return m;
}

Vector two_qubit_initial_state(const TwoQubitParams& p) {
  const int de = 2 * p.cutoff;
  Vector psi = Vector::Zero(2 * de);
  psi(0) = 1.0 / std::sqrt(2.0);                   // |0⟩|0⟩|vac⟩
  psi(de + p.cutoff) = 1.0 / std::sqrt(2.0);       // |1⟩|1⟩|vac⟩
  return psi;
}

GeneratorSample two_qubit_reference_sample(const TwoQubitParams& p, double t) {
  const double th = p.omega1 * t;
  const double c = std::cos(th), s = std::sin(th);
  GeneratorSample out;
  out.hamiltonian = p.g * p.g / p.omega1 * (1.0 - c) * qubit::sigma_z();
  const Matrix a = p.g * (c * qubit::sigma_x() - s * qubit::sigma_y());
  const Matrix at = p.g / p.omega1 * (s * qubit::sigma_x() - (1.0 - c) * qubit::sigma_y());
  out.pairs.push_back({a, at});
  return out;
}

std::pair<double, double> two_qubit_rates(const TwoQubitParams& p, double t) {
  const double th = p.omega1 * t;
  const double k = p.g * p.g / p.omega1;
  return {k * (std::sin(th) + 2.0 * std::sin(0.5 * th)), k * (std::sin(th) - 2.0 * std::sin(0.5 * th))};
}

// ------------------------------------------------------------ Jaynes-Cummings

double sin_kernel(double delta, double t) {
  return delta == 0.0 ? t : std::sin(delta * t) / delta;
}

double cos_kernel(double delta, double t) {
  if (delta == 0.0) return 0.0;
  const double s = std::sin(0.5 * delta * t);
  return 2.0 * s * s / delta;
}

double shift_integral(double delta, double t) {
  if (t == 0.0) return 0.0;
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      [delta](double s) { return std::sin(delta * s); }, 0.0, t, 15, 1e-12, &err);
  return v;
}

GeneratorSample jc_sample(const JcRates& r) {
  GeneratorSample s;
  const Matrix sp = qubit::sigma_plus(), sm = qubit::sigma_minus();
  s.hamiltonian = r.emission_shift * sp * sm + r.absorption_shift * sm * sp;
  s.channels.push_back({r.sigma_minus_rate, sm});
  s.channels.push_back({r.sigma_plus_rate, sp});
  return s;
}

namespace {

JcRates jc_rates_from(double emission, double absorption, double kernel, double shift,
                      JcLabeling labeling) {
  JcRates r;
  // emission = coupling weight times (n+1), absorption = coupling weight times n
  r.emission_shift = emission * shift;
  r.absorption_shift = -absorption * shift;
  if (labeling == JcLabeling::printed) {
    r.sigma_minus_rate = absorption * kernel;
    r.sigma_plus_rate = emission * kernel;
  } else {
    r.sigma_minus_rate = 2.0 * emission * kernel;
    r.sigma_plus_rate = 2.0 * absorption * kernel;
  }
  return r;
}

}  // namespace

JcRates jc_single_mode_rates(double n_alpha, double omega0, double omega, double g, double t,
                             JcLabeling labeling) {
  const double delta = omega0 - omega;
  const double g2 = g * g;
  return jc_rates_from(g2 * (n_alpha + 1.0), g2 * n_alpha, sin_kernel(delta, t),
                       shift_integral(delta, t), labeling);
}

Generator jc_single_mode_generator(double n_alpha, double omega0, double omega, double g,
                                   JcLabeling labeling) {
  if (!std::isfinite(n_alpha) || n_alpha < 0.0) throw Error("jc single mode: n_alpha must be >= 0");
  return Generator(
      2,
      [=](double t) { return jc_sample(jc_single_mode_rates(n_alpha, omega0, omega, g, t, labeling)); },
      "jc-single-mode");
}

int JcSingleModeParams::fock_cutoff() const {
  return cutoff > 0 ? cutoff : std::max(n0, n1) + 9;
}

ApoModel jc_single_mode_model(const JcSingleModeParams& p) {
  const int c = p.fock_cutoff();
  if (std::max(p.n0, p.n1) >= c) throw Error("jc single mode: Fock cutoff below the initial occupation");
  const Matrix b = annihilation(c);
  ApoModel m;
  m.h_s = 0.5 * p.omega0 * qubit::sigma_z();
  m.h_e = p.omega * number_operator(c);
  m.terms.push_back({qubit::sigma_plus(), p.g * b});
  m.terms.push_back({qubit::sigma_minus(), p.g * b.adjoint()});
  return m;
}

Vector jc_single_mode_initial_state(const JcSingleModeParams& p) {
  const int c = p.fock_cutoff();
  Vector psi = Vector::Zero(2 * c);
  psi(p.n0) += 1.0 / std::sqrt(2.0);
  psi(c + p.n1) += 1.0 / std::sqrt(2.0);
  return psi;
}

double mean_occupation(const Matrix& env_state) {
  return trace_product(number_operator(static_cast<int>(env_state.rows())), env_state).real();
}

FrequencyIntegrals jc_frequency_integrals(double omega0, double omega_c, double t, double rtol) {
  using boost::math::quadrature::gauss_kronrod;
  FrequencyIntegrals out;
  if (t == 0.0) return out;
  double e1 = 0.0, e2 = 0.0;
  out.sin_part = gauss_kronrod<double, 61>::integrate(
      [=](double w) { return w * sin_kernel(omega0 - w, t); }, 0.0, omega_c, 20, rtol, &e1);
  out.cos_part = gauss_kronrod<double, 61>::integrate(
      [=](double w) { return w * cos_kernel(omega0 - w, t); }, 0.0, omega_c, 20, rtol, &e2);
  out.error = std::max(e1, e2);
  const double scale = std::max(std::abs(out.sin_part), std::abs(out.cos_part));
  if (out.error > 10.0 * rtol * scale + 1e-13) {
    throw NumericalError("frequency quadrature did not converge at t = " + std::to_string(t) +
                         ", estimated error " + std::to_string(out.error));
  }
  return out;
}

JcRates jc_continuum_rates(const JcContinuumParams& p, double fraction, double t,
                           JcLabeling labeling) {
  const FrequencyIntegrals f = jc_frequency_integrals(p.omega0, p.omega_c, t);
  const double n = fraction * p.occupation;
  // J(ω) = gω: the (n+1) and n weights factor out of the ω integrals
  return jc_rates_from(p.g * (n + 1.0), p.g * n, f.sin_part, f.cos_part, labeling);
}

Generator jc_continuum_generator(const JcContinuumParams& p, double fraction, JcLabeling labeling) {
  if (!(p.omega_c > p.omega0 && p.omega0 > 0.0)) {
    throw Error("jc continuum: need omega_c > omega0 > 0");
  }
  return Generator(
      2, [=](double t) { return jc_sample(jc_continuum_rates(p, fraction, t, labeling)); },
      "jc-continuum");
}

// ------------------------------------------------------- fixed correlations

void CorrelationOperator::validate() const {
  if (chi.rows() != dS * dE() || chi.cols() != chi.rows()) {
    throw DimensionError("correlation operator: chi must be (dS*dE) square");
  }
  if (!is_hermitian(chi)) throw NotHermitianError("correlation operator: chi is not Hermitian");
  if (std::abs(chi.trace()) > kHermitianTol) {
    throw InvalidStateError("correlation operator: chi must be traceless");
  }
  if (!is_hermitian(env_state) || !is_psd(env_state) || !is_trace_one(env_state)) {
    throw InvalidStateError("correlation operator: environment state is not a density matrix");
  }
}

CorrelationOperator correlations_of(const BipartiteState& state) {
  CorrelationOperator c;
  const Matrix rs = partial_trace(state, Subsystem::system);
  c.env_state = partial_trace(state, Subsystem::environment);
  c.dS = state.dS();
  c.chi = state.rho() - tensor_product(rs, c.env_state);
  return c;
}

CorrelationOperator lambda_family(int n, double lambda) {
  if (n < 2 || lambda < 0.0 || lambda > 1.0) throw Error("lambda family: need n >= 2, 0 <= lambda <= 1");
  Vector psi = Vector::Zero(n * n);
  for (int i = 0; i < n; ++i) psi(i * n + i) = 1.0 / std::sqrt(static_cast<double>(n));
  CorrelationOperator c;
  c.dS = n;
  c.env_state = identity(n) / static_cast<double>(n);
  c.chi = lambda * (projector(psi) - identity(n * n) / static_cast<double>(n * n));
  return c;
}

double compatibility_margin(const CorrelationOperator& corr, const Matrix& rho_s) {
  if (rho_s.rows() != corr.dS) throw DimensionError("compatibility: system dimension mismatch");
  return min_eigenvalue(hermitian_part(tensor_product(rho_s, corr.env_state) + corr.chi));
}

bool compatible_state_check(const CorrelationOperator& corr, const Matrix& rho_s, double tol) {
  return compatibility_margin(corr, rho_s) >= -tol;
}

FixedCorrelations::FixedCorrelations(const Matrix& hamiltonian, CorrelationOperator corr, double h,
                                     int cap)
    : prop_(std::make_shared<const GlobalPropagator>(hamiltonian, cap)),
      corr_(std::move(corr)),
      maps_(prop_, corr_.env_state, corr_.dS),
      h_(h) {
  corr_.validate();
}

Matrix FixedCorrelations::map(double t) const { return maps_.at(t); }

Matrix FixedCorrelations::inhomogeneity(double t) const {
  return partial_trace(prop_->evolve(corr_.chi, t), corr_.dS, corr_.dE(), Subsystem::system);
}

Matrix FixedCorrelations::evolve(double t, const Matrix& rho_s) const {
  return maps_.apply(t, rho_s) + inhomogeneity(t);
}

FixedCorrelationsSample FixedCorrelations::sample(double t) const {
  const int d = corr_.dS;
  FixedCorrelationsSample out;
  const MapFamily family = [this](double s) { return maps_.at(s); };
  out.base = generator_superop_at(family, t, h_, &out.condition);
  if (!(out.condition < kMapConditionLimit)) {
    throw NumericalError("fixed correlations: map is ill-conditioned at t = " + std::to_string(t));
  }
  const Matrix idot = derivative([this](double s) { return inhomogeneity(s); }, t, h_);
  out.delta = hermitian_part(idot - apply_superoperator(out.base, inhomogeneity(t)));
  const EigenSystem es = hermitian_eig(out.delta);
  out.b = es.values;
  out.xi = es.vectors;

  out.sample = lindblad_form(out.base, d).sample;
  for (int j = 0; j < d; ++j) {
    for (int jp = 0; jp < d; ++jp) {
      Matrix jump = out.xi.col(j) * out.xi.col(jp).adjoint();
      jump -= jump.trace() / static_cast<double>(d) * identity(d);
      out.sample.channels.push_back({out.b(j), jump});
      out.eta.push_back(out.b(j));
      out.eta_sum += out.b(j);
    }
  }
  return out;
}

Generator FixedCorrelations::generator() const {
  auto self = std::make_shared<const FixedCorrelations>(*this);
  return Generator(dim(), [self](double t) { return self->sample(t).sample; }, "fixed-correlations");
}

FixedCorrelationsReport fixed_correlations_diagnostics(const FixedCorrelations& fc,
                                                       const std::vector<double>& times) {
  FixedCorrelationsReport rep;
  const int d = fc.dim();
  for (double t : times) {
    FixedCorrelationsSample s;
    try {
      s = fc.sample(t);
    } catch (const NumericalError&) {
      rep.truncated = true;
      rep.truncated_at = t;
      break;
    }
    FixedCorrelationsPoint p;
    p.t = t;
    p.b = s.b;
    p.xi = s.xi;
    if (!rep.points.empty()) {
      const auto& prev = rep.points.back();
      std::vector<bool> used(d, false);
      for (int i = 0; i < d; ++i) {
        int pick = 0;
        double best = -1.0;
        for (int j = 0; j < d; ++j) {
          if (used[j]) continue;
          const double o = std::abs(prev.xi.col(i).dot(s.xi.col(j)));
          if (o > best) {
            best = o;
            pick = j;
          }
        }
        used[pick] = true;
        const Complex ov = prev.xi.col(i).dot(s.xi.col(pick));
        p.b(i) = s.b(pick);
        p.xi.col(i) = s.xi.col(pick) * (std::abs(ov) > 0 ? std::conj(ov) / std::abs(ov) : 1.0);
      }
    }
    p.eta = s.eta;
    p.eta_sum = s.eta_sum;
    p.min_eta = s.eta.empty() ? 0.0 : *std::min_element(s.eta.begin(), s.eta.end());
    rep.points.push_back(std::move(p));
  }
  return rep;
}

// ------------------------------------------------------------- divisibility

std::vector<DivisibilityPoint> divisibility_report(const Generator& gen,
                                                   const std::vector<double>& times, int bases,
                                                   std::uint64_t seed, double tol) {
  std::vector<DivisibilityPoint> out;
  const int d = gen.dim();
  for (double t : times) {
    const GeneratorSample s = diagonal_form(gen.at(t));
    DivisibilityPoint p;
    p.t = t;
    p.min_rate = std::numeric_limits<double>::infinity();
    for (const auto& c : s.channels) p.min_rate = std::min(p.min_rate, c.rate);
    if (s.channels.empty()) p.min_rate = 0.0;
    p.cp_divisible = p.min_rate >= -tol;

    std::mt19937_64 rng(seed);
    p.kossakowski_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < bases; ++k) {
      const Matrix u = random_unitary(d, rng);
      for (int mu = 0; mu < d; ++mu) {
        for (int nu = 0; nu < d; ++nu) {
          if (mu == nu) continue;
          double sum = 0.0;
          for (const auto& c : s.channels) sum += c.rate * std::norm(u.col(mu).dot(c.op * u.col(nu)));
          p.kossakowski_min = std::min(p.kossakowski_min, sum);
        }
      }
    }
    if (bases <= 0) p.kossakowski_min = 0.0;
    p.p_not_falsified = p.kossakowski_min >= -tol;
    out.push_back(p);
  }
  return out;
}

}  // namespace opdtraj
