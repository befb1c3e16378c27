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

#include "opdtraj/exact.hpp"
#include "opdtraj/frames.hpp"
#include "opdtraj/models.hpp"

using namespace opdtraj;

namespace {

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

Matrix superop_of(const GeneratorSample& s) { return superoperator(s); }

// Si(x) by its power series, fine for |x| < 25.
double sine_integral(double x) {
  long double term = x, sum = x;
  const long double x2 = static_cast<long double>(x) * x;
  for (int n = 1; n < 200; ++n) {
    term *= -x2 / ((2.0L * n) * (2.0L * n + 1.0L));
    sum += term / (2.0L * n + 1.0L);
  }
  return static_cast<double>(sum);
}

OPDecomposition two_qubit_opd(const TwoQubitParams& p) {
  const Vector psi = two_qubit_initial_state(p);
  return decompose(BipartiteState::pure(psi, 2, 2 * p.cutoff), build_pauli_frame(2));
}

Matrix env_state_of(const OPDecomposition& opd, const std::string& label) {
  return opd.env_states[opd.branch_position(opd.frame.index_of(label))];
}

}  // namespace

TEST_CASE("dephasing jump operators") {
  const auto s = dephasing_jump_basis(4);
  REQUIRE(s.size() == 3);
  const auto basis = dephasing_projection_basis(4);
  REQUIRE(basis.size() == 15);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    CHECK(std::abs(basis[i].trace()) < 1e-14);
    for (std::size_t j = 0; j < basis.size(); ++j) {
      CHECK(std::abs((basis[i].adjoint() * basis[j]).trace() - (i == j ? 1.0 : 0.0)) < 1e-14);
    }
  }
  // S_1 = (|0⟩⟨0| − |1⟩⟨1|)/sqrt(2)
  CHECK(std::abs(s[0](0, 0).real() - 1.0 / std::sqrt(2.0)) < 1e-15);
  CHECK(std::abs(s[0](1, 1).real() + 1.0 / std::sqrt(2.0)) < 1e-15);

  DephasingModel bad = dephasing_d4_model(0.5);
  bad.couplings[1](0, 1) = Complex(0, 1);
  CHECK_THROWS_AS(bad.validate(), NotHermitianError);
}

TEST_CASE("dephasing generator from the exact maps") {
  const DephasingModel model = dephasing_d4_model(0.5);
  const Matrix h = model.global_hamiltonian();
  Vector psi = Vector::Zero(16);
  for (int k = 0; k < 4; ++k) psi(k * 4 + k) = 0.5;
  const OPDecomposition opd = decompose(BipartiteState::pure(psi, 4, 4), build_pauli_frame(4));
  auto prop = std::make_shared<const GlobalPropagator>(h);

  std::mt19937_64 rng(61);
  const Matrix x = random_hermitian(4, rng) + Complex(0, 1) * random_hermitian(4, rng);
  for (int pos : {0, 1, 8}) {
    const Matrix& env = opd.env_states[pos];
    const ReducedMapFamily fam(prop, env, 4);
    const MapFamily maps = [&fam](double t) { return fam.at(t); };
    for (int k = 0; k < 20; ++k) {
      const double t = 0.05 + 0.1 * k;
      const DephasingSample ds = dephasing_sample(maps, 4, t, 1e-4);
      const Matrix lx = ds.sample.apply(x);
      CHECK(ds.off_block < 1e-7);
      CHECK(std::abs(lx.trace()) < 1e-9);
      CHECK(max_abs(ds.sample.apply(x.adjoint()) - lx.adjoint()) < 1e-9);
      for (int j = 0; j < 4; ++j) CHECK(std::abs(lx(j, j)) < 1e-8);
      // diagonalized channels reproduce the extracted generator
      CHECK(max_abs(superop_of(ds.sample) - generator_superop_at(maps, t, 1e-4)) < 1e-7);
    }
  }

  // the integrated generator keeps the oracle populations
  const Generator gen = dephasing_generator(prop, opd.env_states[1], 4, 1e-4);
  const ReducedMapFamily fam(prop, opd.env_states[1], 4);
  const Matrix rho0 = random_density_matrix(4, rng);
  const std::vector<double> ts = {0.5, 1.0, 1.5};
  const auto sol = lindblad_ode_solve(gen, rho0, ts);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const Matrix exact = fam.apply(ts[k], rho0);
    CHECK(max_abs(sol[k] - exact) < 1e-6);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(sol[k](j, j) - rho0(j, j)) < 1e-8);
  }

  // g = 0: no dissipation
  const DephasingModel free = dephasing_d4_model(0.0);
  const ReducedMapFamily free_fam(free.global_hamiltonian(), identity(4) / 4.0, 4);
  const MapFamily free_maps = [&free_fam](double t) { return free_fam.at(t); };
  const DephasingSample fs = dephasing_sample(free_maps, 4, 0.7, 1e-4);
  for (const auto& c : fs.sample.channels) CHECK(std::abs(c.rate) < 1e-8);
  CHECK(max_abs(fs.sample.hamiltonian - free.h_s + free.h_s.trace() / 4.0 * identity(4)) < 1e-8);
}

TEST_CASE("matrix quadrature") {
  const auto f = [](double x) -> Matrix {
    Matrix m(1, 2);
    m(0, 0) = std::cos(3.0 * x);
    m(0, 1) = Complex(0, 1) * std::exp(x);
    return m;
  };
  const QuadratureResult q = integrate_matrix(f, 0.0, 2.0);
  CHECK(std::abs(q.value(0, 0) - std::sin(6.0) / 3.0) < 1e-12);
  CHECK(std::abs(q.value(0, 1) - Complex(0, std::exp(2.0) - 1.0)) < 1e-12);
}

TEST_CASE("two-qubit second-order generator") {
  TwoQubitParams p;
  p.cutoff = 6;
  const OPDecomposition opd = two_qubit_opd(p);
  REQUIRE(opd.branches.size() == 4);

  // z branch: zero covariance, pure driving g[cos σx − sin σy]
  const ApoGenerator gz(two_qubit_model(p), env_state_of(opd, "z"));
  for (double t : {0.3, 1.2}) {
    const GeneratorSample s = gz.sample(t);
    const Matrix drive = p.g * (std::cos(t) * qubit::sigma_x() - std::sin(t) * qubit::sigma_y());
    CHECK(max_abs(s.hamiltonian - drive) < 1e-10);
    CHECK(max_abs(s.decay()) < 1e-10);
  }

  // other branches: the closed form, independent of μ
  for (const char* label : {"0", "x", "y"}) {
    const Matrix env = env_state_of(opd, label);
    std::vector<Matrix> by_mu;
    for (double mu : {0.0, 1.0, 5.0}) {
      TwoQubitParams q = p;
      q.mu = mu;
      const ApoGenerator gen(two_qubit_model(q), env);
      by_mu.push_back(superop_of(gen.sample(0.8)));
      if (mu == 1.0) {
        for (double t : {0.1, 0.8, 2.5}) {
          const GeneratorSample s = gen.sample(t);
          CHECK(max_abs(superop_of(s) - superop_of(two_qubit_reference_sample(q, t))) < 1e-9);
          CHECK(max_abs(gen.superoperator(t) - superop_of(s)) < 1e-9);
        }
      }
    }
    CHECK(max_abs(by_mu[0] - by_mu[1]) < 1e-10);
    CHECK(max_abs(by_mu[0] - by_mu[2]) < 1e-10);
  }

  // Pauli-normalized rates
  for (double t : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    const GeneratorSample d = diagonal_form(two_qubit_reference_sample(p, t), 2.0);
    std::vector<double> rates;
    for (const auto& c : d.channels)
      if (std::abs(c.rate) > 1e-13) rates.push_back(c.rate);
    REQUIRE(rates.size() == 2);
    std::sort(rates.begin(), rates.end());
    const auto [gp, gm] = two_qubit_rates(p, t);
    CHECK(std::abs(rates[1] - std::max(gp, gm)) < 1e-9);
    CHECK(std::abs(rates[0] - std::min(gp, gm)) < 1e-9);
  }
  const double gm = two_qubit_rates(p, 0.1).second;
  CHECK(std::abs(gm - (std::sin(0.1) - 2.0 * std::sin(0.05))) < 1e-15);
  CHECK(std::abs(gm + 1.249219e-4) < 1e-7);
  // leading order −t³/8
  CHECK(std::abs(two_qubit_rates(p, 0.01).second / (-1e-6 / 8.0) - 1.0) < 1e-3);
}

TEST_CASE("second-order generator scales with g squared") {
  TwoQubitParams p;
  p.cutoff = 4;
  const Matrix env = env_state_of(two_qubit_opd(p), "x");
  double decay[2];
  for (int k = 0; k < 2; ++k) {
    TwoQubitParams q = p;
    q.g = k == 0 ? 0.2 : 0.1;
    decay[k] = max_abs(ApoGenerator(two_qubit_model(q), env).sample(0.7).decay());
  }
  CHECK(std::abs(decay[0] / decay[1] - 4.0) < 0.04);
}

TEST_CASE("generators annihilate traces and preserve Hermiticity") {
  std::mt19937_64 rng(67);
  const Matrix x = random_hermitian(2, rng) + Complex(0, 1) * random_hermitian(2, rng);
  JcSingleModeParams jp;
  const ApoGenerator jc(jc_single_mode_model(jp), ket_bra(jp.fock_cutoff(), 1, 1));
  std::vector<Generator> gens = {
      decay_generator(0.7),
      jc.generator(),
      jc_single_mode_generator(0.5, 1.0, 0.1, 0.5),
      jc_continuum_generator(JcContinuumParams{}, 0.5),
      Generator(2, [](double t) { return two_qubit_reference_sample(TwoQubitParams{}, t); })};
  for (const auto& g : gens) {
    for (double t : {0.0, 0.4, 2.3}) {
      const Matrix y = g.apply(t, x);
      CHECK(std::abs(y.trace()) < 1e-9);
      CHECK(max_abs(g.apply(t, x.adjoint()) - y.adjoint()) < 1e-9);
      CHECK(is_hermitian(g.at(t).hamiltonian));
    }
  }
}

TEST_CASE("Jaynes-Cummings single mode rates") {
  // z branch of n0=1, n1=0 sees the vacuum
  for (double t : {0.0, 0.5, 3.0, 5.0}) {
    const JcRates r = jc_single_mode_rates(0.0, 1.0, 0.1, 0.5, t, JcLabeling::printed);
    CHECK(r.sigma_minus_rate == 0.0);
    CHECK(std::abs(r.sigma_plus_rate - 0.25 * std::sin(0.9 * t) / 0.9) < 1e-15);
  }
  for (double n : {0.5, 1.0, 3.0}) {
    for (double t : {0.2, 2.0, 4.0, 7.5}) {
      const JcRates r = jc_single_mode_rates(n, 1.0, 0.1, 0.5, t, JcLabeling::printed);
      CHECK(std::abs((r.sigma_plus_rate - r.sigma_minus_rate) - 0.25 * std::sin(0.9 * t) / 0.9) < 1e-14);
      CHECK((r.sigma_plus_rate > 0) == (r.sigma_minus_rate > 0));
    }
  }
  CHECK(sin_kernel(0.0, 2.0) == 2.0);
  for (double delta : {-0.9, 0.3, 2.0})
    for (double t : {0.1, 1.0, 6.0}) CHECK(std::abs(shift_integral(delta, t) - cos_kernel(delta, t)) < 1e-12);

  // generators depend on the branch only through n_α
  JcSingleModeParams p;
  const OPDecomposition opd =
      decompose(BipartiteState::pure(jc_single_mode_initial_state(p), 2, p.fock_cutoff()),
                build_pauli_frame(2));
  std::vector<double> n;
  for (const auto& env : opd.env_states) n.push_back(mean_occupation(env));
  CHECK(std::abs(n[0] - 0.5) < 1e-12);
  CHECK(std::abs(n[1] - 0.5) < 1e-12);
  CHECK(std::abs(n[2] - 0.5) < 1e-12);
  CHECK(std::abs(n[3]) < 1e-12);
}

TEST_CASE("Jaynes-Cummings labeling against the exact oracle") {
  // weak coupling: second order is accurate, so the channel carrying (n+1)
  // on σ₋ is the one the oracle follows
  JcSingleModeParams p;
  p.g = 0.05;
  const int c = p.fock_cutoff();
  const ApoModel model = jc_single_mode_model(p);
  for (int n : {0, 1}) {
    const Matrix env = ket_bra(c, n, n);
    // the general second-order expression agrees with the physical labeling
    const ApoGenerator apo(model, env);
    for (double t : {0.5, 2.0, 5.0}) {
      const Matrix phys = superop_of(jc_sample(jc_single_mode_rates(n, p.omega0, p.omega, p.g, t,
                                                                    JcLabeling::physical)));
      CHECK(max_abs(apo.superoperator(t) - phys) < 1e-9);
    }
    // Schrödinger-picture oracle, excited system
    const ReducedMapFamily fam(model.global_hamiltonian(), env, 2);
    const Matrix rho0 = ket_bra(2, 1, 1);
    const std::vector<double> ts = {1.0, 2.0, 3.0};
    const auto phys = lindblad_ode_solve(
        jc_single_mode_generator(n, p.omega0, p.omega, p.g, JcLabeling::physical), rho0, ts);
    const auto printed = lindblad_ode_solve(
        jc_single_mode_generator(n, p.omega0, p.omega, p.g, JcLabeling::printed), rho0, ts);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const double exact = fam.apply(ts[k], rho0)(1, 1).real();
      const double change = std::abs(1.0 - exact);
      CHECK(change > 1e-3);
      CHECK(std::abs(phys[k](1, 1).real() - exact) < 0.02 * change);
      CHECK(std::abs(printed[k](1, 1).real() - exact) > 0.5 * change);
    }
  }
}

TEST_CASE("oscillator truncation converges") {
  JcSingleModeParams p;
  const Matrix env_small = ket_bra(p.fock_cutoff(), 1, 1);
  JcSingleModeParams q = p;
  q.cutoff = p.fock_cutoff() + 4;
  const Matrix env_large = ket_bra(q.fock_cutoff(), 1, 1);
  const Matrix rho = identity(2) / 2.0 + 0.3 * qubit::sigma_x();
  for (double t : {1.0, 5.0}) {
    const Matrix a = ReducedMapFamily(jc_single_mode_model(p).global_hamiltonian(), env_small, 2).apply(t, rho);
    const Matrix b = ReducedMapFamily(jc_single_mode_model(q).global_hamiltonian(), env_large, 2).apply(t, rho);
    CHECK(trace_distance(a, b) < 1e-6);
  }
}

TEST_CASE("Jaynes-Cummings continuum") {
  const JcContinuumParams p;
  // closed form through the sine integral
  for (double t : {0.5, 3.0, 10.0}) {
    const FrequencyIntegrals f = jc_frequency_integrals(p.omega0, p.omega_c, t);
    const double w0 = p.omega0, wc = p.omega_c;
    const double expected = w0 * (sine_integral(w0 * t) + sine_integral((wc - w0) * t)) +
                            (std::cos(w0 * t) - std::cos((wc - w0) * t)) / t;
    CHECK(std::abs(f.sin_part - expected) < 1e-8 * std::max(1.0, std::abs(expected)));
  }
  JcContinuumParams vac = p;
  vac.occupation = 0.0;
  for (double t : {0.5, 4.0}) CHECK(jc_continuum_rates(vac, 1.0, t, JcLabeling::printed).sigma_minus_rate == 0.0);

  // rates stay positive over the window
  double min_rate = 1e9;
  for (int k = 1; k <= 200; ++k) {
    const double t = 0.1 * k;
    for (double frac : {0.5, 1.0}) {
      const JcRates r = jc_continuum_rates(p, frac, t, JcLabeling::printed);
      min_rate = std::min({min_rate, r.sigma_minus_rate, r.sigma_plus_rate});
    }
  }
  CHECK(min_rate > 0.0);

  // J(ω) = gω is linear in g
  JcContinuumParams twice = p;
  twice.g = 2.0 * p.g;
  const JcRates a = jc_continuum_rates(p, 1.0, 2.0, JcLabeling::printed);
  const JcRates b = jc_continuum_rates(twice, 1.0, 2.0, JcLabeling::printed);
  CHECK(std::abs(b.sigma_plus_rate / a.sigma_plus_rate - 2.0) < 1e-12);
  CHECK(std::abs(b.sigma_minus_rate / a.sigma_minus_rate - 2.0) < 1e-12);
}

TEST_CASE("compatible states of the lambda family") {
  std::mt19937_64 rng(71);
  const CorrelationOperator c0 = lambda_family(2, 0.0);
  const CorrelationOperator c1 = lambda_family(2, 1.0);
  const CorrelationOperator ch = lambda_family(2, 0.5);
  CHECK(compatible_state_check(c1, identity(2) / 2.0));
  CHECK_FALSE(compatible_state_check(c1, identity(2) / 2.0 + 1e-4 * qubit::sigma_z()));
  int agree = 0, total = 0;
  for (int k = 0; k < 2000; ++k) {
    const Matrix rho = random_density_matrix(2, rng);
    CHECK(compatible_state_check(c0, rho));
    const double lmin = min_eigenvalue(rho);
    if (std::abs(lmin - 0.25) < 1e-8) continue;
    ++total;
    agree += compatible_state_check(ch, rho) == (lmin >= 0.25);
  }
  CHECK(agree == total);
  CHECK_THROWS_AS(lambda_family(1, 0.5), Error);
}

TEST_CASE("fixed-correlations generator") {
  const DephasingModel model = dephasing_d4_model(0.5);
  const Matrix h = model.global_hamiltonian();
  Vector psi = Vector::Zero(16);
  for (int k = 0; k < 4; ++k) psi(k * 4 + k) = 0.5;
  const CorrelationOperator corr = correlations_of(BipartiteState::pure(psi, 4, 4));
  const FixedCorrelations fc(h, corr, 1e-4);
  const Matrix rho_s = identity(4) / 4.0;
  CHECK(compatible_state_check(corr, rho_s));

  std::mt19937_64 rng(73);
  const Matrix x = random_hermitian(4, rng);
  std::vector<double> grid;
  for (int k = 0; k <= 20; ++k) grid.push_back(0.05 * k);
  const FixedCorrelationsReport rep = fixed_correlations_diagnostics(fc, grid);
  CHECK_FALSE(rep.truncated);
  for (const auto& pt : rep.points) CHECK(std::abs(pt.eta_sum) < 1e-9);
  CHECK(rep.points[1].min_eta < 0.0);

  // at t = 0 the unital part vanishes on 1/d
  const FixedCorrelationsSample s0 = fc.sample(0.0);
  CHECK(max_abs(s0.sample.apply(rho_s) - s0.delta) < 1e-9);
  CHECK(min_eigenvalue(s0.delta) < -1e-3);

  for (double t : {0.0, 0.3, 0.8}) {
    const FixedCorrelationsSample s = fc.sample(t);
    CHECK(max_abs(s.sample.apply(x) - apply_superoperator(s.base, x) - s.delta * x.trace()) < 1e-9);
  }

  const std::vector<double> ts = {0.25, 0.5, 1.0};
  const auto sol = lindblad_ode_solve(fc.generator(), rho_s, ts);
  for (std::size_t k = 0; k < ts.size(); ++k) CHECK(max_abs(sol[k] - fc.evolve(ts[k], rho_s)) < 1e-6);

  // no correlations: Δ vanishes
  const Matrix rs = random_density_matrix(4, rng);
  const FixedCorrelations none(h, correlations_of(BipartiteState::product(rs, identity(4) / 4.0)), 1e-4);
  CHECK(max_abs(none.sample(0.4).delta) < 1e-9);
}

TEST_CASE("divisibility report") {
  const auto dec = divisibility_report(decay_generator(1.0), {0.0, 1.0}, 20);
  for (const auto& p : dec) {
    CHECK(p.cp_divisible);
    CHECK(p.p_not_falsified);
  }
  const Generator tq(2, [](double t) { return two_qubit_reference_sample(TwoQubitParams{}, t); });
  const auto rep = divisibility_report(tq, {0.1, 0.5}, 20);
  for (const auto& p : rep) CHECK_FALSE(p.cp_divisible);
  CHECK(rep[0].min_rate < 0.0);
}
