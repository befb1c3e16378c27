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

#include "opdtraj/engines.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>

#include "opdtraj/errors.hpp"

namespace opdtraj {

namespace {

const Complex kI(0.0, 1.0);

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

// Runs fn(task) for task in [0, n) on up to `threads` workers. The first
// exception (lowest task index) is rethrown after all workers stop.
template <class F>
void parallel_for(int n, int threads, F fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  int failed_task = n;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n || stop.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_task) {
          failed_task = i;
          failure = std::current_exception();
        }
        stop = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index,
                           std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    salt};
  return std::mt19937_64(seq);
}

double squared_norm_bound(const Matrix& l) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(l.adjoint() * l, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double fidelity(const Vector& a, const Vector& b) { return std::norm(a.dot(b)); }

void normalize(Vector& psi, double t) {
  const double n = psi.norm();
  if (!(n > 1e-300) || !std::isfinite(n))
    throw NumericalError("trajectory state collapsed to zero norm at t = " + fmt(t));
  psi /= n;
}

// Initial pure-state strata of ρ0.
struct InitialStrata {
  std::vector<Vector> states;
  std::vector<double> weights;
};

InitialStrata initial_strata(const Matrix& rho0, int d) {
  if (rho0.rows() != d || rho0.cols() != d)
    throw DimensionError("initial state is " + std::to_string(rho0.rows()) + "x" +
                         std::to_string(rho0.cols()) + ", generator acts on d = " +
                         std::to_string(d));
  if (!is_hermitian(rho0, 1e-9) || !is_psd(rho0, 1e-9) || !is_trace_one(rho0, 1e-9))
    throw InvalidStateError("initial state is not a density operator");
  const EigenSystem es = hermitian_eig(hermitian_part(rho0));
  InitialStrata out;
  for (int i = d - 1; i >= 0; --i) {
    if (es.values(i) > 1e-12) {
      out.states.push_back(es.vectors.col(i));
      out.weights.push_back(es.values(i));
    }
  }
  const double s = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  for (auto& w : out.weights) w /= s;
  return out;
}

int draw_stratum(const std::vector<double>& weights, double u) {
  double c = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    c += weights[i];
    if (u < c) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

// Running sums Σx and Σxxᵀ per output time.
struct Accumulator {
  std::vector<RealVector> s1;
  std::vector<RealMatrix> s2;
  std::int64_t jumps = 0;

  Accumulator(int n_out, int p) : s1(n_out, RealVector::Zero(p)), s2(n_out, RealMatrix::Zero(p, p)) {}

  void add(int k, const RealVector& x) {
    s1[k] += x;
    s2[k].selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
};

Series finish_series(const std::vector<Accumulator>& chunks, int d, int n_out, double dt_out,
                     std::int64_t n) {
  const int p = d * d;
  Series s;
  s.d = d;
  for (int k = 0; k < n_out; ++k) {
    RealVector s1 = RealVector::Zero(p);
    RealMatrix s2 = RealMatrix::Zero(p, p);
    for (const auto& c : chunks) {
      s1 += c.s1[k];
      s2 += c.s2[k];
    }
    s2 = s2.selfadjointView<Eigen::Lower>();
    const RealVector mean = s1 / static_cast<double>(n);
    RealMatrix cov = RealMatrix::Zero(p, p);
    if (n > 1) {
      cov = (s2 - static_cast<double>(n) * mean * mean.transpose()) /
            (static_cast<double>(n - 1) * static_cast<double>(n));
    }
    Matrix rho(d, d);
    int idx = d;
    for (int i = 0; i < d; ++i) rho(i, i) = mean(i);
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) {
        rho(i, j) = Complex(mean(idx), mean(idx + 1));
        rho(j, i) = std::conj(rho(i, j));
        idx += 2;
      }
    }
    s.times.push_back(k * dt_out);
    s.mean.push_back(rho);
    s.cov.push_back(cov);
  }
  return s;
}

RealVector pure_params(const Vector& psi) {
  const int d = static_cast<int>(psi.size());
  RealVector x(d * d);
  for (int i = 0; i < d; ++i) x(i) = std::norm(psi(i));
  int idx = d;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const Complex r = psi(i) * std::conj(psi(j));
      x(idx++) = r.real();
      x(idx++) = r.imag();
    }
  }
  return x;
}

void check_rates(const GeneratorSample& s, double t, double tol, const char* method) {
  for (std::size_t j = 0; j < s.channels.size(); ++j) {
    if (s.channels[j].rate < -tol) {
      throw MethodInapplicableError(std::string(method) + " needs non-negative rates; channel " +
                                    std::to_string(j) + " has rate " + fmt(s.channels[j].rate) +
                                    " at t = " + fmt(t));
    }
  }
}

}  // namespace

// ----------------------------------------------------------------- config

Method parse_method(const std::string& name) {
  if (name == "mcwf") return Method::mcwf;
  if (name == "nmqj") return Method::nmqj;
  if (name == "ro") return Method::ro;
  if (name == "psi-ro" || name == "psi_ro") return Method::psi_ro;
  if (name == "qsd") return Method::qsd;
  throw ConfigError("unknown method '" + name + "' (mcwf, nmqj, ro, psi-ro, qsd)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::mcwf: return "mcwf";
    case Method::nmqj: return "nmqj";
    case Method::ro: return "ro";
    case Method::psi_ro: return "psi-ro";
    case Method::qsd: return "qsd";
  }
  return "?";
}

int UnravelConfig::steps() const {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (t_max < 0.0) throw ConfigError("t_max must be non-negative");
  return static_cast<int>(std::llround(t_max / dt));
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("OPDTRAJ_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

bool needs_diagonal_channels(Method m) { return m == Method::mcwf || m == Method::nmqj || m == Method::qsd; }

// ------------------------------------------------------------------ stats

RealVector hermitian_params(const Matrix& rho) {
  const int d = static_cast<int>(rho.rows());
  RealVector x(d * d);
  for (int i = 0; i < d; ++i) x(i) = rho(i, i).real();
  int idx = d;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      x(idx++) = rho(i, j).real();
      x(idx++) = rho(i, j).imag();
    }
  }
  return x;
}

Estimate Series::estimate(std::size_t k, const Matrix& o) const {
  if (o.rows() != d || o.cols() != d) throw DimensionError("Series::estimate: observable size");
  // tr[Oρ] = Σ_i O_ii x_ii + Σ_{i<j} (O_ji + O_ij) Re ρ_ij + i(O_ji − O_ij) Im ρ_ij
  Eigen::VectorXcd g(d * d);
  for (int i = 0; i < d; ++i) g(i) = o(i, i);
  int idx = d;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      g(idx++) = o(j, i) + o(i, j);
      g(idx++) = kI * (o(j, i) - o(i, j));
    }
  }
  const RealVector gr = g.real(), gi = g.imag();
  Estimate e;
  e.mean = (o * mean[k]).trace();
  e.se_re = std::sqrt(std::max(0.0, gr.dot(cov[k] * gr)));
  e.se_im = std::sqrt(std::max(0.0, gi.dot(cov[k] * gi)));
  return e;
}

std::pair<double, double> Series::trace_distance(std::size_t k, const Matrix& reference) const {
  const EigenSystem es = hermitian_eig(hermitian_part(mean[k] - reference));
  Matrix sign = Matrix::Zero(d, d);
  double dist = 0.0;
  for (int i = 0; i < d; ++i) {
    const double s = es.values(i) >= 0.0 ? 0.5 : -0.5;
    dist += s * es.values(i);
    sign += s * es.vectors.col(i) * es.vectors.col(i).adjoint();
  }
  return {dist, estimate(k, sign).se_re};
}

// --------------------------------------------------------------- schedule

Schedule build_schedule(const Generator& gen, double dt, int steps, bool diagonal) {
  if (!gen.valid()) throw Error("build_schedule: empty generator");
  Schedule s;
  s.dt = dt;
  s.steps = steps;
  s.dim = gen.dim();
  s.data.reserve(steps);
  double worst = 0.0;
  s.min_rate = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double t = (k + 0.5) * dt;
    GeneratorSample raw = gen.at(t);
    if (raw.dim() != s.dim) throw DimensionError("build_schedule: sample dimension changed");
    GeneratorSample diag = raw.pairs.empty() ? raw : diagonal_form(raw);
    double load = 0.0;
    for (const auto& c : diag.channels) {
      load += std::abs(c.rate) * squared_norm_bound(c.op);
      if (c.rate < s.min_rate) {
        s.min_rate = c.rate;
        s.min_rate_time = t;
      }
    }
    worst = std::max(worst, load);
    StepData step;
    step.sample = diagonal ? std::move(diag) : std::move(raw);
    step.decay = step.sample.decay();
    step.k_eff = step.sample.hamiltonian - 0.5 * kI * step.decay;
    s.data.push_back(std::move(step));
  }
  s.stiffness = dt * worst;
  return s;
}

double cp_divisible_until(const Schedule& schedule, double tol) {
  for (int k = 0; k < schedule.steps; ++k) {
    const GeneratorSample& raw = schedule.data[k].sample;
    const GeneratorSample diag = raw.pairs.empty() ? raw : diagonal_form(raw);
    if (diag.has_negative_rate(tol)) return std::max(0, k - 1) * schedule.dt;
  }
  return schedule.steps * schedule.dt;
}

// ------------------------------------------------------------------- steps

namespace {

// ψ ← (1 − iK dt − K² dt²/2) ψ
void no_jump(Vector& psi, const Matrix& k_eff, double dt) {
  const Vector kpsi = k_eff * psi;
  psi -= kI * dt * kpsi + 0.5 * dt * dt * (k_eff * kpsi);
}

}  // namespace

std::vector<double> jump_probabilities(const Vector& psi, const GeneratorSample& s, double dt,
                                       double t, double tol) {
  check_rates(s, t, tol, "jump unraveling");
  std::vector<double> p(s.channels.size(), 0.0);
  for (std::size_t j = 0; j < s.channels.size(); ++j) {
    const double r = s.channels[j].rate;
    if (r <= 0.0) continue;
    p[j] = r * (s.channels[j].op * psi).squaredNorm() * dt;
  }
  return p;
}

int mcwf_step(Vector& psi, const StepData& step, double dt, double u, double t, double tol) {
  const std::vector<double> p = jump_probabilities(psi, step.sample, dt, t, tol);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (total > 1.0)
    throw NumericalError("jump probability " + fmt(total) + " exceeds one at t = " + fmt(t) +
                         "; reduce dt");
  if (u < total) {
    double c = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      c += p[j];
      if (u < c || j + 1 == p.size()) {
        psi = step.sample.channels[j].op * psi;
        normalize(psi, t);
        return static_cast<int>(j);
      }
    }
  }
  no_jump(psi, step.k_eff, dt);
  normalize(psi, t);
  return -1;
}

EigenSystem rate_operator(const Vector& psi, const GeneratorSample& s) {
  const Matrix r = hermitian_part(s.jump(psi * psi.adjoint()));
  Eigen::SelfAdjointEigenSolver<Matrix> es(r);
  return {es.eigenvalues(), es.eigenvectors()};
}

int ro_step(Vector& psi, const StepData& step, double dt, double u, double t, double tol) {
  const EigenSystem r = rate_operator(psi, step.sample);
  if (r.values(0) < -tol) {
    throw PositiveUnravelingError("rate operator has eigenvalue " + fmt(r.values(0)) +
                                      " at t = " + fmt(t),
                                  r.values(0));
  }
  double c = 0.0;
  for (int i = 0; i < r.values.size(); ++i) {
    const double p = std::max(0.0, r.values(i)) * dt;
    c += p;
    if (p > 0.0 && u < c) {
      psi = r.vectors.col(i);
      return i;
    }
  }
  if (c > 1.0)
    throw NumericalError("jump probability " + fmt(c) + " exceeds one at t = " + fmt(t) +
                         "; reduce dt");
  no_jump(psi, step.k_eff, dt);
  normalize(psi, t);
  return -1;
}

int psi_ro_step(Vector& psi, const StepData& step, double dt, double u, double t, double tol,
                PsiRoPolicy policy) {
  if (policy == PsiRoPolicy::zero) return ro_step(psi, step, dt, u, t, tol);
  if (psi.size() != 2)
    throw MethodInapplicableError("psi-ro basis_targets policy needs a qubit, got d = " +
                                  std::to_string(psi.size()));
  const Matrix r = step.sample.jump(psi * psi.adjoint());
  Vector perp(2);
  perp << -std::conj(psi(1)), std::conj(psi(0));
  const double c = perp.dot(r * perp).real();
  if (c < -tol) {
    throw PositiveUnravelingError("psi-ro rate " + fmt(c) + " is negative at t = " + fmt(t), c);
  }
  const double p = std::max(0.0, c) * dt;
  if (2.0 * p > 1.0)
    throw NumericalError("jump probability " + fmt(2 * p) + " exceeds one at t = " + fmt(t) +
                         "; reduce dt");
  if (u < 2.0 * p) {
    psi = basis_ket(2, u < p ? 0 : 1);
    return u < p ? 0 : 1;
  }
  auto drift = [&](const Vector& v) -> Vector {
    const Vector x = v / v.norm();
    const Matrix rx = step.sample.jump(x * x.adjoint());
    Vector w(2);
    w << -std::conj(x(1)), std::conj(x(0));
    const Vector mx = w.dot(rx * w).real() * x - rx * x;
    const Vector phi = 2.0 * mx - x.dot(mx) * x;
    return v.norm() * (-kI * (step.k_eff * x) - 0.5 * phi);
  };
  const Vector half = psi + 0.5 * dt * drift(psi);
  psi += dt * drift(half);
  normalize(psi, t);
  return -1;
}

Vector qsd_drift(const Vector& psi, const GeneratorSample& s, QsdDrift drift) {
  const double half = drift == QsdDrift::norm_preserving ? 0.5 : 1.0;
  Vector f = -kI * (s.hamiltonian * psi);
  for (const auto& c : s.channels) {
    if (c.rate == 0.0) continue;
    const Vector lpsi = c.op * psi;
    const Complex ex = psi.dot(lpsi);
    f += c.rate * (std::conj(ex) * lpsi - half * (c.op.adjoint() * lpsi) - half * std::norm(ex) * psi);
  }
  if (!s.pairs.empty()) throw Error("qsd_drift: pairs must be converted to channels first");
  return f;
}

std::vector<Complex> wiener_increments(std::mt19937_64& rng, int n, double dt) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * dt));
  std::vector<Complex> dw(n);
  for (auto& w : dw) {
    const double re = normal(rng);
    const double im = normal(rng);
    w = Complex(re, im);
  }
  return dw;
}

void qsd_step(Vector& psi, const StepData& step, double dt, const std::vector<Complex>& dw,
              QsdDrift drift, double t, double tol) {
  const GeneratorSample& s = step.sample;
  check_rates(s, t, tol, "qsd");
  Vector next = psi + dt * qsd_drift(psi, s, drift);
  for (std::size_t j = 0; j < s.channels.size(); ++j) {
    const double r = s.channels[j].rate;
    if (r <= 0.0) continue;
    const Vector lpsi = s.channels[j].op * psi;
    next += std::sqrt(r) * (lpsi - psi.dot(lpsi) * psi) * dw[j];
  }
  psi = std::move(next);
  normalize(psi, t);
}

// ---------------------------------------------------------------- ensemble

std::vector<int> proportional_allocation(const std::vector<double>& weights, int n) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> counts(weights.size(), 0);
  if (weights.empty() || total <= 0.0) return counts;
  std::vector<std::pair<double, int>> rem;
  int used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = n * weights[i] / total;
    counts[i] = static_cast<int>(std::floor(exact));
    used += counts[i];
    rem.push_back({exact - counts[i], static_cast<int>(i)});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; used < n; ++k, ++used) ++counts[rem[k % rem.size()].second];
  return counts;
}

namespace {

constexpr int kMaxChunks = 64;

EnsembleResult run_trajectories(const Schedule& sched, const InitialStrata& init,
                                const UnravelConfig& cfg) {
  const int d = sched.dim, p = d * d;
  const int every = std::max(1, cfg.output_every);
  const int n_out = sched.steps / every + 1;
  const int n = cfg.n_traj;
  const int chunks = std::min(kMaxChunks, n);
  const std::vector<int> counts = proportional_allocation(init.weights, n);
  std::vector<int> first(counts.size() + 1, 0);
  std::partial_sum(counts.begin(), counts.end(), first.begin() + 1);

  std::vector<Accumulator> acc(chunks, Accumulator(n_out, p));
  parallel_for(chunks, resolve_threads(cfg.threads), [&](int c) {
    Accumulator& a = acc[c];
    const int lo = static_cast<int>(static_cast<std::int64_t>(n) * c / chunks);
    const int hi = static_cast<int>(static_cast<std::int64_t>(n) * (c + 1) / chunks);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int traj = lo; traj < hi; ++traj) {
      std::mt19937_64 rng = stream_rng(cfg.seed, cfg.stream, traj, 0x7472616a);
      int stratum;
      if (cfg.sampling == InitialSampling::multinomial) {
        stratum = draw_stratum(init.weights, uniform(rng));
      } else {
        stratum = static_cast<int>(std::upper_bound(first.begin(), first.end(), traj) - first.begin()) - 1;
      }
      Vector psi = init.states[stratum];
      for (int k = 0; k <= sched.steps; ++k) {
        if (k % every == 0) a.add(k / every, pure_params(psi));
        if (k == sched.steps) break;
        const double t = k * sched.dt;
        const StepData& step = sched.data[k];
        int jumped = -1;
        switch (cfg.method) {
          case Method::mcwf:
            jumped = mcwf_step(psi, step, sched.dt, uniform(rng), t, cfg.rate_tol);
            break;
          case Method::ro:
            jumped = ro_step(psi, step, sched.dt, uniform(rng), t, cfg.rate_tol);
            break;
          case Method::psi_ro:
            jumped = psi_ro_step(psi, step, sched.dt, uniform(rng), t, cfg.rate_tol, cfg.policy);
            break;
          case Method::qsd: {
            const auto dw = wiener_increments(rng, static_cast<int>(step.sample.channels.size()), sched.dt);
            qsd_step(psi, step, sched.dt, dw, cfg.qsd_drift, t, cfg.rate_tol);
            break;
          }
          case Method::nmqj:
            throw Error("run_trajectories: nmqj is an ensemble method");
        }
        if (jumped >= 0) ++a.jumps;
      }
    }
  });

  EnsembleResult out;
  out.series = finish_series(acc, d, n_out, every * sched.dt, n);
  for (const auto& a : acc) out.jumps += a.jumps;
  return out;
}

// One NMQJ ensemble: distinct states with occupation numbers.
struct Registry {
  std::vector<Vector> states;
  std::vector<std::int64_t> counts;

  int find(const Vector& psi, double tol, bool occupied_only) const {
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (occupied_only && counts[i] == 0) continue;
      if (fidelity(states[i], psi) >= 1.0 - tol) return static_cast<int>(i);
    }
    return -1;
  }
  int insert(const Vector& psi, double tol) {
    const int i = find(psi, tol, false);
    if (i >= 0) return i;
    states.push_back(psi);
    counts.push_back(0);
    return static_cast<int>(states.size()) - 1;
  }
  RealVector params(std::int64_t total) const {
    RealVector x = RealVector::Zero(states.front().size() * states.front().size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (counts[i] > 0) x += (static_cast<double>(counts[i]) / total) * pure_params(states[i]);
    }
    return x;
  }
};

struct NmqjReplicaResult {
  std::vector<RealVector> x;
  std::int64_t jumps = 0;
  std::int64_t reverse_jumps = 0;
  int max_states = 0;
};

NmqjReplicaResult run_nmqj_replica(const Schedule& sched, const InitialStrata& init,
                                   const UnravelConfig& cfg, int members, std::mt19937_64& rng) {
  const int every = std::max(1, cfg.output_every);
  const double dt = sched.dt, tol = cfg.rate_tol, ftol = cfg.fidelity_tol;
  Registry reg;
  std::vector<int> alloc;
  if (cfg.sampling == InitialSampling::multinomial) {
    alloc.assign(init.weights.size(), 0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int m = 0; m < members; ++m) ++alloc[draw_stratum(init.weights, uniform(rng))];
  } else {
    alloc = proportional_allocation(init.weights, members);
  }
  for (std::size_t i = 0; i < alloc.size(); ++i) {
    if (alloc[i] > 0) reg.counts[reg.insert(init.states[i], ftol)] += alloc[i];
  }

  NmqjReplicaResult out;
  struct Outcome {
    int target;       // registry index, or -1 for a new state
    Vector state;     // used when target < 0
    double p;
    bool reverse;
  };
  for (int k = 0; k <= sched.steps; ++k) {
    if (k % every == 0) out.x.push_back(reg.params(members));
    out.max_states = std::max(out.max_states, static_cast<int>(reg.states.size()));
    if (k == sched.steps) break;
    const double t = k * dt;
    const GeneratorSample& s = sched.data[k].sample;
    const int r = static_cast<int>(reg.states.size());

    std::vector<std::vector<Outcome>> outcomes(r);
    for (int i = 0; i < r; ++i) {
      if (reg.counts[i] == 0) continue;
      for (std::size_t j = 0; j < s.channels.size(); ++j) {
        const double rate = s.channels[j].rate;
        if (std::abs(rate) <= tol) continue;
        const Vector v = s.channels[j].op * reg.states[i];
        const double w = v.squaredNorm();
        if (w * std::abs(rate) * dt < 1e-15) continue;
        const Vector target = v / std::sqrt(w);
        if (rate > 0.0) {
          // forward jump ψ_i → L_jψ_i
          outcomes[i].push_back({reg.find(target, ftol, false), target, rate * w * dt, false});
        } else {
          // reverse jump from L_jψ_i back to ψ_i
          const int from = reg.find(target, ftol, true);
          if (from < 0) {
            throw ReverseJumpError("nmqj: channel " + std::to_string(j) + " has rate " + fmt(rate) +
                                   " at t = " + fmt(t) +
                                   " but the target of a source state is absent from the ensemble");
          }
          const double p = -(static_cast<double>(reg.counts[i]) / reg.counts[from]) * rate * w * dt;
          outcomes[from].push_back({i, Vector(), p, true});
        }
      }
    }

    struct Move {
      int from;
      int target;
      Vector state;
      std::int64_t count;
    };
    std::vector<Move> moves;
    for (int i = 0; i < r; ++i) {
      if (outcomes[i].empty()) continue;
      double total = 0.0;
      bool any_reverse = false;
      for (const auto& o : outcomes[i]) {
        total += o.p;
        any_reverse = any_reverse || o.reverse;
      }
      if (total > 1.0) {
        if (any_reverse)
          throw ReverseJumpError("nmqj: reverse jump probability " + fmt(total) +
                                 " exceeds one at t = " + fmt(t) + " (target occupation " +
                                 std::to_string(reg.counts[i]) + ")");
        throw NumericalError("nmqj: jump probability " + fmt(total) + " exceeds one at t = " +
                             fmt(t) + "; reduce dt");
      }
      std::int64_t remaining = reg.counts[i];
      double used = 0.0;
      for (const auto& o : outcomes[i]) {
        if (remaining == 0) break;
        const double q = std::clamp(o.p / (1.0 - used), 0.0, 1.0);
        used += o.p;
        std::binomial_distribution<std::int64_t> binom(remaining, q);
        const std::int64_t c = binom(rng);
        if (c == 0) continue;
        remaining -= c;
        moves.push_back({i, o.target, o.state, c});
        if (o.reverse) {
          out.reverse_jumps += c;
        } else {
          out.jumps += c;
        }
      }
    }
    for (auto& m : moves) {
      const int to = m.target >= 0 ? m.target : reg.insert(m.state, ftol);
      reg.counts[m.from] -= m.count;
      reg.counts[to] += m.count;
    }

    // deterministic evolution, then drop empty states
    const Matrix& keff = sched.data[k].k_eff;
    Registry next;
    std::int64_t total = 0;
    for (std::size_t i = 0; i < reg.states.size(); ++i) {
      if (reg.counts[i] == 0) continue;
      Vector psi = reg.states[i];
      no_jump(psi, keff, dt);
      normalize(psi, t);
      next.states.push_back(std::move(psi));
      next.counts.push_back(reg.counts[i]);
      total += reg.counts[i];
    }
    if (total != members) throw NumericalError("nmqj: occupation numbers no longer sum to N");
    reg = std::move(next);
  }
  return out;
}

EnsembleResult run_nmqj(const Schedule& sched, const InitialStrata& init, const UnravelConfig& cfg) {
  const int b = std::max(1, cfg.batches);
  if (cfg.n_traj < b)
    throw ConfigError("nmqj needs at least as many members (" + std::to_string(cfg.n_traj) +
                      ") as batches (" + std::to_string(b) + ")");
  const int d = sched.dim, p = d * d;
  const int every = std::max(1, cfg.output_every);
  const int n_out = sched.steps / every + 1;
  std::vector<NmqjReplicaResult> reps(b);
  parallel_for(b, resolve_threads(cfg.threads), [&](int r) {
    std::mt19937_64 rng = stream_rng(cfg.seed, cfg.stream, r, 0x6e6d716a);
    const int members = cfg.n_traj / b + (r < cfg.n_traj % b ? 1 : 0);
    reps[r] = run_nmqj_replica(sched, init, cfg, members, rng);
  });
  // replicas act as the samples of the batch-means estimator
  std::vector<Accumulator> acc(1, Accumulator(n_out, p));
  EnsembleResult out;
  for (const auto& rep : reps) {
    for (int k = 0; k < n_out; ++k) acc[0].add(k, rep.x[k]);
    out.jumps += rep.jumps;
    out.reverse_jumps += rep.reverse_jumps;
    out.max_distinct_states = std::max(out.max_distinct_states, rep.max_states);
  }
  out.series = finish_series(acc, d, n_out, every * sched.dt, b);
  return out;
}

}  // namespace

EnsembleResult run_ensemble(const Schedule& schedule, const Matrix& rho0, const UnravelConfig& cfg) {
  if (cfg.n_traj < 1) throw ConfigError("n_traj must be positive");
  if (schedule.dim < 1) throw Error("run_ensemble: empty schedule");
  const InitialStrata init = initial_strata(rho0, schedule.dim);
  EnsembleResult out = cfg.method == Method::nmqj ? run_nmqj(schedule, init, cfg)
                                                  : run_trajectories(schedule, init, cfg);
  if (schedule.stiffness > 0.1) {
    out.warnings.push_back("dt * max sum |rate| ||L||^2 = " + fmt(schedule.stiffness) +
                           " exceeds 0.1; first-order steps may be inaccurate");
  }
  return out;
}

EnsembleResult run_ensemble(const Generator& gen, const Matrix& rho0, const UnravelConfig& cfg) {
  const Schedule s = build_schedule(gen, cfg.dt, cfg.steps(), needs_diagonal_channels(cfg.method));
  return run_ensemble(s, rho0, cfg);
}

// --------------------------------------------------------------- OPD runs

std::vector<int> generator_classes(const std::vector<Schedule>& schedules, double tol) {
  std::vector<int> cls(schedules.size());
  std::vector<std::vector<Matrix>> superops(schedules.size());
  for (std::size_t a = 0; a < schedules.size(); ++a) {
    for (const auto& step : schedules[a].data) superops[a].push_back(superoperator(step.sample));
  }
  for (std::size_t a = 0; a < schedules.size(); ++a) {
    cls[a] = static_cast<int>(a);
    for (std::size_t b = 0; b < a; ++b) {
      if (cls[b] != static_cast<int>(b)) continue;
      if (schedules[a].steps != schedules[b].steps || schedules[a].dim != schedules[b].dim) continue;
      bool same = true;
      for (std::size_t k = 0; k < superops[a].size() && same; ++k) {
        const double scale = std::max(1.0, superops[b][k].cwiseAbs().maxCoeff());
        same = (superops[a][k] - superops[b][k]).cwiseAbs().maxCoeff() <= tol * scale;
      }
      if (same) {
        cls[a] = static_cast<int>(b);
        break;
      }
    }
  }
  return cls;
}

Schedule truncate_schedule(const Schedule& schedule, int steps) {
  if (steps > schedule.steps) throw Error("truncate_schedule: schedule is too short");
  Schedule s = schedule;
  s.steps = steps;
  s.data.resize(steps);
  return s;
}

OpdUnravelResult unravel_opd(const OPDecomposition& opd, const std::vector<Generator>& generators,
                             const UnravelConfig& cfg,
                             const std::vector<NamedRepreparation>& repreparations) {
  if (generators.size() != opd.branches.size())
    throw DimensionError("unravel_opd: " + std::to_string(generators.size()) +
                         " generators for " + std::to_string(opd.branches.size()) + " branches");
  const int steps = cfg.steps();
  const bool diag = needs_diagonal_channels(cfg.method);
  std::vector<Schedule> schedules;
  for (const auto& g : generators) {
    if (g.dim() != opd.dS) throw DimensionError("unravel_opd: generator dimension differs from d_S");
    schedules.push_back(build_schedule(g, cfg.dt, steps, diag));
  }
  return unravel_opd(opd, schedules, cfg, repreparations);
}

OpdUnravelResult unravel_opd(const OPDecomposition& opd, const std::vector<Schedule>& schedules,
                             const UnravelConfig& cfg,
                             const std::vector<NamedRepreparation>& repreparations) {
  if (schedules.size() != opd.branches.size())
    throw DimensionError("unravel_opd: " + std::to_string(schedules.size()) +
                         " schedules for " + std::to_string(opd.branches.size()) + " branches");
  for (const auto& s : schedules) {
    if (s.steps != cfg.steps() || std::abs(s.dt - cfg.dt) > 1e-15)
      throw Error("unravel_opd: schedule grid differs from the run configuration");
  }

  OpdUnravelResult out;
  out.generator_class = generator_classes(schedules);
  for (std::size_t a = 0; a < out.generator_class.size(); ++a)
    if (out.generator_class[a] == static_cast<int>(a)) ++out.distinct_generators;

  using Key = std::tuple<int, int, int>;  // (class position, α', sign)
  auto key_of = [&](const MapTerm& m) {
    const int pos = opd.branch_position(m.alpha);
    if (pos < 0) throw Error("unravel_opd: term refers to a dropped branch");
    return Key{out.generator_class[pos], m.alpha_prime, m.sign};
  };

  const std::vector<MapTerm> base = recombination_terms(opd);
  std::vector<std::vector<MapTerm>> rep_terms;
  for (const auto& r : repreparations) rep_terms.push_back(repreparation_terms(opd, r.matrix));

  std::map<Key, int> index;
  auto collect = [&](const std::vector<MapTerm>& terms) {
    for (const auto& m : terms) {
      if (m.coefficient != 0.0) index.emplace(key_of(m), 0);
    }
  };
  collect(base);
  for (const auto& t : rep_terms) collect(t);

  for (auto& [key, idx] : index) {
    const auto [cls, ap, sign] = key;
    const auto& split = opd.splits[ap];
    UnravelConfig run_cfg = cfg;
    run_cfg.stream = (static_cast<std::uint64_t>(cls) * 4096 + ap) * 2 + (sign > 0 ? 1 : 0);
    OpdRun run;
    run.generator_class = cls;
    run.alpha_prime = ap;
    run.sign = sign;
    run.result = run_ensemble(schedules[cls], sign > 0 ? split.sigma_plus : split.sigma_minus, run_cfg);
    for (const auto& w : run.result.warnings) out.warnings.push_back(w);
    idx = static_cast<int>(out.runs.size());
    out.runs.push_back(std::move(run));
  }

  // independent runs: coefficients are merged per run before the variances add
  auto combine = [&](const std::vector<MapTerm>& terms) {
    std::map<int, double> coeff;
    for (const auto& m : terms)
      if (m.coefficient != 0.0) coeff[index.at(key_of(m))] += m.coefficient;
    Series s;
    const Series& ref = out.runs.front().result.series;
    s.d = ref.d;
    s.times = ref.times;
    for (std::size_t k = 0; k < ref.times.size(); ++k) {
      Matrix mean = Matrix::Zero(s.d, s.d);
      RealMatrix cov = RealMatrix::Zero(ref.cov[k].rows(), ref.cov[k].cols());
      for (const auto& [run, c] : coeff) {
        mean += c * out.runs[run].result.series.mean[k];
        cov += c * c * out.runs[run].result.series.cov[k];
      }
      s.mean.push_back(mean);
      s.cov.push_back(cov);
    }
    return s;
  };

  if (out.runs.empty()) throw DecompositionError("unravel_opd: no branch to evolve", -1);
  out.recombined = combine(base);
  for (int a : opd.branches) {
    const auto& split = opd.splits[a];
    std::vector<MapTerm> own;
    if (split.mu_plus > 0.0) own.push_back({a, a, +1, split.mu_plus});
    if (split.mu_minus > 0.0) own.push_back({a, a, -1, -split.mu_minus});
    out.branch_maps.push_back(combine(own));
  }
  for (std::size_t r = 0; r < repreparations.size(); ++r)
    out.reprepared.push_back({repreparations[r].name, combine(rep_terms[r])});
  std::sort(out.warnings.begin(), out.warnings.end());
  out.warnings.erase(std::unique(out.warnings.begin(), out.warnings.end()), out.warnings.end());
  return out;
}

}  // namespace opdtraj
