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

#include "opdtraj/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "opdtraj/exact.hpp"
#include "opdtraj/models.hpp"

namespace opdtraj {

namespace {

using Keys = std::initializer_list<const char*>;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const Json& as_object(const Json& v, const std::string& path) {
  if (!v.is_object()) fail(path, "expected an object");
  return v;
}

void check_keys(const Json& obj, const std::string& path, Keys allowed) {
  as_object(obj, path);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    if (!known) fail(path.empty() ? "config" : path, "unknown key '" + it.key() + "'");
  }
}

double get_number(const Json& obj, const char* key, double def, const std::string& path) {
  if (!obj.contains(key)) return def;
  const Json& v = obj[key];
  if (!v.is_number()) fail(join(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(join(path, key), "must be finite");
  return x;
}

std::int64_t get_integer(const Json& obj, const char* key, std::int64_t def,
                         const std::string& path) {
  if (!obj.contains(key)) return def;
  const Json& v = obj[key];
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  return v.get<std::int64_t>();
}

std::string get_text(const Json& obj, const char* key, const std::string& def,
                     const std::string& path) {
  if (!obj.contains(key)) return def;
  const Json& v = obj[key];
  if (!v.is_string()) fail(join(path, key), "expected a string");
  return v.get<std::string>();
}

bool get_flag(const Json& obj, const char* key, bool def, const std::string& path) {
  if (!obj.contains(key)) return def;
  const Json& v = obj[key];
  if (!v.is_boolean()) fail(join(path, key), "expected true or false");
  return v.get<bool>();
}

double positive(double x, const std::string& path) {
  if (!(x > 0.0)) fail(path, "must be positive");
  return x;
}

Complex parse_complex(const Json& v, const std::string& path) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
    return {v[0].get<double>(), v[1].get<double>()};
  fail(path, "expected a number or [re, im]");
}

Matrix parse_matrix(const Json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(v.size());
  if (!v[0].is_array() || v[0].empty()) fail(path, "expected a non-empty array of rows");
  const auto cols = static_cast<Eigen::Index>(v[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = v[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      fail(path, "row " + std::to_string(i) + " has the wrong length");
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = parse_complex(row[j], path + "[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  }
  return m;
}

Vector parse_vector(const Json& v, int dim, const std::string& path) {
  if (v.is_number_integer()) {
    const auto k = v.get<std::int64_t>();
    if (k < 0 || k >= dim) fail(path, "basis index out of range");
    return basis_ket(dim, static_cast<int>(k));
  }
  if (!v.is_array()) fail(path, "expected a basis index or an amplitude array");
  if (static_cast<int>(v.size()) != dim)
    fail(path, "expected " + std::to_string(dim) + " amplitudes");
  Vector psi(dim);
  for (int i = 0; i < dim; ++i) psi(i) = parse_complex(v[i], path + "[" + std::to_string(i) + "]");
  if (psi.norm() == 0.0) fail(path, "zero vector");
  return psi.normalized();
}

Matrix density_matrix(const Matrix& m, const std::string& path) {
  if (m.rows() != m.cols()) fail(path, "matrix must be square");
  if (!is_hermitian(m)) fail(path, "matrix is not Hermitian");
  if (!is_psd(m, 1e-9)) fail(path, "matrix is not positive semidefinite");
  const double tr = m.trace().real();
  if (!(tr > 0.0)) fail(path, "matrix has zero trace");
  if (std::abs(tr - 1.0) > 1e-9) fail(path, "matrix trace is " + format_double(tr));
  return m;
}

Matrix named_operator(const std::string& name, int d, const std::string& path) {
  if (name == "identity") return identity(d);
  if (d != 2) fail(path, "operator '" + name + "' needs a qubit");
  if (name == "sigma_x") return qubit::sigma_x();
  if (name == "sigma_y") return qubit::sigma_y();
  if (name == "sigma_z") return qubit::sigma_z();
  if (name == "sigma_plus") return qubit::sigma_plus();
  if (name == "sigma_minus") return qubit::sigma_minus();
  fail(path, "unknown operator '" + name + "'");
}

Matrix parse_operator(const Json& v, int d, const std::string& path) {
  Matrix m = v.is_string() ? named_operator(v.get<std::string>(), d, path) : parse_matrix(v, path);
  if (m.rows() != d || m.cols() != d) fail(path, "operator must be " + std::to_string(d) + "x" + std::to_string(d));
  return m;
}

JcLabeling parse_labeling(const Json& obj, const std::string& path) {
  const std::string s = get_text(obj, "labeling", "printed", path);
  if (s == "printed") return JcLabeling::printed;
  if (s == "physical") return JcLabeling::physical;
  fail(join(path, "labeling"), "expected printed or physical");
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

// Φ_t as d²×d² matrices from dΦ/dt = L_t Φ.
std::vector<Matrix> map_solve(const Generator& gen, const std::vector<double>& times) {
  const int d = gen.dim();
  const MatrixOde f = [&gen](double t, const Matrix& phi) -> Matrix {
    return superoperator(gen.at(t)) * phi;
  };
  return integrate_ode(f, Matrix::Identity(d * d, d * d), 0.0, times);
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const MethodInapplicableError&) {
    return kExitMethodInapplicable;
  } catch (const ReverseJumpError&) {
    return kExitReverseJump;
  } catch (const DecompositionError&) {
    return kExitDecomposition;
  } catch (const SingularFrameError&) {
    return kExitDecomposition;
  } catch (const PositiveUnravelingError&) {
    return kExitPositiveUnraveling;
  } catch (const OracleCapError&) {
    return kExitOracleCap;
  } catch (const NumericalError&) {
    return kExitNumerical;
  } catch (const nlohmann::json::exception&) {
    return kExitConfig;
  } catch (...) {
    return kExitOther;
  }
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ResultTable::csv() const {
  std::string out = "t,observable,mean,stderr,method,branch\n";
  for (const auto& r : rows) {
    out += format_double(r.t) + "," + r.observable + "," + format_double(r.mean) + "," +
           format_double(r.stderr_) + "," + r.method + "," + r.branch + "\n";
  }
  return out;
}

// ------------------------------------------------------------------ models

struct Experiment::Model {
  std::string name;
  Json params = Json::object();
  int dS = 0;
  int dE = 0;  // 0: system-only model

  Matrix rho_s0;                          // initial system state
  std::optional<BipartiteState> state;    // global initial state
  std::optional<OPDecomposition> opd;
  std::vector<Generator> branch_generators;  // aligned with opd->branches
  Generator system_generator;                // system-only and fixed-correlations
  std::shared_ptr<const GlobalPropagator> propagator;
  std::shared_ptr<const FixedCorrelations> fixed;
  std::optional<CorrelationOperator> correlations;
  bool has_hamiltonian = false;  // a global oracle exists in principle
  int oracle_dim = 0;

  bool bipartite() const { return opd.has_value(); }
};

struct Experiment::Prepared {
  UnravelConfig cfg;
  std::vector<Schedule> schedules;  // per branch, or the single system schedule
  double requested_t_max = 0.0;
  std::string window_note;
};

namespace {

struct StateSpec {
  Json obj;
  std::string preset;
};

StateSpec read_state_spec(const Json& config, const std::string& fallback) {
  StateSpec s;
  s.obj = config.contains("initial_state") ? config["initial_state"] : Json::object();
  as_object(s.obj, "initial_state");
  s.preset = get_text(s.obj, "preset", fallback, "initial_state");
  return s;
}

BipartiteState bipartite_state(const StateSpec& s, int dS, int dE,
                               const std::function<std::optional<BipartiteState>()>& model_default) {
  const std::string path = "initial_state";
  const Json& o = s.obj;
  if (s.preset == "default") {
    check_keys(o, path, {"preset"});
    auto st = model_default();
    if (!st) fail(path, "model has no default global state");
    return *st;
  }
  if (s.preset == "maximally-entangled" || s.preset == "maximally-entangled-d4") {
    check_keys(o, path, {"preset"});
    if (dS != dE) fail(path, "maximally entangled state needs d_S = d_E");
    if (s.preset == "maximally-entangled-d4" && dS != 4) fail(path, "model is not d = 4");
    Vector psi = Vector::Zero(dS * dE);
    for (int k = 0; k < dS; ++k) psi(k * dE + k) = 1.0 / std::sqrt(static_cast<double>(dS));
    return BipartiteState::pure(psi, dS, dE);
  }
  if (s.preset == "qubit-entangled") {
    check_keys(o, path, {"preset", "psi0", "psi1"});
    if (dS != 2) fail(path, "qubit-entangled needs a qubit system");
    if (!o.contains("psi0") || !o.contains("psi1")) fail(path, "psi0 and psi1 are required");
    const Vector e0 = parse_vector(o["psi0"], dE, join(path, "psi0"));
    const Vector e1 = parse_vector(o["psi1"], dE, join(path, "psi1"));
    Vector psi(2 * dE);
    psi.head(dE) = e0;
    psi.tail(dE) = e1;
    return BipartiteState::pure(psi.normalized(), dS, dE);
  }
  if (s.preset == "product") {
    check_keys(o, path, {"preset", "system", "environment"});
    if (!o.contains("system") || !o.contains("environment"))
      fail(path, "system and environment are required");
    const Matrix rs = density_matrix(parse_matrix(o["system"], join(path, "system")), join(path, "system"));
    const Matrix re = density_matrix(parse_matrix(o["environment"], join(path, "environment")),
                                     join(path, "environment"));
    if (rs.rows() != dS || re.rows() != dE) fail(path, "factor dimensions do not match the model");
    return BipartiteState::product(rs, re);
  }
  if (s.preset == "matrix" || s.preset == "file") {
    Json src;
    if (s.preset == "matrix") {
      check_keys(o, path, {"preset", "matrix"});
      if (!o.contains("matrix")) fail(path, "matrix is required");
      src = Json{{"matrix", o["matrix"]}};
    } else {
      check_keys(o, path, {"preset", "path"});
      const std::string file = get_text(o, "path", "", path);
      std::ifstream in(file);
      if (!in) fail(join(path, "path"), "cannot open '" + file + "'");
      try {
        src = Json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        fail(join(path, "path"), std::string("malformed state file: ") + e.what());
      }
      check_keys(src, file, {"dS", "dE", "matrix"});
      if (get_integer(src, "dS", dS, file) != dS || get_integer(src, "dE", dE, file) != dE)
        fail(file, "dimensions do not match the model");
    }
    const Matrix m = density_matrix(parse_matrix(src["matrix"], join(path, "matrix")), join(path, "matrix"));
    if (m.rows() != dS * dE) fail(path, "matrix must be " + std::to_string(dS * dE) + "-dimensional");
    return BipartiteState(m, dS, dE);
  }
  fail(join(path, "preset"), "unknown or inapplicable preset '" + s.preset + "'");
}

Matrix system_state(const StateSpec& s, int d) {
  const std::string path = "initial_state";
  const Json& o = s.obj;
  if (s.preset == "excited" || s.preset == "ground" || s.preset == "maximally-mixed") {
    check_keys(o, path, {"preset"});
    if (s.preset == "maximally-mixed") return identity(d) / static_cast<double>(d);
    return projector(basis_ket(d, s.preset == "excited" ? d - 1 : 0));
  }
  if (s.preset == "pure") {
    check_keys(o, path, {"preset", "psi"});
    if (!o.contains("psi")) fail(path, "psi is required");
    return projector(parse_vector(o["psi"], d, join(path, "psi")));
  }
  if (s.preset == "matrix") {
    check_keys(o, path, {"preset", "matrix"});
    if (!o.contains("matrix")) fail(path, "matrix is required");
    const Matrix m = density_matrix(parse_matrix(o["matrix"], join(path, "matrix")), join(path, "matrix"));
    if (m.rows() != d) fail(path, "matrix must be " + std::to_string(d) + "-dimensional");
    return m;
  }
  fail(join(path, "preset"), "unknown or inapplicable preset '" + s.preset + "'");
}

Generator lindblad_model_generator(const Json& p, const std::string& path, int& dim) {
  dim = static_cast<int>(get_integer(p, "dim", 2, path));
  if (dim < 1 || dim > 64) fail(join(path, "dim"), "must be between 1 and 64");
  GeneratorSample s;
  s.hamiltonian = p.contains("hamiltonian") ? parse_operator(p["hamiltonian"], dim, join(path, "hamiltonian"))
                                            : Matrix::Zero(dim, dim);
  if (!is_hermitian(s.hamiltonian)) fail(join(path, "hamiltonian"), "not Hermitian");
  if (p.contains("channels")) {
    const Json& ch = p["channels"];
    if (!ch.is_array()) fail(join(path, "channels"), "expected an array");
    for (std::size_t i = 0; i < ch.size(); ++i) {
      const std::string cp = join(path, "channels") + "[" + std::to_string(i) + "]";
      check_keys(ch[i], cp, {"rate", "operator"});
      if (!ch[i].contains("operator")) fail(cp, "operator is required");
      s.channels.push_back({get_number(ch[i], "rate", 1.0, cp), parse_operator(ch[i]["operator"], dim, join(cp, "operator"))});
    }
  }
  return Generator::constant(s, "lindblad");
}

void attach_decomposition(Experiment::Model& m, const Frame& frame,
                          const std::function<Generator(const Matrix&)>& branch_generator) {
  m.opd = decompose(*m.state, frame);
  m.rho_s0 = partial_trace(*m.state, Subsystem::system);
  for (const auto& env : m.opd->env_states) m.branch_generators.push_back(branch_generator(env));
}

std::shared_ptr<Experiment::Model> build_model(const Json& config, PauliFrameVariant variant) {
  if (!config.contains("model")) fail("config", "model is required");
  const Json& mj = config["model"];
  check_keys(mj, "model", {"name", "params"});
  const std::string name = get_text(mj, "name", "", "model");
  const Json p = mj.contains("params") ? mj["params"] : Json::object();
  as_object(p, "model.params");
  const std::string pp = "model.params";

  auto m = std::make_shared<Experiment::Model>();
  m->name = name;

  if (name == "decay") {
    check_keys(p, pp, {"gamma"});
    const double gamma = get_number(p, "gamma", 1.0, pp);
    m->params = {{"gamma", gamma}};
    m->dS = 2;
    m->system_generator = decay_generator(gamma);
    m->rho_s0 = system_state(read_state_spec(config, "excited"), 2);
  } else if (name == "lindblad") {
    check_keys(p, pp, {"dim", "hamiltonian", "channels"});
    m->params = p;
    m->system_generator = lindblad_model_generator(p, pp, m->dS);
    m->rho_s0 = system_state(read_state_spec(config, "maximally-mixed"), m->dS);
  } else if (name == "dephasing-d4") {
    check_keys(p, pp, {"g", "omega", "extraction_step"});
    const double g = get_number(p, "g", 0.5, pp);
    const double omega = get_number(p, "omega", 1.0, pp);
    const double h = positive(get_number(p, "extraction_step", 1e-4, pp), join(pp, "extraction_step"));
    m->params = {{"g", g}, {"omega", omega}, {"extraction_step", h}};
    m->dS = m->dE = 4;
    const DephasingModel model = dephasing_d4_model(g, omega);
    m->has_hamiltonian = true;
    m->oracle_dim = 16;
    m->propagator = std::make_shared<const GlobalPropagator>(model.global_hamiltonian());
    m->state = bipartite_state(read_state_spec(config, "maximally-entangled-d4"), 4, 4,
                               [] { return std::nullopt; });
    auto prop = m->propagator;
    attach_decomposition(*m, build_pauli_frame(4, variant),
                         [prop, h](const Matrix& env) { return dephasing_generator(prop, env, 4, h); });
  } else if (name == "jc-single-mode") {
    check_keys(p, pp, {"omega0", "omega", "g", "cutoff", "labeling"});
    JcSingleModeParams jp;
    jp.omega0 = get_number(p, "omega0", jp.omega0, pp);
    jp.omega = get_number(p, "omega", jp.omega, pp);
    jp.g = get_number(p, "g", jp.g, pp);
    const JcLabeling labeling = parse_labeling(p, pp);
    StateSpec spec = read_state_spec(config, "single-mode-entangled");
    if (spec.preset == "single-mode-entangled") {
      check_keys(spec.obj, "initial_state", {"preset", "n0", "n1"});
      jp.n0 = static_cast<int>(get_integer(spec.obj, "n0", 1, "initial_state"));
      jp.n1 = static_cast<int>(get_integer(spec.obj, "n1", 0, "initial_state"));
      if (jp.n0 < 0 || jp.n1 < 0) fail("initial_state", "occupations must be non-negative");
    }
    jp.cutoff = static_cast<int>(get_integer(p, "cutoff", -1, pp));
    if (jp.cutoff != -1 && jp.cutoff <= std::max(jp.n0, jp.n1))
      fail(join(pp, "cutoff"), "must exceed the initial occupations");
    const int L = jp.fock_cutoff();
    m->params = {{"omega0", jp.omega0}, {"omega", jp.omega}, {"g", jp.g}, {"cutoff", L},
                 {"labeling", labeling == JcLabeling::printed ? "printed" : "physical"}};
    m->dS = 2;
    m->dE = L;
    m->has_hamiltonian = true;
    m->oracle_dim = 2 * L;
    if (m->oracle_dim <= kDefaultOracleCap)
      m->propagator = std::make_shared<const GlobalPropagator>(jc_single_mode_model(jp).global_hamiltonian());
    if (spec.preset == "single-mode-entangled") {
      spec.preset = "default";
      spec.obj = Json{{"preset", "default"}};
    }
    m->state = bipartite_state(spec, 2, L, [&] {
      return std::optional<BipartiteState>(BipartiteState::pure(jc_single_mode_initial_state(jp), 2, L));
    });
    attach_decomposition(*m, build_pauli_frame(2, variant), [jp, labeling](const Matrix& env) {
      return jc_single_mode_generator(mean_occupation(env), jp.omega0, jp.omega, jp.g, labeling);
    });
  } else if (name == "jc-continuum") {
    check_keys(p, pp, {"g", "occupation", "omega_c", "omega0", "labeling"});
    JcContinuumParams cp;
    cp.g = get_number(p, "g", cp.g, pp);
    cp.occupation = get_number(p, "occupation", cp.occupation, pp);
    cp.omega_c = get_number(p, "omega_c", cp.omega_c, pp);
    cp.omega0 = get_number(p, "omega0", cp.omega0, pp);
    if (!(cp.omega_c > cp.omega0 && cp.omega0 > 0.0)) fail(pp, "needs omega_c > omega0 > 0");
    if (cp.occupation < 0.0) fail(join(pp, "occupation"), "must be non-negative");
    const JcLabeling labeling = parse_labeling(p, pp);
    m->params = {{"g", cp.g}, {"occupation", cp.occupation}, {"omega_c", cp.omega_c},
                 {"omega0", cp.omega0}, {"labeling", labeling == JcLabeling::printed ? "printed" : "physical"}};
    // environment basis: vacuum, occupied band
    m->dS = 2;
    m->dE = 2;
    m->state = bipartite_state(read_state_spec(config, "default"), 2, 2, [] {
      Vector psi = Vector::Zero(4);
      psi(0) = psi(3) = 1.0 / std::sqrt(2.0);
      return std::optional<BipartiteState>(BipartiteState::pure(psi, 2, 2));
    });
    attach_decomposition(*m, build_pauli_frame(2, variant), [cp, labeling](const Matrix& env) {
      return jc_continuum_generator(cp, env(1, 1).real(), labeling);
    });
  } else if (name == "two-qubit") {
    check_keys(p, pp, {"g", "omega1", "omega2", "omega", "mu", "cutoff"});
    TwoQubitParams tp;
    tp.g = get_number(p, "g", tp.g, pp);
    tp.omega1 = get_number(p, "omega1", tp.omega1, pp);
    tp.omega2 = get_number(p, "omega2", tp.omega2, pp);
    tp.omega = get_number(p, "omega", tp.omega, pp);
    tp.mu = get_number(p, "mu", tp.mu, pp);
    tp.cutoff = static_cast<int>(get_integer(p, "cutoff", tp.cutoff, pp));
    if (tp.cutoff < 1) fail(join(pp, "cutoff"), "must be positive");
    m->params = {{"g", tp.g}, {"omega1", tp.omega1}, {"omega2", tp.omega2}, {"omega", tp.omega},
                 {"mu", tp.mu}, {"cutoff", tp.cutoff}};
    m->dS = 2;
    m->dE = 2 * tp.cutoff;
    const ApoModel model = two_qubit_model(tp);
    m->has_hamiltonian = true;
    m->oracle_dim = 2 * m->dE;
    if (m->oracle_dim <= kDefaultOracleCap)
      m->propagator = std::make_shared<const GlobalPropagator>(model.global_hamiltonian());
    m->state = bipartite_state(read_state_spec(config, "default"), 2, m->dE, [&] {
      return std::optional<BipartiteState>(BipartiteState::pure(two_qubit_initial_state(tp), 2, 2 * tp.cutoff));
    });
    attach_decomposition(*m, build_pauli_frame(2, variant), [model](const Matrix& env) {
      auto apo = std::make_shared<const ApoGenerator>(model, env);
      return Generator(2, [apo](double t) { return apo->sample(t); }, "apo");
    });
  } else if (name == "fixed-correlations") {
    check_keys(p, pp, {"g", "omega", "extraction_step", "system_state"});
    const double g = get_number(p, "g", 0.5, pp);
    const double omega = get_number(p, "omega", 1.0, pp);
    const double h = positive(get_number(p, "extraction_step", 1e-4, pp), join(pp, "extraction_step"));
    m->params = {{"g", g}, {"omega", omega}, {"extraction_step", h}};
    m->dS = 4;
    const DephasingModel model = dephasing_d4_model(g, omega);
    const BipartiteState global = bipartite_state(read_state_spec(config, "maximally-entangled-d4"), 4, 4,
                                                  [] { return std::nullopt; });
    m->correlations = correlations_of(global);
    m->rho_s0 = partial_trace(global, Subsystem::system);
    if (p.contains("system_state")) {
      m->rho_s0 = density_matrix(parse_matrix(p["system_state"], join(pp, "system_state")), join(pp, "system_state"));
      if (m->rho_s0.rows() != 4) fail(join(pp, "system_state"), "must be 4-dimensional");
      if (!compatible_state_check(*m->correlations, m->rho_s0))
        fail(join(pp, "system_state"), "state is outside the compatible domain");
    }
    m->fixed = std::make_shared<const FixedCorrelations>(model.global_hamiltonian(), *m->correlations, h);
    m->system_generator = m->fixed->generator();
    m->has_hamiltonian = true;
    m->oracle_dim = 16;
  } else {
    fail("model.name", "unknown model '" + name + "'");
  }
  return m;
}

std::vector<ObservableSpec> default_observables(int d) {
  std::vector<ObservableSpec> out;
  if (d == 2) {
    out.push_back({"sigma_x", qubit::sigma_x(), true});
    out.push_back({"sigma_y", qubit::sigma_y(), true});
    out.push_back({"sigma_z", qubit::sigma_z(), true});
    return out;
  }
  out.push_back({"rho01", ket_bra(d, 1, 0), false});
  for (int k = 0; k < d; ++k) out.push_back({"p" + std::to_string(k), ket_bra(d, k, k), true});
  return out;
}

std::vector<ObservableSpec> parse_observables(const Json& v, int d) {
  if (!v.is_array() || v.empty()) fail("observables", "expected a non-empty array");
  std::vector<ObservableSpec> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string path = "observables[" + std::to_string(i) + "]";
    check_keys(v[i], path, {"name", "element", "operator"});
    ObservableSpec o;
    o.name = get_text(v[i], "name", "", path);
    if (o.name.empty() || o.name.find_first_of(",\n\"") != std::string::npos)
      fail(join(path, "name"), "needs a non-empty name without commas or quotes");
    if (!seen.insert(o.name).second) fail(join(path, "name"), "duplicate observable '" + o.name + "'");
    if (v[i].contains("element") == v[i].contains("operator"))
      fail(path, "give exactly one of element or operator");
    if (v[i].contains("element")) {
      const Json& e = v[i]["element"];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
        fail(join(path, "element"), "expected [i, j]");
      const int a = e[0].get<int>();
      const int b = e[1].get<int>();
      if (a < 0 || b < 0 || a >= d || b >= d) fail(join(path, "element"), "index out of range");
      o.op = ket_bra(d, b, a);  // tr[ρ |j⟩⟨i|] = ⟨i|ρ|j⟩
      o.hermitian = a == b;
    } else {
      o.op = parse_operator(v[i]["operator"], d, join(path, "operator"));
      o.hermitian = is_hermitian(o.op);
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<std::pair<std::string, CpMap>> parse_repreparations(const Json& v, int d) {
  if (!v.is_array()) fail("repreparations", "expected an array");
  std::vector<std::pair<std::string, CpMap>> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string path = "repreparations[" + std::to_string(i) + "]";
    check_keys(v[i], path, {"name", "type", "n", "m", "p"});
    const std::string type = get_text(v[i], "type", "", path);
    CpMap map;
    if (type == "bell") {
      const int n = static_cast<int>(get_integer(v[i], "n", 0, path));
      const int m = static_cast<int>(get_integer(v[i], "m", 0, path));
      map = bell_repreparation(d, n, m);
    } else if (type == "zero-discord") {
      if (!v[i].contains("p") || !v[i]["p"].is_array()) fail(join(path, "p"), "expected a probability array");
      std::vector<double> p;
      for (const auto& x : v[i]["p"]) {
        if (!x.is_number()) fail(join(path, "p"), "expected numbers");
        p.push_back(x.get<double>());
      }
      if (static_cast<int>(p.size()) != d) fail(join(path, "p"), "needs " + std::to_string(d) + " entries");
      double sum = 0.0;
      for (double x : p) {
        if (x < 0.0) fail(join(path, "p"), "entries must be non-negative");
        sum += x;
      }
      if (std::abs(sum - 1.0) > 1e-12) fail(join(path, "p"), "entries must sum to one");
      map = zero_discord_repreparation(p);
    } else if (type == "factorize") {
      map = factorize_repreparation(d);
    } else if (type == "identity") {
      map = identity_map(d);
    } else {
      fail(join(path, "type"), "expected bell, zero-discord, factorize or identity");
    }
    const std::string name = get_text(v[i], "name", type + std::to_string(i), path);
    if (name.find_first_of(",\n\"") != std::string::npos) fail(join(path, "name"), "no commas or quotes");
    if (!seen.insert(name).second) fail(join(path, "name"), "duplicate repreparation '" + name + "'");
    out.emplace_back(name, std::move(map));
  }
  return out;
}

}  // namespace

// -------------------------------------------------------------- experiment

Experiment Experiment::from_json(const Json& config) {
  Experiment ex;
  check_keys(config, "", {"model", "initial_state", "frame", "method", "unravel", "window",
                          "observables", "repreparations", "outputs", "oracle", "seed",
                          "threads", "domain", "compare"});
  ex.config_ = config;

  PauliFrameVariant variant = PauliFrameVariant::balanced;
  if (config.contains("frame")) {
    check_keys(config["frame"], "frame", {"variant"});
    const std::string v = get_text(config["frame"], "variant", "balanced", "frame");
    if (v == "gell-mann") variant = PauliFrameVariant::gell_mann;
    else if (v != "balanced") fail("frame.variant", "expected balanced or gell-mann");
  }

  UnravelConfig& u = ex.unravel_;
  try {
    u.method = parse_method(get_text(config, "method", "mcwf", ""));
  } catch (const ConfigError& e) {
    fail("method", e.what());
  }
  const Json uj = config.contains("unravel") ? config["unravel"] : Json::object();
  check_keys(uj, "unravel", {"dt", "t_max", "n_traj", "output_dt", "batches", "policy",
                             "qsd_drift", "sampling", "rate_tol", "fidelity_tol"});
  u.dt = positive(get_number(uj, "dt", 1e-3, "unravel"), "unravel.dt");
  u.t_max = get_number(uj, "t_max", 1.0, "unravel");
  if (u.t_max < 0.0) fail("unravel.t_max", "must be non-negative");
  const auto n_traj = get_integer(uj, "n_traj", 1000, "unravel");
  if (n_traj < 2 || n_traj > 100000000) fail("unravel.n_traj", "must be between 2 and 1e8");
  u.n_traj = static_cast<int>(n_traj);
  const double output_dt = positive(get_number(uj, "output_dt", 0.1, "unravel"), "unravel.output_dt");
  const double ratio = output_dt / u.dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1)
    fail("unravel.output_dt", "must be a positive multiple of dt");
  u.output_every = static_cast<int>(std::llround(ratio));
  if (u.steps() % u.output_every != 0) fail("unravel.t_max", "must be a multiple of output_dt");
  const auto batches = get_integer(uj, "batches", 20, "unravel");
  if (batches < 2) fail("unravel.batches", "needs at least 2");
  u.batches = static_cast<int>(batches);
  if (u.method == Method::nmqj && u.n_traj < u.batches)
    fail("unravel.n_traj", "fewer trajectories than batches");
  const std::string policy = get_text(uj, "policy", "basis-targets", "unravel");
  if (policy == "basis-targets") u.policy = PsiRoPolicy::basis_targets;
  else if (policy == "zero") u.policy = PsiRoPolicy::zero;
  else fail("unravel.policy", "expected basis-targets or zero");
  const std::string drift = get_text(uj, "qsd_drift", "norm-preserving", "unravel");
  if (drift == "norm-preserving") u.qsd_drift = QsdDrift::norm_preserving;
  else if (drift == "printed") u.qsd_drift = QsdDrift::printed;
  else fail("unravel.qsd_drift", "expected norm-preserving or printed");
  const std::string sampling = get_text(uj, "sampling", "proportional", "unravel");
  if (sampling == "proportional") u.sampling = InitialSampling::proportional;
  else if (sampling == "multinomial") u.sampling = InitialSampling::multinomial;
  else fail("unravel.sampling", "expected proportional or multinomial");
  u.rate_tol = get_number(uj, "rate_tol", u.rate_tol, "unravel");
  u.fidelity_tol = get_number(uj, "fidelity_tol", u.fidelity_tol, "unravel");
  if (u.rate_tol < 0.0 || u.fidelity_tol < 0.0) fail("unravel", "tolerances must be non-negative");

  const auto seed = get_integer(config, "seed", 1, "");
  if (seed < 0) fail("seed", "must be non-negative");
  u.seed = static_cast<std::uint64_t>(seed);
  const auto threads = get_integer(config, "threads", 0, "");
  if (threads < 0) fail("threads", "must be non-negative");
  u.threads = static_cast<int>(threads);

  const std::string window = get_text(config, "window", "full", "");
  if (window == "cp-divisible") ex.cp_window_ = true;
  else if (window != "full") fail("window", "expected full or cp-divisible");

  ex.oracle_ = get_text(config, "oracle", "auto", "");
  if (ex.oracle_ != "auto" && ex.oracle_ != "global" && ex.oracle_ != "master-equation")
    fail("oracle", "expected auto, global or master-equation");

  if (config.contains("outputs")) {
    check_keys(config["outputs"], "outputs", {"branches", "rates"});
    ex.branch_output_ = get_flag(config["outputs"], "branches", false, "outputs");
    ex.rate_output_ = get_flag(config["outputs"], "rates", false, "outputs");
  }
  if (config.contains("compare")) {
    check_keys(config["compare"], "compare", {"threshold"});
    ex.compare_threshold_ =
        positive(get_number(config["compare"], "threshold", 4.0, "compare"), "compare.threshold");
  }
  if (config.contains("domain")) {
    const Json& d = config["domain"];
    check_keys(d, "domain", {"family", "n", "lambdas", "samples"});
    const std::string family = get_text(d, "family", "lambda", "domain");
    if (family != "lambda" && family != "model") fail("domain.family", "expected lambda or model");
    if (get_integer(d, "n", 2, "domain") < 2) fail("domain.n", "must be at least 2");
    if (get_integer(d, "samples", 10000, "domain") < 1) fail("domain.samples", "must be positive");
    if (d.contains("lambdas")) {
      if (!d["lambdas"].is_array() || d["lambdas"].empty()) fail("domain.lambdas", "expected a non-empty array");
      for (const auto& l : d["lambdas"]) {
        if (!l.is_number() || l.get<double>() < 0.0 || l.get<double>() > 1.0)
          fail("domain.lambdas", "entries must lie in [0, 1]");
      }
    }
  }

  const bool domain_only = config.contains("domain") && !config.contains("model");
  if (!domain_only) {
    try {
      ex.model_ = build_model(config, variant);
    } catch (const ConfigError&) {
      throw;
    } catch (const OracleCapError&) {
      throw;
    } catch (const DecompositionError&) {
      throw;
    } catch (const SingularFrameError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
    const int d = ex.model_->dS;
    ex.observables_ = config.contains("observables") ? parse_observables(config["observables"], d)
                                                     : default_observables(d);
    if (config.contains("repreparations")) {
      if (!ex.model_->bipartite()) fail("repreparations", "model has no decomposition");
      ex.repreparations_ = parse_repreparations(config["repreparations"], d);
    }
    if (ex.branch_output_ && !ex.model_->bipartite())
      fail("outputs.branches", "model has no decomposition");
    if (ex.oracle_ == "global" && !ex.model_->has_hamiltonian)
      fail("oracle", "model '" + ex.model_->name + "' has no global Hamiltonian");
  } else {
    for (const char* k : {"initial_state", "observables", "repreparations"})
      if (config.contains(k)) fail(k, "needs a model");
  }
  return ex;
}

Experiment Experiment::from_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

Experiment Experiment::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void Experiment::set_seed(std::uint64_t seed) {
  unravel_.seed = seed;
  config_["seed"] = seed;
}

void Experiment::set_threads(int threads) {
  if (threads < 0) throw ConfigError("threads must be non-negative");
  unravel_.threads = threads;
}

std::uint64_t Experiment::config_hash() const {
  nlohmann::json canonical = nlohmann::json::parse(config_.dump());
  canonical.erase("threads");
  canonical["seed"] = unravel_.seed;
  return fnv1a64(canonical.dump());
}

std::string Experiment::config_hash_hex() const { return hex64(config_hash()); }

const std::string& Experiment::model_name() const {
  static const std::string none = "none";
  return model_ ? model_->name : none;
}

bool Experiment::has_decomposition() const { return model_ && model_->bipartite(); }

const OPDecomposition& Experiment::decomposition() const {
  if (!has_decomposition()) throw ConfigError("model has no decomposition");
  return *model_->opd;
}

Json Experiment::base_metadata(const std::string& command) const {
  Json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["config_hash"] = config_hash_hex();
  m["seed"] = unravel_.seed;
  if (model_) {
    m["model"] = model_->name;
    m["params"] = model_->params;
  }
  return m;
}

void Experiment::add_rows(ResultTable& table, const Series& s, const std::string& branch,
                          const std::string& method) const {
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    for (const auto& o : observables_) {
      const Estimate e = s.estimate(k, o.op);
      if (o.hermitian) {
        table.rows.push_back({s.times[k], o.name, e.mean.real(), e.se_re, method, branch});
      } else {
        table.rows.push_back({s.times[k], o.name + ".re", e.mean.real(), e.se_re, method, branch});
        table.rows.push_back({s.times[k], o.name + ".im", e.mean.imag(), e.se_im, method, branch});
      }
    }
  }
}

void Experiment::add_rows(ResultTable& table, double t, const Matrix& rho, const std::string& branch,
                          const std::string& method) const {
  for (const auto& o : observables_) {
    const Complex v = (o.op * rho).trace();
    if (o.hermitian) {
      table.rows.push_back({t, o.name, v.real(), 0.0, method, branch});
    } else {
      table.rows.push_back({t, o.name + ".re", v.real(), 0.0, method, branch});
      table.rows.push_back({t, o.name + ".im", v.imag(), 0.0, method, branch});
    }
  }
}

Experiment::Prepared Experiment::prepare() const {
  if (!model_) throw ConfigError("command needs a model");
  Prepared prep;
  prep.cfg = unravel_;
  prep.requested_t_max = unravel_.t_max;
  const int steps = unravel_.steps();
  const bool diag = needs_diagonal_channels(unravel_.method);
  if (model_->bipartite()) {
    for (const auto& g : model_->branch_generators) prep.schedules.push_back(build_schedule(g, unravel_.dt, steps, diag));
  } else {
    prep.schedules.push_back(build_schedule(model_->system_generator, unravel_.dt, steps, diag));
  }
  if (cp_window_) {
    double end = unravel_.t_max;
    for (const auto& s : prep.schedules) end = std::min(end, cp_divisible_until(s, unravel_.rate_tol));
    const double grid = unravel_.output_every * unravel_.dt;
    const int n_out = static_cast<int>(std::floor(end / grid + 1e-9));
    if (n_out < 1) {
      throw MethodInapplicableError("cp-divisible window is empty: a rate is negative before t = " +
                                    format_double(grid));
    }
    prep.cfg.t_max = n_out * grid;
    const int kept = prep.cfg.steps();
    for (auto& s : prep.schedules) s = truncate_schedule(s, kept);
    prep.window_note = "cp-divisible window ends at t = " + format_double(end);
  }
  return prep;
}

std::string Experiment::oracle_kind() const {
  std::string kind = oracle_;
  if (kind == "auto") kind = model_->fixed || model_->name == "dephasing-d4" ? "global" : "master-equation";
  if (kind == "global" && model_->bipartite() && !model_->propagator) {
    throw OracleCapError("global oracle dimension " + std::to_string(model_->oracle_dim) +
                         " exceeds the cap " + std::to_string(kDefaultOracleCap));
  }
  return kind;
}

std::vector<std::pair<std::string, Series>> Experiment::simulated_states(const Prepared& prep,
                                                                         Json& stats) const {
  std::vector<std::pair<std::string, Series>> out;
  Json warnings = Json::array();
  if (model_->bipartite()) {
    std::vector<NamedRepreparation> reps;
    for (const auto& [name, map] : repreparations_)
      reps.push_back({name, expand_repreparation(map, model_->opd->frame)});
    const OpdUnravelResult r = unravel_opd(*model_->opd, prep.schedules, prep.cfg, reps);
    out.emplace_back("recombined", r.recombined);
    for (const auto& [name, s] : r.reprepared) out.emplace_back("reprep:" + name, s);
    if (branch_output_) {
      for (std::size_t k = 0; k < model_->opd->branches.size(); ++k)
        out.emplace_back("branch:" + model_->opd->frame.labels[model_->opd->branches[k]], r.branch_maps[k]);
    }
    std::int64_t jumps = 0, reverse = 0;
    int states = 0;
    Json runs = Json::array();
    for (const auto& run : r.runs) {
      jumps += run.result.jumps;
      reverse += run.result.reverse_jumps;
      states = std::max(states, run.result.max_distinct_states);
      runs.push_back({{"generator_class", model_->opd->frame.labels[model_->opd->branches[run.generator_class]]},
                      {"initial", model_->opd->frame.labels[run.alpha_prime]},
                      {"sign", run.sign},
                      {"jumps", run.result.jumps},
                      {"reverse_jumps", run.result.reverse_jumps}});
    }
    Json classes = Json::object();
    for (std::size_t k = 0; k < r.generator_class.size(); ++k)
      classes[model_->opd->frame.labels[model_->opd->branches[k]]] =
          model_->opd->frame.labels[model_->opd->branches[r.generator_class[k]]];
    stats["distinct_generators"] = r.distinct_generators;
    stats["generator_classes"] = classes;
    stats["runs"] = runs;
    stats["jumps"] = jumps;
    stats["reverse_jumps"] = reverse;
    if (prep.cfg.method == Method::nmqj) stats["max_distinct_states"] = states;
    for (const auto& w : r.warnings) warnings.push_back(w);
  } else {
    const EnsembleResult r = run_ensemble(prep.schedules.front(), model_->rho_s0, prep.cfg);
    out.emplace_back("system", r.series);
    stats["jumps"] = r.jumps;
    stats["reverse_jumps"] = r.reverse_jumps;
    if (prep.cfg.method == Method::nmqj) stats["max_distinct_states"] = r.max_distinct_states;
    for (const auto& w : r.warnings) warnings.push_back(w);
  }
  if (!prep.window_note.empty()) warnings.push_back(prep.window_note);
  stats["warnings"] = warnings;
  return out;
}

std::vector<std::pair<std::string, std::vector<Matrix>>> Experiment::oracle_states(
    const std::vector<double>& times) const {
  const Model& m = *model_;
  const std::string kind = oracle_kind();
  std::vector<std::pair<std::string, std::vector<Matrix>>> out;

  if (!m.bipartite()) {
    std::vector<Matrix> states;
    if (m.fixed && kind == "global") {
      for (double t : times) states.push_back(m.fixed->evolve(t, m.rho_s0));
    } else {
      states = lindblad_ode_solve(m.system_generator, m.rho_s0, times);
    }
    out.emplace_back("system", std::move(states));
    return out;
  }

  const OPDecomposition& opd = *m.opd;
  const int dS = m.dS;
  if (kind == "global") {
    const GlobalPropagator& prop = *m.propagator;
    auto global_series = [&](const Matrix& rho) {
      std::vector<Matrix> v;
      for (double t : times) v.push_back(partial_trace(prop.evolve(rho, t), dS, m.dE, Subsystem::system));
      return v;
    };
    out.emplace_back("recombined", global_series(m.state->rho()));
    for (const auto& [name, map] : repreparations_) {
      Matrix rho = Matrix::Zero(dS * m.dE, dS * m.dE);
      const Matrix one = identity(m.dE);
      for (const auto& k : map.kraus) {
        const Matrix kk = tensor_product(k, one);
        rho += kk * m.state->rho() * kk.adjoint();
      }
      const double tr = rho.trace().real();
      if (!(tr > 1e-14)) throw DecompositionError("repreparation '" + name + "' annihilates the state", -1);
      out.emplace_back("reprep:" + name, global_series(rho / tr));
    }
    if (branch_output_) {
      for (std::size_t k = 0; k < opd.branches.size(); ++k) {
        const int a = opd.branches[k];
        const ReducedMapFamily maps(m.propagator, opd.env_states[k], dS);
        std::vector<Matrix> v;
        for (double t : times) v.push_back(maps.apply(t, opd.frame.elements[a]));
        out.emplace_back("branch:" + opd.frame.labels[a], std::move(v));
      }
    }
    return out;
  }

  // master equation: one map ODE per branch
  std::vector<std::vector<Matrix>> maps;
  for (const auto& g : m.branch_generators) maps.push_back(map_solve(g, times));
  auto pairs_at = [&](std::size_t i) {
    EvolvedPairs ev;
    for (std::size_t k = 0; k < opd.branches.size(); ++k) {
      for (int ap = 0; ap < opd.frame.size(); ++ap) {
        const auto& sp = opd.splits[ap];
        BranchPair bp;
        bp.plus = sp.mu_plus > 0.0 ? apply_superoperator(maps[k][i], sp.sigma_plus) : Matrix::Zero(dS, dS);
        bp.minus = sp.mu_minus > 0.0 ? apply_superoperator(maps[k][i], sp.sigma_minus) : Matrix::Zero(dS, dS);
        ev[{opd.branches[k], ap}] = bp;
      }
    }
    return ev;
  };
  std::vector<RepreparationMatrix> rmats;
  for (const auto& [name, map] : repreparations_) rmats.push_back(expand_repreparation(map, opd.frame));
  const std::vector<MapTerm> base = recombination_terms(opd);
  std::vector<Matrix> rec;
  std::vector<std::vector<Matrix>> rep(rmats.size());
  std::vector<std::vector<Matrix>> br(opd.branches.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const EvolvedPairs ev = pairs_at(i);
    rec.push_back(evaluate_terms(base, ev));
    for (std::size_t r = 0; r < rmats.size(); ++r) rep[r].push_back(reprepared_state(ev, opd, rmats[r]));
    for (std::size_t k = 0; k < opd.branches.size(); ++k)
      br[k].push_back(apply_superoperator(maps[k][i], opd.frame.elements[opd.branches[k]]));
  }
  out.emplace_back("recombined", std::move(rec));
  for (std::size_t r = 0; r < rmats.size(); ++r) out.emplace_back("reprep:" + repreparations_[r].first, std::move(rep[r]));
  if (branch_output_) {
    for (std::size_t k = 0; k < opd.branches.size(); ++k)
      out.emplace_back("branch:" + opd.frame.labels[opd.branches[k]], std::move(br[k]));
  }
  return out;
}

// ---------------------------------------------------------------- commands

Json Experiment::decompose() const {
  if (!has_decomposition()) throw ConfigError("decompose: model '" + model_name() + "' has no environment");
  const OPDecomposition& opd = *model_->opd;
  Json out = base_metadata("decompose");
  out["dS"] = opd.dS;
  out["dE"] = opd.dE;
  out["frame"] = opd.frame.labels;
  const RealMatrix table = duality_table(opd.frame);
  out["duality_residual"] =
      (table - RealMatrix::Identity(table.rows(), table.cols())).cwiseAbs().maxCoeff();
  out["reconstruction_residual"] = (model_->state->rho() - opd.reconstruct()).cwiseAbs().maxCoeff();
  Json branches = Json::array();
  for (std::size_t k = 0; k < opd.branches.size(); ++k) {
    const int a = opd.branches[k];
    const EigenSystem es = hermitian_eig(opd.env_states[k]);
    std::vector<double> spectrum(es.values.data(), es.values.data() + es.values.size());
    std::reverse(spectrum.begin(), spectrum.end());
    while (spectrum.size() > 1 && std::abs(spectrum.back()) < 1e-14) spectrum.pop_back();
    branches.push_back({{"label", opd.frame.labels[a]},
                        {"alpha", a},
                        {"weight", opd.weights[k]},
                        {"mu_plus", opd.splits[a].mu_plus},
                        {"mu_minus", opd.splits[a].mu_minus},
                        {"env_spectrum", spectrum},
                        {"clamped_mass", k < opd.clamped_mass.size() ? opd.clamped_mass[k] : 0.0}});
  }
  out["branches"] = branches;
  Json dropped = Json::array();
  for (int a : opd.dropped) dropped.push_back(opd.frame.labels[a]);
  out["dropped"] = dropped;
  return out;
}

ResultTable Experiment::simulate() const {
  const Prepared prep = prepare();
  ResultTable table;
  Json stats;
  const auto states = simulated_states(prep, stats);
  const std::string method = to_string(prep.cfg.method);
  for (const auto& [branch, s] : states) add_rows(table, s, branch, method);

  if (rate_output_) {
    const std::vector<double>& times = states.front().second.times;
    auto add_rates = [&](const Generator& g, const std::string& branch) {
      const int n = static_cast<int>(times.size());
      const Generator tab = tabulate(g, 0.0, times.size() > 1 ? times[1] - times[0] : unravel_.dt,
                                     std::max(1, n - 1), true);
      for (double t : times) {
        const GeneratorSample s = tab.at(t);
        for (std::size_t j = 0; j < s.channels.size(); ++j)
          table.rows.push_back({t, "rate:" + std::to_string(j), s.channels[j].rate, 0.0, "generator", branch});
      }
    };
    if (model_->bipartite()) {
      const auto& opd = *model_->opd;
      for (std::size_t k = 0; k < opd.branches.size(); ++k)
        add_rates(model_->branch_generators[k], "branch:" + opd.frame.labels[opd.branches[k]]);
    } else {
      add_rates(model_->system_generator, "system");
    }
  }

  table.metadata = base_metadata("simulate");
  table.metadata["method"] = method;
  table.metadata["n_traj"] = prep.cfg.n_traj;
  table.metadata["dt"] = prep.cfg.dt;
  table.metadata["t_max"] = prep.cfg.t_max;
  table.metadata["requested_t_max"] = prep.requested_t_max;
  table.metadata["window"] = cp_window_ ? "cp-divisible" : "full";
  for (auto it = stats.begin(); it != stats.end(); ++it) table.metadata[it.key()] = it.value();
  return table;
}

ResultTable Experiment::exact() const {
  if (!model_) throw ConfigError("exact needs a model");
  oracle_kind();
  double t_max = unravel_.t_max;
  std::string note;
  if (cp_window_) {
    const Prepared prep = prepare();
    t_max = prep.cfg.t_max;
    note = prep.window_note;
  }
  const double grid = unravel_.output_every * unravel_.dt;
  std::vector<double> times;
  const int n_out = static_cast<int>(std::llround(t_max / grid));
  for (int k = 0; k <= n_out; ++k) times.push_back(k * grid);

  ResultTable table;
  const std::string kind = oracle_kind();
  const std::string method = kind == "global" ? "exact" : "master-equation";
  for (const auto& [branch, states] : oracle_states(times))
    for (std::size_t i = 0; i < times.size(); ++i) add_rows(table, times[i], states[i], branch, method);
  table.metadata = base_metadata("exact");
  table.metadata["oracle"] = kind;
  table.metadata["t_max"] = t_max;
  table.metadata["window"] = cp_window_ ? "cp-divisible" : "full";
  table.metadata["warnings"] = note.empty() ? Json::array() : Json::array({note});
  return table;
}

CompareReport Experiment::compare() const {
  if (!model_) throw ConfigError("compare needs a model");
  oracle_kind();
  const Prepared prep = prepare();
  Json stats;
  const auto sim = simulated_states(prep, stats);
  const std::vector<double>& times = sim.front().second.times;
  const auto ref = oracle_states(times);

  CompareReport rep;
  const std::string kind = oracle_kind();
  Json branches = Json::array();
  int flagged_total = 0;
  for (std::size_t b = 0; b < sim.size(); ++b) {
    const Series& s = sim[b].second;
    const std::vector<Matrix>& r = ref.at(b).second;
    if (ref[b].first != sim[b].first) throw Error("compare: branch mismatch");
    const int d = s.d;
    double worst = 0.0;
    double max_distance = 0.0;
    int flagged = 0;
    Json flags = Json::array();
    for (std::size_t k = 0; k < times.size(); ++k) {
      const auto [dist, se_delta] = s.trace_distance(k, r[k]);
      // noise floor: ½‖δρ‖₁ ≤ ½√d ‖δρ‖_F
      double var_f = 0.0;
      for (int i = 0; i < d; ++i) var_f += s.cov[k](i, i);
      for (Eigen::Index i = d; i < s.cov[k].rows(); ++i) var_f += 2.0 * s.cov[k](i, i);
      const double se = std::max(se_delta, 0.5 * std::sqrt(static_cast<double>(d) * std::max(0.0, var_f)));
      const bool flag = dist > compare_threshold_ * se + 1e-12;
      if (se > 0.0) worst = std::max(worst, dist / se);
      max_distance = std::max(max_distance, dist);
      if (flag) {
        ++flagged;
        flags.push_back(times[k]);
      }
      rep.distances.rows.push_back({times[k], "trace_distance", dist, se, to_string(prep.cfg.method), sim[b].first});
    }
    flagged_total += flagged;
    branches.push_back({{"branch", sim[b].first},
                        {"max_distance", max_distance},
                        {"max_ratio", worst},
                        {"flagged", flagged},
                        {"flagged_times", flags},
                        {"pass", flagged == 0}});
  }
  rep.pass = flagged_total == 0;
  rep.summary = base_metadata("compare");
  rep.summary["method"] = to_string(prep.cfg.method);
  rep.summary["oracle"] = kind;
  rep.summary["n_traj"] = prep.cfg.n_traj;
  rep.summary["dt"] = prep.cfg.dt;
  rep.summary["t_max"] = prep.cfg.t_max;
  rep.summary["threshold"] = compare_threshold_;
  rep.summary["branches"] = branches;
  for (auto it = stats.begin(); it != stats.end(); ++it) rep.summary[it.key()] = it.value();
  rep.summary["pass"] = rep.pass;
  rep.distances.metadata = rep.summary;
  return rep;
}

Json Experiment::domain() const {
  const Json d = config_.contains("domain") ? config_["domain"] : Json::object();
  const std::string family = get_text(d, "family", model_ && model_->correlations ? "model" : "lambda", "domain");
  const int samples = static_cast<int>(get_integer(d, "samples", 10000, "domain"));
  Json out = base_metadata("domain");
  out["family"] = family;
  out["samples"] = samples;
  std::mt19937_64 rng(unravel_.seed);

  // full rank and low rank samples alternate
  auto draw = [&](int n, int i) { return random_density_matrix(n, rng, 1 + i % n); };

  if (family == "lambda") {
    const int n = static_cast<int>(get_integer(d, "n", 2, "domain"));
    std::vector<double> lambdas = {0.0, 0.25, 0.5, 1.0};
    if (d.contains("lambdas")) lambdas = d["lambdas"].get<std::vector<double>>();
    out["n"] = n;
    Json rows = Json::array();
    bool all_agree = true;
    for (double lambda : lambdas) {
      const CorrelationOperator corr = lambda_family(n, lambda);
      int brute = 0, closed = 0, agree = 0;
      for (int i = 0; i < samples; ++i) {
        const Matrix rho = draw(n, i);
        const bool a = compatible_state_check(corr, rho);
        const bool b = min_eigenvalue(rho - (lambda / n) * identity(n)) >= -1e-10;
        brute += a;
        closed += b;
        agree += a == b;
      }
      const Matrix mixed = identity(n) / static_cast<double>(n);
      const Matrix nudged = mixed + 1e-3 * (ket_bra(n, 0, 0) - ket_bra(n, 1, 1));
      all_agree = all_agree && agree == samples;
      rows.push_back({{"lambda", lambda},
                      {"compatible_brute_force", brute},
                      {"compatible_closed_form", closed},
                      {"agreements", agree},
                      {"fraction_compatible", static_cast<double>(brute) / samples},
                      {"maximally_mixed_compatible", compatible_state_check(corr, mixed)},
                      {"perturbed_mixed_compatible", compatible_state_check(corr, nudged)}});
    }
    out["results"] = rows;
    out["all_agree"] = all_agree;
    return out;
  }

  if (!model_ || !model_->correlations) throw ConfigError("domain: family 'model' needs the fixed-correlations model");
  const CorrelationOperator& corr = *model_->correlations;
  int hits = 0;
  for (int i = 0; i < samples; ++i) hits += compatible_state_check(corr, draw(corr.dS, i));
  const double f = static_cast<double>(hits) / samples;
  out["dS"] = corr.dS;
  out["compatible"] = hits;
  out["volume_fraction"] = f;
  out["volume_fraction_stderr"] = std::sqrt(f * (1.0 - f) / samples);
  out["margin_initial_state"] = compatibility_margin(corr, model_->rho_s0);
  return out;
}

}  // namespace opdtraj
