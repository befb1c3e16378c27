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

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "opdtraj/engines.hpp"
#include "opdtraj/exact.hpp"
#include "opdtraj/experiment.hpp"
#include "opdtraj/frames.hpp"
#include "opdtraj/models.hpp"

namespace py = pybind11;
using namespace opdtraj;

namespace {

py::dict table_dict(const ResultTable& t) {
  py::dict d;
  d["csv"] = t.csv();
  d["metadata"] = t.metadata.dump();
  return d;
}

py::dict series_dict(const Series& s) {
  py::dict d;
  d["times"] = s.times;
  d["mean"] = s.mean;
  py::list se;
  for (const auto& c : s.cov) se.append(RealVector(c.diagonal().cwiseMax(0.0).cwiseSqrt()));
  d["param_stderr"] = se;
  return d;
}

}  // namespace

PYBIND11_MODULE(_opdtraj, m) {
  m.attr("__version__") = kVersion;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<MethodInapplicableError>(m, "MethodInapplicableError", base.ptr());
  py::register_exception<ReverseJumpError>(m, "ReverseJumpError", base.ptr());
  py::register_exception<DecompositionError>(m, "DecompositionError", base.ptr());
  py::register_exception<PositiveUnravelingError>(m, "PositiveUnravelingError", base.ptr());
  py::register_exception<OracleCapError>(m, "OracleCapError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<Experiment>(m, "Experiment")
      .def_static("from_text", &Experiment::from_text, py::arg("text"))
      .def_static("from_file", &Experiment::from_file, py::arg("path"))
      .def("set_seed", &Experiment::set_seed)
      .def("set_threads", &Experiment::set_threads)
      .def("config_hash", &Experiment::config_hash_hex)
      .def("model_name", &Experiment::model_name)
      .def("decompose", [](const Experiment& e) { return e.decompose().dump(); })
      .def("simulate", [](const Experiment& e) {
        ResultTable t;
        {
          py::gil_scoped_release release;
          t = e.simulate();
        }
        return table_dict(t);
      })
      .def("exact", [](const Experiment& e) {
        ResultTable t;
        {
          py::gil_scoped_release release;
          t = e.exact();
        }
        return table_dict(t);
      })
      .def("compare", [](const Experiment& e) {
        CompareReport r;
        {
          py::gil_scoped_release release;
          r = e.compare();
        }
        py::dict d = table_dict(r.distances);
        d["pass"] = r.pass;
        return d;
      })
      .def("domain", [](const Experiment& e) { return e.domain().dump(); });

  m.def("pauli_frame", [](int d, bool gell_mann) {
    const Frame f = build_pauli_frame(d, gell_mann ? PauliFrameVariant::gell_mann : PauliFrameVariant::balanced);
    py::dict out;
    out["labels"] = f.labels;
    out["elements"] = f.elements;
    out["dual"] = f.dual;
    return out;
  }, py::arg("d"), py::arg("gell_mann") = false);

  m.def("decompose", [](const Matrix& rho, int dS, int dE, bool gell_mann) {
    const OPDecomposition opd = decompose(BipartiteState(rho, dS, dE),
        build_pauli_frame(dS, gell_mann ? PauliFrameVariant::gell_mann : PauliFrameVariant::balanced));
    py::dict out;
    std::vector<std::string> labels;
    for (int a : opd.branches) labels.push_back(opd.frame.labels[a]);
    out["labels"] = labels;
    out["weights"] = opd.weights;
    out["env_states"] = opd.env_states;
    out["reconstruction_residual"] = (opd.reconstruct() - rho).cwiseAbs().maxCoeff();
    return out;
  }, py::arg("rho"), py::arg("dS"), py::arg("dE"), py::arg("gell_mann") = false);

  m.def("unravel_lindblad",
        [](const Matrix& hamiltonian, const std::vector<std::pair<double, Matrix>>& channels, const Matrix& rho0,
           const std::string& method, double dt, double t_max, int n_traj, int output_every, std::uint64_t seed,
           int threads) {
          GeneratorSample s;
          s.hamiltonian = hamiltonian;
          for (const auto& [rate, op] : channels) s.channels.push_back({rate, op});
          UnravelConfig c;
          c.method = parse_method(method);
          c.dt = dt;
          c.t_max = t_max;
          c.n_traj = n_traj;
          c.output_every = output_every;
          c.seed = seed;
          c.threads = threads;
          EnsembleResult r;
          {
            py::gil_scoped_release release;
            r = run_ensemble(Generator::constant(s), rho0, c);
          }
          py::dict d = series_dict(r.series);
          d["jumps"] = r.jumps;
          d["warnings"] = r.warnings;
          return d;
        },
        py::arg("hamiltonian"), py::arg("channels"), py::arg("rho0"), py::arg("method") = "mcwf",
        py::arg("dt") = 1e-3, py::arg("t_max") = 1.0, py::arg("n_traj") = 1000, py::arg("output_every") = 100,
        py::arg("seed") = 1, py::arg("threads") = 0);

  m.def("lindblad_ode", [](const Matrix& hamiltonian, const std::vector<std::pair<double, Matrix>>& channels,
                           const Matrix& rho0, const std::vector<double>& times) {
    GeneratorSample s;
    s.hamiltonian = hamiltonian;
    for (const auto& [rate, op] : channels) s.channels.push_back({rate, op});
    return lindblad_ode_solve(Generator::constant(s), rho0, times);
  });

  m.def("two_qubit_rates", [](double t, double g, double omega1) {
    TwoQubitParams p;
    p.g = g;
    p.omega1 = omega1;
    return two_qubit_rates(p, t);
  }, py::arg("t"), py::arg("g") = 1.0, py::arg("omega1") = 1.0);

  m.def("jc_single_mode_rates", [](double n, double omega0, double omega, double g, double t) {
    const JcRates r = jc_single_mode_rates(n, omega0, omega, g, t, JcLabeling::printed);
    return std::make_pair(r.sigma_minus_rate, r.sigma_plus_rate);
  }, py::arg("n"), py::arg("omega0"), py::arg("omega"), py::arg("g"), py::arg("t"));

  m.def("compatible", [](const Matrix& chi, const Matrix& env_state, int dS, const Matrix& rho_s) {
    CorrelationOperator c{chi, env_state, dS};
    return compatible_state_check(c, rho_s);
  });
  m.def("lambda_compatible", [](int n, double lambda, const Matrix& rho_s) {
    return compatible_state_check(lambda_family(n, lambda), rho_s);
  });
}
