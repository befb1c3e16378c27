# Copyright 2026 The opdtraj Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math

import numpy as np
import pytest

import opdtraj


DECAY = {
    "model": {"name": "decay", "params": {"gamma": 1.0}},
    "initial_state": {"preset": "excited"},
    "method": "mcwf",
    "unravel": {"dt": 0.001, "t_max": 1.0, "n_traj": 500, "output_dt": 0.5},
    "seed": 7,
}


def test_version():
    assert opdtraj.__version__ == "0.1.0"


def test_pauli_frame_duality():
    f = opdtraj.pauli_frame(2)
    assert f["labels"] == ["0", "x", "y", "z"]
    for a, q in enumerate(f["elements"]):
        for b, p in enumerate(f["dual"]):
            assert abs(np.trace(p @ q) - (a == b)) < 1e-12


def test_decompose_round_trip():
    psi = np.zeros(4, dtype=complex)
    psi[0] = psi[3] = 1 / math.sqrt(2)
    rho = np.outer(psi, psi.conj())
    d = opdtraj.decompose(rho, 2, 2)
    assert d["reconstruction_residual"] < 1e-12
    assert len(d["weights"]) == len(d["env_states"])


def test_experiment_simulate_and_compare():
    ex = opdtraj.Experiment(DECAY, threads=1)
    sim = ex.simulate()
    assert sim["metadata"]["config_hash"] == ex.config_hash
    sz = [r for r in sim["rows"] if r["observable"] == "sigma_z"]
    assert len(sz) == 3
    assert sz[0]["mean"] == pytest.approx(1.0)
    again = opdtraj.Experiment(DECAY, threads=2).simulate()
    assert again["csv"] == sim["csv"]
    assert opdtraj.Experiment(DECAY).compare()["pass"]


def test_unravel_lindblad_matches_ode():
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    out = opdtraj.unravel_lindblad(np.zeros((2, 2)), [(1.0, sm)], rho0, method="mcwf", dt=1e-3,
                                   t_max=1.0, n_traj=2000, output_every=500, seed=3, threads=1)
    exact = opdtraj.lindblad_ode(np.zeros((2, 2)), [(1.0, sm)], rho0, out["times"])
    p1 = out["mean"][-1][1, 1].real
    assert abs(p1 - exact[-1][1, 1].real) < 4 * 0.5 / math.sqrt(2000) + 1e-3
    assert abs(exact[-1][1, 1].real - math.exp(-1.0)) < 1e-6


def test_two_qubit_rates():
    gp, gm = opdtraj.two_qubit_rates(0.1)
    assert gp == pytest.approx(math.sin(0.1) + 2 * math.sin(0.05), abs=1e-12)
    assert gm < 0


def test_lambda_domain():
    assert opdtraj.lambda_compatible(2, 1.0, np.eye(2) / 2)
    assert not opdtraj.lambda_compatible(2, 1.0, np.diag([0.501, 0.499]))


def test_errors_are_typed():
    bad = dict(DECAY)
    bad["extra"] = 1
    with pytest.raises(opdtraj.ConfigError):
        opdtraj.Experiment(bad)
    assert issubclass(opdtraj.ConfigError, opdtraj.Error)
