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

"""Trajectory unravelings of initially correlated open quantum systems."""

import csv
import io
import json

from ._opdtraj import (
    ConfigError,
    DecompositionError,
    Error,
    MethodInapplicableError,
    NumericalError,
    OracleCapError,
    PositiveUnravelingError,
    ReverseJumpError,
    __version__,
    compatible,
    decompose,
    jc_single_mode_rates,
    lambda_compatible,
    lindblad_ode,
    pauli_frame,
    two_qubit_rates,
    unravel_lindblad,
)
from ._opdtraj import Experiment as _Experiment


def _rows(text):
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        r["t"] = float(r["t"])
        r["mean"] = float(r["mean"])
        r["stderr"] = float(r["stderr"])
        out.append(r)
    return out


class Experiment:
    """Config-driven experiment; same commands as the CLI."""

    def __init__(self, config, seed=None, threads=None):
        if isinstance(config, dict):
            self._ex = _Experiment.from_text(json.dumps(config))
        else:
            self._ex = _Experiment.from_file(str(config))
        if seed is not None:
            self._ex.set_seed(int(seed))
        if threads is not None:
            self._ex.set_threads(int(threads))

    @property
    def config_hash(self):
        return self._ex.config_hash()

    def decompose(self):
        return json.loads(self._ex.decompose())

    def domain(self):
        return json.loads(self._ex.domain())

    def _table(self, d):
        return {"csv": d["csv"], "rows": _rows(d["csv"]), "metadata": json.loads(d["metadata"])}

    def simulate(self):
        return self._table(self._ex.simulate())

    def exact(self):
        return self._table(self._ex.exact())

    def compare(self):
        d = self._ex.compare()
        out = self._table(d)
        out["pass"] = d["pass"]
        return out


__all__ = [
    "ConfigError",
    "DecompositionError",
    "Error",
    "Experiment",
    "MethodInapplicableError",
    "NumericalError",
    "OracleCapError",
    "PositiveUnravelingError",
    "ReverseJumpError",
    "__version__",
    "compatible",
    "decompose",
    "jc_single_mode_rates",
    "lambda_compatible",
    "lindblad_ode",
    "pauli_frame",
    "two_qubit_rates",
    "unravel_lindblad",
]
