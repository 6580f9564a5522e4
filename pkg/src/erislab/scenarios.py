"""Scenario files: a process, the analyses to run on it, and their parameters.

A scenario is a JSON object::

    {
      "name": "flip-cycle-2",
      "eris": {"driver": {"kind": "cycle", "n": 2},
               "channels": {"*": {"kind": "amplitude_flip", "dim": 2}}},
      "analyses": ["validate", "decompose"],
      "params": {"cesaro": {"M": 1000}},
      "seed": 0
    }

Channel keys are symbols (as strings) or ``"*"`` for every symbol not listed.
With a large alphabet and only ``"*"``, channels are generated lazily.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import rng_for
from .channel import ChannelFamily, ChannelSpec, build, conjugate, direct_sum, haar_unitary, random_isometry_kraus
from .driver import FiniteCycleDriver, driver_from_json
from .eris import Eris
from .errors import ErisError, InvalidInput
from .matcore import DEFAULT_TOL, ToleranceProfile

ANALYSES = ("validate", "decompose", "cesaro", "cocycle_check", "ergodic_average", "schaefer", "iid_decompose")
#: Analyses that need the exact (finite cycle) backend.
EXACT_ONLY = frozenset({"decompose", "cocycle_check", "ergodic_average", "schaefer"})
#: Alphabets up to this size get an explicit channel table.
TABLE_LIMIT = 4096


class ScenarioError(InvalidInput):
    """Malformed scenario file."""


@dataclass
class Scenario:
    name: str
    eris: dict
    analyses: list
    params: dict = field(default_factory=dict)
    seed: int = 0
    description: str = ""
    reproduces: str = ""

    def __post_init__(self):
        if not isinstance(self.eris, dict) or "driver" not in self.eris or "channels" not in self.eris:
            raise ScenarioError("scenario needs eris.driver and eris.channels")
        bad = [a for a in self.analyses if a not in ANALYSES]
        if bad:
            raise ScenarioError(f"unknown analyses {bad}; expected a subset of {ANALYSES}")
        if not isinstance(self.params, dict):
            raise ScenarioError("params must be an object")

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        known = {"name", "eris", "analyses", "params", "seed", "description", "reproduces"}
        extra = set(data) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys {sorted(extra)}")
        try:
            return cls(
                name=str(data.get("name", "scenario")),
                eris=copy.deepcopy(data["eris"]),
                analyses=list(data.get("analyses", ["validate", "decompose"])),
                params=copy.deepcopy(data.get("params", {})),
                seed=int(data.get("seed", 0)),
                description=str(data.get("description", "")),
                reproduces=str(data.get("reproduces", "")),
            )
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing {exc}") from None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "eris": self.eris,
            "analyses": self.analyses,
            "params": self.params,
            "seed": self.seed,
            "description": self.description,
            "reproduces": self.reproduces,
        }

    def build_eris(self, tol: ToleranceProfile = DEFAULT_TOL) -> Eris:
        """Resolve driver and channels.  CPTP validation is left to the caller."""
        try:
            driver = driver_from_json(self.eris["driver"])
            channels = _resolve_channels(driver, self.eris["channels"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ErisError):
                raise
            raise ScenarioError(f"bad eris spec: {exc}") from None
        e = Eris(driver, channels, tol, validate=False)
        if not e.is_exact:
            exact = [a for a in self.analyses if a in EXACT_ONLY]
            if exact:
                raise ScenarioError(f"analyses {exact} need a cycle driver")
        return e


def _alphabet(driver) -> int:
    if isinstance(driver, FiniteCycleDriver):
        return driver.n
    return driver.alphabet_size


def _resolve_channels(driver, spec: dict):
    if not isinstance(spec, dict) or not spec:
        raise ScenarioError("channels must be a non-empty object")
    specs = {k: ChannelSpec.from_json(v) for k, v in spec.items()}
    size = _alphabet(driver)
    default = specs.pop("*", None)
    if size > TABLE_LIMIT:
        if specs or default is None:
            raise ScenarioError(f"alphabet of size {size} needs a single '*' channel spec")
        return ChannelFamily(default)
    table = {}
    for s in range(size):
        chosen = specs.pop(str(s), None) or default
        if chosen is None:
            raise ScenarioError(f"no channel for symbol {s}")
        table[s] = build(chosen, s)
    if specs:
        raise ScenarioError(f"channel keys {sorted(specs)} are not symbols of the driver")
    return table


def load(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return Scenario.from_json(data)


# --- builtin library ----------------------------------------------------------------------------

_FLIP_FIELD = [{"dim": 2, "re": [[1, 0], [0, 0]], "im": [[0, 0], [0, 0]]}, {"dim": 2, "re": [[0, 0], [0, 1]], "im": [[0, 0], [0, 0]]}]

_BUILTINS = {
    "flip-cycle-2": {
        "reproduces": "reducible process from the period-2 flip channel on a 2-cycle; two minimal blocks",
        "eris": {"driver": {"kind": "cycle", "n": 2}, "channels": {"*": {"kind": "amplitude_flip", "dim": 2}}},
        "analyses": ["validate", "decompose", "cocycle_check", "schaefer", "ergodic_average"],
        "params": {"ergodic_average": {"M": 1000, "state": "maximally_mixed", "observable": {"field": _FLIP_FIELD}}},
    },
    "flip-cycle-3": {
        "reproduces": "period-3 cyclic shift on C^3 over a 3-cycle; three minimal blocks",
        "eris": {"driver": {"kind": "cycle", "n": 3}, "channels": {"*": {"kind": "amplitude_flip", "dim": 3}}},
        "analyses": ["validate", "decompose", "cocycle_check", "schaefer"],
    },
    "haar-iid-d2": {
        "reproduces": "i.i.d. Haar unitaries; Cesaro averages converge to I/d",
        "eris": {
            "driver": {"kind": "iid", "alphabet_size": 2**32},
            "channels": {"*": {"kind": "haar_random_unitary", "dim": 2, "seed": 11}},
        },
        "analyses": ["validate", "cesaro", "iid_decompose"],
        "params": {
            "cesaro": {"M": 5000, "R": 8, "state": "pure0", "target": "maximally_mixed"},
            "iid_decompose": {"samples": 50},
        },
    },
    "depolarizing-0.5": {
        "reproduces": "deterministic depolarizing channel; dynamically ergodic with I/2 stationary",
        "eris": {"driver": {"kind": "cycle", "n": 1}, "channels": {"*": {"kind": "depolarizing", "p": 0.5, "dim": 2}}},
        "analyses": ["validate", "decompose", "cesaro", "cocycle_check", "ergodic_average", "schaefer"],
        "params": {
            "cesaro": {"M": 1000, "state": "pure0"},
            "ergodic_average": {"M": 1000, "state": "random", "observable": "random"},
        },
    },
    "damping-transient": {
        "reproduces": "full amplitude damping; recurrent |0><0|, transient part decays",
        "eris": {"driver": {"kind": "cycle", "n": 1}, "channels": {"*": {"kind": "amplitude_damping", "p": 1.0, "dim": 2}}},
        "analyses": ["validate", "decompose", "cesaro", "ergodic_average"],
        "params": {
            "cesaro": {"M": 1000, "state": "maximally_mixed"},
            "ergodic_average": {"M": 1000, "state": "random", "observable": "transient"},
        },
    },
    "markov-depolarizing": {
        "reproduces": "Markov-driven mixture of a unitary and a depolarizing channel",
        "eris": {
            "driver": {"kind": "markov", "transition": [[0.9, 0.1], [0.4, 0.6]]},
            "channels": {
                "0": {"kind": "unitary", "unitary": {"dim": 2, "re": [[0, 1], [1, 0]], "im": [[0, 0], [0, 0]]}},
                "1": {"kind": "depolarizing", "p": 0.3, "dim": 2},
            },
        },
        "analyses": ["validate", "cesaro"],
        "params": {"cesaro": {"M": 2000, "R": 4, "state": "pure0", "target": "maximally_mixed"}},
    },
    "iid-two-unitary": {
        "reproduces": "i.i.d. mixture of two block-diagonal unitaries; two deterministic blocks",
        "eris": {
            "driver": {"kind": "iid", "alphabet_size": 2, "weights": [0.5, 0.5]},
            "channels": {
                "0": {"kind": "unitary", "unitary": {"dim": 3, "re": [[0, 1, 0], [1, 0, 0], [0, 0, 1]], "im": [[0, 0, 0], [0, 0, 0], [0, 0, 0]]}},
                "1": {"kind": "unitary", "unitary": {"dim": 3, "re": [[0.6, 0.8, 0], [-0.8, 0.6, 0], [0, 0, -1]], "im": [[0, 0, 0], [0, 0, 0], [0, 0, 0]]}},
            },
        },
        "analyses": ["validate", "iid_decompose"],
    },
}


def builtin_names() -> list:
    return sorted(_BUILTINS)


def list_builtins() -> list:
    """``(name, description)`` pairs of the shipped scenarios."""
    return [(name, _BUILTINS[name]["reproduces"]) for name in builtin_names()]


def builtin(name: str) -> Scenario:
    if name not in _BUILTINS:
        raise ScenarioError(f"no builtin scenario {name!r}; try one of {builtin_names()}")
    data = copy.deepcopy(_BUILTINS[name])
    data["name"] = name
    return Scenario.from_json(data)


def resolve(ref: str) -> Scenario:
    """Load a scenario from a file path, falling back to the builtin library."""
    path = Path(ref)
    if path.exists():
        return load(path)
    if ref in _BUILTINS:
        return builtin(ref)
    raise ScenarioError(f"{ref}: no such file or builtin scenario")


# --- random reducible processes ---------------------------------------------------------------


def random_reducible(
    n: int,
    block_dims: list,
    seed: int = 0,
    kraus_count: int = 2,
    rotate: bool = True,
) -> tuple:
    """Cycle process whose channels are direct sums of random channels, optionally rotated.

    With generic random blocks each summand is irreducible, so the process has
    one minimal block per summand.  Returns ``(eris, projections)`` where
    ``projections`` are the deterministic projections onto the summands.
    """
    d = int(sum(block_dims))
    U = haar_unitary(d, rng_for(seed, 999)) if rotate else np.eye(d)
    channels = {}
    for w in range(n):
        ch = None
        for b, db in enumerate(block_dims):
            part = random_isometry_kraus(db, kraus_count, rng_for(seed, w, b))
            ch = part if ch is None else direct_sum(ch, part)
        channels[w] = conjugate(ch, U, U.conj().T)
    projections = []
    start = 0
    for db in block_dims:
        E = np.zeros((d, d))
        E[start : start + db, start : start + db] = np.eye(db)
        projections.append(U @ E @ U.conj().T)
        start += db
    return Eris(FiniteCycleDriver(n), channels), projections
