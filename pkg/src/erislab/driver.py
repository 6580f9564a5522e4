"""Ergodic drivers ``(Omega, theta, P)`` and trajectory sampling.

Three kinds are supported:

* :class:`FiniteCycleDriver` -- ``Omega = Z/nZ``, uniform measure,
  ``theta(w) = w + 1``.  This is the exact backend: every invertible ergodic
  measure-preserving map of a finite uniform space is a single cycle.
* :class:`IIDDriver` -- Bernoulli shift over a finite alphabet.
* :class:`MarkovDriver` -- stationary Markov shift over a finite alphabet.

The last two have uncountable ``Omega`` and are only reachable through
sampled trajectories.

A trajectory lists the symbols ``(w_1, ..., w_N)`` that select the channels
``phi_1, ..., phi_N``; for a cycle driver with base point ``w`` these are
``w + 1, ..., w + N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._rng import rng_for
from .errors import DimensionMismatch, InvalidInput
from .fields import RandomField


@dataclass(frozen=True)
class FiniteCycleDriver:
    n: int
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 1:
            raise InvalidInput("cycle length must be >= 1")

    @property
    def kind(self) -> str:
        return "cycle"

    @property
    def symbols(self) -> range:
        return range(self.n)

    def theta(self, omega: int, k: int = 1) -> int:
        return (omega + k) % self.n

    def to_json(self) -> dict:
        return {"kind": "cycle", "n": self.n, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class IIDDriver:
    """Bernoulli shift.  ``weights=None`` means uniform over the alphabet."""

    alphabet_size: int
    weights: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.alphabet_size) < 1:
            raise InvalidInput("alphabet_size must be >= 1")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.alphabet_size,):
                raise DimensionMismatch("need one weight per symbol")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise InvalidInput("weights must be strictly positive and sum to 1")
            object.__setattr__(self, "weights", w)

    @property
    def kind(self) -> str:
        return "iid"

    @property
    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.alphabet_size, 1.0 / self.alphabet_size)
        return self.weights

    def to_json(self) -> dict:
        out = {"kind": "iid", "alphabet_size": self.alphabet_size, "seed": self.seed}
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Left Perron vector of a row-stochastic matrix (null space of ``T^T - I``)."""
    T = np.asarray(transition, dtype=float)
    m = T.shape[0]
    A = np.vstack([T.T - np.eye(m), np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def _irreducible(T: np.ndarray) -> bool:
    m = T.shape[0]
    reach = (T > 0).astype(int) + np.eye(m, dtype=int)
    R = np.linalg.matrix_power(reach, max(m - 1, 1)) > 0
    return bool(R.all())


@dataclass(frozen=True, eq=False)
class MarkovDriver:
    transition: np.ndarray
    seed: int = 0
    initial: np.ndarray = field(default=None)

    def __post_init__(self):
        T = np.asarray(self.transition, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise DimensionMismatch("transition matrix must be square")
        if np.any(T < 0) or np.abs(T.sum(axis=1) - 1.0).max() > 1e-12:
            raise InvalidInput("transition matrix must be row-stochastic")
        if not _irreducible(T):
            raise InvalidInput("transition matrix must be irreducible")
        pi = stationary_distribution(T) if self.initial is None else np.asarray(self.initial, dtype=float)
        if np.abs(pi @ T - pi).max() > 1e-10 or abs(pi.sum() - 1.0) > 1e-10:
            raise InvalidInput("initial distribution is not stationary")
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "initial", pi)

    @property
    def kind(self) -> str:
        return "markov"

    @property
    def alphabet_size(self) -> int:
        return self.transition.shape[0]

    def to_json(self) -> dict:
        return {"kind": "markov", "transition": self.transition.tolist(), "seed": self.seed}


Driver = Union[FiniteCycleDriver, IIDDriver, MarkovDriver]


@dataclass(frozen=True, eq=False)
class Trajectory:
    symbols: np.ndarray
    origin: dict

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.int64)
        if s.ndim != 1 or s.size < 1:
            raise InvalidInput("trajectory must be a non-empty 1-d sequence")
        object.__setattr__(self, "symbols", s)

    def __len__(self):
        return self.symbols.size

    def __iter__(self):
        return iter(self.symbols.tolist())


def sample_trajectory(driver: Driver, length: int, stream_id: int = 0, start: Optional[int] = None) -> Trajectory:
    """Sample ``length`` symbols of a path of ``theta``.

    Output is a pure function of ``(driver.seed, stream_id, length, start)``.
    For a cycle driver ``start`` fixes the first symbol; otherwise it is drawn
    uniformly.
    """
    if length < 1:
        raise InvalidInput("trajectory length must be >= 1")
    rng = rng_for(driver.seed, stream_id)
    origin = {"driver": driver.kind, "seed": driver.seed, "stream_id": stream_id}
    if isinstance(driver, FiniteCycleDriver):
        first = int(rng.integers(driver.n)) if start is None else int(start) % driver.n
        symbols = (first + np.arange(length)) % driver.n
        origin["base_point"] = (first - 1) % driver.n
    elif isinstance(driver, IIDDriver):
        if driver.weights is None:
            symbols = rng.integers(driver.alphabet_size, size=length)
        else:
            symbols = rng.choice(driver.alphabet_size, size=length, p=driver.weights)
    elif isinstance(driver, MarkovDriver):
        T = driver.transition
        cdf = np.cumsum(T, axis=1)
        u = rng.random(length)
        symbols = np.empty(length, dtype=np.int64)
        state = int(np.searchsorted(np.cumsum(driver.initial), u[0], side="right"))
        symbols[0] = min(state, driver.alphabet_size - 1)
        for k in range(1, length):
            nxt = int(np.searchsorted(cdf[symbols[k - 1]], u[k], side="right"))
            symbols[k] = min(nxt, driver.alphabet_size - 1)
    else:
        raise InvalidInput(f"unsupported driver {driver!r}")
    return Trajectory(symbols, origin)


def shift_field(driver: FiniteCycleDriver, X: RandomField, k: int = 1) -> RandomField:
    """Koopman shift: ``(shift X)_w = X_{theta^k(w)} = X_{w + k mod n}``."""
    if X.n != driver.n:
        raise DimensionMismatch(f"field has {X.n} points, driver has {driver.n}")
    return RandomField(np.roll(X.values, -k, axis=0))


def driver_from_json(data: dict) -> Driver:
    data = dict(data)
    kind = data.pop("kind", None)
    seed = int(data.pop("seed", 0))
    if kind == "cycle":
        return FiniteCycleDriver(int(data.pop("n")), seed=seed)
    if kind == "iid":
        weights = data.pop("weights", None)
        size = int(data.pop("alphabet_size", len(weights) if weights is not None else 0))
        return IIDDriver(size, None if weights is None else np.asarray(weights, dtype=float), seed=seed)
    if kind == "markov":
        T = np.asarray(data.pop("transition"), dtype=float)
        data.pop("alphabet_size", None)
        initial = data.pop("initial", None)
        return MarkovDriver(T, seed=seed, initial=None if initial is None else np.asarray(initial, dtype=float))
    raise InvalidInput(f"unknown driver kind {kind!r}")
