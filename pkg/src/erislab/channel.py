"""Quantum channels in Kraus form.

Vectorization is column-stacking throughout: ``vec(X) = X.T.reshape(-1)``,
so that ``vec(A X B) = (B.T kron A) vec(X)`` and the transfer matrix of
``X -> sum_a V_a X V_a*`` is ``sum_a conj(V_a) kron V_a``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import matcore
from ._rng import rng_for
from .errors import DimensionMismatch, InvalidInput
from .matcore import DEFAULT_TOL, ToleranceProfile, dagger

#: Kraus operators below this operator norm are dropped after composition.
PRUNE_NORM = 1e-12

CHANNEL_KINDS = (
    "unitary",
    "depolarizing",
    "amplitude_flip",
    "amplitude_damping",
    "explicit_kraus",
    "haar_random_unitary",
    "random_kraus",
)

#: Kinds whose output depends on a seed.
RANDOM_KINDS = ("haar_random_unitary", "random_kraus")


def vec(X: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(X).T.reshape(-1)


def unvec(v: np.ndarray, dim: Optional[int] = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    return v.reshape(dim, dim).T


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """A CPTP map ``X -> sum_a V_a X V_a*``.

    Construction does not enforce CPTP; call :meth:`validate` (done by every
    :class:`~erislab.eris.Eris` on assembly).
    """

    kraus_ops: tuple

    def __post_init__(self):
        ops = tuple(matcore.as_matrix(V, "Kraus operator") for V in self.kraus_ops)
        if not ops:
            raise InvalidInput("a channel needs at least one Kraus operator")
        if len({V.shape for V in ops}) != 1:
            raise DimensionMismatch("Kraus operators must share one shape")
        for V in ops:
            V.flags.writeable = False
        object.__setattr__(self, "kraus_ops", ops)

    @property
    def dim(self) -> int:
        return self.kraus_ops[0].shape[0]

    @cached_property
    def _stack(self) -> np.ndarray:
        return np.stack(self.kraus_ops)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.complex128)
        if X.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"expected {self.dim}x{self.dim} input, got {X.shape}")
        return X

    def apply(self, X) -> np.ndarray:
        V = self._stack
        return np.einsum("aij,jk,alk->il", V, self._check(X), V.conj())

    def dual_apply(self, X) -> np.ndarray:
        """Heisenberg-picture action ``X -> sum_a V_a* X V_a``."""
        V = self._stack
        return np.einsum("aji,jk,akl->il", V.conj(), self._check(X), V)

    def dual(self) -> "KrausChannel":
        """The adjoint map as a (unital, generally not trace-preserving) Kraus family."""
        return KrausChannel(tuple(dagger(V) for V in self.kraus_ops))

    @cached_property
    def transfer(self) -> np.ndarray:
        """``d^2 x d^2`` matrix ``T`` with ``T vec(X) = vec(apply(X))``."""
        V = self._stack
        d = self.dim
        T = np.einsum("aij,akl->ikjl", V.conj(), V).reshape(d * d, d * d)
        T.flags.writeable = False
        return T

    def choi(self) -> np.ndarray:
        """Choi matrix ``sum_a vec(V_a) vec(V_a)*``."""
        vs = np.stack([vec(V) for V in self.kraus_ops])
        return vs.T @ vs.conj()

    def validate(self, tol: ToleranceProfile = DEFAULT_TOL) -> "ValidationReport":
        return validate(self, tol)

    def to_json(self) -> list:
        return [matcore.matrix_to_json(V) for V in self.kraus_ops]

    @classmethod
    def from_json(cls, data: Sequence) -> "KrausChannel":
        return cls(tuple(matcore.matrix_from_json(m) for m in data))

    def __repr__(self):
        return f"KrausChannel(dim={self.dim}, kraus_count={len(self.kraus_ops)})"


def apply(ch: KrausChannel, X) -> np.ndarray:
    return ch.apply(X)


def dual_apply(ch: KrausChannel, X) -> np.ndarray:
    return ch.dual_apply(X)


def transfer_matrix(ch: KrausChannel) -> np.ndarray:
    return ch.transfer


@dataclass(frozen=True)
class ValidationReport:
    tp_residual: float
    choi_min_eig: float
    tp_ok: bool
    cp_ok: bool

    @property
    def passed(self) -> bool:
        return self.tp_ok and self.cp_ok

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return {**dataclasses.asdict(self), "passed": self.passed}


def validate(ch: KrausChannel, tol: ToleranceProfile = DEFAULT_TOL) -> ValidationReport:
    """Trace-preservation residual and Choi positivity of ``ch``.

    The Choi bound is ``psd_tol * d`` since Choi entries aggregate ``d^2``
    products.
    """
    d = ch.dim
    gram = sum(dagger(V) @ V for V in ch.kraus_ops)
    tp_res = matcore.op_norm(gram - np.eye(d))
    choi_min = float(np.linalg.eigvalsh(matcore.hermitian_part(ch.choi()))[0])
    return ValidationReport(
        tp_residual=tp_res,
        choi_min_eig=choi_min,
        tp_ok=tp_res <= 1e-9,
        cp_ok=choi_min >= -tol.psd_tol * d,
    )


def compose(later: KrausChannel, earlier: KrausChannel) -> KrausChannel:
    """Kraus family of ``later o earlier``: all products ``W_b V_a``."""
    if later.dim != earlier.dim:
        raise DimensionMismatch(f"cannot compose dims {later.dim} and {earlier.dim}")
    ops = [W @ V for W in later.kraus_ops for V in earlier.kraus_ops]
    kept = [K for K in ops if matcore.op_norm(K) >= PRUNE_NORM]
    return KrausChannel(tuple(kept or ops[:1]))


# --- generators -----------------------------------------------------------------


def identity_channel(dim: int) -> KrausChannel:
    return KrausChannel((np.eye(dim),))


def unitary_channel(U) -> KrausChannel:
    U = matcore.as_matrix(U, "unitary")
    if matcore.op_norm(dagger(U) @ U - np.eye(U.shape[0])) > 1e-9:
        raise InvalidInput("matrix is not unitary")
    return KrausChannel((U,))


def weyl_operators(dim: int) -> list:
    """The ``d^2`` clock-and-shift operators ``X^a Z^b``."""
    omega = np.exp(2j * np.pi / dim)
    shift = np.roll(np.eye(dim), 1, axis=0)
    clock = np.diag(omega ** np.arange(dim))
    return [
        np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
        for a in range(dim)
        for b in range(dim)
    ]


def _check_prob(p: float, name: str = "p") -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise InvalidInput(f"{name} must lie in [0, 1], got {p}")
    return p


def depolarizing(p: float, dim: int = 2) -> KrausChannel:
    """``rho -> (1 - p) rho + p tr(rho) I / d``."""
    p = _check_prob(p)
    W = weyl_operators(dim)
    c0 = np.sqrt(1.0 - p + p / dim**2)
    c = np.sqrt(p / dim**2)
    ops = [c0 * W[0]] + ([c * w for w in W[1:]] if p > 0 else [])
    return KrausChannel(tuple(ops))


def amplitude_flip(dim: int = 2) -> KrausChannel:
    """Kraus family ``{|j+1><j|}``: dephase, then cyclically shift the basis.

    For ``dim = 2`` this is ``[|1><0|, |0><1|]``.  The channel is irreducible
    with peripheral spectrum the ``dim``-th roots of unity.
    """
    ops = []
    for j in range(dim):
        K = np.zeros((dim, dim), dtype=np.complex128)
        K[(j + 1) % dim, j] = 1.0
        ops.append(K)
    return KrausChannel(tuple(ops))


def amplitude_damping(p: float, dim: int = 2) -> KrausChannel:
    """Decay of every excited level ``|j>`` (``j >= 1``) to ``|0>`` with probability ``p``."""
    p = _check_prob(p)
    K0 = np.diag([1.0] + [np.sqrt(1.0 - p)] * (dim - 1)).astype(np.complex128)
    ops = [K0]
    for j in range(1, dim):
        K = np.zeros((dim, dim), dtype=np.complex128)
        K[0, j] = np.sqrt(p)
        ops.append(K)
    return KrausChannel(tuple(ops))


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a Ginibre matrix with phase fix."""
    Z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    return _phase_fixed_qr(Z)


def _phase_fixed_qr(Z: np.ndarray) -> np.ndarray:
    """``Q`` of ``Z = QR`` with ``diag(R) > 0``; works on stacks of matrices."""
    Q, R = np.linalg.qr(Z)
    diag = np.diagonal(R, axis1=-2, axis2=-1)
    return Q * (diag / np.abs(diag))[..., None, :]


def random_isometry_kraus(dim: int, kraus_count: int, rng: np.random.Generator) -> KrausChannel:
    """Slice a random isometry ``C^d -> C^(k d)`` into ``k`` Kraus operators."""
    G = rng.standard_normal((kraus_count * dim, dim)) + 1j * rng.standard_normal((kraus_count * dim, dim))
    Q, R = np.linalg.qr(G)
    Q = Q * (np.diag(R) / np.abs(np.diag(R)))
    return KrausChannel(tuple(Q[a * dim : (a + 1) * dim] for a in range(kraus_count)))


@dataclass(frozen=True)
class ChannelSpec:
    """Declarative description of a channel, as found in scenario files."""

    kind: str
    dim: int = 2
    p: Optional[float] = None
    seed: int = 0
    kraus_count: int = 1
    unitary: Optional[np.ndarray] = field(default=None, compare=False)
    kraus: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise InvalidInput(f"unknown channel kind {self.kind!r}; expected one of {CHANNEL_KINDS}")
        if self.kind in ("depolarizing", "amplitude_damping"):
            if self.p is None:
                raise InvalidInput(f"{self.kind} needs parameter p")
            _check_prob(self.p)
        if self.kind == "unitary" and self.unitary is None:
            raise InvalidInput("unitary channel needs a 'unitary' matrix")
        if self.kind == "explicit_kraus" and not self.kraus:
            raise InvalidInput("explicit_kraus needs a non-empty 'kraus' list")
        if self.kind == "random_kraus" and self.kraus_count < 1:
            raise InvalidInput("kraus_count must be >= 1")
        if self.dim < 1:
            raise InvalidInput("dim must be >= 1")

    @property
    def is_random(self) -> bool:
        return self.kind in RANDOM_KINDS

    @classmethod
    def from_json(cls, data: dict) -> "ChannelSpec":
        data = dict(data)
        kind = data.pop("kind", None)
        if kind is None:
            raise InvalidInput("channel spec needs a 'kind'")
        kwargs = {}
        if "unitary" in data:
            kwargs["unitary"] = matcore.matrix_from_json(data.pop("unitary"))
        if "kraus" in data:
            kwargs["kraus"] = tuple(matcore.matrix_from_json(m) for m in data.pop("kraus"))
        for key, conv in (("dim", int), ("p", float), ("seed", int), ("kraus_count", int)):
            if key in data:
                kwargs[key] = conv(data.pop(key))
        if data:
            raise InvalidInput(f"unknown channel spec fields: {sorted(data)}")
        if "dim" not in kwargs:
            if "unitary" in kwargs:
                kwargs["dim"] = kwargs["unitary"].shape[0]
            elif "kraus" in kwargs:
                kwargs["dim"] = kwargs["kraus"][0].shape[0]
        return cls(kind=kind, **kwargs)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.p is not None:
            out["p"] = self.p
        if self.is_random:
            out["seed"] = self.seed
        if self.kind == "random_kraus":
            out["kraus_count"] = self.kraus_count
        if self.unitary is not None:
            out["unitary"] = matcore.matrix_to_json(self.unitary)
        if self.kraus is not None:
            out["kraus"] = [matcore.matrix_to_json(K) for K in self.kraus]
        return out


def build(spec: ChannelSpec, *stream: int) -> KrausChannel:
    """Instantiate ``spec``; random kinds are keyed by ``(spec.seed, *stream)``."""
    kind = spec.kind
    if kind == "unitary":
        return unitary_channel(spec.unitary)
    if kind == "depolarizing":
        return depolarizing(spec.p, spec.dim)
    if kind == "amplitude_flip":
        return amplitude_flip(spec.dim)
    if kind == "amplitude_damping":
        return amplitude_damping(spec.p, spec.dim)
    if kind == "explicit_kraus":
        return KrausChannel(tuple(spec.kraus))
    rng = rng_for(spec.seed, *stream)
    if kind == "haar_random_unitary":
        return KrausChannel((haar_unitary(spec.dim, rng),))
    return random_isometry_kraus(spec.dim, spec.kraus_count, rng)


def mean_channel(channels: Sequence[KrausChannel], weights: Sequence[float]) -> KrausChannel:
    """Convex combination ``sum_x w_x phi_x`` as a Kraus family."""
    if len(channels) != len(weights) or not channels:
        raise InvalidInput("need one weight per channel")
    ops = []
    for ch, w in zip(channels, weights):
        if w < 0:
            raise InvalidInput("weights must be non-negative")
        if w > 0:
            ops.extend(np.sqrt(w) * V for V in ch.kraus_ops)
    return KrausChannel(tuple(ops))


def direct_sum(first: KrausChannel, second: KrausChannel) -> KrausChannel:
    """Block-diagonal channel acting as ``first`` on the leading block and ``second`` on the rest."""
    d1, d2 = first.dim, second.dim
    ops = []
    for V in first.kraus_ops:
        K = np.zeros((d1 + d2, d1 + d2), dtype=np.complex128)
        K[:d1, :d1] = V
        ops.append(K)
    for W in second.kraus_ops:
        K = np.zeros((d1 + d2, d1 + d2), dtype=np.complex128)
        K[d1:, d1:] = W
        ops.append(K)
    return KrausChannel(tuple(ops))


def conjugate(ch: KrausChannel, after, before=None) -> KrausChannel:
    """``Ad(after) o ch o Ad(before)`` for unitaries ``after``/``before``."""
    B = np.eye(ch.dim) if before is None else before
    return KrausChannel(tuple(after @ V @ B for V in ch.kraus_ops))


class ChannelFamily:
    """Lazy table ``symbol -> channel`` generated from one spec.

    Random kinds draw a fresh channel per symbol, keyed by ``(spec.seed,
    symbol)``; deterministic kinds return the same channel for every symbol.
    This is how an i.i.d. driver over a huge alphabet realizes a continuous
    channel law such as the Haar measure.
    """

    def __init__(self, spec: ChannelSpec, cache_size: int = 4096):
        self.spec = spec
        self._cache: dict = {}
        self._cache_size = cache_size
        self._fixed = None if spec.is_random else build(spec)

    @property
    def dim(self) -> int:
        return self.spec.dim if self._fixed is None else self._fixed.dim

    def __getitem__(self, symbol: int) -> KrausChannel:
        if self._fixed is not None:
            return self._fixed
        symbol = int(symbol)
        ch = self._cache.get(symbol)
        if ch is None:
            ch = build(self.spec, symbol)
            if len(self._cache) < self._cache_size:
                self._cache[symbol] = ch
        return ch

    def transfers(self, symbols) -> np.ndarray:
        """Stacked transfer matrices for a run of symbols, shape ``(N, d^2, d^2)``.

        Haar families are generated in one batch (same draws as :meth:`__getitem__`).
        """
        symbols = np.asarray(symbols, dtype=np.int64)
        if self._fixed is not None:
            T = self._fixed.transfer
            return np.broadcast_to(T, (symbols.size,) + T.shape)
        if self.spec.kind != "haar_random_unitary":
            return np.stack([self[s].transfer for s in symbols.tolist()])
        d = self.spec.dim
        Z = np.empty((symbols.size, d, d), dtype=np.complex128)
        for i, s in enumerate(symbols.tolist()):
            rng = rng_for(self.spec.seed, s)
            Z[i] = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        U = _phase_fixed_qr(Z / np.sqrt(2.0))
        return np.einsum("nij,nkl->nikjl", U.conj(), U).reshape(symbols.size, d * d, d * d)

    def __repr__(self):
        return f"ChannelFamily({self.spec.kind}, dim={self.dim})"


def choi_to_kraus(J: np.ndarray, dim: int, cutoff: float = 1e-14) -> KrausChannel:
    """Kraus family from a Choi matrix ``sum_a vec(V_a) vec(V_a)*``."""
    w, U = np.linalg.eigh(matcore.hermitian_part(J))
    keep = w > cutoff * max(w[-1], 1.0)
    ops = [unvec(np.sqrt(lam) * U[:, k], dim) for k, lam in zip(np.flatnonzero(keep), w[keep])]
    return KrausChannel(tuple(ops) or (np.zeros((dim, dim)),))


def transfer_to_kraus(T: np.ndarray) -> KrausChannel:
    """Minimal Kraus family of the CP map with column-stacking transfer matrix ``T``."""
    d = int(round(np.sqrt(T.shape[0])))
    S = np.asarray(T).reshape(d, d, d, d)
    J = np.einsum("fbea->abef", S).reshape(d * d, d * d)
    return choi_to_kraus(J, d)
