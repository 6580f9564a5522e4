"""The repeated-interaction process and its Cesaro engines.

An :class:`Eris` couples a driver with a channel assignment
``omega -> phi_omega``.  On a :class:`~erislab.driver.FiniteCycleDriver`
the one-step operator

    (L X)_w = phi_w(X_{w-1})

is a finite block matrix, and its Cesaro mean ``E`` (the projection onto the
fixed space of ``L``) is computed exactly.  Sampled drivers only support
forward products along trajectories (:func:`cesaro_monte_carlo`).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np

from . import matcore
from .channel import ChannelFamily, KrausChannel, compose, transfer_to_kraus, unvec, vec
from .driver import Driver, FiniteCycleDriver, Trajectory, sample_trajectory
from .errors import ConvergenceError, DimensionMismatch, InvalidInput
from .fields import RandomField
from .matcore import DEFAULT_TOL, ToleranceProfile, dagger

logger = logging.getLogger(__name__)

#: Default cap on the number of averaged terms in :func:`cesaro_exact`.
MAX_CESARO_TERMS = 10**6

#: Above this many Kraus operators a forward product is rebuilt from its transfer matrix.
MAX_KRAUS_PRODUCT = 64

#: Trajectory steps whose transfer matrices are built in one batch.
REPLICA_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class BlockTransferOperator:
    """Matrix of ``L`` on ``vec`` of fields: block ``(w, w-1)`` is ``transfer(phi_w)``."""

    matrix: np.ndarray
    n: int
    dim: int

    @property
    def dual(self) -> np.ndarray:
        """Matrix of the dual operator; the adjoint with respect to ``sum_w tr(X_w* Y_w)``."""
        return dagger(self.matrix)

    def apply(self, X: RandomField) -> RandomField:
        return RandomField.from_vector(self.matrix @ X.vector(), self.n, self.dim)

    def apply_dual(self, X: RandomField) -> RandomField:
        return RandomField.from_vector(self.dual @ X.vector(), self.n, self.dim)


class Eris:
    """Driver plus channel assignment.

    ``channels`` is either a mapping ``symbol -> KrausChannel`` (a table
    covering every symbol of the driver) or a :class:`ChannelFamily`.
    """

    def __init__(
        self,
        driver: Driver,
        channels: Union[Mapping[int, KrausChannel], ChannelFamily],
        tol: ToleranceProfile = DEFAULT_TOL,
        validate: bool = True,
    ):
        self.driver = driver
        self.tol = tol
        if isinstance(channels, ChannelFamily):
            self.family = channels
            self.channels = None
            probe = [channels[s] for s in range(min(4, _alphabet(driver)))]
        else:
            table = {int(k): v for k, v in dict(channels).items()}
            missing = [s for s in range(_alphabet(driver)) if s not in table]
            if missing:
                raise InvalidInput(f"no channel assigned to symbols {missing[:5]}")
            self.family = None
            self.channels = table
            probe = list(table.values())
        dims = {ch.dim for ch in probe}
        if len(dims) != 1:
            raise DimensionMismatch(f"channels have mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()
        if validate:
            for ch in probe:
                report = ch.validate(tol)
                if not report.passed:
                    raise InvalidInput(f"channel {ch!r} is not CPTP: {report.to_dict()}")
        self._projector = None
        self._block = None
        self._table = None

    # basics --------------------------------------------------------------------

    @property
    def is_exact(self) -> bool:
        return isinstance(self.driver, FiniteCycleDriver)

    @property
    def n(self) -> int:
        self._require_exact()
        return self.driver.n

    def channel(self, symbol: int) -> KrausChannel:
        if self.family is not None:
            return self.family[symbol]
        return self.channels[int(symbol)]

    def transfers(self, symbols) -> np.ndarray:
        """Transfer matrices of the channels selected by ``symbols``, stacked."""
        if self.family is not None:
            return self.family.transfers(symbols)
        if self._table is None:
            self._table = np.stack([self.channels[s].transfer for s in range(len(self.channels))])
        return self._table[np.asarray(symbols, dtype=np.int64)]

    def _require_exact(self):
        if not self.is_exact:
            raise InvalidInput("operation needs a finite cycle driver (exact backend)")

    def _check_field(self, X: RandomField) -> RandomField:
        self._require_exact()
        if not isinstance(X, RandomField):
            X = RandomField(X)
        if X.n != self.driver.n or X.dim != self.dim:
            raise DimensionMismatch(f"field is {X.n}x{X.dim}, process is {self.driver.n}x{self.dim}")
        return X

    def identity_field(self) -> RandomField:
        return RandomField.identity(self.n, self.dim)

    def __repr__(self):
        return f"Eris(driver={self.driver.kind}, dim={self.dim})"

    # one-step operators ---------------------------------------------------------

    def step_L(self, X: RandomField) -> RandomField:
        """``(L X)_w = phi_w(X_{w-1})``."""
        X = self._check_field(X)
        n = self.n
        return RandomField(np.stack([self.channel(w).apply(X[(w - 1) % n]) for w in range(n)]))

    def step_L_dagger(self, X: RandomField) -> RandomField:
        """``(L^dagger X)_w = phi_{w+1}^*(X_{w+1})``."""
        X = self._check_field(X)
        n = self.n
        return RandomField(np.stack([self.channel((w + 1) % n).dual_apply(X[w + 1]) for w in range(n)]))

    def step_L_rec_dagger(self, P_r: RandomField, X: RandomField) -> RandomField:
        """Dual step compressed to the corner of ``P_r``."""
        P_r = self._check_field(P_r)
        if not P_r.is_projection():
            raise InvalidInput("P_r must be a projection field")
        return self.step_L_dagger(X).compress(P_r)

    def block_transfer(self) -> BlockTransferOperator:
        if self._block is None:
            n, d = self.n, self.dim
            D = d * d
            T = np.zeros((n * D, n * D), dtype=np.complex128)
            for w in range(n):
                src = (w - 1) % n
                T[w * D : (w + 1) * D, src * D : (src + 1) * D] += self.channel(w).transfer
            T.flags.writeable = False
            self._block = BlockTransferOperator(T, n, d)
        return self._block

    # Cesaro means (exact backend) -----------------------------------------------

    def cesaro_projector(self, max_terms: int = MAX_CESARO_TERMS) -> np.ndarray:
        """Matrix of ``E``, the Cesaro limit of the powers of ``L``.

        Uses the averaged operator ``A = (I + T)/2``: it fixes the eigenvalue-1
        space of ``T`` and sends every other eigenvalue of modulus ``<= 1``
        strictly inside the unit disk, so ``A^(2^k)`` converges to the same
        spectral projection as the Cesaro sums.  Powers are formed by repeated
        squaring, stopping once successive iterates agree to ``fixpoint_tol``.
        """
        if self._projector is None:
            T = self.block_transfer().matrix
            A = 0.5 * (np.eye(T.shape[0]) + T)
            terms = 1
            while True:
                A2 = A @ A
                terms *= 2
                delta = float(np.abs(A2 - A).max())
                A = A2
                if delta < self.tol.fixpoint_tol:
                    # one more squaring: the error left is roughly delta**2
                    A = A @ A
                    break
                if terms > max_terms:
                    raise ConvergenceError(
                        f"Cesaro iteration not converged after {terms} terms (last change {delta:.3g})"
                    )
            A.flags.writeable = False
            self._projector = A
            logger.debug("Cesaro projector converged after %d averaged terms", terms)
        return self._projector

    def cesaro_exact(self, X: RandomField, max_terms: int = MAX_CESARO_TERMS) -> RandomField:
        X = self._check_field(X)
        E = self.cesaro_projector(max_terms)
        return RandomField.from_vector(E @ X.vector(), self.n, self.dim)

    def cesaro_linear_solve(self) -> np.ndarray:
        """Independent construction of ``E``: projection onto ``null(T - I)`` along ``range(T - I)``.

        Cross-check only; relies on the eigenvalue 1 being semisimple, which
        holds because ``L`` is a trace-norm contraction.
        """
        T = self.block_transfer().matrix
        K = T - np.eye(T.shape[0])
        U, s, Vh = np.linalg.svd(K)
        thresh = self.tol.fixpoint_tol * max(np.linalg.norm(T, 2), 1.0)
        null = s <= thresh
        right = dagger(Vh)[:, null]
        left = U[:, null]
        if right.shape[1] == 0:
            return np.zeros_like(T)
        return right @ np.linalg.solve(dagger(left) @ right, dagger(left))

    def check_cocycle(self, rho: RandomField) -> float:
        """``max_w || phi_{w+1}(rho_w) - rho_{w+1} ||_1``."""
        rho = self._check_field(rho)
        return (self.step_L(rho) - rho).max_norm(1)

    # forward products -----------------------------------------------------------

    def forward_transfer(self, traj: Trajectory) -> np.ndarray:
        """Transfer matrix of ``phi_{w_N} o ... o phi_{w_1}``."""
        D = self.dim * self.dim
        T = np.eye(D, dtype=np.complex128)
        for s in traj:
            T = self.channel(s).transfer @ T
        return T

    def forward_compose(self, traj: Trajectory) -> KrausChannel:
        """The channel ``Phi_N = phi_{w_N} o ... o phi_{w_1}``.

        Kraus families are multiplied while they stay small; beyond
        ``MAX_KRAUS_PRODUCT`` operators the product is taken on transfer
        matrices and converted back through the Choi matrix.
        """
        chans = [self.channel(s) for s in traj]
        count = 1
        for ch in chans:
            count *= len(ch.kraus_ops)
            if count > MAX_KRAUS_PRODUCT:
                return transfer_to_kraus(self.forward_transfer(traj))
        result = chans[0]
        for ch in chans[1:]:
            result = compose(ch, result)
        return result


def _alphabet(driver: Driver) -> int:
    if isinstance(driver, FiniteCycleDriver):
        return driver.n
    return driver.alphabet_size


# --- module-level operations ---------------------------------------------------------


def forward_compose(e: Eris, traj: Trajectory) -> KrausChannel:
    return e.forward_compose(traj)


def step_L(e: Eris, X: RandomField) -> RandomField:
    return e.step_L(X)


def step_L_dagger(e: Eris, X: RandomField) -> RandomField:
    return e.step_L_dagger(X)


def step_L_rec_dagger(e: Eris, P_r: RandomField, X: RandomField) -> RandomField:
    return e.step_L_rec_dagger(P_r, X)


def block_transfer(e: Eris) -> BlockTransferOperator:
    return e.block_transfer()


def cesaro_exact(e: Eris, X: RandomField, max_terms: int = MAX_CESARO_TERMS) -> RandomField:
    return e.cesaro_exact(X, max_terms)


def check_cocycle(e: Eris, rho: RandomField) -> float:
    return e.check_cocycle(rho)


def dual_cesaro(e: Eris, X: RandomField, max_terms: int = MAX_CESARO_TERMS) -> RandomField:
    """Cesaro limit of ``(L^dagger)^k X``.

    The spectral projection of ``T^*`` at eigenvalue 1 is the adjoint of the
    one for ``T``, so this reuses :meth:`Eris.cesaro_projector`.
    """
    X = e._check_field(X)
    E = e.cesaro_projector(max_terms)
    return RandomField.from_vector(dagger(E) @ X.vector(), e.n, e.dim)


# --- Monte Carlo -------------------------------------------------------------------------

InitialState = Union[np.ndarray, RandomField, Callable[[Trajectory], np.ndarray]]


@dataclass
class MonteCarloResult:
    mean: np.ndarray
    std_err: float
    replica_means: np.ndarray
    #: rows of ``(step, distance to reference, std_err)`` at checkpoints
    trace: list = field(default_factory=list)

    def trace_distance_to(self, target) -> float:
        return matcore.trace_distance(self.mean, target)


def _initial_for(e: Eris, initial: InitialState, traj: Trajectory) -> np.ndarray:
    if callable(initial):
        rho = initial(traj)
    elif isinstance(initial, RandomField):
        if not e.is_exact:
            raise InvalidInput("field-valued initial states need a cycle driver")
        rho = initial[traj.origin["base_point"]]
    else:
        rho = initial
    rho = matcore.as_matrix(rho, "initial state")
    if rho.shape[0] != e.dim:
        raise DimensionMismatch("initial state has wrong dimension")
    return rho


def _checkpoints(M: int, count: int = 40) -> np.ndarray:
    pts = np.unique(np.round(np.logspace(0, math.log10(M), count)).astype(int))
    return pts[(pts >= 1) & (pts <= M)]


def _check_states(vs: np.ndarray, d: int, first_step: int, state_tol: float):
    states = vs.reshape(-1, d, d).transpose(0, 2, 1)
    bad_trace = np.abs(np.trace(states, axis1=1, axis2=2) - 1.0) > state_tol
    bad_herm = np.abs(states - dagger(states)).max(axis=(1, 2)) > state_tol
    bad_psd = np.linalg.eigvalsh(0.5 * (states + dagger(states)))[:, 0] < -state_tol
    bad = bad_trace | bad_herm | bad_psd
    if bad.any():
        N = first_step + int(np.argmax(bad))
        raise ConvergenceError(f"Phi_{N}(rho) left the state space")


def _run_replica(e: Eris, initial, M, stream_id, checkpoints, check_states, state_tol):
    traj = sample_trajectory(e.driver, M, stream_id)
    rho = _initial_for(e, initial, traj)
    d = e.dim
    v = vec(rho)
    acc = np.zeros_like(v)
    snaps = []
    for lo in range(0, M, REPLICA_CHUNK):
        Ts = e.transfers(traj.symbols[lo : lo + REPLICA_CHUNK])
        vs = np.empty((len(Ts), d * d), dtype=np.complex128)
        for i, T in enumerate(Ts):
            v = T @ v
            vs[i] = v
        if check_states:
            _check_states(vs, d, lo + 1, state_tol)
        partial = acc + np.cumsum(vs, axis=0)
        for N in checkpoints[(checkpoints > lo) & (checkpoints <= lo + len(Ts))]:
            snaps.append(unvec(partial[N - lo - 1] / N, d))
        acc = partial[-1]
    return unvec(acc / M, d), np.array(snaps)


def cesaro_monte_carlo(
    e: Eris,
    initial_state: InitialState,
    M: int,
    R: int = 1,
    seed: int = 0,
    threads: int = 1,
    target: Optional[np.ndarray] = None,
    check_states: bool = True,
    state_tol: float = 1e-8,
) -> MonteCarloResult:
    """Quenched Cesaro averages ``A_r = (1/M) sum_{N=1}^M Phi_N(rho)`` over ``R`` replicas.

    Replica ``r`` uses trajectory stream ``(seed << 32) + r`` of the driver, so
    results do not depend on ``threads``.  ``initial_state`` may be a matrix, a
    field over a cycle driver (read at the trajectory's base point), or a
    callable of the sampled trajectory, which allows initial states
    correlated with the whole channel sequence.
    """
    if M < 1 or R < 1:
        raise InvalidInput("need M >= 1 and R >= 1")
    checkpoints = _checkpoints(M)
    jobs = [(seed << 32) + r for r in range(R)]

    def run(sid):
        return _run_replica(e, initial_state, M, sid, checkpoints, check_states, state_tol)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(sid) for sid in jobs]

    reps = np.stack([r[0] for r in results])
    snaps = np.stack([r[1] for r in results])  # (R, K, d, d)
    mean = reps.mean(axis=0)
    std_err = _std_err(reps)
    ref = mean if target is None else np.asarray(target)
    trace = []
    for k, step in enumerate(checkpoints):
        at = snaps[:, k]
        trace.append((int(step), matcore.trace_distance(at.mean(axis=0), ref), _std_err(at)))
    return MonteCarloResult(mean, std_err, reps, trace)


def _std_err(samples: np.ndarray) -> float:
    """Largest entrywise standard error of the mean across replicas."""
    R = samples.shape[0]
    if R < 2:
        return float("nan")
    se_re = samples.real.std(axis=0, ddof=1) / np.sqrt(R)
    se_im = samples.imag.std(axis=0, ddof=1) / np.sqrt(R)
    return float(max(se_re.max(), se_im.max()))
