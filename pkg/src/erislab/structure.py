"""Reducibility analysis on the exact backend.

A projection field ``P`` reduces the process when ``L`` maps the corner
``P M_d P`` into itself.  The routines here find the recurrent projection
``P_r = proj[E(I)]`` and split it into mutually orthogonal minimal reducing
projections ``Q_1, ..., Q_m``, each carrying exactly one stationary state.

Minimal projections are found by *peeling*: given a positive fixed point
``Z`` with support ``P`` and a self-adjoint fixed point ``X`` in the same
corner that is not proportional to ``Z``, the family ``Z + a X`` stays
fixed and self-adjoint, and at the first ``a`` where positivity fails it
loses rank somewhere.  Its support is a strictly smaller reducing
projection.  Once the corner fixed space is one-dimensional with a
full-support positive generator, the corner is minimal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import matcore
from .channel import KrausChannel, mean_channel, unvec
from .driver import FiniteCycleDriver
from .eris import Eris
from .errors import ConvergenceError, InvalidInput
from .fields import RandomField
from .matcore import DEFAULT_TOL, ToleranceProfile, dagger

logger = logging.getLogger(__name__)

#: Rank cutoff used when reading off the support at a positivity crossing.
PEEL_RANK_TOL = 1e-7
#: Width at which the bisection for the crossing point stops.
BISECTION_WIDTH = 1e-12
#: Beyond this step size a perturbation direction is treated as never crossing.
A_MAX = 1e12
#: Two fields count as parallel when the sine of their angle is below this.
PARALLEL_SINE = 1e-6


# --- types ------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FixedSpaceBasis:
    """Real basis of the self-adjoint fixed points of ``L`` (optionally in a corner).

    ``basis`` is orthonormal for ``Re mean_w tr(X_w Y_w)``; ``generators``
    holds the complex null vectors it was built from.
    """

    basis: list
    dim_complex: int
    generators: list = field(default_factory=list, repr=False)


@dataclass(frozen=True, eq=False)
class Block:
    projection: RandomField
    stationary_state: RandomField

    def to_json(self) -> dict:
        return {
            "projection": self.projection.to_json(),
            "stationary_state": self.stationary_state.to_json(),
            "corner_dim": 1,
        }


@dataclass(eq=False)
class Decomposition:
    recurrent: RandomField
    transient: RandomField
    blocks: list
    dynamically_ergodic: bool
    residuals: dict = field(default_factory=dict)
    reliable: bool = True
    peels: int = 0

    def to_json(self) -> dict:
        return {
            "recurrent": self.recurrent.to_json(),
            "transient": self.transient.to_json(),
            "blocks": [b.to_json() for b in self.blocks],
            "dynamically_ergodic": self.dynamically_ergodic,
            "residuals": self.residuals,
            "reliable": self.reliable,
            "peels": self.peels,
        }


# --- helpers --------------------------------------------------------------------------------


def _as_projection_field(e: Eris, P) -> RandomField:
    P = e._check_field(P)
    if not P.is_projection():
        raise InvalidInput("expected a projection field")
    return P


def _bases(P: RandomField) -> list:
    return [matcore.projection_basis(Pw) for Pw in P.values]


def clean_projection(A: np.ndarray) -> np.ndarray:
    """Nearest orthogonal projection to an almost-projection (eigenvalues rounded to 0/1)."""
    w, V = np.linalg.eigh(matcore.hermitian_part(A))
    B = V[:, w > 0.5]
    return B @ dagger(B)


def _clean_field(F: RandomField) -> RandomField:
    return RandomField(np.stack([clean_projection(X) for X in F.values]))


def total_rank(P: RandomField) -> int:
    """``sum_w rank(P_w)`` for a projection field."""
    return int(round(float(np.real(P.traces()).sum())))


def corner_leakage(Y: RandomField, P: RandomField) -> float:
    """``max_w || Y_w - P_w Y_w P_w ||_inf``: how far ``Y`` sticks out of the corner."""
    return (Y - Y.compress(P)).max_norm(np.inf)


# --- reducibility ------------------------------------------------------------------------------


def is_reducing(e: Eris, P: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """Whether ``L(P)`` lies in the corner ``P M_d P`` for every ``omega``."""
    P = _as_projection_field(e, P)
    return corner_leakage(e.step_L(P), P) <= tol.reduce_tol


def is_reducing_dual(e: Eris, P: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """Whether ``L^dagger(P)`` lies in the corner ``P M_d P``."""
    P = _as_projection_field(e, P)
    return corner_leakage(e.step_L_dagger(P), P) <= tol.reduce_tol


# --- fixed spaces --------------------------------------------------------------------------------


def _corner_transfer(e: Eris, bases: list) -> tuple:
    """Matrix of ``L`` compressed to corner coordinates ``Y_w = B_w* X_w B_w``."""
    n = e.n
    sizes = [B.shape[1] ** 2 for B in bases]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    T = np.zeros((offsets[-1], offsets[-1]), dtype=np.complex128)
    for w in range(n):
        src = (w - 1) % n
        Bw, Bs = bases[w], bases[src]
        if sizes[w] == 0 or sizes[src] == 0:
            continue
        block = np.zeros((sizes[w], sizes[src]), dtype=np.complex128)
        for V in e.channel(w).kraus_ops:
            K = dagger(Bw) @ V @ Bs
            block += np.kron(K.conj(), K)
        T[offsets[w] : offsets[w + 1], offsets[src] : offsets[src + 1]] += block
    return T, offsets


def _lift(v: np.ndarray, bases: list, offsets: np.ndarray, d: int) -> RandomField:
    vals = np.zeros((len(bases), d, d), dtype=np.complex128)
    for w, B in enumerate(bases):
        r = B.shape[1]
        if r:
            Y = unvec(v[offsets[w] : offsets[w + 1]], r)
            vals[w] = B @ Y @ dagger(B)
    return RandomField(vals)


def corner_fixed_space(e: Eris, P: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> FixedSpaceBasis:
    """Fixed points of ``L`` inside the corner of a reducing projection ``P``.

    Computed as the null space of ``T_P - I`` by SVD with threshold
    ``fixpoint_tol * ||T_P||``, then split into a real self-adjoint basis.
    """
    P = _as_projection_field(e, P)
    bases = _bases(P)
    T, offsets = _corner_transfer(e, bases)
    if T.shape[0] == 0:
        return FixedSpaceBasis([], 0, [])
    _, s, Vh = np.linalg.svd(T - np.eye(T.shape[0]))
    thresh = tol.fixpoint_tol * max(np.linalg.norm(T, 2), 1.0)
    null = dagger(Vh)[:, s <= thresh]
    gens = [_lift(null[:, k], bases, offsets, e.dim) for k in range(null.shape[1])]
    return FixedSpaceBasis(_self_adjoint_basis(gens), len(gens), gens)


def fixed_space(e: Eris, tol: ToleranceProfile = DEFAULT_TOL) -> FixedSpaceBasis:
    """Fixed points of ``L`` on the whole space."""
    return corner_fixed_space(e, e.identity_field(), tol)


def _self_adjoint_basis(gens: Sequence[RandomField]) -> list:
    if not gens:
        return []
    n = gens[0].n
    cands = []
    for G in gens:
        cands.append(G.hermitian_part())
        cands.append(RandomField((G.values - dagger(G.values)) / 2j))
    rows = np.stack([np.concatenate([C.values.real.ravel(), C.values.imag.ravel()]) for C in cands])
    _, _, Vt = np.linalg.svd(rows, full_matrices=False)
    k = len(gens)
    shape = gens[0].values.shape
    half = int(np.prod(shape))
    basis = []
    for row in Vt[:k]:
        vals = (row[:half] + 1j * row[half:]).reshape(shape) * np.sqrt(n)
        # fix the sign so the first significant entry is positive
        flat = np.concatenate([vals.real.ravel(), vals.imag.ravel()])
        lead = flat[np.argmax(np.abs(flat) > 1e-8)]
        basis.append(RandomField(0.5 * (vals + dagger(vals)) * np.sign(lead)))
    return basis


# --- recurrence ----------------------------------------------------------------------------------------


def recurrent_projection(e: Eris, tol: ToleranceProfile = DEFAULT_TOL) -> tuple:
    """``(P_r, P_t)`` with ``P_r = proj[E(I)]`` and ``P_t = I - P_r``."""
    EI = e.cesaro_exact(e.identity_field())
    P_r = EI.range_projection(tol)
    return P_r, e.identity_field() - P_r


def stationary_state(e: Eris, Q: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> RandomField:
    """The stationary state supported on a minimal reducing projection ``Q``.

    ``E(Q)`` normalized to unit trace at each ``omega``.  The trace of a fixed
    point does not depend on ``omega``, so this is a single rescaling.
    """
    Q = e._check_field(Q)
    Z = e.cesaro_exact(Q).hermitian_part()
    tr = np.real(Z.traces())
    if tr.min() <= tol.fixpoint_tol:
        raise ConvergenceError("E(Q) vanishes at some omega; Q is not minimal within tolerance")
    return RandomField(Z.values / tr[:, None, None])


# --- peeling --------------------------------------------------------------------------------------------


def _angle_sine(Z: RandomField, X: RandomField) -> float:
    zz = Z.mean_inner(Z).real
    xx = X.mean_inner(X).real
    if xx <= 0 or zz <= 0:
        return 0.0
    cos2 = abs(Z.mean_inner(X)) ** 2 / (zz * xx)
    return float(np.sqrt(max(0.0, 1.0 - cos2)))


def _crossing(Zc: list, Xc: list, sign: float) -> Optional[float]:
    """Largest feasible ``a`` with ``Z + a*sign*X >= 0`` on every corner, or None if unbounded."""

    def feasible(a):
        return all(
            np.linalg.eigvalsh(matcore.hermitian_part(z + a * sign * x))[0] >= 0.0
            for z, x in zip(Zc, Xc)
            if z.size
        )

    hi = 1.0
    while feasible(hi):
        hi *= 2.0
        if hi > A_MAX:
            return None
    lo = 0.0
    while hi - lo > BISECTION_WIDTH * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def peel(e: Eris, Z: RandomField, X: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> RandomField:
    """Positive fixed point ``Z + a* s X`` of strictly smaller support than ``Z``.

    ``Z`` must be a positive fixed point and ``X`` a self-adjoint fixed point
    in the corner of ``supp Z``, not proportional to ``Z``.  The sign ``s`` is
    ``+1`` when a finite crossing exists in that direction, else ``-1``.  If
    ``X`` itself is positive with a strictly smaller support, ``X`` rescaled
    to the mean trace of ``Z`` is returned instead.
    """
    Z = e._check_field(Z).hermitian_part()
    X = e._check_field(X).hermitian_part()
    if X.is_zero() or _angle_sine(Z, X) <= PARALLEL_SINE:
        raise InvalidInput("X is parallel to Z; no peel possible")
    support = Z.range_projection(tol)
    bases = _bases(support)
    Zc = [dagger(B) @ z @ B for B, z in zip(bases, Z.values)]
    Xc = [dagger(B) @ x @ B for B, x in zip(bases, X.values)]

    for sign in (1.0, -1.0):
        a = _crossing(Zc, Xc, sign)
        if a is not None:
            break
        # sign*X is positive on the whole corner
        sX = X * sign
        if total_rank(sX.range_projection(tol)) < total_rank(support):
            return sX * (Z.mean_trace().real / sX.mean_trace().real)
    else:
        raise InvalidInput("X is parallel to Z; no peel possible")

    Z_new = Z + X * (sign * a)
    new_support = Z_new.range_projection(tol, rank_tol=PEEL_RANK_TOL)
    if total_rank(new_support) >= total_rank(support):
        raise ConvergenceError("peel did not reduce the support; tolerances too tight")
    return Z_new


# --- minimality ------------------------------------------------------------------------------------------


def _normalized_generator(fs: FixedSpaceBasis) -> RandomField:
    G = fs.generators[0]
    t = G.mean_trace()
    if abs(t) < 1e-12:
        return G
    return (G * (abs(t) / t)).hermitian_part() / abs(t)


def is_minimal(e: Eris, P: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """Corner fixed space is one-dimensional and spanned by a positive field with support ``P``."""
    P = _as_projection_field(e, P)
    if not is_reducing(e, P, tol):
        raise InvalidInput("P does not reduce the process")
    fs = corner_fixed_space(e, P, tol)
    if fs.dim_complex != 1:
        return False
    G = _normalized_generator(fs)
    if not G.is_psd(ToleranceProfile(psd_tol=max(tol.psd_tol, 1e3 * tol.fixpoint_tol))):
        return False
    S = G.range_projection(tol, rank_tol=PEEL_RANK_TOL)
    return bool(np.array_equal(S.ranks(tol), P.ranks(tol)) and S.distance(P) <= 1e-6)


def schaefer_test(e: Eris, P: RandomField, X: RandomField, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """Resolvent test: does ``sum_k 2^-k L^k(X)`` have full support ``P``?

    The series is truncated at ``K`` terms with ``2^-K ||X||_1 < fixpoint_tol``.
    """
    P = _as_projection_field(e, P)
    X = e._check_field(X)
    if X.is_zero() or not X.is_psd(tol):
        raise InvalidInput("X must be a nonzero positive field")
    if corner_leakage(X, P) > tol.reduce_tol:
        raise InvalidInput("X is not supported in P")
    K = max(1, int(np.ceil(np.log2(max(X.max_norm(1), 1e-300) / tol.fixpoint_tol))) + 1)
    T = e.block_transfer().matrix
    v = X.vector()
    acc = np.zeros_like(v)
    for k in range(1, K + 1):
        v = T @ v
        acc += 0.5**k * v
    Zf = RandomField.from_vector(acc, e.n, e.dim).hermitian_part()
    S = Zf.range_projection(tol)
    return bool(np.array_equal(S.ranks(tol), P.ranks(tol)) and S.distance(P) <= 1e-6)


# --- decomposition ---------------------------------------------------------------------------------------


def _block_key(Q: RandomField, tol: ToleranceProfile):
    Q0 = Q.values[0]
    return (
        int(matcore.rank(Q0, tol)),
        tuple(np.round(-Q0.real.ravel(), 8)),
        tuple(np.round(-Q0.imag.ravel(), 8)),
    )


def _find_minimal(e: Eris, current: RandomField, tol: ToleranceProfile, budget: list) -> RandomField:
    while True:
        Z = e.cesaro_exact(current).hermitian_part()
        S = Z.range_projection(tol, rank_tol=PEEL_RANK_TOL)
        if total_rank(S) < total_rank(current):
            current = _clean_field(S)
            continue
        fs = corner_fixed_space(e, current, tol)
        if fs.dim_complex <= 1:
            return current
        sines = [_angle_sine(Z, B) for B in fs.basis]
        best = max(sines)
        X = fs.basis[next(i for i, s in enumerate(sines) if s >= best - 1e-9)]
        budget[0] += 1
        if budget[0] > budget[1]:
            raise ConvergenceError(f"more than {budget[1]} peels; tolerance failure")
        Z_new = peel(e, Z, X, tol)
        current = _clean_field(Z_new.range_projection(tol, rank_tol=PEEL_RANK_TOL))


def minimal_decomposition(e: Eris, tol: ToleranceProfile = DEFAULT_TOL) -> Decomposition:
    """Split the recurrent projection into orthogonal minimal reducing projections."""
    e._require_exact()
    P_r, P_t = recurrent_projection(e, tol)
    P_r = _clean_field(P_r)
    P_t = e.identity_field() - P_r
    remainder = P_r
    budget = [0, e.n * e.dim]
    found = []
    while total_rank(remainder) > 0:
        Q = _find_minimal(e, remainder, tol, budget)
        found.append(Q)
        remainder = _clean_field(remainder - Q)
    found.sort(key=lambda Q: _block_key(Q, tol))
    blocks = [Block(Q, stationary_state(e, Q, tol)) for Q in found]
    dec = Decomposition(
        recurrent=P_r,
        transient=P_t,
        blocks=blocks,
        dynamically_ergodic=len(blocks) == 1,
        peels=budget[0],
    )
    dec.residuals = decomposition_residuals(e, dec)
    logger.debug("decomposition: %d blocks after %d peels", len(blocks), budget[0])
    return dec


def decomposition_residuals(e: Eris, dec: Decomposition) -> dict:
    """Numerical evidence for the decomposition's postconditions."""
    Qs = [b.projection for b in dec.blocks]
    ortho = 0.0
    for i in range(len(Qs)):
        for j in range(i + 1, len(Qs)):
            ortho = max(ortho, (Qs[i] @ Qs[j]).max_norm(np.inf))
    total = RandomField.zeros(e.n, e.dim)
    for Q in Qs:
        total = total + Q
    cocycle = [e.check_cocycle(b.stationary_state) for b in dec.blocks]
    support = [
        b.stationary_state.range_projection(rank_tol=PEEL_RANK_TOL).distance(b.projection) for b in dec.blocks
    ]
    trace = [float(np.abs(np.real(b.stationary_state.traces()) - 1.0).max()) for b in dec.blocks]
    leak = [corner_leakage(e.step_L(Q), Q) for Q in Qs]
    return {
        "orthogonality": float(ortho),
        "sum_to_recurrent": float(total.distance(dec.recurrent)) if Qs else 0.0,
        "cocycle": [float(x) for x in cocycle],
        "support": [float(x) for x in support],
        "trace": trace,
        "reducing_leakage": [float(x) for x in leak],
    }


# --- ergodic averages --------------------------------------------------------------------------------------


def _ergodic_terms(e: Eris, state: RandomField, observable: RandomField, M: int):
    """Yield ``(N, a_N)`` with ``a_N[w] = <Phi_N(state)_w, observable_{theta^N w}>``."""
    state = e._check_field(state)
    observable = e._check_field(observable)
    if M < 1:
        raise InvalidInput("M must be >= 1")
    n, d = e.n, e.dim
    T = e.block_transfer().matrix
    v = state.vector()
    obs = observable.vector().reshape(n, d * d)
    for N in range(1, M + 1):
        v = T @ v
        pairing = np.real(np.sum(v.reshape(n, d * d).conj() * obs, axis=1))  # indexed by w + N
        yield N, np.roll(pairing, -N)  # re-indexed by base point w


def ergodic_average_observable(
    e: Eris,
    state: RandomField,
    observable: RandomField,
    M: int,
    per_point: bool = False,
):
    """``(1/M) sum_{N=1}^M <Phi_N(state)_w, observable_{theta^N w}>`` on the exact backend.

    Evaluated from every base point ``w``; returns the average over ``w``, or
    the array of per-point values with ``per_point=True``.  Uses
    ``(L^N state)_{w+N} = Phi_N(state)_w``.
    """
    acc = 0.0
    for _, a in _ergodic_terms(e, state, observable, M):
        acc = acc + a
    acc = acc / M
    return acc if per_point else float(acc.mean())


def ergodic_average_trace(e: Eris, state: RandomField, observable: RandomField, M: int, checkpoints) -> list:
    """Running values of :func:`ergodic_average_observable` at the given ``M``'s."""
    marks = set(int(c) for c in checkpoints)
    acc, out = 0.0, []
    for N, a in _ergodic_terms(e, state, observable, M):
        acc = acc + a
        if N in marks:
            out.append((N, float(acc.mean() / N)))
    return out


# --- i.i.d. pathway ----------------------------------------------------------------------------------------


def iid_deterministic_decomposition(
    channels: Sequence[KrausChannel],
    weights: Sequence[float],
    tol: ToleranceProfile = DEFAULT_TOL,
) -> Decomposition:
    """Deterministic blocks of an i.i.d. process via its mean channel.

    Valid when the recurrent projection of the i.i.d. process is
    deterministic (e.g. all channels unital): then minimal reducing
    projections are deterministic, and a deterministic ``P`` reduces the
    process iff every ``phi_x`` with positive weight maps ``P M_d P`` into
    itself, iff the mean channel does.  The per-channel condition is checked
    on every returned block; a failure sets ``reliable = False``.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise InvalidInput("weights must be a probability vector")
    mean = mean_channel(list(channels), weights)
    e1 = Eris(FiniteCycleDriver(1), {0: mean}, tol)
    dec = minimal_decomposition(e1, tol)
    worst = 0.0
    for b in dec.blocks:
        Q = b.projection.values[0]
        for ch, w in zip(channels, weights):
            if w > 0:
                Y = ch.apply(Q)
                worst = max(worst, matcore.op_norm(Y - Q @ Y @ Q))
    dec.residuals["per_channel_leakage"] = float(worst)
    dec.reliable = worst <= tol.reduce_tol
    if not dec.reliable:
        logger.warning("per-channel reducibility fails (leakage %.3g); result unreliable", worst)
    return dec
