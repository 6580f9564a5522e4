"""Dense complex matrix kernel.

Matrices are plain ``numpy`` arrays of dtype ``complex128``.  Every
tolerance-sensitive routine takes a :class:`ToleranceProfile` so that the
thresholds used in an analysis can be recorded alongside its results.

Only Hermitian eigendecompositions and SVDs are used here; nothing in the
package relies on a non-symmetric eigensolver.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatch, InvalidInput

#: Absolute floor under the relative rank cutoff, so that ``range_projection(0) == 0``.
RANK_FLOOR = 1e-12


@dataclass(frozen=True)
class ToleranceProfile:
    """Numerical thresholds shared by all analyses.

    Attributes
    ----------
    eig_tol : eigenvalue-cluster threshold.
    rank_tol : singular-value cutoff relative to the largest singular value.
    psd_tol : allowed magnitude of a negative eigenvalue in a PSD check.
    fixpoint_tol : threshold on ``|lambda - 1|`` used for fixed spaces.
    """

    eig_tol: float = 1e-9
    rank_tol: float = 1e-9
    psd_tol: float = 1e-10
    fixpoint_tol: float = 1e-9

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not (0.0 < value < 1e-3):
                raise InvalidInput(f"{field.name}={value!r} must lie in (0, 1e-3)")

    @property
    def reduce_tol(self) -> float:
        """Allowed corner leakage when testing whether a projection reduces."""
        return 1e3 * self.eig_tol

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ToleranceProfile":
        if not data:
            return cls()
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidInput(f"unknown tolerance fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


DEFAULT_TOL = ToleranceProfile()


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Coerce to a square, finite ``complex128`` array."""
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} has non-finite entries")
    return A


def _same_dim(A: np.ndarray, B: np.ndarray):
    if A.shape != B.shape:
        raise DimensionMismatch(f"shape mismatch: {A.shape} vs {B.shape}")


def dagger(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def hs_inner(A, B) -> complex:
    """Hilbert-Schmidt inner product ``tr(A* B)``, conjugate-linear in ``A``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _same_dim(A, B)
    return complex(np.vdot(A, B))


def schatten_norm(A, p: float = 1) -> float:
    """Schatten ``p``-norm: the ``l_p`` norm of the singular values.

    ``p = 1`` is the trace norm, ``p = 2`` the Frobenius norm and
    ``p = math.inf`` the operator norm.
    """
    if not (p >= 1):
        raise InvalidInput(f"Schatten norm needs p >= 1, got {p}")
    s = np.linalg.svd(as_matrix(A), compute_uv=False)
    if math.isinf(p):
        return float(s[0])
    if p == 1:
        return float(s.sum())
    return float(np.sum(s**p) ** (1.0 / p))


def op_norm(A: np.ndarray) -> float:
    """Operator norm without the validation overhead of :func:`schatten_norm`."""
    return float(np.linalg.norm(A, 2))


def trace_norm(A: np.ndarray) -> float:
    return float(np.linalg.svd(A, compute_uv=False).sum())


def hermitian_part(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + dagger(A))


def is_psd(A, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    A = as_matrix(A)
    if op_norm(A - dagger(A)) > tol.psd_tol:
        return False
    return float(np.linalg.eigvalsh(hermitian_part(A))[0]) >= -tol.psd_tol


def is_projection(P, atol: float = 1e-8) -> bool:
    P = np.asarray(P)
    return op_norm(P - dagger(P)) <= atol and op_norm(P @ P - P) <= atol


def range_basis(A, tol: ToleranceProfile = DEFAULT_TOL, rank_tol: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical range of ``A``."""
    A = as_matrix(A)
    rtol = tol.rank_tol if rank_tol is None else rank_tol
    U, s, _ = np.linalg.svd(A)
    cutoff = max(rtol * s[0], RANK_FLOOR)
    return U[:, s > cutoff]


def range_projection(A, tol: ToleranceProfile = DEFAULT_TOL, rank_tol: Optional[float] = None) -> np.ndarray:
    """Orthogonal projection onto the span of the significant left singular vectors.

    A singular value counts when it exceeds ``rank_tol * sigma_max`` and the
    absolute floor ``1e-12``; ``rank_tol`` defaults to ``tol.rank_tol``.
    """
    B = range_basis(A, tol, rank_tol)
    P = B @ dagger(B)
    return hermitian_part(P)


def rank(A, tol: ToleranceProfile = DEFAULT_TOL, rank_tol: Optional[float] = None) -> int:
    return range_basis(A, tol, rank_tol).shape[1]


def projection_basis(P, atol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of ``ran P`` for an orthogonal projection ``P``."""
    P = as_matrix(P, "P")
    if not is_projection(P, atol):
        raise InvalidInput("P is not an orthogonal projection")
    w, V = np.linalg.eigh(hermitian_part(P))
    return V[:, w > 0.5]


class CornerSpectrum(NamedTuple):
    """Eigenvalues of a compression ``PAP`` inside the corner ``P M_d P``."""

    values: np.ndarray  # descending
    max: float
    min: float


def corner_spectrum(A, P, tol: ToleranceProfile = DEFAULT_TOL) -> CornerSpectrum:
    """Spectrum of the self-adjoint ``A`` compressed to the range of ``P``.

    Returns the ``rank(P)`` eigenvalues of ``B* A B`` in descending order,
    where the columns of ``B`` are an orthonormal basis of ``ran P``.
    """
    A = as_matrix(A, "A")
    P = as_matrix(P, "P")
    _same_dim(A, P)
    if op_norm(A - dagger(A)) > max(tol.eig_tol, tol.eig_tol * op_norm(A)):
        raise InvalidInput("A is not self-adjoint")
    B = projection_basis(P)
    if B.shape[1] == 0:
        raise InvalidInput("P must have rank >= 1")
    vals = np.linalg.eigvalsh(hermitian_part(dagger(B) @ A @ B))[::-1]
    return CornerSpectrum(vals, float(vals[0]), float(vals[-1]))


def trace_distance(A, B) -> float:
    return 0.5 * trace_norm(np.asarray(A) - np.asarray(B))


# --- JSON --------------------------------------------------------------------


def _float17(x: float) -> float:
    return float(f"{x:.17g}")


def matrix_to_json(A) -> dict:
    """Serialize as ``{"dim", "re", "im"}`` with row-major nested lists."""
    A = as_matrix(A)
    return {
        "dim": int(A.shape[0]),
        "re": [[_float17(x) for x in row] for row in A.real.tolist()],
        "im": [[_float17(x) for x in row] for row in A.imag.tolist()],
    }


def matrix_from_json(data) -> np.ndarray:
    if isinstance(data, dict):
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data.get("im", np.zeros_like(re)), dtype=float)
        A = as_matrix(re + 1j * im)
        if "dim" in data and int(data["dim"]) != A.shape[0]:
            raise DimensionMismatch(f"declared dim {data['dim']} but matrix is {A.shape[0]}x{A.shape[0]}")
        return A
    # bare nested list of reals
    return as_matrix(np.asarray(data, dtype=float))
