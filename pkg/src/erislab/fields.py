"""Random matrices over a finite cyclic driver.

A :class:`RandomField` stores one ``d x d`` matrix per point of
``Omega = Z/nZ`` in an array of shape ``(n, d, d)``.  Averages over
``Omega`` are uniform, so ``mean_inner`` is the expectation of the
Hilbert-Schmidt pairing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import DimensionMismatch, InvalidInput
from .matcore import DEFAULT_TOL, ToleranceProfile, dagger


@dataclass(frozen=True, eq=False)
class RandomField:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[1] != v.shape[2] or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionMismatch(f"field values must have shape (n, d, d), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("field has non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    # construction ------------------------------------------------------------

    @classmethod
    def constant(cls, A, n: int) -> "RandomField":
        A = matcore.as_matrix(A)
        return cls(np.broadcast_to(A, (n,) + A.shape))

    @classmethod
    def identity(cls, n: int, d: int) -> "RandomField":
        return cls.constant(np.eye(d), n)

    @classmethod
    def zeros(cls, n: int, d: int) -> "RandomField":
        return cls(np.zeros((n, d, d)))

    @classmethod
    def from_vector(cls, v: np.ndarray, n: int, d: int) -> "RandomField":
        """Inverse of :meth:`vector` (column-stacked blocks, one per ``omega``)."""
        return cls(np.asarray(v).reshape(n, d, d).transpose(0, 2, 1))

    # shape -------------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, omega: int) -> np.ndarray:
        return self.values[omega % self.n]

    def vector(self) -> np.ndarray:
        """Concatenation of the column-stacked ``vec(X_omega)``."""
        return self.values.transpose(0, 2, 1).reshape(-1)

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, RandomField):
            if other.values.shape != self.values.shape:
                raise DimensionMismatch(f"field shapes differ: {self.values.shape} vs {other.values.shape}")
            return other.values
        return other

    # algebra -----------------------------------------------------------------

    def __add__(self, other):
        return RandomField(self.values + self._coerce(other))

    def __sub__(self, other):
        return RandomField(self.values - self._coerce(other))

    def __neg__(self):
        return RandomField(-self.values)

    def __mul__(self, scalar):
        if isinstance(scalar, RandomField):
            return NotImplemented
        return RandomField(self.values * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return RandomField(self.values / scalar)

    def __matmul__(self, other):
        return RandomField(self.values @ self._coerce(other))

    def adjoint(self) -> "RandomField":
        return RandomField(dagger(self.values))

    def hermitian_part(self) -> "RandomField":
        return RandomField(0.5 * (self.values + dagger(self.values)))

    def compress(self, P: "RandomField") -> "RandomField":
        """Fieldwise ``P X P``."""
        Pv = self._coerce(P)
        return RandomField(Pv @ self.values @ Pv)

    # scalars -----------------------------------------------------------------

    def traces(self) -> np.ndarray:
        return np.trace(self.values, axis1=1, axis2=2)

    def mean_trace(self) -> complex:
        return complex(self.traces().mean())

    def mean_inner(self, other: "RandomField") -> complex:
        """Uniform average over ``omega`` of ``tr(X_omega* Y_omega)``."""
        return complex(np.vdot(self.values, self._coerce(other)) / self.n)

    def norms(self, p: float = 1) -> np.ndarray:
        return np.array([matcore.schatten_norm(X, p) for X in self.values])

    def max_norm(self, p: float = 1) -> float:
        return float(self.norms(p).max())

    def ranks(self, tol: ToleranceProfile = DEFAULT_TOL, rank_tol=None) -> np.ndarray:
        return np.array([matcore.rank(X, tol, rank_tol) for X in self.values])

    # predicates --------------------------------------------------------------

    def is_psd(self, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
        return all(matcore.is_psd(X, tol) for X in self.values)

    def is_projection(self, atol: float = 1e-8) -> bool:
        return all(matcore.is_projection(X, atol) for X in self.values)

    def is_self_adjoint(self, atol: float = 1e-10) -> bool:
        return float(np.abs(self.values - dagger(self.values)).max()) <= atol

    def range_projection(self, tol: ToleranceProfile = DEFAULT_TOL, rank_tol=None) -> "RandomField":
        return RandomField(np.stack([matcore.range_projection(X, tol, rank_tol) for X in self.values]))

    def distance(self, other, p: float = np.inf) -> float:
        """Largest fieldwise Schatten-``p`` distance."""
        return (self - other).max_norm(p)

    def is_zero(self, atol: float = 1e-12) -> bool:
        return float(np.abs(self.values).max()) <= atol

    def to_json(self) -> list:
        return [matcore.matrix_to_json(X) for X in self.values]

    @classmethod
    def from_json(cls, data) -> "RandomField":
        return cls(np.stack([matcore.matrix_from_json(m) for m in data]))

    def __repr__(self):
        return f"RandomField(n={self.n}, dim={self.dim})"
