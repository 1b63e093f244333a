"""Finite-truncation linear algebra for separable Hilbert spaces.

Elements are stored as coefficient vectors against a fixed orthonormal
basis, operators as dense matrices of shape ``(dim H2, dim H1)`` and the
covariance operator as the diagonal of its eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

__all__ = [
    "Space",
    "HilbertVec",
    "LinearOp",
    "SpectralDiagonal",
    "DimensionError",
    "tensor_product",
    "hs_norm",
    "operator_norm",
    "frac_power",
    "apply_semi_norm",
]

ABS_TOL = 1e-10
POWER_ITERATIONS = 200
POWER_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when an argument does not match its declared space."""


@dataclass(frozen=True)
class Space:
    """Tag for a truncated Hilbert space."""

    name: str
    dim: int

    def __post_init__(self):
        if self.dim < 0:
            raise ValueError("dimension must be non-negative")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HilbertVec:
    """Coefficients of an element against an orthonormal basis."""

    coeffs: np.ndarray
    space: Space

    def __post_init__(self):
        c = _readonly(self.coeffs)
        if c.ndim != 1 or c.shape[0] != self.space.dim:
            raise DimensionError(
                f"{c.shape} coefficients for space {self.space.name} of dim {self.space.dim}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def basis(cls, k: int, space: Space) -> "HilbertVec":
        """Unit vector along the ``k``-th basis element (0-based)."""
        c = np.zeros(space.dim)
        c[k] = 1.0
        return cls(c, space)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coeffs, dtype=dtype)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "HilbertVec") -> float:
        if other.space != self.space:
            raise DimensionError("inner product across different spaces")
        return float(self.coeffs @ other.coeffs)


@dataclass(frozen=True)
class LinearOp:
    """Dense matrix of an operator from ``domain`` to ``codomain``."""

    matrix: np.ndarray
    domain: Space
    codomain: Space

    def __post_init__(self):
        m = _readonly(self.matrix)
        if m.shape != (self.codomain.dim, self.domain.dim):
            raise DimensionError(
                f"matrix shape {m.shape} does not match "
                f"({self.codomain.dim}, {self.domain.dim})"
            )
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, matrix, domain: str = "H1", codomain: str = "H2") -> "LinearOp":
        m = np.asarray(matrix, dtype=float)
        return cls(m, Space(domain, m.shape[1]), Space(codomain, m.shape[0]))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def __call__(self, u: HilbertVec) -> HilbertVec:
        if u.space != self.domain:
            raise DimensionError("argument is not in the operator domain")
        return HilbertVec(self.matrix @ u.coeffs, self.codomain)

    def __add__(self, other: "LinearOp") -> "LinearOp":
        self._check_same(other)
        return LinearOp(self.matrix + other.matrix, self.domain, self.codomain)

    def __sub__(self, other: "LinearOp") -> "LinearOp":
        self._check_same(other)
        return LinearOp(self.matrix - other.matrix, self.domain, self.codomain)

    def __mul__(self, scalar: float) -> "LinearOp":
        return LinearOp(scalar * self.matrix, self.domain, self.codomain)

    __rmul__ = __mul__

    def _check_same(self, other: "LinearOp") -> None:
        if other.domain != self.domain or other.codomain != self.codomain:
            raise DimensionError("operators act between different spaces")


@dataclass(frozen=True)
class SpectralDiagonal:
    """Eigenvalues of a diagonal covariance operator.

    Parameters
    ----------
    eigenvalues : array_like
        Positive eigenvalues ``lambda_k``.
    s : float
        Decay index in ``(0, 1]``.
    d1, d2 : float, optional
        Envelope constants with ``d1 k^{-1/s} <= lambda_k <= d2 k^{-1/s}``.
        Checked only when both are given.
    normalized : bool
        When True the sequence must be decreasing with trace at most one.
        Set to False for derived diagonals such as fractional powers or the
        covariance of a lifted input.
    """

    eigenvalues: np.ndarray
    s: float = 1.0
    d1: Optional[float] = None
    d2: Optional[float] = None
    normalized: bool = True
    space: Space = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        lam = _readonly(self.eigenvalues)
        if lam.ndim != 1:
            raise ValueError("eigenvalues must be one-dimensional")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("eigenvalues must be positive and finite")
        if not 0 < self.s <= 1:
            raise ValueError("decay index s must lie in (0, 1]")
        if self.normalized:
            if np.any(np.diff(lam) > 0):
                raise ValueError("eigenvalues must be non-increasing")
            if lam.sum() > 1 + ABS_TOL:
                raise ValueError(f"trace {lam.sum():.6g} exceeds 1")
        if self.d1 is not None and self.d2 is not None:
            if not 0 < self.d1 <= self.d2:
                raise ValueError("need 0 < d1 <= d2")
            env = np.arange(1, lam.size + 1) ** (-1.0 / self.s)
            slack = ABS_TOL * np.maximum(1.0, lam)
            if np.any(lam < self.d1 * env - slack) or np.any(lam > self.d2 * env + slack):
                raise ValueError("eigenvalues leave the d1/d2 envelope")
        object.__setattr__(self, "eigenvalues", lam)
        if self.space is None:
            object.__setattr__(self, "space", Space("H1", lam.size))
        elif self.space.dim != lam.size:
            raise DimensionError("space dimension does not match eigenvalue count")

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues.max())

    def trace_power(self, p: Optional[float] = None) -> float:
        """``Tr(L^p)``; defaults to ``p = s``."""
        p = self.s if p is None else p
        return float(np.sum(self.eigenvalues ** p))


ArrayOrOp = Union[LinearOp, np.ndarray]


def _mat(A: ArrayOrOp) -> np.ndarray:
    m = np.asarray(A, dtype=float)
    if m.ndim != 2:
        raise DimensionError("expected a matrix")
    return m


def tensor_product(f: HilbertVec, e: HilbertVec) -> LinearOp:
    """Rank-one operator ``u -> <e, u> f``."""
    if not isinstance(f, HilbertVec) or not isinstance(e, HilbertVec):
        raise TypeError("tensor_product expects HilbertVec arguments")
    return LinearOp(np.outer(f.coeffs, e.coeffs), domain=e.space, codomain=f.space)


def hs_norm(A: ArrayOrOp) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.linalg.norm(_mat(A)))


def operator_norm(A: ArrayOrOp, max_iter: int = POWER_ITERATIONS, tol: float = POWER_TOL) -> float:
    """Spectral norm by power iteration on ``A^T A`` started at the all-ones vector."""
    m = _mat(A)
    if m.size == 0 or not np.any(m):
        return 0.0
    v = np.ones(m.shape[1]) / np.sqrt(m.shape[1])
    est = 0.0
    for _ in range(max_iter):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # all-ones start orthogonal to the row space; restart off-axis
            v = np.arange(1, m.shape[1] + 1, dtype=float)
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - est) <= tol * max(new, 1.0):
            est = new
            break
        est = new
    return float(np.linalg.norm(m @ v))


def frac_power(C: SpectralDiagonal, alpha: float) -> SpectralDiagonal:
    """Diagonal of ``L^alpha`` in the same eigenbasis."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 1:
        return C
    return SpectralDiagonal(C.eigenvalues ** alpha, s=C.s, normalized=False, space=C.space)


def apply_semi_norm(A: ArrayOrOp, C: SpectralDiagonal, alpha: float) -> float:
    """Squared norm ``||A L^alpha||_HS^2 = sum_k lambda_k^{2 alpha} ||A e_k||^2``."""
    m = _mat(A)
    if isinstance(A, LinearOp) and A.domain.dim != C.dim:
        raise DimensionError("operator domain does not match the covariance space")
    if m.shape[1] != C.dim:
        raise DimensionError(f"operator has {m.shape[1]} columns, covariance dim {C.dim}")
    col = np.einsum("ij,ij->j", m, m)
    return float(col @ C.eigenvalues ** (2 * alpha))
