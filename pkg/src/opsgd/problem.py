"""Synthetic generative models ``y = S x + delta(x) + y0 + eps`` and samplers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hilbert import SpectralDiagonal, hs_norm

__all__ = [
    "make_rng",
    "build_spectrum",
    "TargetSpec",
    "build_target",
    "NonlinearSpec",
    "ProblemSpec",
    "sample",
    "draw_inputs",
    "respond",
    "KurtosisReport",
    "kurtosis_certificate",
    "InfeasibleSpectrumError",
]


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of integers.

    ``make_rng(master_seed, replicate)`` yields independent streams for
    different replicate indices.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


class InfeasibleSpectrumError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

def build_spectrum(dim: int, s: float, d1: float, d2: float) -> SpectralDiagonal:
    """Power-law spectrum ``lambda_k = d k^{-1/s}``.

    ``d`` is the largest value in ``[d1, d2]`` whose trace at the truncation
    does not exceed one.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if not 0 < s <= 1:
        raise ValueError("s must lie in (0, 1]")
    if not 0 < d1 <= d2:
        raise ValueError("need 0 < d1 <= d2")
    base = np.arange(1, dim + 1, dtype=float) ** (-1.0 / s)
    total = base.sum()
    d_max = 1.0 / total
    if d1 > d_max * (1 + 1e-15):
        raise InfeasibleSpectrumError(
            f"d1={d1:g} gives trace {d1 * total:.6g} > 1; "
            f"largest feasible d1 at dim={dim}, s={s:g} is {d_max:.6g}"
        )
    d = min(d2, d_max)
    lam = d * base
    if lam.sum() > 1.0:  # guard against rounding at the boundary
        lam = lam / lam.sum()
        d = lam[0]
    return SpectralDiagonal(lam, s=s, d1=d1, d2=d2)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetSpec:
    """Regularity class of the target ``S = J L^r``.

    ``regularity`` is ``"weak"`` (operator-norm bound on ``J``) or
    ``"strong"`` (Hilbert-Schmidt bound on ``J``).
    """

    regularity: str
    r: float
    R: float
    j_operator: np.ndarray

    def __post_init__(self):
        if self.regularity not in ("weak", "strong"):
            raise ValueError("regularity must be 'weak' or 'strong'")
        if self.r <= 0:
            raise ValueError("regularity exponent must be positive")
        if self.R <= 0:
            raise ValueError("R must be positive")
        J = np.array(self.j_operator, dtype=float, copy=True)
        if J.ndim != 2:
            raise ValueError("J must be a matrix")
        J.setflags(write=False)
        object.__setattr__(self, "j_operator", J)
        if self.j_norm > self.R * (1 + 1e-12):
            raise ValueError(f"{self.regularity} norm of J is {self.j_norm:.6g} > R={self.R:g}")

    @property
    def j_norm(self) -> float:
        if self.regularity == "weak":
            return float(np.linalg.norm(self.j_operator, 2))
        return hs_norm(self.j_operator)

    @classmethod
    def random(cls, regularity: str, r: float, R: float, shape: tuple[int, int], seed: int) -> "TargetSpec":
        """Gaussian ``J`` rescaled so its relevant norm equals ``R``."""
        J = make_rng(seed).standard_normal(shape)
        if regularity == "weak":
            J *= R / np.linalg.norm(J, 2)
        elif regularity == "strong":
            J *= R / np.linalg.norm(J)
        else:
            raise ValueError("regularity must be 'weak' or 'strong'")
        return cls(regularity, r, R, J)


def build_target(target: TargetSpec, C: SpectralDiagonal) -> np.ndarray:
    """Return ``S = J diag(lambda)^r``."""
    J = target.j_operator
    if J.shape[1] != C.dim:
        raise ValueError("J columns do not match the spectrum dimension")
    return J * C.eigenvalues ** target.r


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearSpec:
    """``delta(x) = a (<x, e_k0>^2 - lambda_k0) * direction``."""

    direction: np.ndarray
    k0: int
    amplitude: float

    def __post_init__(self):
        d = np.array(self.direction, dtype=float, copy=True)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("direction must be non-zero")
        d /= n
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)

    def mu2(self, C: SpectralDiagonal) -> float:
        """``E||delta(x)||^2`` under the diagonal Gaussian law."""
        return 2.0 * self.amplitude ** 2 * C.eigenvalues[self.k0] ** 2

    def __call__(self, X: np.ndarray, C: SpectralDiagonal) -> np.ndarray:
        X = np.atleast_2d(X)
        z = X[:, self.k0] ** 2 - C.eigenvalues[self.k0]
        return self.amplitude * z[:, None] * self.direction[None, :]


@dataclass(frozen=True)
class ProblemSpec:
    """Full generative model.

    With ``intercept=True`` the last input coordinate is the constant 1 and
    the last eigenvalue of ``spectrum`` is its (unit) second moment; this is
    how the biased model is lifted to a linear one.
    """

    spectrum: SpectralDiagonal
    target: TargetSpec
    noise_variance: float = 0.0
    noise_channels: Optional[int] = None
    nonlinearity: Optional[NonlinearSpec] = None
    bias: Optional[np.ndarray] = None
    intercept: bool = False
    s_dagger: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")
        S = build_target(self.target, self.spectrum)
        S.setflags(write=False)
        object.__setattr__(self, "s_dagger", S)
        m = self.noise_channels
        if m is not None and m < 1:
            raise ValueError("noise_channels must be positive")
        if self.bias is not None:
            b = np.array(self.bias, dtype=float, copy=True)
            if b.shape != (self.dim_out,):
                raise ValueError("bias must live in the output space")
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)
        if self.nonlinearity is not None:
            if self.nonlinearity.direction.shape != (self.dim_out,):
                raise ValueError("nonlinearity direction must live in the output space")
            if not 0 <= self.nonlinearity.k0 < self.n_gaussian:
                raise ValueError("k0 out of range")
        if self.intercept and not np.isclose(self.spectrum.eigenvalues[-1], 1.0):
            raise ValueError("lifted spectrum must end with a unit eigenvalue")

    @property
    def dim_in(self) -> int:
        return self.spectrum.dim

    @property
    def dim_out(self) -> int:
        return self.target.j_operator.shape[0]

    @property
    def n_gaussian(self) -> int:
        return self.dim_in - 1 if self.intercept else self.dim_in

    @property
    def active_noise_channels(self) -> int:
        m = self.dim_out if self.noise_channels is None else self.noise_channels
        return min(m, self.dim_out)

    @property
    def moment_constant(self) -> float:
        """Fourth-moment constant ``c`` of the input law (3 for Gaussians)."""
        return 3.0


def draw_inputs(spec: ProblemSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` inputs as rows of an ``(n, dim_in)`` array."""
    k = spec.n_gaussian
    g = rng.standard_normal((n, k))
    X = g * np.sqrt(spec.spectrum.eigenvalues[:k])
    if spec.intercept:
        X = np.hstack([X, np.ones((n, 1))])
    return X


def respond(spec: ProblemSpec, X: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Outputs for given inputs; ``rng`` may be None when there is no noise."""
    X = np.atleast_2d(X)
    Y = X @ spec.s_dagger.T
    if spec.nonlinearity is not None:
        Y += spec.nonlinearity(X, spec.spectrum)
    if spec.bias is not None:
        Y += spec.bias
    if spec.noise_variance > 0:
        m = spec.active_noise_channels
        Y[:, :m] += np.sqrt(spec.noise_variance / m) * rng.standard_normal((X.shape[0], m))
    return Y


def sample(spec: ProblemSpec, rng: np.random.Generator, n: Optional[int] = None):
    """Draw ``(x, y)``; with ``n`` given, arrays of ``n`` rows."""
    X = draw_inputs(spec, rng, 1 if n is None else n)
    Y = respond(spec, X, rng)
    if n is None:
        return X[0], Y[0]
    return X, Y


# ---------------------------------------------------------------------------
# moment condition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KurtosisReport:
    ratios: np.ndarray
    standard_errors: np.ndarray
    skipped: int
    notes: tuple

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def max_se(self) -> float:
        return float(self.standard_errors[int(np.argmax(self.ratios))])


def _kurtosis_ratio(z: np.ndarray) -> tuple[float, float]:
    # delta method for m4 / m2^2
    z2 = z * z
    z4 = z2 * z2
    n = z.size
    m2, m4 = z2.mean(), z4.mean()
    cov = np.cov(np.vstack([z4, z2]))
    grad = np.array([1.0 / m2 ** 2, -2.0 * m4 / m2 ** 3])
    se = float(np.sqrt(grad @ cov @ grad / n))
    return float(m4 / m2 ** 2), se


def kurtosis_certificate(
    spec: ProblemSpec,
    directions: int | Sequence[np.ndarray],
    draws: int,
    rng: np.random.Generator,
    chunk: int = 100_000,
) -> KurtosisReport:
    """Monte Carlo estimate of ``E<x,f>^4 / (E<x,f>^2)^2`` along unit directions.

    ``directions`` is either a count of random unit directions or an explicit
    sequence of vectors.
    """
    if draws < 10_000:
        raise ValueError("need at least 1e4 draws")
    if isinstance(directions, (int, np.integer)):
        F = rng.standard_normal((int(directions), spec.dim_in))
    else:
        F = np.array([np.asarray(f, dtype=float) for f in directions])
    F = F / np.linalg.norm(F, axis=1, keepdims=True)
    lam = spec.spectrum.eigenvalues
    if spec.intercept:
        lam = lam.copy()
        lam[-1] = 0.0  # constant coordinate carries no variance
    var = (F ** 2) @ lam
    keep = var > 1e-300
    notes = tuple(f"direction {i} degenerate: <x,f> = 0 a.s." for i in np.flatnonzero(~keep))
    F = F[keep]
    Z = np.empty((draws, F.shape[0]))
    for start in range(0, draws, chunk):
        n = min(chunk, draws - start)
        X = draw_inputs(spec, rng, n)
        if spec.intercept:
            X = X.copy()
            X[:, -1] = 0.0
        Z[start:start + n] = X @ F.T
    out = [_kurtosis_ratio(Z[:, j]) for j in range(F.shape[0])]
    ratios = np.array([o[0] for o in out])
    ses = np.array([o[1] for o in out])
    return KurtosisReport(ratios, ses, int((~keep).sum()), notes)
