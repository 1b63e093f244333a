"""Rate exponents, minimax exponents and the best-linear-approximation residual.

All exponents are positive numbers ``a`` describing an error decay
``T^{-a}`` (possibly times ``log T``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hilbert import SpectralDiagonal

__all__ = [
    "RateRegime",
    "RateExponent",
    "InvalidRegimeError",
    "theoretical_exponent",
    "constant_step_exponent",
    "constant_step_cap",
    "minimax_exponent",
    "minimax_caveat",
    "best_linear_residual",
]

REGULARITIES = ("weak", "strong")
ERRORS = ("prediction", "estimation")
SCHEDULES = ("decaying", "constant")


class InvalidRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class RateRegime:
    """Which upper bound applies.

    ``r`` is the regularity exponent of the target (``r`` for weak, ``r~``
    for strong regularity).
    """

    regularity: str
    error: str
    schedule: str
    s: float
    r: float

    def __post_init__(self):
        if self.regularity not in REGULARITIES:
            raise InvalidRegimeError(f"unknown regularity {self.regularity!r}")
        if self.error not in ERRORS:
            raise InvalidRegimeError(f"unknown error kind {self.error!r}")
        if self.schedule not in SCHEDULES:
            raise InvalidRegimeError(f"unknown schedule {self.schedule!r}")
        if not 0 < self.s <= 1:
            raise InvalidRegimeError("s must lie in (0, 1]")
        if self.r <= 0:
            raise InvalidRegimeError("r must be positive")
        if self.regularity == "weak" and self.error == "estimation":
            raise InvalidRegimeError(
                "estimation error needs a Hilbert-Schmidt target; "
                "weak regularity does not guarantee one"
            )
        if (self.regularity, self.error, self.schedule) == ("strong", "estimation", "decaying") and self.s >= 1:
            raise InvalidRegimeError("estimation error with a decaying step needs s < 1")


@dataclass(frozen=True)
class RateExponent:
    exponent: float
    log_factor: bool
    step_parameter: float  # theta (decaying) or constant-step exponent

    def __iter__(self):
        return iter((self.exponent, self.log_factor, self.step_parameter))


def _is_one(s: float) -> bool:
    return math.isclose(s, 1.0, rel_tol=0, abs_tol=1e-12)


def constant_step_exponent(regularity: str, error: str, s: float, r: float) -> float:
    """Exponent ``b`` of the constant step ``eta_* (T+1)^{-b}``."""
    if regularity == "weak":
        return (2 * r + 1 - s) / (2 * r + 2 - s)
    if error == "prediction":
        return (2 * r + 1) / (2 * r + 2)
    return (2 * r + s) / (1 + 2 * r + s)


def constant_step_cap(regularity: str, error: str, s: float, r: float, c: float) -> float:
    """Largest admissible ``eta_*`` for the constant-step rate bounds."""
    if regularity == "weak":
        num, den = 2 * r + 1 - s, 2 * r + 2 - s
    elif error == "prediction":
        num, den = 2 * r + 1, 2 * r + 2
    else:
        num, den = 2 * r + s, 1 + 2 * r + s
    return math.e * num / ((1 + 14 * c) * den)


def theoretical_exponent(regime: RateRegime) -> RateExponent:
    """Upper-bound exponent for ``regime``."""
    g, err, sch, s, r = regime.regularity, regime.error, regime.schedule, regime.s, regime.r
    one = _is_one(s)
    if sch == "constant":
        b = constant_step_exponent(g, err, s, r)
        if g == "weak":
            if one:
                return RateExponent(2 * r / (2 * r + 1), True, b)
            return RateExponent((2 * r + 1 - s) / (2 * r + 2 - s), False, b)
        if err == "prediction":
            return RateExponent((2 * r + 1) / (2 * r + 2), one, b)
        return RateExponent(2 * r / (1 + 2 * r + s), False, b)

    # decaying step
    if g == "weak":
        if one:
            theta = min(2 * r / (2 * r + 1), 0.5)
            return RateExponent(theta, True, theta)
        theta = min((2 * r + 1 - s) / (2 * r + 2 - s), (2 - s) / (3 - s))
        return RateExponent(theta, False, theta)
    if err == "prediction":
        theta = min((2 - s) / (3 - s), (2 * r + 1) / (2 * r + 2))
        if one:
            return RateExponent(0.5, True, theta)
        if s > 1 - 2 * r:
            return RateExponent((2 - s) / (3 - s), False, theta)
        return RateExponent((2 * r + 1) / (2 * r + 2), False, theta)
    theta = min((2 * r + s) / (1 + 2 * r + s), 0.5)
    if r < (1 - s) / 2:
        return RateExponent(2 * r / (1 + 2 * r + s), False, theta)
    return RateExponent((1 - s) / 2, True, theta)


def minimax_exponent(regularity: str, error: str, s: float, r: float) -> float:
    """Lower-bound exponent over the regularity class."""
    if regularity == "weak":
        if error != "prediction":
            raise InvalidRegimeError("no lower bound for estimation error under weak regularity")
        return (1 + 2 * r - s) / (2 * r + 1)
    if error == "prediction":
        return (2 * r + 1) / (1 + 2 * r + s)
    return 2 * r / (1 + 2 * r + s)


def minimax_caveat(regularity: str, dim_out: Optional[int] = None, m: Optional[int] = None) -> Optional[str]:
    """Note attached to weak-regularity lower bounds.

    The weak construction needs an infinite-dimensional output space; at a
    truncation it is only realizable when ``dim_out >= 2 m``.
    """
    if regularity != "weak":
        return None
    base = "weak lower bound assumes an infinite-dimensional output space"
    if dim_out is None or m is None:
        return base
    if dim_out >= 2 * m:
        return f"{base}; realized at truncation dim_out={dim_out} >= 2m={2 * m}"
    return f"{base}; truncation dim_out={dim_out} < 2m={2 * m}, construction not realizable"


def best_linear_residual(
    S: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    spectrum: SpectralDiagonal,
    return_se: bool = False,
):
    """``||S diag(lambda) - mean(y x^T)||_HS`` over the samples.

    With ``return_se`` also returns the Monte Carlo scale
    ``sqrt(sum_ij Var(y_i x_j) / N)`` of the empirical cross moment.
    """
    S = np.asarray(S, dtype=float)
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ValueError("need at least one (x, y) pair")
    n = X.shape[0]
    cross = Y.T @ X / n
    res = float(np.linalg.norm(S * spectrum.eigenvalues - cross))
    if not return_se:
        return res
    # sum_ij E[y_i^2 x_j^2] - cross_ij^2, evaluated without forming n*d1*d2
    second = (Y ** 2).T @ (X ** 2) / n
    var = np.maximum(second - cross ** 2, 0.0).sum()
    return res, float(np.sqrt(var / n))
