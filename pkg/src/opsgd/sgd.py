"""Operator SGD ``S <- S - eta_t (S x - y) x^T`` with checkpointed exact errors."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .hilbert import SpectralDiagonal
from .metrics import constant_step_cap
from .problem import ProblemSpec, make_rng, sample

__all__ = [
    "StepSchedule",
    "SgdState",
    "TrajectoryLog",
    "FeasibilityReport",
    "sgd_step",
    "run_trajectory",
    "expected_errors",
    "power_of_two_checkpoints",
    "feasibility_check",
    "c5_constant",
    "martingale_residual",
    "recursion_identity_gap",
    "spec_fingerprint",
]


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """Decaying ``eta_1 t^{-theta}`` or constant ``eta_* (T+1)^{-b}`` steps.

    Build through :meth:`decaying` and :meth:`constant`. ``lambda_max`` is the
    bound on ``||L_C||`` used at construction (1 always holds since the trace
    is at most one); :func:`run_trajectory` re-checks against the actual
    spectrum.
    """

    kind: str
    eta1: float = 0.0
    theta: float = 0.0
    eta_star: float = 0.0
    exponent: float = 0.0
    horizon: Optional[int] = None
    lambda_max: float = 1.0

    def __post_init__(self):
        if self.kind == "decaying":
            if self.eta1 <= 0:
                raise ValueError("eta1 must be positive")
            if not 0 < self.theta < 1:
                raise ValueError("theta must lie in (0, 1)")
        elif self.kind == "constant":
            if self.eta_star <= 0:
                raise ValueError("eta_star must be positive")
            if not 0 <= self.exponent < 1:
                raise ValueError("exponent must lie in [0, 1)")
            if self.horizon is None or self.horizon < 0:
                raise ValueError("constant schedule needs a horizon T >= 0")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.max_step * self.lambda_max >= 1:
            raise ValueError(
                f"step {self.max_step:.6g} violates eta * lambda_max < 1 (lambda_max={self.lambda_max:.6g})"
            )

    @classmethod
    def decaying(cls, eta1: float, theta: float, lambda_max: float = 1.0) -> "StepSchedule":
        return cls("decaying", eta1=eta1, theta=theta, lambda_max=lambda_max)

    @classmethod
    def constant(cls, eta_star: float, exponent: float, horizon: int, lambda_max: float = 1.0) -> "StepSchedule":
        return cls("constant", eta_star=eta_star, exponent=exponent, horizon=horizon, lambda_max=lambda_max)

    @property
    def max_step(self) -> float:
        if self.kind == "decaying":
            return self.eta1
        return self.eta_star * (self.horizon + 1) ** (-self.exponent)

    def eta(self, t):
        """Step used for the ``t``-th sample (``t >= 1``)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "decaying":
            out = self.eta1 * t ** (-self.theta)
        else:
            out = np.full_like(t, self.max_step)
        return float(out) if out.ndim == 0 else out

    def with_horizon(self, horizon: int) -> "StepSchedule":
        if self.kind != "constant":
            return self
        return StepSchedule.constant(self.eta_star, self.exponent, horizon, self.lambda_max)

    def as_dict(self) -> dict:
        if self.kind == "decaying":
            return {"kind": "decaying", "eta1": self.eta1, "theta": self.theta}
        return {"kind": "constant", "eta_star": self.eta_star, "exponent": self.exponent,
                "horizon": self.horizon}


# ---------------------------------------------------------------------------
# single step and diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SgdState:
    """Iterate ``S_t``; ``t`` counts from 1 with ``S_1 = 0``."""

    S: np.ndarray
    t: int
    schedule: StepSchedule

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t starts at 1")
        S = np.array(self.S, dtype=float, copy=True)
        S.setflags(write=False)
        object.__setattr__(self, "S", S)

    @classmethod
    def initial(cls, dim_out: int, dim_in: int, schedule: StepSchedule) -> "SgdState":
        return cls(np.zeros((dim_out, dim_in)), 1, schedule)


def _check_xy(S: np.ndarray, x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != (S.shape[1],) or y.shape != (S.shape[0],):
        raise ValueError(f"x{x.shape}, y{y.shape} do not match operator shape {S.shape}")


def sgd_step(state: SgdState, x, y, eta: Optional[float] = None) -> SgdState:
    """One update; ``eta`` overrides the schedule (used for testing)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_xy(state.S, x, y)
    step = state.schedule.eta(state.t) if eta is None else eta
    residual = state.S @ x - y
    return SgdState(state.S - step * np.outer(residual, x), state.t + 1, state.schedule)


def martingale_residual(state: SgdState, S_dagger: np.ndarray, C: SpectralDiagonal, x, y) -> np.ndarray:
    """``B_t = (S_t - S) L_C + (y - S_t x) x^T``; has zero mean over a fresh sample."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_xy(state.S, x, y)
    if S_dagger.shape != state.S.shape or C.dim != x.size:
        raise ValueError("dimension mismatch")
    return (state.S - S_dagger) * C.eigenvalues + np.outer(y - state.S @ x, x)


def recursion_identity_gap(state: SgdState, S_dagger: np.ndarray, C: SpectralDiagonal, x, y) -> float:
    """Max-abs gap between ``sgd_step`` and ``(S_t-S)(I - eta L) + eta B_t + S``."""
    eta = state.schedule.eta(state.t)
    nxt = sgd_step(state, x, y).S
    B = martingale_residual(state, S_dagger, C, x, y)
    rebuilt = (state.S - S_dagger) * (1.0 - eta * C.eigenvalues) + eta * B + S_dagger
    return float(np.max(np.abs(nxt - rebuilt)))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def spec_fingerprint(spec: ProblemSpec, schedule: Optional[StepSchedule] = None) -> str:
    """Short hash identifying a problem (and schedule)."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(spec.spectrum.eigenvalues).tobytes())
    h.update(np.ascontiguousarray(spec.s_dagger).tobytes())
    meta = {
        "regularity": spec.target.regularity,
        "r": spec.target.r,
        "R": spec.target.R,
        "sigma2": spec.noise_variance,
        "noise_channels": spec.active_noise_channels,
        "intercept": spec.intercept,
        "nonlinear": None if spec.nonlinearity is None else
        [spec.nonlinearity.k0, spec.nonlinearity.amplitude, spec.nonlinearity.direction.tolist()],
        "bias": None if spec.bias is None else spec.bias.tolist(),
        "schedule": None if schedule is None else schedule.as_dict(),
    }
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class TrajectoryLog:
    """Exact errors at checkpoints of one seeded run.

    ``t`` counts samples consumed, so the entry at ``t`` describes
    ``S_{t+1}``; ``t = 0`` is the initial iterate ``S_1 = 0``.
    ``estimation`` is None when the target need not be Hilbert-Schmidt.
    """

    t: np.ndarray
    prediction: np.ndarray
    estimation: Optional[np.ndarray]
    seed: int
    fingerprint: str

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        if np.any(np.diff(t) <= 0):
            raise ValueError("checkpoints must be strictly increasing")
        if np.any(np.asarray(self.prediction) < 0):
            raise ValueError("negative error")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "prediction", np.asarray(self.prediction, dtype=float))
        if self.estimation is not None:
            object.__setattr__(self, "estimation", np.asarray(self.estimation, dtype=float))

    def errors(self, kind: str) -> np.ndarray:
        if kind == "prediction":
            return self.prediction
        if kind == "estimation":
            if self.estimation is None:
                raise ValueError("estimation error not recorded for this target")
            return self.estimation
        raise ValueError(f"unknown error kind {kind!r}")

    def equals(self, other: "TrajectoryLog") -> bool:
        same_est = (self.estimation is None and other.estimation is None) or (
            self.estimation is not None and other.estimation is not None
            and np.array_equal(self.estimation, other.estimation))
        return (np.array_equal(self.t, other.t) and np.array_equal(self.prediction, other.prediction)
                and same_est and self.seed == other.seed and self.fingerprint == other.fingerprint)


def power_of_two_checkpoints(T: int) -> list[int]:
    """``1, 2, 4, ...`` up to ``T``, with ``T`` itself appended."""
    if T < 1:
        return []
    out = [1 << k for k in range(int(math.log2(T)) + 1)]
    if out[-1] != T:
        out.append(T)
    return out


def _records_estimation(spec: ProblemSpec) -> bool:
    return spec.target.regularity == "strong" or spec.target.r >= 0.5


def _errors(D: np.ndarray, lam: np.ndarray) -> tuple[float, float]:
    col = np.einsum("ij,ij->j", D, D)
    return float(col @ lam), float(col.sum())


def run_trajectory(
    spec: ProblemSpec,
    schedule: StepSchedule,
    T: int,
    checkpoints: Optional[Sequence[int]] = None,
    seed: Union[int, np.random.Generator] = 0,
    chunk: int = 4096,
) -> TrajectoryLog:
    """Stream ``T`` samples through SGD from ``S_1 = 0``.

    Parameters
    ----------
    checkpoints : sequence of int, optional
        Sample counts in ``[1, T]`` at which to record errors; defaults to
        powers of two. ``t = 0`` is always recorded.
    seed : int or Generator
        Integer seeds are turned into a counter-based generator.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if schedule.kind == "constant" and schedule.horizon != T:
        raise ValueError(f"constant schedule built for horizon {schedule.horizon}, run asked for T={T}")
    lam = spec.spectrum.eigenvalues
    if schedule.max_step * spec.spectrum.lambda_max >= 1:
        raise ValueError("step violates eta * lambda_1 < 1 for this spectrum")
    cps = power_of_two_checkpoints(T) if checkpoints is None else sorted(set(int(c) for c in checkpoints))
    if cps and (cps[0] < 1 or cps[-1] > T):
        raise ValueError("checkpoints must lie in [1, T]")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    seed_value = -1 if isinstance(seed, np.random.Generator) else int(seed)

    S_dag = spec.s_dagger
    S = np.zeros_like(S_dag)
    ts, pred, est = [0], [], []
    p, e = _errors(-S_dag, lam)
    pred.append(p)
    est.append(e)
    etas = schedule.eta(np.arange(1, T + 1)) if T else np.empty(0)
    targets = set(cps)
    done = 0
    while done < T:
        n = min(chunk, T - done)
        X, Y = sample(spec, rng, n)
        for i in range(n):
            x = X[i]
            r = S @ x
            r -= Y[i]
            r *= etas[done]
            S -= np.outer(r, x)
            done += 1
            if done in targets:
                p, e = _errors(S - S_dag, lam)
                ts.append(done)
                pred.append(p)
                est.append(e)
    return TrajectoryLog(
        np.array(ts), np.array(pred),
        np.array(est) if _records_estimation(spec) else None,
        seed_value, spec_fingerprint(spec, schedule),
    )


def expected_errors(
    spec: ProblemSpec,
    schedule: StepSchedule,
    T: int,
    checkpoints: Optional[Sequence[int]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact expected errors for the diagonal Gaussian input law.

    With ``m_k = E||(S_t - S) e_k||^2`` Gaussian fourth moments give the
    closed recursion

        m_k <- m_k (1 - 2 eta lam_k + 2 eta^2 lam_k^2)
               + eta^2 lam_k (sum_j lam_j m_j + sigma^2)

    valid for linear models without nonlinearity, bias or intercept.
    Returns ``(t, prediction, estimation)`` in the same convention as
    :class:`TrajectoryLog`.
    """
    if spec.nonlinearity is not None or spec.bias is not None or spec.intercept:
        raise ValueError("closed form only covers the plain linear Gaussian model")
    if schedule.kind == "constant" and schedule.horizon != T:
        raise ValueError("horizon mismatch")
    lam = spec.spectrum.eigenvalues
    m = np.einsum("ij,ij->j", spec.s_dagger, spec.s_dagger)
    cps = set(power_of_two_checkpoints(T) if checkpoints is None else checkpoints)
    sig2 = spec.noise_variance
    ts, pred, est = [0], [float(lam @ m)], [float(m.sum())]
    for t in range(1, T + 1):
        eta = schedule.eta(t)
        a = 1.0 - 2.0 * eta * lam + 2.0 * eta ** 2 * lam ** 2
        m = m * a + eta ** 2 * lam * (lam @ m + sig2)
        if t in cps:
            ts.append(t)
            pred.append(float(lam @ m))
            est.append(float(m.sum()))
    return np.array(ts), np.array(pred), np.array(est)


# ---------------------------------------------------------------------------
# step-size feasibility
# ---------------------------------------------------------------------------

def c5_constant(eta1: float, theta: float) -> float:
    """Constant ``C(eta1, 1, theta)`` of the decaying-step condition.

    Evaluated with ``v = 1``:
    ``eta1^2 3^{2 theta} / min(1, eta1/(1-theta)) * max(c1 + c2, c3, c4)``.
    """
    a = 1.0 - 2.0 ** (theta - 1.0)
    half = math.isclose(theta, 0.5)
    c1 = 1.0 / a if half else 1.0 / (a * abs(2 * theta - 1))
    c2 = 2.0 ** theta * (2 - theta + math.log(a)) / (1 - theta)
    c3 = c1 + c2
    c4 = c1 + c2 / (math.e * (2 * theta - 1)) if theta > 0.5 and not half else c1 + c2
    return eta1 ** 2 * 3.0 ** (2 * theta) / min(1.0, eta1 / (1 - theta)) * max(c1 + c2, c3, c4)


@dataclass(frozen=True)
class FeasibilityReport:
    kind: str
    norm_ok: bool
    moment_ok: bool
    norm_value: float  # eta_max * lambda_1
    moment_value: float  # left side of the moment condition or eta_* / cap
    constant: Optional[float] = None  # C(eta1, 1, theta) for decaying steps
    cap: Optional[float] = None  # eta_* cap for constant steps
    notes: tuple = field(default=())

    @property
    def feasible(self) -> bool:
        return self.norm_ok and self.moment_ok


def feasibility_check(
    schedule: StepSchedule,
    C: SpectralDiagonal,
    c_moment: float,
    regime: Optional[tuple] = None,
) -> FeasibilityReport:
    """Check the step-size conditions behind the rate bounds.

    Parameters
    ----------
    regime : tuple, optional
        ``(regularity, error, r)`` selecting the constant-step cap. Ignored
        for decaying schedules.
    """
    lam1 = C.lambda_max
    norm_value = schedule.max_step * lam1
    if schedule.kind == "decaying":
        eta1, theta = schedule.eta1, schedule.theta
        const = c5_constant(eta1, theta)
        lhs = c_moment * (3 * const * max(1 / (math.e * theta), 1.0) + eta1 ** 2)
        return FeasibilityReport("decaying", norm_value < 1, lhs < 1, norm_value, lhs, constant=const)
    if regime is None:
        raise ValueError("constant schedules need (regularity, error, r) to select the cap")
    regularity, error, r = regime
    cap = constant_step_cap(regularity, error, C.s, r, c_moment)
    ratio = schedule.eta_star / cap
    return FeasibilityReport("constant", norm_value < 1, ratio <= 1 + 1e-12, norm_value, ratio, cap=cap)
