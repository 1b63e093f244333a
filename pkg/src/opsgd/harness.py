"""Replicated runs, log-log rate fits and comparison with theory."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .metrics import RateRegime, minimax_exponent, theoretical_exponent
from .problem import ProblemSpec, make_rng
from .sgd import StepSchedule, TrajectoryLog, run_trajectory, spec_fingerprint

__all__ = [
    "TrajectoryLog",
    "RateFit",
    "Verdict",
    "ExactSolutionError",
    "replicate_seed",
    "run_experiment",
    "run_horizon_sweep",
    "aggregate",
    "fit_rate",
    "fit_curve",
    "compare_to_theory",
    "atomic_write_text",
    "results_csv",
]


class ExactSolutionError(ValueError):
    """Raised when a checkpoint error is exactly zero and no log-fit exists."""


def replicate_seed(master_seed: int, index: int) -> int:
    """Integer seed of replicate ``index`` derived from ``master_seed``."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _map(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def run_experiment(
    spec: ProblemSpec,
    schedule: StepSchedule,
    T: int,
    n_replicates: int,
    master_seed: int,
    checkpoints: Optional[Sequence[int]] = None,
    jobs: int = 1,
) -> list[TrajectoryLog]:
    """Independent trajectories of one schedule with derived seeds."""
    if n_replicates < 1:
        raise ValueError("n_replicates must be at least 1")
    args = [(spec, schedule, T, checkpoints, replicate_seed(master_seed, i)) for i in range(n_replicates)]
    return _map(run_trajectory, args, jobs)


def _sweep_one(spec: ProblemSpec, eta_star: float, exponent: float, horizons: Sequence[int], seed: int) -> TrajectoryLog:
    preds, ests = [], []
    for T in horizons:
        sched = StepSchedule.constant(eta_star, exponent, T)
        log = run_trajectory(spec, sched, T, [T] if T else [], seed=make_rng(seed, T))
        preds.append(log.prediction[-1])
        if log.estimation is not None:
            ests.append(log.estimation[-1])
    fp = spec_fingerprint(spec, StepSchedule.constant(eta_star, exponent, 0))
    return TrajectoryLog(np.asarray(horizons), np.array(preds), np.array(ests) if ests else None, seed, fp)


def run_horizon_sweep(
    spec: ProblemSpec,
    eta_star: float,
    exponent: float,
    horizons: Sequence[int],
    n_replicates: int,
    master_seed: int,
    jobs: int = 1,
) -> list[TrajectoryLog]:
    """Constant-step runs re-done for every horizon.

    Each returned log holds one entry per horizon ``T`` with the error of the
    final iterate; the run for ``T`` uses the stream ``make_rng(seed, T)``.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be at least 1")
    horizons = sorted(int(h) for h in horizons)
    args = [(spec, eta_star, exponent, horizons, replicate_seed(master_seed, i)) for i in range(n_replicates)]
    return _map(_sweep_one, args, jobs)


def aggregate(logs: Sequence[TrajectoryLog], error_kind: str = "prediction"):
    """Mean and standard error across replicates at each checkpoint.

    Logs are ordered by seed first, so the result does not depend on the
    order in which replicates finished.
    """
    if not logs:
        raise ValueError("no logs")
    logs = sorted(logs, key=lambda g: g.seed)
    t = logs[0].t
    for g in logs[1:]:
        if not np.array_equal(g.t, t):
            raise ValueError("logs use different checkpoint grids")
    E = np.vstack([g.errors(error_kind) for g in logs])
    n = E.shape[0]
    mean = E.mean(axis=0)
    se = E.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return t, mean, se, n


@dataclass(frozen=True)
class RateFit:
    fitted_exponent: float
    intercept: float
    r_squared: float
    fit_window: tuple[int, int]
    n_replicates: int
    log_divided: bool = False
    n_points: int = 0


def fit_curve(
    t: Sequence[float],
    err: Sequence[float],
    window_fraction: float = 0.6,
    divide_log: bool = False,
    n_replicates: int = 1,
) -> RateFit:
    """OLS slope of ``log err`` against ``log t`` over the late part of the curve."""
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = t > (1 if divide_log else 0)
    t, err = t[keep], err[keep]
    if t.size == 0:
        raise ValueError("no positive checkpoints")
    lt = np.log(t)
    lo = lt.max() - window_fraction * (lt.max() - lt.min())
    w = lt >= lo - 1e-12
    t, err, lt = t[w], err[w], lt[w]
    if t.size < 3:
        raise ValueError(f"need at least 3 checkpoints in the fit window, got {t.size}")
    if np.any(err <= 0):
        raise ExactSolutionError(
            f"exact-solution: zero error at t={t[err <= 0].astype(int).tolist()}, no rate to fit"
        )
    if divide_log:
        err = err / np.log(t)
    le = np.log(err)
    A = np.vstack([lt, np.ones_like(lt)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, le, rcond=None)
    resid = le - (slope * lt + icpt)
    ss_tot = np.sum((le - le.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else float(np.clip(1 - np.sum(resid ** 2) / ss_tot, 0.0, 1.0))
    return RateFit(float(slope), float(icpt), r2, (int(t.min()), int(t.max())), n_replicates, divide_log, int(t.size))


def fit_rate(
    logs: Sequence[TrajectoryLog],
    error_kind: str = "prediction",
    window_fraction: float = 0.6,
    divide_log: bool = False,
) -> RateFit:
    """Fit the mean error across replicate logs."""
    t, mean, _, n = aggregate(logs, error_kind)
    return fit_curve(t, mean, window_fraction, divide_log, n)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    fitted_exponent: float
    theory_exponent: float
    minimax_exponent: Optional[float]
    minimax_gap: Optional[float]
    tolerance: float
    log_factor: bool
    notes: tuple = field(default=())

    @property
    def label(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def as_dict(self) -> dict:
        return {
            "verdict": self.label,
            "fitted_exponent": self.fitted_exponent,
            "theory_exponent": self.theory_exponent,
            "minimax_exponent": self.minimax_exponent,
            "minimax_gap": self.minimax_gap,
            "tolerance": self.tolerance,
            "log_factor": self.log_factor,
            "notes": list(self.notes),
        }


def compare_to_theory(fit: RateFit, regime: RateRegime, tolerance: float = 0.15) -> Verdict:
    """PASS iff ``|fitted + theory| <= tolerance`` (fits are negative slopes)."""
    th = theoretical_exponent(regime)
    notes = []
    try:
        mm = minimax_exponent(regime.regularity, regime.error, regime.s, regime.r)
        gap = mm - th.exponent
        if regime.regularity == "weak":
            notes.append("weak lower bound assumes an infinite-dimensional output space")
    except ValueError:
        mm, gap = None, None
    passed = abs(fit.fitted_exponent + th.exponent) <= tolerance
    return Verdict(passed, fit.fitted_exponent, th.exponent, mm, gap, tolerance, th.log_factor, tuple(notes))


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def atomic_write_text(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g(v) -> str:
    return format(float(v), ".17g")


def results_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """CSV text with floats printed at 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_g(row[c]) if isinstance(row[c], (float, np.floating)) else row[c] for c in columns])
    return buf.getvalue()
