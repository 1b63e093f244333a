"""Experiment configurations and the runners behind the command line.

A configuration is a JSON object::

    {
      "version": 1,
      "experiment": "rate_check",
      "problem": {"dim_in": 200, "dim_out": 20, "regularity": "weak",
                  "r": 0.5, "s": 0.5, "sigma2": 0.01},
      "schedule": {"kind": "constant", "eta": "cap"},
      "horizons": [64, 128, 256],
      "n_replicates": 30,
      "master_seed": 0
    }

See :data:`EXPERIMENTS` for the available kinds and ``README.md`` for the
full list of fields and defaults.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .harness import (
    ExactSolutionError,
    aggregate,
    compare_to_theory,
    fit_curve,
    fit_rate,
    replicate_seed,
    run_experiment,
    run_horizon_sweep,
)
from .hilbert import apply_semi_norm
from .metrics import (
    RateRegime,
    best_linear_residual,
    constant_step_cap,
    constant_step_exponent,
    minimax_exponent,
    theoretical_exponent,
)
from .minimax import build_hard_family, kl_between_instances, kl_monte_carlo, verify_family
from .problem import (
    NonlinearSpec,
    ProblemSpec,
    TargetSpec,
    build_spectrum,
    draw_inputs,
    kurtosis_certificate,
    make_rng,
    sample,
)
from .rkhs import (
    FunctionalProblem,
    ScalarKernel,
    random_dictionary_target,
    run_functional_sgd,
    run_kernel_sgd,
)
from .sgd import (
    SgdState,
    StepSchedule,
    feasibility_check,
    power_of_two_checkpoints,
    recursion_identity_gap,
    sgd_step,
    spec_fingerprint,
)

__all__ = [
    "CONFIG_VERSION",
    "EXPERIMENTS",
    "ConfigError",
    "ProblemConfig",
    "ScheduleConfig",
    "ExperimentConfig",
    "ExperimentResult",
    "parse_config",
    "load_config",
    "build_problem",
    "run_config",
    "list_regimes",
]

CONFIG_VERSION = 1
EXPERIMENTS = (
    "rate_check",
    "saturation_sweep",
    "nonlinear_check",
    "rkhs_demo",
    "functional_demo",
    "minimax_verify",
    "diagnostics",
)
_PROBLEM_KINDS = ("rate_check", "saturation_sweep", "nonlinear_check", "diagnostics")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required field '{where}{key}'")
    return d[key]


def _number(v, name: str, lo: float = -math.inf, hi: float = math.inf, lo_open=False, hi_open=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field '{name}' must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v) or v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi):
        raise ConfigError(f"field '{name}'={v} outside its domain")
    return v


def _int(v, name: str, lo: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"field '{name}' must be an integer >= {lo}, got {v!r}")
    return v


@dataclass(frozen=True)
class ProblemConfig:
    dim_in: int
    dim_out: int
    regularity: str
    r: float
    s: float
    sigma2: float
    R: float = 1.0
    d1: Optional[float] = None
    d2: Optional[float] = None
    c: float = 3.0
    target_seed: int = 0
    noise_channels: Optional[int] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemConfig":
        if not isinstance(d, dict):
            raise ConfigError("field 'problem' must be an object")
        w = "problem."
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown field(s) {sorted(w + e for e in extra)}")
        reg = _require(d, "regularity", w)
        if reg not in ("weak", "strong"):
            raise ConfigError("field 'problem.regularity' must be 'weak' or 'strong'")
        out = cls(
            dim_in=_int(_require(d, "dim_in", w), w + "dim_in", 1),
            dim_out=_int(_require(d, "dim_out", w), w + "dim_out", 1),
            regularity=reg,
            r=_number(_require(d, "r", w), w + "r", 0, lo_open=True),
            s=_number(_require(d, "s", w), w + "s", 0, 1, lo_open=True),
            sigma2=_number(_require(d, "sigma2", w), w + "sigma2", 0),
            R=_number(d.get("R", 1.0), w + "R", 0, lo_open=True),
            d1=None if d.get("d1") is None else _number(d["d1"], w + "d1", 0, lo_open=True),
            d2=None if d.get("d2") is None else _number(d["d2"], w + "d2", 0, lo_open=True),
            c=_number(d.get("c", 3.0), w + "c", 1),
            target_seed=_int(d.get("target_seed", 0), w + "target_seed"),
            noise_channels=None if d.get("noise_channels") is None else _int(d["noise_channels"], w + "noise_channels", 1),
        )
        if (out.d1 is None) != (out.d2 is None):
            raise ConfigError("fields 'problem.d1' and 'problem.d2' must be given together")
        if out.d1 is not None and out.d1 > out.d2:
            raise ConfigError("field 'problem.d1' exceeds 'problem.d2'")
        return out


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str
    eta: Any = "cap"  # eta_star for constant (number or "cap"), eta1 for decaying
    theta: Any = "theory"  # decaying only: number or "theory"
    strict_feasibility: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleConfig":
        if not isinstance(d, dict):
            raise ConfigError("field 'schedule' must be an object")
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown field(s) {sorted('schedule.' + e for e in extra)}")
        kind = _require(d, "kind", "schedule.")
        if kind not in ("constant", "decaying"):
            raise ConfigError("field 'schedule.kind' must be 'constant' or 'decaying'")
        eta = d.get("eta", "cap" if kind == "constant" else None)
        if eta is None:
            raise ConfigError("missing required field 'schedule.eta'")
        if not (kind == "constant" and eta == "cap"):
            eta = _number(eta, "schedule.eta", 0, lo_open=True)
        theta = d.get("theta", "theory")
        if theta != "theory":
            theta = _number(theta, "schedule.theta", 0, 1, True, True)
        strict = d.get("strict_feasibility", True)
        if not isinstance(strict, bool):
            raise ConfigError("field 'schedule.strict_feasibility' must be a boolean")
        return cls(kind, eta, theta if kind == "decaying" else "theory", strict)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    problem: Optional[ProblemConfig] = None
    schedule: Optional[ScheduleConfig] = None
    horizons: Optional[tuple] = None
    T: Optional[int] = None
    error: str = "prediction"
    n_replicates: int = 10
    master_seed: int = 0
    tolerance: float = 0.15
    window_fraction: float = 0.6
    divide_log: bool = False
    output_dir: Optional[str] = None
    options: dict = field(default_factory=dict)
    version: int = CONFIG_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.horizons is not None:
            d["horizons"] = list(self.horizons)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=int(seed))


_TOP = {f for f in ExperimentConfig.__dataclass_fields__}


def parse_config(d: dict) -> ExperimentConfig:
    """Validate a decoded JSON object and fill defaults."""
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    extra = set(d) - _TOP
    if extra:
        raise ConfigError(f"unknown field(s) {sorted(extra)}")
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"field 'version'={version!r} unsupported (expected {CONFIG_VERSION})")
    kind = _require(d, "experiment", "")
    if kind not in EXPERIMENTS:
        raise ConfigError(f"field 'experiment'={kind!r} not one of {list(EXPERIMENTS)}")
    problem = schedule = None
    if kind in _PROBLEM_KINDS:
        problem = ProblemConfig.from_dict(_require(d, "problem", ""))
    elif d.get("problem") is not None:
        problem = ProblemConfig.from_dict(d["problem"])
    if kind in ("rate_check", "saturation_sweep", "nonlinear_check"):
        schedule = ScheduleConfig.from_dict(_require(d, "schedule", ""))
    elif d.get("schedule") is not None:
        schedule = ScheduleConfig.from_dict(d["schedule"])

    horizons = d.get("horizons")
    if horizons is not None:
        if not isinstance(horizons, list) or not horizons:
            raise ConfigError("field 'horizons' must be a non-empty list")
        horizons = tuple(sorted(_int(h, "horizons[]", 1) for h in horizons))
    T = d.get("T")
    if T is not None:
        T = _int(T, "T", 1)
    if schedule is not None:
        if schedule.kind == "constant" and horizons is None:
            raise ConfigError("missing required field 'horizons' for a constant schedule")
        if schedule.kind == "decaying" and T is None:
            raise ConfigError("missing required field 'T' for a decaying schedule")

    error = d.get("error", "prediction")
    if error not in ("prediction", "estimation"):
        raise ConfigError("field 'error' must be 'prediction' or 'estimation'")
    options = d.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("field 'options' must be an object")
    divide_log = d.get("divide_log", False)
    if not isinstance(divide_log, bool):
        raise ConfigError("field 'divide_log' must be a boolean")
    out_dir = d.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("field 'output_dir' must be a string")
    cfg = ExperimentConfig(
        experiment=kind,
        problem=problem,
        schedule=schedule,
        horizons=horizons,
        T=T,
        error=error,
        n_replicates=_int(d.get("n_replicates", 10), "n_replicates", 1),
        master_seed=_int(d.get("master_seed", 0), "master_seed"),
        tolerance=_number(d.get("tolerance", 0.15), "tolerance", 0),
        window_fraction=_number(d.get("window_fraction", 0.6), "window_fraction", 0, 1, lo_open=True),
        divide_log=divide_log,
        output_dir=out_dir,
        options=json.loads(json.dumps(options)),
        version=version,
    )
    if problem is not None and kind in ("rate_check", "nonlinear_check"):
        try:
            _regime(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON file; syntax errors report line and column."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(d)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_problem(p: ProblemConfig, nonlinearity: Optional[NonlinearSpec] = None) -> ProblemSpec:
    """Problem from configuration; without ``d1``/``d2`` the spectrum uses the largest feasible scale."""
    if p.d1 is None:
        base = np.arange(1, p.dim_in + 1, dtype=float) ** (-1.0 / p.s)
        d = 1.0 / base.sum()
        C = build_spectrum(p.dim_in, p.s, d, d)
    else:
        try:
            C = build_spectrum(p.dim_in, p.s, p.d1, p.d2)
        except ValueError as exc:
            raise ConfigError(f"field 'problem.d1': {exc}") from exc
    target = TargetSpec.random(p.regularity, p.r, p.R, (p.dim_out, p.dim_in), p.target_seed)
    return ProblemSpec(C, target, p.sigma2, p.noise_channels, nonlinearity=nonlinearity)


def _regime(cfg: ExperimentConfig, r: Optional[float] = None) -> RateRegime:
    p = cfg.problem
    return RateRegime(p.regularity, cfg.error, cfg.schedule.kind, p.s, p.r if r is None else r)


def _eta_star(cfg: ExperimentConfig, r: Optional[float] = None) -> float:
    p = cfg.problem
    r = p.r if r is None else r
    if cfg.schedule.eta == "cap":
        return constant_step_cap(p.regularity, cfg.error, p.s, r, p.c)
    return float(cfg.schedule.eta)


def _check_feasible(cfg: ExperimentConfig, spec: ProblemSpec, r: Optional[float] = None) -> tuple[dict, list]:
    """Feasibility report; raises :class:`ConfigError` when the schedule is rejected."""
    p, sc = cfg.problem, cfg.schedule
    r = p.r if r is None else r
    C = spec.spectrum
    notes = []
    if sc.kind == "constant":
        b = constant_step_exponent(p.regularity, cfg.error, p.s, r)
        eta_star = _eta_star(cfg, r)
        smallest = min(cfg.horizons)
        try:
            sched = StepSchedule.constant(eta_star, b, smallest, lambda_max=C.lambda_max)
        except ValueError as exc:
            raise ConfigError(f"infeasible schedule: {exc}") from exc
        rep = feasibility_check(sched, C, p.c, (p.regularity, cfg.error, r))
    else:
        theta = theoretical_exponent(_regime(cfg, r)).step_parameter if sc.theta == "theory" else sc.theta
        try:
            sched = StepSchedule.decaying(sc.eta, theta, lambda_max=C.lambda_max)
        except ValueError as exc:
            raise ConfigError(f"infeasible schedule: {exc}") from exc
        rep = feasibility_check(sched, C, p.c)
    info = {k: v for k, v in asdict(rep).items() if k != "notes"}
    info["feasible"] = rep.feasible
    if not rep.norm_ok:
        raise ConfigError(f"infeasible schedule (eta * lambda_1 >= 1): {info}")
    if not rep.moment_ok:
        msg = f"step sizes violate the moment-based step condition: {info}"
        if sc.strict_feasibility:
            raise ConfigError(f"infeasible schedule: {msg} (set schedule.strict_feasibility=false to run anyway)")
        notes.append(msg)
    return info, notes


def _regime_dict(reg: RateRegime) -> dict:
    return asdict(reg)


@dataclass
class ExperimentResult:
    experiment: str
    fingerprint: str
    verdicts: list = field(default_factory=list)  # dicts with name, verdict, details
    fitted: list = field(default_factory=list)
    theory: list = field(default_factory=list)
    minimax: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # series, t, mean_err, se_err, n
    plot: list = field(default_factory=list)  # series, log_t, log_mean_err, log_fit
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(v["verdict"] == "PASS" for v in self.verdicts)

    def add_curve(self, series: str, t, mean, se, n: int, fit=None) -> None:
        for ti, mi, si in zip(t, mean, se):
            self.rows.append({"series": series, "t": int(ti), "mean_err": float(mi), "se_err": float(si), "n": int(n)})
            if ti <= 0 or mi <= 0:
                continue
            lt = math.log(ti)
            lf = ""
            if fit is not None and fit.fit_window[0] <= ti <= fit.fit_window[1]:
                lf = fit.fitted_exponent * lt + fit.intercept
                if fit.log_divided:
                    lf += math.log(math.log(ti))
            self.plot.append({"series": series, "log_t": lt, "log_mean_err": math.log(mi), "log_fit": lf})

    def summary(self, config: ExperimentConfig) -> dict:
        return {
            "experiment": self.experiment,
            "fingerprint": self.fingerprint,
            "verdicts": self.verdicts,
            "fitted": self.fitted,
            "theory": self.theory,
            "minimax": self.minimax,
            "runtime_seconds": self.runtime_seconds,
            "overall": "PASS" if self.passed else "FAIL",
            "notes": self.notes,
            "details": self.extra,
            "config": config.to_dict(),
        }


def _verdict(name: str, passed: bool, **details) -> dict:
    return {"name": name, "verdict": "PASS" if passed else "FAIL", **details}


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def _rate_logs(cfg: ExperimentConfig, spec: ProblemSpec, jobs: int, r: Optional[float] = None):
    p, sc = cfg.problem, cfg.schedule
    r = p.r if r is None else r
    if sc.kind == "constant":
        b = constant_step_exponent(p.regularity, cfg.error, p.s, r)
        return run_horizon_sweep(spec, _eta_star(cfg, r), b, cfg.horizons, cfg.n_replicates, cfg.master_seed, jobs)
    theta = theoretical_exponent(_regime(cfg, r)).step_parameter if sc.theta == "theory" else sc.theta
    sched = StepSchedule.decaying(sc.eta, theta, lambda_max=spec.spectrum.lambda_max)
    return run_experiment(spec, sched, cfg.T, cfg.n_replicates, cfg.master_seed, None, jobs)


def _fit_and_judge(cfg, res: ExperimentResult, logs, regime: RateRegime, series: str) -> None:
    t, mean, se, n = aggregate(logs, cfg.error)
    try:
        fit = fit_rate(logs, cfg.error, cfg.window_fraction, cfg.divide_log)
    except ExactSolutionError as exc:
        res.add_curve(series, t, mean, se, n)
        res.verdicts.append(_verdict(series, False, reason=str(exc)))
        return
    v = compare_to_theory(fit, regime, cfg.tolerance)
    res.add_curve(series, t, mean, se, n, fit)
    res.fitted.append(fit.fitted_exponent)
    res.theory.append(v.theory_exponent)
    res.minimax.append(v.minimax_exponent)
    res.verdicts.append(_verdict(
        series, v.passed, fitted_exponent=fit.fitted_exponent, theory_exponent=v.theory_exponent,
        log_factor=v.log_factor, minimax_gap=v.minimax_gap, r_squared=fit.r_squared,
        fit_window=list(fit.fit_window), tolerance=cfg.tolerance, regime=_regime_dict(regime),
    ))
    res.notes.extend(v.notes)


def run_rate_check(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    spec = build_problem(cfg.problem)
    feas, notes = _check_feasible(cfg, spec)
    res = ExperimentResult(cfg.experiment, spec_fingerprint(spec), notes=notes, extra={"feasibility": feas})
    logs = _rate_logs(cfg, spec, jobs)
    _fit_and_judge(cfg, res, logs, _regime(cfg), cfg.error)
    return res


def run_saturation_sweep(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Fitted rates for several ``r``; judges the plateau above ``r = 1/2``."""
    r_values = cfg.options.get("r_values", [0.2, 1.0, 3.0])
    plateau_tol = float(cfg.options.get("plateau_tolerance", 0.1))
    margin = float(cfg.options.get("ordering_margin", 0.05))
    base = build_problem(cfg.problem)
    res = ExperimentResult(cfg.experiment, spec_fingerprint(base))
    rates = {}
    for r in r_values:
        p = replace(cfg.problem, r=float(r))
        spec = build_problem(p)
        sub = replace(cfg, problem=p)
        feas, notes = _check_feasible(sub, spec)
        res.notes.extend(notes)
        logs = _rate_logs(sub, spec, jobs)
        t, mean, se, n = aggregate(logs, cfg.error)
        fit = fit_curve(t, mean, cfg.window_fraction, cfg.divide_log, n)
        res.add_curve(f"r={r:g}", t, mean, se, n, fit)
        th = theoretical_exponent(_regime(sub))
        res.fitted.append(fit.fitted_exponent)
        res.theory.append(th.exponent)
        res.minimax.append(minimax_exponent(p.regularity, cfg.error, p.s, p.r))
        rates[float(r)] = -fit.fitted_exponent
    high = [v for r, v in rates.items() if r >= 0.5]
    low = [v for r, v in rates.items() if r < 0.5]
    if len(high) >= 2:
        spread = max(high) - min(high)
        res.verdicts.append(_verdict("plateau", spread <= plateau_tol, spread=spread, tolerance=plateau_tol,
                                     rates={str(k): v for k, v in rates.items()}))
    if high and low:
        ok = min(high) >= max(low) - margin
        res.verdicts.append(_verdict("ordering", ok, min_plateau=min(high), max_low=max(low), margin=margin))
    return res


def _nonlinearity(cfg: ExperimentConfig, spec_lin: ProblemSpec) -> NonlinearSpec:
    opt = cfg.options.get("nonlinear", {})
    k0 = int(opt.get("k0", 0))
    lam = spec_lin.spectrum.eigenvalues[k0]
    amp = opt.get("amplitude", "match_noise")
    if amp == "match_noise":
        amp = math.sqrt(cfg.problem.sigma2 / 2.0) / lam  # mu^2 = 2 a^2 lam^2 = sigma^2
    direction = np.zeros(spec_lin.dim_out)
    direction[int(opt.get("direction", 0))] = 1.0
    return NonlinearSpec(direction, k0, float(amp))


def run_nonlinear_check(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    lin = build_problem(cfg.problem)
    nl = _nonlinearity(cfg, lin)
    spec = build_problem(cfg.problem, nl)
    feas, notes = _check_feasible(cfg, spec)
    res = ExperimentResult(cfg.experiment, spec_fingerprint(spec), notes=notes,
                           extra={"feasibility": feas, "mu2": nl.mu2(spec.spectrum), "amplitude": nl.amplitude})
    n = int(cfg.options.get("residual_samples", 100_000))
    X, Y = sample(spec, make_rng(cfg.master_seed, 2**31 - 1), n)
    resid, se = best_linear_residual(spec.s_dagger, X, Y, spec.spectrum, return_se=True)
    res.verdicts.append(_verdict("best_linear_residual", resid <= 5 * se, residual=resid, se=se, samples=n))
    logs = _rate_logs(cfg, spec, jobs)
    _fit_and_judge(cfg, res, logs, _regime(cfg), cfg.error)
    return res


def run_rkhs_demo(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    o = cfg.options
    kernel = ScalarKernel.gaussian(float(o.get("bandwidth", 0.5)))
    T = cfg.T or 1024
    h = random_dictionary_target(kernel, int(o.get("n_anchors", 20)), int(o.get("dim_in", 2)),
                                 int(o.get("dim_out", 3)), float(o.get("norm", 1.0)), int(o.get("target_seed", 0)))
    eta1 = float(o.get("eta1", 0.5))
    theta = float(o.get("theta", 0.5))
    etas = eta1 * np.arange(1, T + 1) ** (-theta)
    cps = power_of_two_checkpoints(T)
    sig2 = float(o.get("sigma2", 0.01))
    runs = [run_kernel_sgd(h, sig2, etas, cps, replicate_seed(cfg.master_seed, i)) for i in range(cfg.n_replicates)]
    res = ExperimentResult(cfg.experiment, f"rkhs-{T}-{eta1}-{theta}")
    for kind in ("estimation", "prediction"):
        E = np.vstack([getattr(g, kind) for g in runs])
        t = runs[0].t
        mean = E.mean(0)
        se = E.std(0, ddof=1) / math.sqrt(len(runs)) if len(runs) > 1 else np.zeros_like(mean)
        fit = fit_curve(t, mean, cfg.window_fraction, False, len(runs))
        res.add_curve(kind, t, mean, se, len(runs), fit)
        res.fitted.append(fit.fitted_exponent)
        decreasing = mean[-1] < mean[0] and fit.fitted_exponent < 0
        res.verdicts.append(_verdict(f"{kind}_decreasing", decreasing, fitted_exponent=fit.fitted_exponent,
                                     initial=float(mean[0]), final=float(mean[-1])))
    return res


def run_functional_demo(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    o = cfg.options
    n_grid = int(o.get("n_grid", 128))
    n_modes = int(o.get("n_modes", 20))
    s = float(o.get("s", 0.5))
    k = np.arange(1, n_modes + 1)
    mu = k ** (-1.0 / s)
    mu = mu / mu.sum()
    alpha = np.zeros(n_grid)
    anchors = make_rng(int(o.get("target_seed", 0))).choice(n_grid, size=int(o.get("n_anchors", 5)), replace=False)
    alpha[anchors] = make_rng(int(o.get("target_seed", 0)), 1).standard_normal(anchors.size)
    prob = FunctionalProblem(ScalarKernel.gaussian(float(o.get("bandwidth", 0.1))), n_grid, mu,
                             float(o.get("r", 0.5)), alpha, float(o.get("sigma2", 0.01)))
    T = cfg.T or 1024
    eta1 = float(o.get("eta1", 1.0))
    theta = float(o.get("theta", 0.5))
    etas = eta1 * np.arange(1, T + 1) ** (-theta)
    cps = power_of_two_checkpoints(T)
    runs = [run_functional_sgd(prob, etas, cps, replicate_seed(cfg.master_seed, i)) for i in range(cfg.n_replicates)]
    res = ExperimentResult(cfg.experiment, f"functional-{n_grid}-{T}")
    for kind in ("prediction", "estimation"):
        E = np.vstack([getattr(g, kind) for g in runs])
        t = runs[0].t
        mean = E.mean(0)
        se = E.std(0, ddof=1) / math.sqrt(len(runs)) if len(runs) > 1 else np.zeros_like(mean)
        fit = fit_curve(t, mean, cfg.window_fraction, False, len(runs))
        res.add_curve(kind, t, mean, se, len(runs), fit)
        res.fitted.append(fit.fitted_exponent)
        res.verdicts.append(_verdict(f"{kind}_decreasing", mean[-1] < mean[0] and fit.fitted_exponent < 0,
                                     fitted_exponent=fit.fitted_exponent, initial=float(mean[0]), final=float(mean[-1])))
    return res


def minimax_report(cfg: ExperimentConfig) -> dict:
    """Verification record for every family listed under ``options.families``."""
    fams = cfg.options.get("families") or [
        {"regime": "strong", "m": 8, "r": 0.5, "s": 0.5},
        {"regime": "strong", "m": 16, "r": 0.5, "s": 0.5},
        {"regime": "weak", "m": 3, "r": 0.5, "s": 0.5},
        {"regime": "weak", "m": 4, "r": 0.5, "s": 0.5},
    ]
    out = []
    for idx, f in enumerate(fams):
        try:
            regime = f["regime"]
            m = int(f["m"])
        except KeyError as exc:
            raise ConfigError(f"missing required field 'options.families[{idx}].{exc.args[0]}'") from exc
        rng = make_rng(cfg.master_seed, idx)
        fam = build_hard_family(regime, m, float(f.get("r", 0.5)), float(f.get("s", 0.5)), float(f.get("R", 1.0)),
                                float(f.get("sigma2", 1.0)), float(f.get("d1", 1e-3)), float(f.get("d2", 1.0)), rng,
                                alpha=float(f.get("alpha", 0.5)))
        rec = verify_family(fam, int(f.get("T", 1)))
        draws = int(f.get("mc_draws", 100_000))
        if len(fam.instances) > 1:
            rec_exact, _ = kl_between_instances(fam, 0, 1, 1)
            est, se = kl_monte_carlo(fam, 0, 1, draws, make_rng(cfg.master_seed, idx, 1))
            rec["kl_mc"] = {"exact": rec_exact, "estimate": est, "se": se,
                            "within_3se": abs(est - rec_exact) <= 3 * se}
        out.append(rec)
    return {"families": out}


def run_minimax_verify(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    rep = minimax_report(cfg)
    res = ExperimentResult(cfg.experiment, "minimax", extra=rep)
    for rec in rep["families"]:
        name = f"{rec['regime']}_m{rec['m']}"
        res.verdicts.append(_verdict(f"{name}_packing", rec["packing_size"] >= rec["packing_target"],
                                     size=rec["packing_size"], target=rec["packing_target"]))
        res.verdicts.append(_verdict(f"{name}_separation", rec["separation_ok"]))
        res.verdicts.append(_verdict(f"{name}_kl_bound", rec["kl_ok"], max_ratio=rec["kl_max_ratio"]))
        if "kl_mc" in rec:
            res.verdicts.append(_verdict(f"{name}_kl_monte_carlo", rec["kl_mc"]["within_3se"], **rec["kl_mc"]))
        res.minimax.append(minimax_exponent(rec["regime"], "prediction", rec["s"], rec["r"]))
    return res


def run_diagnostics(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Martingale mean, recursion identity, error-form equivalence and kurtosis."""
    o = cfg.options
    spec = build_problem(cfg.problem)
    C, Sd = spec.spectrum, spec.s_dagger
    res = ExperimentResult(cfg.experiment, spec_fingerprint(spec))
    rng = make_rng(cfg.master_seed, 7)
    sched = StepSchedule.decaying(float(o.get("eta1", 0.5)), float(o.get("theta", 0.5)), lambda_max=C.lambda_max)

    # recursion identity along a trajectory
    steps = int(o.get("identity_steps", 1000))
    state = SgdState.initial(spec.dim_out, spec.dim_in, sched)
    X, Y = sample(spec, rng, steps)
    worst = 0.0
    for i in range(steps):
        worst = max(worst, recursion_identity_gap(state, Sd, C, X[i], Y[i]))
        state = sgd_step(state, X[i], Y[i])
    res.verdicts.append(_verdict("recursion_identity", worst <= 1e-12, max_abs_gap=worst, steps=steps))

    # zero-mean martingale increments at random states
    draws = int(o.get("martingale_draws", 100_000))
    ratios = []
    for k in range(int(o.get("martingale_states", 5))):
        S = Sd + 0.1 * rng.standard_normal(Sd.shape)
        st = SgdState(S, 1, sched)
        Xs, Ys = sample(spec, rng, draws)
        mean, se = _martingale_mean(st, Sd, C, Xs, Ys)
        ratios.append(mean / se)
    res.verdicts.append(_verdict("martingale_mean", max(ratios) <= 5, max_norm_over_se=max(ratios)))

    # ||A L^{1/2}||^2 against E||A x||^2
    draws = int(o.get("form_draws", 1_000_000))
    n_ops = int(o.get("form_operators", 10))
    ops = [0.1 * rng.standard_normal(Sd.shape) for _ in range(n_ops)]
    z = _form_check(spec, ops, draws, rng)
    res.verdicts.append(_verdict("form_equivalence", max(z) <= 3, max_abs_z=max(z)))

    rep = kurtosis_certificate(spec, int(o.get("directions", 20)), int(o.get("kurtosis_draws", 1_000_000)), rng)
    dev = np.abs(rep.ratios - 3.0) / rep.standard_errors
    res.verdicts.append(_verdict("kurtosis", bool(np.all(dev <= 5)), max_ratio=rep.max_ratio,
                                 max_abs_z=float(dev.max())))
    return res


def _martingale_mean(state: SgdState, Sd, C, X, Y) -> tuple[float, float]:
    """HS norm of the mean increment and its Monte Carlo scale ``sqrt(tr Cov / N)``."""
    n = X.shape[0]
    D = (state.S - Sd) * C.eigenvalues
    R = Y - X @ state.S.T  # y - S x
    mean = D + R.T @ X / n
    second = (R ** 2).T @ (X ** 2) / n
    var = np.maximum(second - (R.T @ X / n) ** 2, 0.0).sum()
    return float(np.linalg.norm(mean)), float(np.sqrt(var / n))


def _form_check(spec: ProblemSpec, ops: list, draws: int, rng, chunk: int = 100_000) -> list:
    """``|MC mean of |A x|^2 - ||A L^{1/2}||^2| / SE`` for each operator."""
    s1 = np.zeros(len(ops))
    s2 = np.zeros(len(ops))
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        X = draw_inputs(spec, rng, n)
        for k, A in enumerate(ops):
            v = np.sum((X @ A.T) ** 2, axis=1)
            s1[k] += v.sum()
            s2[k] += (v ** 2).sum()
        done += n
    out = []
    for k, A in enumerate(ops):
        mean = s1[k] / draws
        var = s2[k] / draws - mean ** 2
        se = math.sqrt(var / draws)
        out.append(abs(mean - apply_semi_norm(A, spec.spectrum, 0.5)) / se)
    return out


_RUNNERS = {
    "rate_check": run_rate_check,
    "saturation_sweep": run_saturation_sweep,
    "nonlinear_check": run_nonlinear_check,
    "rkhs_demo": run_rkhs_demo,
    "functional_demo": run_functional_demo,
    "minimax_verify": run_minimax_verify,
    "diagnostics": run_diagnostics,
}


def run_config(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    t0 = time.perf_counter()
    res = _RUNNERS[cfg.experiment](cfg, jobs)
    res.runtime_seconds = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------------------
# regime table
# ---------------------------------------------------------------------------

REGIME_R_GRID = (0.1, 0.5, 1.0)
REGIME_S_GRID = (0.5, 1.0)


def list_regimes() -> list[dict]:
    """Upper and lower exponents over every valid regime on a small parameter grid."""
    rows = []
    combos = [("weak", "prediction"), ("strong", "prediction"), ("strong", "estimation")]
    for reg, err in combos:
        for sch in ("decaying", "constant"):
            for s in REGIME_S_GRID:
                for r in REGIME_R_GRID:
                    try:
                        regime = RateRegime(reg, err, sch, s, r)
                    except ValueError:
                        continue
                    th = theoretical_exponent(regime)
                    mm = minimax_exponent(reg, err, s, r)
                    rows.append({
                        "regularity": reg, "error": err, "schedule": sch, "s": s, "r": r,
                        "exponent": th.exponent, "log_factor": th.log_factor,
                        "step_parameter": th.step_parameter, "minimax": mm,
                        "minimax_gap": round(mm - th.exponent, 12) + 0.0,
                    })
    return rows
