"""Packing sets and hard problem families behind the minimax lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .hilbert import SpectralDiagonal, apply_semi_norm
from .metrics import minimax_caveat, minimax_exponent
from .problem import ProblemSpec, TargetSpec, build_spectrum, sample

__all__ = [
    "PackingSet",
    "PackingError",
    "build_packing",
    "packing_target",
    "HardInstance",
    "HardFamily",
    "build_hard_family",
    "separation",
    "separation_bound",
    "kl_between_instances",
    "kl_spectral_sum",
    "kl_monte_carlo",
    "lower_bound_exponent_report",
    "verify_family",
]


class PackingError(RuntimeError):
    pass


def packing_target(length: int) -> int:
    """``ceil(e^{length/8})`` rounded upward in floating point."""
    return int(math.ceil(math.exp(length / 8.0) * (1 - 1e-15)))


@dataclass(frozen=True)
class PackingSet:
    """``+-1`` codewords of a common length, stored as rows."""

    codewords: np.ndarray
    min_hamming: int

    @property
    def length(self) -> int:
        return self.codewords.shape[1]

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    def pairwise_hamming(self) -> np.ndarray:
        W = self.codewords
        return (W.shape[1] - W @ W.T) // 2

    def min_distance(self) -> int:
        """Smallest pairwise Hamming distance (length for a single word)."""
        if self.size < 2:
            return self.length
        D = self.pairwise_hamming()
        return int(D[np.triu_indices(self.size, 1)].min())

    def verify(self, target_size: Optional[int] = None) -> None:
        """Exhaustive pairwise check of the size and distance invariants."""
        target = packing_target(self.length) if target_size is None else target_size
        if self.size < target:
            raise PackingError(f"size {self.size} below {target}")
        W = self.codewords
        if not np.all(np.abs(W) == 1):
            raise PackingError("codewords must be +-1")
        for i, j in combinations(range(self.size), 2):
            l1 = int(np.abs(W[i] - W[j]).sum())
            ham = int(np.sum(W[i] != W[j]))
            if l1 != 2 * ham:
                raise PackingError("l1 distance is not twice the Hamming distance")
            if ham < self.min_hamming or 2 * l1 < self.length:
                raise PackingError(f"codewords {i},{j} only {ham} apart")


def build_packing(
    length: int,
    target_size: Optional[int],
    max_attempts: int,
    rng: np.random.Generator,
    min_hamming: Optional[int] = None,
) -> PackingSet:
    """Greedy random packing of the hypercube ``{-1, 1}^length``.

    Uniform words are kept when they are at least ``min_hamming`` apart from
    every kept word. The default ``ceil(length/4)`` is exactly the
    ``l1 >= length/2`` separation needed downstream.
    """
    if length < 8:
        raise ValueError("packing needs length >= 8")
    target = packing_target(length) if target_size is None else int(target_size)
    thresh = math.ceil(length / 4) if min_hamming is None else int(min_hamming)
    kept = []
    for _ in range(max_attempts):
        if len(kept) >= target:
            break
        w = rng.choice(np.array([-1, 1], dtype=np.int64), size=length)
        if all(int(np.sum(w != k)) >= thresh for k in kept):
            kept.append(w)
    if len(kept) < target:
        raise PackingError(
            f"found {len(kept)} of {target} codewords after {max_attempts} attempts; retry with a new seed"
        )
    P = PackingSet(np.array(kept, dtype=np.int64), thresh)
    P.verify(target)
    return P


# ---------------------------------------------------------------------------
# hard instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HardInstance:
    index: int
    codeword: np.ndarray
    problem: ProblemSpec = field(repr=False)
    j_norm: float = 0.0  # realized operator norm (weak) or ||g|| (strong)

    @property
    def operator(self) -> np.ndarray:
        return self.problem.s_dagger


@dataclass(frozen=True)
class HardFamily:
    regime: str  # "weak" or "strong"
    m: int
    r: float
    s: float
    R: float
    sigma2: float
    d1: float
    d2: float
    alpha: float
    spectrum: SpectralDiagonal = field(repr=False)
    packing: PackingSet = field(repr=False)
    instances: tuple = field(repr=False)

    @property
    def norm_within_R(self) -> bool:
        return all(inst.j_norm <= self.R * (1 + 1e-12) for inst in self.instances)


def build_hard_family(
    regime: str,
    m: int,
    r: float,
    s: float,
    R: float,
    sigma2: float,
    d1: float,
    d2: float,
    rng: np.random.Generator,
    dim_in: Optional[int] = None,
    dim_out: Optional[int] = None,
    alpha: float = 0.5,
    max_attempts: int = 100_000,
    packing: Optional[PackingSet] = None,
) -> HardFamily:
    """Instances indexed by a packing of ``{-1, 1}^{m^2}`` (weak) or ``{-1, 1}^m`` (strong).

    Weak: ``J e_{m+k} = (R / sqrt(m)) sum_l iota_{k,l} f_l`` for
    ``k = 1..m`` and zero on all other input directions; the noise is spread
    over the ``m`` output channels carrying the signal, variance ``sigma2/m``
    each. Strong: a single output direction ``f_1`` with
    ``g = (R / sqrt(m)) sum_k iota_k e_{m+k}`` and noise ``N(0, sigma2)``.
    """
    if regime not in ("weak", "strong"):
        raise ValueError("regime must be 'weak' or 'strong'")
    dim_in = 2 * m if dim_in is None else dim_in
    dim_out = (2 * m if regime == "weak" else 1) if dim_out is None else dim_out
    if dim_in < 2 * m:
        raise ValueError(f"input truncation {dim_in} < 2m = {2 * m}")
    if regime == "weak" and dim_out < 2 * m:
        raise ValueError(f"output truncation {dim_out} < 2m = {2 * m}")
    if dim_out < 1:
        raise ValueError("need at least one output dimension")
    C = build_spectrum(dim_in, s, d1, d2)
    length = m * m if regime == "weak" else m
    P = build_packing(length, None, max_attempts, rng) if packing is None else packing
    if P.length != length:
        raise ValueError("packing length does not match the regime")

    instances = []
    for i, w in enumerate(P.codewords):
        J = np.zeros((dim_out, dim_in))
        if regime == "weak":
            iota = w.reshape(m, m)  # iota[k, l]
            J[:m, m:2 * m] = (R / math.sqrt(m)) * iota.T
            norm = float(np.linalg.norm(J, 2))
            target = TargetSpec("weak", r, max(R, norm), J)
            prob = ProblemSpec(C, target, sigma2, noise_channels=m)
        else:
            J[0, m:2 * m] = (R / math.sqrt(m)) * w
            norm = float(np.linalg.norm(J))
            target = TargetSpec("strong", r, R, J)
            prob = ProblemSpec(C, target, sigma2, noise_channels=1)
        instances.append(HardInstance(i, w, prob, norm))
    return HardFamily(regime, m, r, s, R, sigma2, d1, d2, alpha, C, P, tuple(instances))


def separation(family: HardFamily, i: int, j: int) -> float:
    """Weak: ``||(S_i - S_j) L^{1/2}||_HS``; strong: ``||L^alpha (beta_i - beta_j)||``."""
    A = family.instances[i].operator - family.instances[j].operator
    a = 0.5 if family.regime == "weak" else family.alpha
    return math.sqrt(apply_semi_norm(A, family.spectrum, a))


def separation_bound(family: HardFamily, d_scale: Optional[float] = None) -> float:
    """Closed-form lower bound on the pairwise separation.

    ``d_scale`` defaults to ``d1``; pass the realized spectrum scale to get
    the sharper finite-truncation version.
    """
    d = family.d1 if d_scale is None else d_scale
    m, r, s, R = family.m, family.r, family.s, family.R
    if family.regime == "weak":
        return 2 ** (-(2 * r + 1) / (2 * s)) * d ** (r + 0.5) * R * m ** (-(2 * r + 1) / (2 * s) + 0.5)
    a = family.alpha
    return 2 ** (-(r + a) / s) * d ** (r + a) * R * m ** (-(r + a) / s)


def _noise_per_channel(family: HardFamily) -> float:
    return family.sigma2 / family.m if family.regime == "weak" else family.sigma2


def kl_between_instances(family: HardFamily, i: int, j: int, T: int) -> tuple[float, float]:
    """Exact ``KL(rho_i^T || rho_j^T)`` and the closed-form upper bound.

    The outputs are conditionally Gaussian on the noise channels, so the
    per-sample divergence is ``E_x |(S_i - S_j) x|^2 / (2 v)`` with ``v`` the
    per-channel noise variance.
    """
    if family.sigma2 <= 0:
        raise ValueError("KL undefined without noise")
    A = family.instances[i].operator - family.instances[j].operator
    q = family.m if family.regime == "weak" else 1
    if np.any(A[q:] != 0):
        return math.inf, kl_bound(family, T)
    exact = T * apply_semi_norm(A, family.spectrum, 0.5) / (2 * _noise_per_channel(family))
    bound = kl_bound(family, T)
    return exact, bound


def kl_bound(family: HardFamily, T: int) -> float:
    m, r, s, R, d2 = family.m, family.r, family.s, family.R, family.d2
    if family.regime == "weak":
        return 2 * R ** 2 / family.sigma2 * d2 ** (2 * r + 1) * m ** (-(2 * r + 1) / s + 2) * T
    return 2 * T * R ** 2 / family.sigma2 * d2 ** (2 * r + 1) * m ** (-(2 * r + 1) / s)


def kl_spectral_sum(family: HardFamily, i: int, j: int, T: int) -> float:
    """Per-coordinate form of the exact divergence, computed from the codewords."""
    m, r, R, lam = family.m, family.r, family.R, family.spectrum.eigenvalues
    wi, wj = family.instances[i].codeword, family.instances[j].codeword
    block = lam[m:2 * m] ** (2 * r + 1)
    if family.regime == "weak":
        diff2 = ((wi - wj).reshape(m, m) ** 2).astype(float)  # [k, l]
        total = (R ** 2 / m) * float(np.sum(diff2 * block[:, None]))
        return T * m / (2 * family.sigma2) * total
    diff2 = ((wi - wj) ** 2).astype(float)
    return T * (R ** 2 / m) * float(np.sum(diff2 * block)) / (2 * family.sigma2)


def kl_monte_carlo(family: HardFamily, i: int, j: int, draws: int, rng: np.random.Generator) -> tuple[float, float]:
    """Average log-likelihood ratio ``log rho_i - log rho_j`` under ``rho_i``.

    Returns the per-sample estimate and its standard error.
    """
    pi, pj = family.instances[i].problem, family.instances[j].problem
    X, Y = sample(pi, rng, draws)
    q = pi.active_noise_channels
    v = _noise_per_channel(family)
    ri = Y[:, :q] - X @ pi.s_dagger[:q].T
    rj = Y[:, :q] - X @ pj.s_dagger[:q].T
    llr = (np.sum(rj ** 2, axis=1) - np.sum(ri ** 2, axis=1)) / (2 * v)
    return float(llr.mean()), float(llr.std(ddof=1) / math.sqrt(draws))


def verify_family(family: HardFamily, T: int = 1) -> dict:
    """JSON-ready record of the packing, separation and KL checks."""
    n = len(family.instances)
    sep_min = math.inf
    ratio_max = 0.0
    sep_ok = kl_ok = True
    bound_d1 = separation_bound(family)
    d_real = float(family.spectrum.eigenvalues[0])
    bound_real = separation_bound(family, d_real)
    for i, j in combinations(range(n), 2):
        d = separation(family, i, j)
        sep_min = min(sep_min, d)
        sep_ok &= d >= bound_d1 * (1 - 1e-12)
        exact, bound = kl_between_instances(family, i, j, T)
        ratio_max = max(ratio_max, exact / bound)
        kl_ok &= exact <= bound * (1 + 1e-12)
    weak = family.regime == "weak"
    return {
        "regime": family.regime,
        "m": family.m,
        "r": family.r,
        "s": family.s,
        "alpha": 0.5 if weak else family.alpha,
        "packing_size": family.packing.size,
        "packing_target": packing_target(family.packing.length),
        "packing_min_hamming": family.packing.min_distance(),
        "separation_min": sep_min if n > 1 else None,
        "separation_bound_d1": bound_d1,
        "separation_bound_realized_d": bound_real,
        "realized_d": d_real,
        "separation_ok": bool(sep_ok),
        "kl_max_ratio": ratio_max,
        "kl_ok": bool(kl_ok),
        "j_norms": [inst.j_norm for inst in family.instances],
        "norm_within_R": family.norm_within_R,
        "caveat": minimax_caveat("weak", family.instances[0].problem.dim_out, family.m) if weak else None,
    }


def lower_bound_exponent_report(
    regime: str,
    r: float,
    s: float,
    error: str = "prediction",
    R: float = 1.0,
    sigma2: float = 1.0,
    d2: float = 1.0,
    T: Optional[int] = None,
) -> dict:
    """Minimax exponent and the block size ``m(T)`` used by the construction."""
    scale = s / (2 * r + 1) if regime == "weak" else s / (2 * r + 1 + s)
    pre = 512 * R ** 2 / sigma2 * d2 ** (2 * r + 1)
    rec = {
        "regime": regime,
        "error": error,
        "r": r,
        "s": s,
        "exponent": minimax_exponent(regime, error, s, r),
        "m_scaling_exponent": scale,
        "caveat": minimax_caveat(regime),
    }
    if T is not None:
        rec["T"] = T
        rec["m"] = 8 * math.ceil((pre * T) ** scale)
    return rec
