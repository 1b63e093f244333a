"""Kernel SGD in a vector-valued RKHS, functional linear regression and the
biased-model lift."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hilbert import SpectralDiagonal
from .problem import ProblemSpec, TargetSpec, make_rng

__all__ = [
    "ScalarKernel",
    "KernelViolationError",
    "DictionaryOperator",
    "kernel_sgd_step",
    "rkhs_norm",
    "rkhs_distance",
    "run_kernel_sgd",
    "random_dictionary_target",
    "FunctionalProblem",
    "functional_sgd_step",
    "run_functional_sgd",
    "lift_biased",
    "coupled_step",
]


class KernelViolationError(ValueError):
    """Gram matrix is indefinite beyond rounding."""


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarKernel:
    """Gaussian ``exp(-|x-x'|^2 / (2 h^2))`` or polynomial ``(<x,x'> + c)^p``.

    ``domain_radius`` bounds ``|x|`` on the input domain and fixes the sup
    bound ``kappa2`` for polynomial kernels.
    """

    kind: str
    bandwidth: float = 1.0
    degree: int = 2
    offset: float = 1.0
    domain_radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial"):
            raise ValueError("kernel kind must be 'gaussian' or 'polynomial'")
        if self.kind == "gaussian" and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.kind == "polynomial" and (self.degree < 1 or self.offset < 0):
            raise ValueError("need degree >= 1 and offset >= 0")

    @classmethod
    def gaussian(cls, bandwidth: float) -> "ScalarKernel":
        return cls("gaussian", bandwidth=bandwidth)

    @classmethod
    def polynomial(cls, degree: int = 2, offset: float = 1.0, domain_radius: float = 1.0) -> "ScalarKernel":
        return cls("polynomial", degree=degree, offset=offset, domain_radius=domain_radius)

    @property
    def kappa2(self) -> float:
        if self.kind == "gaussian":
            return 1.0
        return (self.domain_radius ** 2 + self.offset) ** self.degree

    def __call__(self, A, B) -> np.ndarray:
        A = _points(A)
        B = _points(B)
        if self.kind == "gaussian":
            d2 = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2 * A @ B.T
            return np.exp(-np.maximum(d2, 0.0) / (2 * self.bandwidth ** 2))
        return (A @ B.T + self.offset) ** self.degree


def _points(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        return A.reshape(1, 1)
    if A.ndim == 1:
        return A[:, None]
    return A


# ---------------------------------------------------------------------------
# vector-valued kernel regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DictionaryOperator:
    """``S = sum_i b_i (x) K(x_i, .)`` stored as anchors and coefficients.

    ``anchors`` has shape ``(n, p)``, ``coeffs`` shape ``(n, d_out)``.
    """

    anchors: np.ndarray
    coeffs: np.ndarray
    kernel: ScalarKernel

    def __post_init__(self):
        a = np.array(self.anchors, dtype=float, copy=True)
        c = np.array(self.coeffs, dtype=float, copy=True)
        if a.ndim != 2 or c.ndim != 2 or a.shape[0] != c.shape[0]:
            raise ValueError("anchors (n, p) and coeffs (n, d_out) must align")
        a.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def empty(cls, kernel: ScalarKernel, dim_in: int, dim_out: int) -> "DictionaryOperator":
        return cls(np.empty((0, dim_in)), np.empty((0, dim_out)), kernel)

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim_out(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, X) -> np.ndarray:
        """Predictions at the rows of ``X``; a 1-D ``X`` is one point."""
        X = np.asarray(X, dtype=float)
        single = X.ndim <= 1
        Xp = X.reshape(1, -1) if single else X
        if Xp.shape[1] != self.anchors.shape[1]:
            raise ValueError("input dimension mismatch")
        if self.size == 0:
            out = np.zeros((Xp.shape[0], self.dim_out))
        else:
            out = self.kernel(Xp, self.anchors) @ self.coeffs
        return out[0] if single else out

    def minus(self, other: "DictionaryOperator") -> "DictionaryOperator":
        """Difference as a single dictionary (anchors concatenated)."""
        return DictionaryOperator(
            np.vstack([self.anchors, other.anchors]),
            np.vstack([self.coeffs, -other.coeffs]),
            self.kernel,
        )


def kernel_sgd_step(
    S: DictionaryOperator,
    x,
    y,
    eta: float,
    compress_below: Optional[float] = None,
) -> DictionaryOperator:
    """Append anchor ``x`` with coefficient ``-eta (S(x) - y)``.

    With ``compress_below`` set, updates whose coefficient norm falls below
    the threshold are dropped (off by default).
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if eta == 0:
        return S
    b = -eta * (S(x)[0] - y)
    if compress_below is not None and np.linalg.norm(b) < compress_below:
        return S
    return DictionaryOperator(np.vstack([S.anchors, x]), np.vstack([S.coeffs, b]), S.kernel)


def _quadratic_form(kernel: ScalarKernel, anchors: np.ndarray, coeffs: np.ndarray, block: int = 1024) -> float:
    n = anchors.shape[0]
    total = 0.0
    for i in range(0, n, block):
        G = kernel(anchors[i:i + block], anchors)
        total += float(np.sum(coeffs[i:i + block] * (G @ coeffs)))
    return total


def rkhs_norm(S: DictionaryOperator, check_psd: bool = True) -> float:
    """``sqrt(sum_ij K(x_i, x_j) <b_i, b_j>)``, the HS norm of ``S``."""
    if S.size == 0:
        return 0.0
    if check_psd and S.size <= 1000:
        G = S.kernel(S.anchors, S.anchors)
        lo = np.linalg.eigvalsh(G).min()
        if lo < -1e-8 * max(1.0, np.abs(G).max()):
            raise KernelViolationError(f"Gram matrix has eigenvalue {lo:.3g}")
        val = float(np.sum(S.coeffs * (G @ S.coeffs)))
    else:
        val = _quadratic_form(S.kernel, S.anchors, S.coeffs)
    if val < -1e-8:
        raise KernelViolationError(f"negative squared norm {val:.3g}")
    return float(np.sqrt(max(val, 0.0)))


def rkhs_distance(S: DictionaryOperator, H: DictionaryOperator) -> float:
    return rkhs_norm(S.minus(H), check_psd=False)


def random_dictionary_target(
    kernel: ScalarKernel,
    n_anchors: int,
    dim_in: int,
    dim_out: int,
    norm: float,
    seed: int,
) -> DictionaryOperator:
    """Dictionary element with uniform anchors in ``[-1, 1]^p`` and RKHS norm ``norm``."""
    rng = make_rng(seed)
    A = rng.uniform(-1.0, 1.0, (n_anchors, dim_in))
    B = rng.standard_normal((n_anchors, dim_out))
    h = DictionaryOperator(A, B, kernel)
    return DictionaryOperator(A, B * (norm / rkhs_norm(h)), kernel)


@dataclass(frozen=True)
class KernelRunLog:
    t: np.ndarray
    estimation: np.ndarray  # squared RKHS distance to the target
    prediction: np.ndarray  # held-out mean squared error of the noiseless part
    final: DictionaryOperator = field(repr=False)


def run_kernel_sgd(
    target: DictionaryOperator,
    noise_variance: float,
    etas: np.ndarray,
    checkpoints: Sequence[int],
    seed: int,
    n_holdout: int = 2000,
) -> KernelRunLog:
    """Kernel SGD on ``y = h(x) + eps`` with ``x`` uniform on ``[-1, 1]^p``."""
    rng = make_rng(seed)
    p, q = target.anchors.shape[1], target.dim_out
    T = len(etas)
    X = rng.uniform(-1.0, 1.0, (T, p))
    Y = target(X) + np.sqrt(noise_variance / q) * rng.standard_normal((T, q))
    Xh = make_rng(seed, 1).uniform(-1.0, 1.0, (n_holdout, p))
    Yh = target(Xh)
    cps = set(int(c) for c in checkpoints)
    # grow arrays in place; equivalent to repeated kernel_sgd_step
    A = np.empty((T, p))
    B = np.empty((T, q))
    ts, est, pred = [], [], []

    def record(n):
        S = DictionaryOperator(A[:n], B[:n], target.kernel)
        ts.append(n)
        est.append(rkhs_distance(S, target) ** 2)
        pred.append(float(np.mean(np.sum((S(Xh) - Yh) ** 2, axis=1))))

    record(0)
    for t in range(T):
        x = X[t:t + 1]
        f = target.kernel(x, A[:t])[0] @ B[:t] if t else np.zeros(q)
        A[t] = x[0]
        B[t] = -etas[t] * (f - Y[t])
        if t + 1 in cps:
            record(t + 1)
    return KernelRunLog(np.array(ts), np.array(est), np.array(pred), DictionaryOperator(A, B, target.kernel))


# ---------------------------------------------------------------------------
# functional linear regression
# ---------------------------------------------------------------------------

def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _psd_power(M: np.ndarray, p: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals ** p) @ vecs.T


@dataclass(frozen=True)
class FunctionalProblem:
    """``y = int beta(u) x(u) du + eps`` on a uniform grid of ``[0, 1]``.

    Inputs are Karhunen-Loeve series ``x = sum_k sqrt(mu_k) g_k psi_k`` with
    ``psi_k(u) = sqrt(2) sin(k pi u)``. The slope is
    ``beta = (tau* L_C tau)^r g`` for ``g = sum_i alpha_i K(u_i, .)`` with
    anchors ``u_i`` on the grid. All integrals use the trapezoid rule.
    """

    kernel: ScalarKernel
    n_grid: int
    mu: np.ndarray
    r: float
    alpha: np.ndarray
    noise_variance: float = 0.0
    grid: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    K: np.ndarray = field(init=False, repr=False)
    K_half: np.ndarray = field(init=False, repr=False)
    basis: np.ndarray = field(init=False, repr=False)
    cov: np.ndarray = field(init=False, repr=False)
    beta_dagger: np.ndarray = field(init=False, repr=False)
    beta_dagger_half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_grid < 3:
            raise ValueError("need at least 3 grid points")
        if self.r <= 0:
            raise ValueError("r must be positive")
        grid = np.linspace(0.0, 1.0, self.n_grid)
        w = _trapezoid_weights(grid)
        K = self.kernel(grid, grid)
        mu = np.asarray(self.mu, dtype=float)
        k = np.arange(1, mu.size + 1)
        basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(grid, k))  # (n_grid, n_modes)
        cov = (basis * mu) @ basis.T
        K_half = _psd_power(K, 0.5)
        Q = (w[:, None] * cov) * w[None, :]
        M = K_half @ Q @ K_half
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape != (self.n_grid,):
            raise ValueError("alpha must be a grid vector")
        half = _psd_power(M, self.r) @ (K_half @ alpha)
        for name, val in [("grid", grid), ("weights", w), ("K", K), ("K_half", K_half),
                          ("basis", basis), ("cov", cov), ("beta_dagger", K_half @ half),
                          ("beta_dagger_half", half), ("mu", mu), ("alpha", alpha)]:
            val = np.array(val, copy=True)
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """Quadrature ``L^2`` inner product."""
        return float(np.sum(self.weights * f * g))

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        """``tau* g = int K(u, .) g(u) du`` on the grid."""
        return self.K @ (self.weights * g)

    def draw(self, rng: np.random.Generator, n: int):
        """``n`` input curves (rows on the grid) and responses."""
        G = rng.standard_normal((n, self.mu.size))
        X = (G * np.sqrt(self.mu)) @ self.basis.T
        y = X @ (self.weights * self.beta_dagger)
        if self.noise_variance > 0:
            y = y + np.sqrt(self.noise_variance) * rng.standard_normal(n)
        return X, y

    def prediction_error(self, beta: np.ndarray) -> float:
        """``E <beta - beta_dagger, x>^2`` under the input covariance."""
        d = self.weights * (beta - self.beta_dagger)
        return float(d @ self.cov @ d)


def functional_sgd_step(beta: np.ndarray, x: np.ndarray, y: float, eta: float, problem: FunctionalProblem) -> np.ndarray:
    """``beta - eta (int beta x - y) int K(v, .) x(v) dv`` by quadrature."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta.shape != (problem.n_grid,) or x.shape != (problem.n_grid,):
        raise ValueError("grid mismatch")
    if eta == 0:
        return beta.copy()
    resid = problem.inner(beta, x) - y
    return beta - eta * resid * problem.adjoint(x)


@dataclass(frozen=True)
class FunctionalRunLog:
    t: np.ndarray
    prediction: np.ndarray
    estimation: np.ndarray  # squared RKHS distance
    beta: np.ndarray = field(repr=False)


def run_functional_sgd(
    problem: FunctionalProblem,
    etas: np.ndarray,
    checkpoints: Sequence[int],
    seed: int,
) -> FunctionalRunLog:
    """Functional SGD from ``beta_1 = 0``.

    Alongside the grid values the iterate is tracked as ``beta = K gamma``,
    which gives the RKHS distance to ``beta_dagger = K^{1/2} h`` as
    ``|K^{1/2} gamma - h|`` without inverting the Gram matrix.
    """
    rng = make_rng(seed)
    T = len(etas)
    X, Y = problem.draw(rng, T)
    beta = np.zeros(problem.n_grid)
    gamma = np.zeros(problem.n_grid)
    cps = set(int(c) for c in checkpoints)
    ts, pred, est = [], [], []

    def record(t):
        ts.append(t)
        pred.append(problem.prediction_error(beta))
        est.append(float(np.sum((problem.K_half @ gamma - problem.beta_dagger_half) ** 2)))

    record(0)
    for t in range(T):
        resid = problem.inner(beta, X[t]) - Y[t]
        beta = functional_sgd_step(beta, X[t], Y[t], etas[t], problem)
        gamma -= etas[t] * resid * problem.weights * X[t]
        if t + 1 in cps:
            record(t + 1)
    return FunctionalRunLog(np.array(ts), np.array(pred), np.array(est), beta)


# ---------------------------------------------------------------------------
# biased model
# ---------------------------------------------------------------------------

def lift_biased(spec: ProblemSpec) -> ProblemSpec:
    """Linear problem on ``H1 x R`` with input ``(x, 1)`` and target ``[S | y0]``.

    The lifted covariance is ``diag(lambda_1, ..., lambda_d, 1)``.
    """
    if spec.bias is None:
        raise ValueError("lift needs a bias y0")
    if spec.intercept:
        raise ValueError("problem is already lifted")
    lam = np.append(spec.spectrum.eigenvalues, 1.0)
    lifted = SpectralDiagonal(lam, s=spec.spectrum.s, normalized=False)
    # J_lift = [J | y0] so that J_lift diag(lam, 1)^r = [S | y0]
    J = np.hstack([spec.target.j_operator, spec.bias[:, None]])
    norm = np.linalg.norm(J, 2) if spec.target.regularity == "weak" else np.linalg.norm(J)
    target = TargetSpec(spec.target.regularity, spec.target.r, max(float(norm), spec.target.R), J)
    return ProblemSpec(
        lifted, target, spec.noise_variance, spec.noise_channels,
        nonlinearity=spec.nonlinearity,
        bias=None, intercept=True,
    )


def coupled_step(S: np.ndarray, beta: np.ndarray, x, y, eta: float):
    """One step of the joint ``(S, beta)`` recursion of the biased model."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    resid = S @ x + beta - y
    return S - eta * np.outer(resid, x), beta - eta * resid
