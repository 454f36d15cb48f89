"""Least squares and profiled REML fits of compiled designs.

The mixed model is ``y = X b + sum_k Z_k u_k + e`` with
``u_k ~ N(0, s2 * theta_k * I)`` and ``e ~ N(0, s2 * I)``. For fixed
variance ratios ``theta`` the penalized least-squares problem

    min_{b, v} ||y - X b - Z L v||^2 + ||v||^2,    L = diag(sqrt(theta))

is solved by a QR factorization of the augmented matrix
``[[Z L, X, y], [I, 0, 0]]``. Its triangular factor carries everything the
profiled likelihoods need: ``log|I + L Z'Z L|`` (first q diagonal entries),
``log|X' V^-1 X|`` (next p) and the penalized residual sum of squares (last).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg

from panelclim.errors import NumericalError
from panelclim.panel import CompiledDesign, compile_design, resolve_spec

log = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)
THETA_MAX = 1e6
THETA_MIN_SEARCH = 1e-8
STARTS = (0.01, 1.0, 100.0)
MAX_SWEEPS = 200
IMPROVE_TOL = 1e-10
MOVE_TOL = 1e-8
# an update must beat the incumbent by this much to be taken
ACCEPT_MARGIN = 1e-11
GRID_POINTS = 33
GOLDEN_TOL = 1e-7


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    sigma2_eps: float
    theta: np.ndarray
    blup: dict[str, np.ndarray]
    loglik_ml: float
    loglik_reml: float
    aic: float
    bic: float
    n: int
    p: int
    converged: bool
    columns: list[str]
    block_names: list[str] = field(default_factory=list)
    method: str = "ols"
    degenerate: bool = False
    n_evals: int = 0
    spec: dict | None = None
    blup_labels: dict[str, list[str]] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return self.p + len(self.theta) + 1

    def coef(self, name: str) -> float:
        return float(self.beta[self.columns.index(name)])

    def coefs(self) -> dict[str, float]:
        return dict(zip(self.columns, map(float, self.beta)))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "columns": list(self.columns),
            "beta": self.beta,
            "sigma2_eps": self.sigma2_eps,
            "theta": dict(zip(self.block_names, map(float, self.theta))),
            "block_names": list(self.block_names),
            "blup": {k: v for k, v in self.blup.items()},
            "blup_labels": {k: list(v) for k, v in self.blup_labels.items()},
            "loglik_ml": self.loglik_ml,
            "loglik_reml": self.loglik_reml,
            "aic": self.aic,
            "bic": self.bic,
            "n": self.n,
            "p": self.p,
            "n_params": self.n_params,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "n_evals": self.n_evals,
            "spec": self.spec,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        names = list(d.get("block_names", []))
        theta = np.array([float(d["theta"][k]) for k in names])

        def num(x):
            return float(x) if x is not None else float("nan")

        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            sigma2_eps=num(d["sigma2_eps"]),
            theta=theta,
            blup={k: np.asarray(v, dtype=float) for k, v in d.get("blup", {}).items()},
            loglik_ml=num(d["loglik_ml"]),
            loglik_reml=num(d["loglik_reml"]),
            aic=num(d["aic"]),
            bic=num(d["bic"]),
            n=int(d["n"]),
            p=int(d["p"]),
            converged=bool(d["converged"]),
            columns=list(d["columns"]),
            block_names=names,
            method=d.get("method", "ols"),
            degenerate=bool(d.get("degenerate", False)),
            n_evals=int(d.get("n_evals", 0)),
            spec=d.get("spec"),
            blup_labels={k: list(v) for k, v in d.get("blup_labels", {}).items()},
        )


def information_criteria(fit: FitResult) -> tuple[float, float]:
    """AIC and BIC from the ML log-likelihood.

    Parameter count is fixed coefficients + variance ratios + residual variance.
    """
    if not fit.converged:
        raise NumericalError("information criteria requested for a non-converged fit")
    k = fit.n_params
    return -2.0 * fit.loglik_ml + 2.0 * k, -2.0 * fit.loglik_ml + math.log(fit.n) * k


def _ml_loglik(logdet_a: float, r2: float, n: int) -> float:
    if r2 <= 0.0:
        return math.inf
    return -0.5 * (logdet_a + n * (1.0 + LOG2PI + math.log(r2 / n)))


def _reml_loglik(logdet_a: float, logdet_rx: float, r2: float, n: int, p: int) -> float:
    if r2 <= 0.0:
        return math.inf
    dof = n - p
    return -0.5 * (logdet_a + logdet_rx + dof * (1.0 + LOG2PI + math.log(r2 / dof)))


# ---------------------------------------------------------------------------
# OLS


def fit_ols(design: CompiledDesign) -> FitResult:
    """Least squares through a QR factorization of X."""
    X, y = design.X, design.y
    n, p = X.shape
    if n <= p:
        raise NumericalError(f"need more rows ({n}) than columns ({p})")
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.min() <= d.max() * max(n, p) * np.finfo(float).eps * 1e3:
        raise NumericalError("rank-deficient design in fit_ols")
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    degenerate = rss <= 1e-28 * max(float(y @ y), 1e-300)
    if degenerate:
        log.warning("fit_ols: exact fit (zero residuals); log-likelihood is degenerate")
        rss = 0.0
    logdet_rx = 2.0 * float(np.sum(np.log(d)))
    ll_ml = _ml_loglik(0.0, rss, n)
    ll_reml = _reml_loglik(0.0, logdet_rx, rss, n, p)
    fit = FitResult(
        beta=beta, sigma2_eps=rss / (n - p), theta=np.zeros(0), blup={},
        loglik_ml=ll_ml, loglik_reml=ll_reml, aic=math.nan, bic=math.nan,
        n=n, p=p, converged=True, columns=list(design.columns), method="ols",
        degenerate=degenerate, spec=design.spec.to_dict(),
    )
    aic, bic = information_criteria(fit)
    return _replace(fit, aic=aic, bic=bic)


def _replace(fit: FitResult, **kw) -> FitResult:
    return replace(fit, **kw)


# ---------------------------------------------------------------------------
# REML


class RemlProblem:
    """Profiled restricted / full likelihood of one compiled design as a function of theta."""

    def __init__(self, X: np.ndarray, y: np.ndarray, Zs: list[np.ndarray]):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.n, self.p = self.X.shape
        self.sizes = [Z.shape[1] for Z in Zs]
        self.K = len(Zs)
        self.Z = np.hstack(Zs) if Zs else np.zeros((self.n, 0))
        self.q = self.Z.shape[1]
        self.col_block = np.repeat(np.arange(self.K), self.sizes)
        n, p, q = self.n, self.p, self.q
        self._D = np.zeros((n + q, q + p + 1))
        self._D[:n, q:q + p] = self.X
        self._D[:n, -1] = self.y
        self._D[n:, :q] = np.eye(q)
        self.n_evals = 0

    @classmethod
    def from_design(cls, design: CompiledDesign) -> "RemlProblem":
        return cls(design.X, design.y, [b.Z for b in design.blocks])

    def _scale(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.K,) or np.any(theta < 0):
            raise ValueError(f"theta must be {self.K} non-negative ratios, got {theta}")
        return np.sqrt(theta)[self.col_block]

    def factor(self, theta) -> np.ndarray:
        self._D[: self.n, : self.q] = self.Z * self._scale(theta)
        self.n_evals += 1
        return np.linalg.qr(self._D, mode="r")

    def parts(self, theta) -> tuple[float, float, float]:
        """(log|I + L Z'Z L|, log|X'V^-1 X|, penalized RSS) at ``theta``."""
        R = self.factor(theta)
        d = np.abs(np.diag(R))
        q, p = self.q, self.p
        with np.errstate(divide="ignore"):
            logdet_a = 2.0 * float(np.sum(np.log(d[:q])))
            logdet_rx = 2.0 * float(np.sum(np.log(d[q:q + p])))
        r2 = float(d[q + p] ** 2) if len(d) > q + p else 0.0
        return logdet_a, logdet_rx, r2

    def reml(self, theta) -> float:
        a, rx, r2 = self.parts(theta)
        return _reml_loglik(a, rx, r2, self.n, self.p)

    def ml(self, theta) -> float:
        a, _, r2 = self.parts(theta)
        return _ml_loglik(a, r2, self.n)

    def solve(self, theta) -> tuple[np.ndarray, np.ndarray, float]:
        """(beta, spherical random effects v, penalized RSS) at ``theta``."""
        R = self.factor(theta)
        m = self.q + self.p
        sol = scipy.linalg.solve_triangular(R[:m, :m], R[:m, m])
        r2 = float(R[m, m] ** 2) if R.shape[0] > m else 0.0
        return sol[self.q:], sol[: self.q], r2

    def reml_gradient(self, theta) -> np.ndarray:
        """d(restricted log-likelihood)/d(theta_k), with the residual variance profiled out."""
        theta = np.asarray(theta, dtype=float)
        lam = self._scale(theta)
        Zs = self.Z * lam
        A = Zs.T @ Zs + np.eye(self.q)
        cho = scipy.linalg.cho_factor(A)

        def vinv(M):
            return M - Zs @ scipy.linalg.cho_solve(cho, Zs.T @ M)

        VX, Vy, VZ = vinv(self.X), vinv(self.y), vinv(self.Z)
        c2 = scipy.linalg.cho_factor(self.X.T @ VX)
        beta = scipy.linalg.cho_solve(c2, self.X.T @ Vy)
        Py = Vy - VX @ beta
        yPy = float(self.y @ Py)
        PZ = VZ - VX @ scipy.linalg.cho_solve(c2, self.X.T @ VZ)
        tr_cols = np.einsum("ij,ij->j", self.Z, PZ)
        zpy = self.Z.T @ Py
        tr = np.bincount(self.col_block, weights=tr_cols, minlength=self.K)
        quad = np.bincount(self.col_block, weights=zpy**2, minlength=self.K)
        return -0.5 * (tr - (self.n - self.p) * quad / yPy)


def _golden_max(f: Callable[[float], float], a: float, b: float, tol: float) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _coordinate_update(prob: RemlProblem, theta: np.ndarray, k: int, f_cur: float):
    """Best value for coordinate k: global log grid, golden refinement, boundary check."""
    def f_at(val: float) -> float:
        t = theta.copy()
        t[k] = val
        return prob.reml(t)

    grid = np.linspace(math.log(THETA_MIN_SEARCH), math.log(THETA_MAX), GRID_POINTS)
    vals = np.array([f_at(math.exp(s)) for s in grid])
    f0 = f_at(0.0)
    i = int(np.nanargmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    s_best, f_best = _golden_max(lambda s: f_at(math.exp(s)), lo, hi, GOLDEN_TOL)
    cand, f_cand = math.exp(s_best), f_best
    if vals[i] > f_cand:
        cand, f_cand = math.exp(grid[i]), vals[i]
    if f0 >= f_cand - ACCEPT_MARGIN:
        cand, f_cand = 0.0, f0
    if f_cand > f_cur + ACCEPT_MARGIN or (cand == 0.0 and f_cand >= f_cur - ACCEPT_MARGIN and theta[k] != 0.0):
        return cand, f_cand
    return theta[k], f_cur


def _sweeps(prob: RemlProblem, start: np.ndarray) -> tuple[np.ndarray, float, bool, int]:
    theta = start.copy()
    f_cur = prob.reml(theta)
    for sweep in range(1, MAX_SWEEPS + 1):
        old_theta, old_f = theta.copy(), f_cur
        for k in range(prob.K):
            theta[k], f_cur = _coordinate_update(prob, theta, k, f_cur)
        moved = np.abs(theta - old_theta) <= MOVE_TOL * np.maximum(np.abs(old_theta), 1e-300)
        moved |= theta == old_theta
        if f_cur - old_f < IMPROVE_TOL and moved.all():
            return theta, f_cur, True, sweep
    return theta, f_cur, False, MAX_SWEEPS


def _polish(prob: RemlProblem, theta: np.ndarray, f_cur: float) -> tuple[np.ndarray, float]:
    """Newton steps on the score in log-theta for interior coordinates.

    The derivative-free search resolves theta only to the flatness of the
    likelihood near its maximum; the analytic score pins it down further.
    """
    active = np.flatnonzero((theta > 0) & (theta < THETA_MAX))
    if active.size == 0:
        return theta, f_cur
    s = np.log(theta[active])

    def score(sv):
        t = theta.copy()
        t[active] = np.exp(sv)
        return prob.reml_gradient(t)[active] * np.exp(sv)

    h = 1e-4
    best_t, best_f = theta, f_cur
    for _ in range(20):
        g = score(s)
        H = np.empty((active.size, active.size))
        for j in range(active.size):
            e = np.zeros(active.size)
            e[j] = h
            H[:, j] = (score(s + e) - score(s - e)) / (2 * h)
        H = 0.5 * (H + H.T)
        if np.any(np.linalg.eigvalsh(H) >= 0):
            break
        step = -np.linalg.solve(H, g)
        step = np.clip(step, -1.0, 1.0)
        s_new = s + step
        if np.any(s_new > math.log(THETA_MAX)) or np.any(s_new < math.log(THETA_MIN_SEARCH)):
            break
        t_new = theta.copy()
        t_new[active] = np.exp(s_new)
        f_new = prob.reml(t_new)
        if not f_new >= best_f - 1e-9:
            break
        s = s_new
        best_t, best_f = t_new, f_new
        if np.max(np.abs(step)) < 1e-12:
            break
    return best_t, best_f


def fit_reml(design: CompiledDesign, theta: np.ndarray | None = None, polish: bool = True) -> FitResult:
    """REML fit of a design with at least one random block.

    ``theta`` fixes the variance ratios instead of estimating them.
    """
    if not design.blocks:
        raise NumericalError("fit_reml needs at least one random block; use fit_ols")
    prob = RemlProblem.from_design(design)
    n, p = prob.n, prob.p
    if n <= p:
        raise NumericalError(f"need more rows ({n}) than columns ({p})")

    if theta is not None:
        best_t = np.asarray(theta, dtype=float).copy()
        best_f = prob.reml(best_t)
        converged = True
    else:
        starts = STARTS if prob.K > 1 else STARTS[:1]
        best_t, best_f, converged = None, -math.inf, False
        for s0 in starts:
            t, f, ok, _ = _sweeps(prob, np.full(prob.K, s0))
            if best_t is None or f > best_f + ACCEPT_MARGIN:
                best_t, best_f, converged = t, f, ok
        if polish and converged:
            best_t, best_f = _polish(prob, best_t, best_f)
        if not converged:
            log.warning("fit_reml: no convergence after %d sweeps", MAX_SWEEPS)

    beta, v, r2 = prob.solve(best_t)
    a, rx, r2p = prob.parts(best_t)
    degenerate = r2p <= 1e-28 * max(float(prob.y @ prob.y), 1e-300)
    ll_reml = _reml_loglik(a, rx, r2p, n, p)
    ll_ml = _ml_loglik(a, r2p, n)
    lam = prob._scale(best_t)
    u = lam * v
    bounds = np.cumsum([0] + prob.sizes)
    blup = {b.name: u[bounds[i]:bounds[i + 1]] for i, b in enumerate(design.blocks)}
    fit = FitResult(
        beta=beta, sigma2_eps=r2p / (n - p), theta=best_t, blup=blup,
        loglik_ml=ll_ml, loglik_reml=ll_reml, aic=math.nan, bic=math.nan,
        n=n, p=p, converged=bool(converged), columns=list(design.columns),
        block_names=[b.name for b in design.blocks], method="reml",
        degenerate=degenerate, n_evals=prob.n_evals, spec=design.spec.to_dict(),
        blup_labels={b.name: list(b.labels) for b in design.blocks},
    )
    if converged:
        aic, bic = information_criteria(fit)
        fit = _replace(fit, aic=aic, bic=bic)
    return fit


def fit(design: CompiledDesign) -> FitResult:
    """OLS for pure fixed-effects designs, REML otherwise."""
    return fit_reml(design) if design.blocks else fit_ols(design)


def select_by_bic(panel, specs) -> tuple[str, dict[str, float]]:
    """Fit each spec on ``panel``; return the smallest-BIC label and all BICs."""
    bics = {}
    for s in specs:
        spec = resolve_spec(s)
        bics[spec.name] = fit(compile_design(panel, spec)).bic
    return min(bics, key=bics.get), bics


def working_covariance(design: CompiledDesign, theta) -> np.ndarray:
    """``I + sum_k theta_k Z_k Z_k'`` (residual-variance units), N x N."""
    V = np.eye(design.n)
    for t, b in zip(np.asarray(theta, dtype=float), design.blocks):
        if t:
            V += t * (b.Z @ b.Z.T)
    return V
