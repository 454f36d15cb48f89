"""Cluster-robust inference: CR2 sandwich, Satterthwaite df, t tests, marginal effects."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.stats

from panelclim.constants import CLIMATE_TERMS, SEASONS
from panelclim.errors import ConfigError, NumericalError
from panelclim.estimate import FitResult
from panelclim.panel import CompiledDesign, interaction_name, resolve_spec, square_name

log = logging.getLogger(__name__)

STARS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


# ---------------------------------------------------------------------------
# Student t


def t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| > |t|)."""
    if not df > 0:
        raise NumericalError(f"t distribution needs df > 0, got {df}")
    return float(2.0 * scipy.stats.t.sf(abs(t), df))


def t_ppf(p: float, df: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    return float(scipy.stats.t.ppf(p, df))


# ---------------------------------------------------------------------------
# CR2


@dataclass
class RobustVcov:
    vcov: np.ndarray
    cluster_count: int
    df: np.ndarray
    columns: list[str]
    adjustment: str = "CR2"
    # retained per-cluster pieces for contrast-specific df
    parts: dict = field(default_factory=dict, repr=False)

    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def to_dict(self) -> dict:
        return {"adjustment": self.adjustment, "cluster_count": self.cluster_count,
                "columns": list(self.columns), "vcov": self.vcov, "df": self.df}


def _pinv_sqrt(M: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetric (pseudo-)inverse square root and whether M was nonsingular."""
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    tol = 1e-10 * max(1.0, float(w.max()))
    keep = w > tol
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / np.sqrt(w[keep])
    return (U * inv) @ U.T, bool(keep.all())


def _whitener(design: CompiledDesign, theta):
    """Apply ``V^{-1/2}`` (symmetric root) of the working covariance, or None for the identity.

    With ``Zs = [sqrt(theta_k) Z_k] = U S W'``, ``V = I + U S^2 U'`` and
    ``V^{-1/2} = I + U ((1 + S^2)^{-1/2} - 1) U'``. The symmetric root keeps
    the whitened rows equivariant under row permutations, so cluster
    relabeling cannot change the sandwich.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.size == 0 or not np.any(theta > 0):
        return None
    Zs = np.hstack([np.sqrt(t) * b.Z for t, b in zip(theta, design.blocks) if t > 0])
    U, S, _ = np.linalg.svd(Zs, full_matrices=False)
    keep = S > S.max() * max(Zs.shape) * np.finfo(float).eps
    U, S = U[:, keep], S[keep]
    shrink = 1.0 / np.sqrt(1.0 + S * S) - 1.0

    def apply(A: np.ndarray) -> np.ndarray:
        return A + U @ (shrink[:, None] * (U.T @ A)) if A.ndim == 2 else A + U @ (shrink * (U.T @ A))

    return apply


def cr2_vcov(fit: FitResult, design: CompiledDesign) -> RobustVcov:
    """CR2 cluster-robust covariance with per-coefficient Satterthwaite df.

    Mixed fits are handled on the scale whitened by the symmetric inverse
    square root of the working covariance at the fitted variance ratios,
    which are treated as known.
    """
    if list(fit.columns) != list(design.columns):
        raise ConfigError("fit and design have different columns")
    clusters = list(dict.fromkeys(design.cluster.tolist()))
    G = len(clusters)
    if G < 2:
        raise ConfigError("CR2 needs at least two clusters")
    whiten = _whitener(design, fit.theta)
    if whiten is None:
        Xw, yw = design.X, design.y
    else:
        Xw, yw = whiten(design.X), whiten(design.y)
    Q, R = np.linalg.qr(Xw)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    M = Rinv @ Rinv.T
    beta = Rinv @ (Q.T @ yw)
    e = yw - Xw @ beta

    p = Xw.shape[1]
    idxs, Bs, us, singular = [], [], [], []
    for g in clusters:
        idx = np.flatnonzero(design.cluster == g)
        Qg = Q[idx]
        A, full = _pinv_sqrt(np.eye(len(idx)) - Qg @ Qg.T)
        if not full:
            singular.append(str(g))
        B = A @ Xw[idx] @ M
        us.append(B.T @ e[idx])
        idxs.append(idx)
        Bs.append(B)
    if singular:
        log.warning("CR2: (I - H_gg) singular for %d of %d clusters; using pseudo-inverse square roots",
                    len(singular), G)
    U = np.array(us)
    vcov = U.T @ U
    vcov = 0.5 * (vcov + vcov.T)
    parts = {"Q": Q, "idx": idxs, "B": Bs, "n": design.n}
    df = np.array([satterthwaite_df(parts, np.eye(p)[j]) for j in range(p)])
    return RobustVcov(vcov=vcov, cluster_count=G, df=df, columns=list(design.columns), parts=parts)


def satterthwaite_df(parts: dict, contrast) -> float:
    """Bell-McCaffrey degrees of freedom for ``contrast' beta``.

    With ``g_k = (I - H) S_k' A_k X_k M c`` for each cluster k, the working
    model gives ``Var(c' V c) ∝ 2 tr(Om^2)`` and ``E = tr(Om)`` for
    ``Om = G'G``; df = tr(Om)^2 / tr(Om^2).
    """
    c = np.asarray(contrast, dtype=float)
    if not np.any(c):
        raise ConfigError("satterthwaite_df: zero contrast")
    Q, n = parts["Q"], parts["n"]
    Gm = np.zeros((n, len(parts["idx"])))
    for k, (idx, B) in enumerate(zip(parts["idx"], parts["B"])):
        Gm[idx, k] = B @ c
    Gm -= Q @ (Q.T @ Gm)
    Om = Gm.T @ Gm
    tr = float(np.trace(Om))
    tr2 = float(np.sum(Om * Om))
    if tr2 <= 0.0:
        raise NumericalError("satterthwaite_df: contrast has no cluster variation")
    return tr * tr / tr2


# ---------------------------------------------------------------------------
# coefficient tests and marginal effects


PRECIP_POINT = 0.01


def report_scale(term: str) -> float:
    """Factor taking a design-unit coefficient to reporting units.

    Precipitation enters designs as a fraction; reports use percentage
    points, so each precipitation factor in a term contributes 1/100.
    """
    factors = term.split(":")
    scale = 1.0
    for f in factors:
        if f.startswith("P_"):
            scale *= PRECIP_POINT ** (2 if f.endswith("^2") else 1)
    return scale


def coef_table(fit: FitResult, rv: RobustVcov, level: float = 0.95, reporting_units: bool = False) -> pd.DataFrame:
    """Coefficient, CR2 SE, Satterthwaite df, t test and CI per column.

    ``reporting_units`` rescales precipitation terms to percentage points.
    """
    se = rv.se()
    rows = []
    for j, name in enumerate(fit.columns):
        k = report_scale(name) if reporting_units else 1.0
        b, s, d = float(fit.beta[j]) * k, float(se[j]) * k, float(rv.df[j])
        t = b / s if s > 0 else math.inf
        pval = t_sf2(t, d)
        q = t_ppf(0.5 + level / 2, d)
        rows.append({"term": name, "estimate": b, "se": s, "df": d, "t": t, "p_value": pval,
                     "ci_low": b - q * s, "ci_high": b + q * s, "stars": stars(pval)})
    return pd.DataFrame(rows)


def stars(p: float) -> str:
    for cut, mark in STARS:
        if p < cut:
            return mark
    return ""


@dataclass(frozen=True)
class MarginalEffect:
    variable: str
    sector: str
    ame: float
    se: float
    df: float
    p_value: float
    ci_low: float
    ci_high: float
    unit: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ame_gradient(fit: FitResult, panel: pd.DataFrame, variable: str, by_province: bool = False) -> np.ndarray:
    """Average derivative of the design row with respect to ``variable``, per design unit.

    ``by_province`` averages within province first, then across provinces.
    """
    spec = resolve_spec(fit.spec)
    if variable not in spec.climate_terms:
        raise ConfigError(f"{variable} is not in the fitted spec")
    cols = list(fit.columns)

    def avg(x: np.ndarray) -> float:
        if by_province:
            return float(pd.Series(x).groupby(panel["province"].to_numpy()).mean().mean())
        return float(np.mean(x))

    g = np.zeros(len(cols))
    g[cols.index(variable)] = 1.0
    sq = square_name(variable)
    if sq in cols:
        g[cols.index(sq)] = 2.0 * avg(panel[variable].to_numpy(dtype=float))
    season = variable.split("_", 1)[1]
    inter = interaction_name(season)
    if inter in cols:
        other = f"P_{season}" if variable.startswith("T_") else f"T_{season}"
        g[cols.index(inter)] = avg(panel[other].to_numpy(dtype=float))
    return g


def ame(
    fit: FitResult,
    rv: RobustVcov,
    panel: pd.DataFrame,
    variable: str,
    sector: str = "TOTAL",
    precip_unit: str = "point",
    by_province: bool = False,
    level: float = 0.95,
) -> MarginalEffect:
    """Average marginal effect of one climate anomaly with a delta-method t interval.

    Temperature effects are per degree C. Precipitation effects are per
    percentage point (``precip_unit="point"``) or per unit of the fraction
    stored in the design (``"fraction"``).
    """
    if precip_unit not in ("point", "fraction"):
        raise ConfigError("precip_unit must be point or fraction")
    g = ame_gradient(fit, panel, variable, by_province)
    j = fit.columns.index(variable)
    # start from the coefficient so a linear-only term returns it unchanged
    value = float(fit.beta[j])
    for k in np.flatnonzero(g):
        if k != j:
            value += float(g[k] * fit.beta[k])
    unit = "per degree C"
    scale = 1.0
    if variable.startswith("P_"):
        if precip_unit == "point":
            scale, unit = report_scale(variable), "per percentage point"
        else:
            unit = "per unit fraction"
    value *= scale
    g = g * scale
    se = float(math.sqrt(max(float(g @ rv.vcov @ g), 0.0)))
    df = satterthwaite_df(rv.parts, g)
    t = value / se if se > 0 else math.inf
    pval = t_sf2(t, df)
    q = t_ppf(0.5 + level / 2, df)
    return MarginalEffect(variable, sector, value, se, df, pval, value - q * se, value + q * se, unit)


def all_margins(fit, rv, panel, sector="TOTAL", **kw) -> pd.DataFrame:
    spec = resolve_spec(fit.spec)
    return pd.DataFrame([ame(fit, rv, panel, v, sector, **kw).to_dict() for v in spec.climate_terms])


# ---------------------------------------------------------------------------
# comparison report


def _row_order(columns: list[str]) -> list[tuple[str, str]]:
    """(block, term) in the layout Temperature, Precipitation, Others."""
    temp = [f"T_{s}" for s in SEASONS] + [square_name(f"T_{s}") for s in SEASONS]
    prec = [f"P_{s}" for s in SEASONS] + [square_name(f"P_{s}") for s in SEASONS]
    inter = [interaction_name(s) for s in SEASONS]
    present = set(columns)
    out = [("Temperature", t) for t in temp if t in present]
    out += [("Precipitation", t) for t in prec if t in present]
    out += [("Interactions", t) for t in inter if t in present]
    seen = {t for _, t in out}
    out += [("Others", c) for c in columns
            if c not in seen and c not in CLIMATE_TERMS and not c.startswith(("prov[", "year[", "trend["))
            and c != "(Intercept)"]
    return out


def report_table(fits: dict[str, FitResult], vcovs: dict[str, RobustVcov]) -> pd.DataFrame:
    """Coefficients with stars and bracketed clustered SEs, one column per model.

    Rows follow the Temperature / Precipitation / Others blocks, then the
    model-fit rows AIC and BIC. Dummy, trend and intercept terms are omitted.
    Precipitation terms are in percentage-point units.
    """
    for k, f in fits.items():
        if not f.converged:
            raise NumericalError(f"report_table: fit {k} did not converge")
    order: list[tuple[str, str]] = []
    for f in fits.values():
        for item in _row_order(f.columns):
            if item not in order:
                order.append(item)
    block_rank = {"Temperature": 0, "Precipitation": 1, "Interactions": 2, "Others": 3}
    order.sort(key=lambda bt: block_rank[bt[0]])
    rows = []
    for block, term in order:
        est, se_row = {"block": block, "term": term, "kind": "estimate"}, {"block": block, "term": term, "kind": "se"}
        for model, f in fits.items():
            if term in f.columns:
                j = f.columns.index(term)
                tab = coef_table(f, vcovs[model], reporting_units=True).iloc[j]
                est[model] = f"{tab['estimate']:.4g}{tab['stars']}"
                se_row[model] = f"({tab['se']:.4g})"
            else:
                est[model] = se_row[model] = ""
        rows += [est, se_row]
    for crit in ("aic", "bic"):
        r = {"block": "Model fit", "term": crit.upper(), "kind": "criterion"}
        for model, f in fits.items():
            r[model] = f"{getattr(f, crit):.2f}"
        rows.append(r)
    return pd.DataFrame(rows, columns=["block", "term", "kind", *fits])


def report_records(fits: dict[str, FitResult], vcovs: dict[str, RobustVcov]) -> list[dict]:
    """Machine-readable counterpart of ``report_table`` (full precision)."""
    out = []
    for model, f in fits.items():
        tab = coef_table(f, vcovs[model], reporting_units=True)
        out.append({"model": model, "precip_units": "percentage points", "aic": f.aic, "bic": f.bic, "loglik_ml": f.loglik_ml,
                    "loglik_reml": f.loglik_reml, "n": f.n, "n_params": f.n_params,
                    "theta": dict(zip(f.block_names, map(float, f.theta))),
                    "coefficients": tab.to_dict(orient="records")})
    return out
