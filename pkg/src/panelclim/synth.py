"""Synthetic panels drawn from the growth model, and brute-force oracles.

The oracles are deliberately literal: they assemble the full covariance
matrix, invert it, form hat matrices explicitly and take finite differences.
They exist so tests can check the production path against an independent
route; never use them for real fits.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from panelclim import store
from panelclim.constants import (
    CLIMATE_TERMS,
    INDEX_NAMES,
    PROVINCES,
    SCENARIOS,
    SEASON_MONTHS,
    SEASONS,
    SECTORS,
    TOTAL,
)
from panelclim.errors import ConfigError, NumericalError
from panelclim.panel import INDEX_COLUMNS, CompiledDesign, climate_design, resolve_spec


def _default_beta() -> dict[str, float]:
    return {
        "T_Spring": 0.002, "T_Summer": 0.002, "T_Fall": -0.004, "T_Winter": -0.0055,
        "P_Spring": 0.001, "P_Summer": -0.001, "P_Fall": 0.007, "P_Winter": 0.008,
    }


def _default_index_beta() -> dict[str, float]:
    return {"idx_world_gdp": 0.3, "idx_energy_index": 0.02, "idx_nonenergy_index": 0.03,
            "idx_target_rate": -0.002, "idx_unemployment": -0.002}


@dataclass
class SynthConfig:
    n_provinces: int = 10
    n_years: int = 20
    start_year: int = 1998
    # which effects exist in the generating model (preset name or inline dict)
    spec: str | dict = "m5"
    beta: dict[str, float] = field(default_factory=_default_beta)
    index_beta: dict[str, float] = field(default_factory=_default_index_beta)
    gamma_lag: float = 0.2
    intercept: float = 0.015
    province_sd: float = 0.005
    year_sd: float = 0.01
    event_sd: float = 0.0
    slope_sd: float = 0.0
    trend_sd: float = 0.0
    error_sd: float = 0.01
    temp_sd: float = 1.0
    precip_sd: float = 15.0
    # degrees C (or percent for P_*) per year, added before centering
    climate_trend: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> None:
        for name in ("province_sd", "year_sd", "event_sd", "slope_sd", "trend_sd", "error_sd",
                     "temp_sd", "precip_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.n_provinces < 2 or self.n_years < 3:
            raise ConfigError("need at least 2 provinces and 3 years")
        resolve_spec(self.spec)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def province_labels(n: int) -> list[str]:
    if n == len(PROVINCES):
        return sorted(PROVINCES)
    return [f"P{i:02d}" for i in range(1, n + 1)]


def _climate(cfg: SynthConfig, rng, provinces, years) -> pd.DataFrame:
    rows = []
    t_index = np.asarray(years) - years[0]
    for p in provinces:
        cols = {}
        for term in CLIMATE_TERMS:
            sd = cfg.temp_sd if term.startswith("T_") else cfg.precip_sd
            x = rng.normal(0.0, sd, len(years)) + cfg.climate_trend.get(term, 0.0) * t_index
            cols[term] = x - x.mean()
        rows.append(pd.DataFrame({"province": p, "year": years, **cols}))
    return pd.concat(rows, ignore_index=True)


def generate(config: SynthConfig) -> tuple[pd.DataFrame, dict]:
    """Draw a panel (precipitation as fractions) plus the generating truth."""
    cfg = config
    cfg.validate()
    spec = resolve_spec(cfg.spec)
    rng = np.random.default_rng(cfg.seed)
    provinces = province_labels(cfg.n_provinces)
    years = list(range(cfg.start_year, cfg.start_year + cfg.n_years))
    clim = _climate(cfg, rng, provinces, years)
    for s in SEASONS:
        clim[f"P_{s}"] = clim[f"P_{s}"] / 100.0

    world = rng.normal(0.03, 0.015, len(years))
    energy = rng.normal(0.0, 0.2, len(years))
    nonenergy = rng.normal(0.0, 0.1, len(years))
    rate = np.clip(2.5 + np.cumsum(rng.normal(0, 0.5, len(years))), 0.25, None)
    nat = pd.DataFrame({"year": years, "idx_world_gdp": world, "idx_energy_index": energy,
                        "idx_nonenergy_index": nonenergy, "idx_target_rate": rate})
    unemp = pd.DataFrame({
        "province": np.repeat(provinces, len(years)),
        "year": np.tile(years, len(provinces)),
        "idx_unemployment": rng.normal(7.0, 1.5, len(provinces) * len(years)),
    })
    df = clim.merge(nat, on="year").merge(unemp, on=["province", "year"])

    from panelclim.ingest import load_events

    ev_cols: list[str] = []
    if provinces == sorted(PROVINCES):
        events, _ = load_events()
        for r in events.itertuples():
            col = f"ev_{int(r.event_id)}"
            affected = set(r.provinces.split(";"))
            df[col] = (df["province"].isin(affected) & (df["year"] == r.year)).astype(np.int8)
            ev_cols.append(col)

    df = df.sort_values(["province", "year"]).reset_index(drop=True)
    prov_eff = dict(zip(provinces, rng.normal(0.0, cfg.province_sd, len(provinces))))
    year_eff = dict(zip(years, rng.normal(0.0, cfg.year_sd, len(years))))
    if spec.year_effect == "none":
        year_eff = {t: 0.0 for t in years}
    ev_eff = {c: v for c, v in zip(ev_cols, rng.normal(0.0, cfg.event_sd, len(ev_cols)))}
    if spec.include_events != "random":
        ev_eff = {c: 0.0 for c in ev_cols}
    slopes = {}
    if spec.random_slopes:
        for t in spec.slopes:
            slopes[t] = dict(zip(provinces, rng.normal(0.0, cfg.slope_sd, len(provinces))))
    trends = dict(zip(provinces, rng.normal(0.0, cfg.trend_sd, len(provinces)))) if spec.province_trends else {}

    clim_cols = climate_design(df, spec)
    beta = {c: float(cfg.beta.get(c, 0.0)) for c in clim_cols.columns}
    index_beta = {c: float(cfg.index_beta.get(c, 0.0)) if spec.include_indices else 0.0
                  for c in INDEX_COLUMNS}
    mean_part = (
        cfg.intercept
        + df["province"].map(prov_eff).to_numpy()
        + df["year"].map(year_eff).to_numpy()
        + clim_cols.to_numpy() @ np.array([beta[c] for c in clim_cols.columns])
        + df[list(INDEX_COLUMNS)].to_numpy() @ np.array([index_beta[c] for c in INDEX_COLUMNS])
    )
    for c, v in ev_eff.items():
        mean_part += v * df[c].to_numpy()
    for t, by_prov in slopes.items():
        mean_part += df["province"].map(by_prov).to_numpy() * df[t].to_numpy()
    if trends:
        mean_part += df["province"].map(trends).to_numpy() * (df["year"].to_numpy() - 1998)
    eps = rng.normal(0.0, cfg.error_sd, len(df))

    pcgr = np.empty(len(df))
    lag = np.empty(len(df))
    for p in provinces:
        idx = np.flatnonzero(df["province"].to_numpy() == p)
        prev = cfg.intercept + rng.normal(0.0, cfg.error_sd)
        for i in idx:
            lag[i] = prev
            pcgr[i] = mean_part[i] + cfg.gamma_lag * prev + eps[i]
            prev = pcgr[i]
    df.insert(2, "sector", TOTAL)
    df.insert(3, "pcgr", pcgr)
    df.insert(4, "pcgr_lag", lag)

    err2 = cfg.error_sd**2 if cfg.error_sd > 0 else np.nan
    truth = {
        "config": cfg.to_dict(),
        "spec": spec.to_dict(),
        "beta": beta,
        "index_beta": index_beta,
        "gamma_lag": cfg.gamma_lag,
        "province_effects": prov_eff,
        "year_effects": {str(k): v for k, v in year_eff.items()},
        "theta": {
            "year": cfg.year_sd**2 / err2 if spec.year_effect == "random" else None,
            "events": cfg.event_sd**2 / err2 if spec.include_events == "random" else None,
            "slopes": cfg.slope_sd**2 / err2 if spec.random_slopes else None,
        },
    }
    return df, truth


def one_way_data(n_groups: int, n_per: int, theta: float, sigma: float = 1.0, seed: int = 0):
    """Balanced one-way random-intercept data: X = intercept, one random block."""
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(n_groups), n_per)
    u = rng.normal(0.0, sigma * np.sqrt(theta), n_groups)
    y = 1.0 + u[g] + rng.normal(0.0, sigma, len(g))
    X = np.ones((len(g), 1))
    Z = (g[:, None] == np.arange(n_groups)[None, :]).astype(float)
    return X, y, Z, g


def one_way_stats(y: np.ndarray, groups: np.ndarray) -> tuple[float, float, int, int]:
    """(within SS, between SS, groups, group size) for a balanced one-way layout."""
    labels, counts = np.unique(groups, return_counts=True)
    if np.any(counts != counts[0]):
        raise ConfigError("one-way oracle needs a balanced layout")
    m, G = int(counts[0]), len(labels)
    means = np.array([y[groups == g].mean() for g in labels])
    idx = np.searchsorted(labels, groups)
    ssw = float(np.sum((y - means[idx]) ** 2))
    ssb = float(m * np.sum((means - y.mean()) ** 2))
    return ssw, ssb, G, m


def one_way_reml_loglik(y: np.ndarray, groups: np.ndarray, theta: float) -> float:
    """Restricted log-likelihood of the balanced one-way model from its eigenstructure.

    ``V = I + theta Z Z'`` has eigenvalue ``1 + m theta`` on group means and 1
    on within-group contrasts, which gives every term in closed form.
    """
    ssw, ssb, G, m = one_way_stats(y, groups)
    n = G * m
    lam = 1.0 + m * theta
    q = ssw + ssb / lam
    dof = n - 1
    return -0.5 * (G * np.log(lam) + np.log(n / lam) + dof * (1 + np.log(2 * np.pi) + np.log(q / dof)))


def one_way_anova_theta(y: np.ndarray, groups: np.ndarray) -> float:
    """ANOVA (method of moments) variance ratio, truncated at zero."""
    ssw, ssb, G, m = one_way_stats(y, groups)
    msw, msb = ssw / (G * (m - 1)), ssb / (G - 1)
    return max(0.0, (msb / msw - 1.0) / m)


# ---------------------------------------------------------------------------
# raw input files for end-to-end runs


def generate_raw(config: SynthConfig, out, stations_per_province: int = 4) -> dict:
    """Write raw station, GDP, index, event and RCP files plus a run config.

    Station values are province seasonal climate plus station noise; GDP
    levels compound the growth model evaluated on the resulting anomalies,
    so an end-to-end run sees data from a known model.
    """
    from panelclim import features, ingest

    cfg = config
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed + 7919)
    provinces = sorted(PROVINCES)
    lo = cfg.start_year - 1
    hi = cfg.start_year + cfg.n_years - 1
    base_t = {s: v for s, v in zip(SEASONS, (5.0, 17.0, 6.0, -10.0))}
    base_p = {s: v for s, v in zip(SEASONS, (200.0, 240.0, 250.0, 220.0))}

    rows = []
    for pi, p in enumerate(provinces):
        season_t = {s: rng.normal(0, cfg.temp_sd, hi - lo + 2) for s in SEASONS}
        season_p = {s: rng.normal(0, cfg.precip_sd / 100, hi - lo + 2) for s in SEASONS}
        for k in range(stations_per_province):
            sid = f"{p}{k:03d}"
            lat, lon = 44.0 + pi + 0.1 * k, -120.0 + 5 * pi + 0.1 * k
            pop = float(rng.integers(1_000, 100_000))
            for year in range(lo - 1, hi + 1):
                for month in range(1, 13):
                    s = next(s for s, ms in SEASON_MONTHS.items() if month in ms)
                    sy = year + 1 if month == 12 else year
                    j = sy - lo
                    if j < 0 or j > hi - lo + 1:
                        continue
                    trend = cfg.climate_trend.get(f"T_{s}", 0.0) * (sy - lo)
                    t = base_t[s] + trend + season_t[s][j] + rng.normal(0, 0.2)
                    pr = base_p[s] / 3 * (1 + season_p[s][j]) * np.exp(rng.normal(0, 0.02))
                    rows.append((sid, p, lat, lon, year, month, round(t, 3), round(pr, 3), f"{p}-R{k}", pop))
    st = pd.DataFrame(rows, columns=["station_id", "province", "latitude", "longitude", "year", "month",
                                     "mean_temp", "total_precip", "subregion_id", "subregion_population"])
    st = st[(st["year"] >= lo - 1) & (st["year"] <= hi)]
    st.to_csv(out / "stations.csv", index=False)

    records, meta, _ = ingest.load_stations(out / "stations.csv")
    retained = ingest.coverage_filter(records, meta, (lo, hi))
    sc = features.seasonalize(records, retained)
    anom = features.wide_anomalies(features.anomalies(sc, (cfg.start_year, hi)))

    panel_cfg = SynthConfig(**{**cfg.to_dict(), "n_provinces": 10})
    synth_panel, truth = generate(panel_cfg)
    spec = resolve_spec(cfg.spec)
    # replace the drawn climate with the station-derived anomalies, then recompute growth
    clim = anom[(anom["year"] >= cfg.start_year) & (anom["year"] <= hi)].copy()
    for s in SEASONS:
        clim[f"P_{s}"] = clim[f"P_{s}"] / 100.0
    panel = synth_panel.drop(columns=list(CLIMATE_TERMS)).merge(clim, on=["province", "year"])
    panel = panel.sort_values(["province", "year"]).reset_index(drop=True)
    clim_part = climate_design(panel, spec).to_numpy() @ np.array(
        [truth["beta"][c] for c in climate_design(panel, spec).columns])
    old_clim = climate_design(synth_panel, spec).to_numpy() @ np.array(
        [truth["beta"][c] for c in climate_design(synth_panel, spec).columns])
    shift = clim_part - old_clim
    pcgr = panel["pcgr"].to_numpy().copy()
    # propagate the climate shift through the lag dynamics
    for p in provinces:
        idx = np.flatnonzero(panel["province"].to_numpy() == p)
        carry = 0.0
        for i in idx:
            carry = cfg.gamma_lag * carry + shift[i]
            pcgr[i] += carry
    panel["pcgr"] = pcgr

    econ_rows = []
    for p in provinces:
        g = panel[panel["province"] == p].sort_values("year")
        lag0 = float(g["pcgr_lag"].iloc[0])
        y_levels = {lo - 1: 50_000.0, lo: 50_000.0 * np.exp(lag0)}
        for yr, gr in zip(g["year"], g["pcgr"]):
            y_levels[yr] = y_levels[yr - 1] * np.exp(gr)
        popn = 1_000_000 * (1 + 0.1 * provinces.index(p))
        for yr, yv in sorted(y_levels.items()):
            pop_t = popn * 1.01 ** (yr - lo)
            econ_rows.append((p, yr, TOTAL, yv * pop_t, pop_t))
            for k, sec in enumerate(SECTORS[:2]):
                share = 0.1 + 0.05 * k
                econ_rows.append((p, yr, sec, share * yv * pop_t * np.exp(rng.normal(0, 0.01) * (yr - lo)), pop_t))
    econ = pd.DataFrame(econ_rows, columns=["province", "year", "sector", "gdp_chained", "population"])
    econ.to_csv(out / "econ.csv", index=False)

    years = list(range(cfg.start_year, hi + 1))
    nat = panel.drop_duplicates("year").set_index("year")
    idx_rows = []
    for name, col in (("world_gdp", "idx_world_gdp"), ("energy_index", "idx_energy_index"),
                      ("nonenergy_index", "idx_nonenergy_index")):
        level = 100.0
        idx_rows.append((name, "", lo, level))
        for yr in years:
            level *= float(np.exp(nat.loc[yr, col]))
            idx_rows.append((name, "", yr, level))
    for yr in [lo, *years]:
        idx_rows.append(("target_rate", "", yr, float(nat.loc[yr, "idx_target_rate"]) if yr in nat.index else 3.0))
    for r in panel.itertuples():
        idx_rows.append(("unemployment", r.province, r.year, r.idx_unemployment))
    for p in provinces:
        idx_rows.append(("unemployment", p, lo, 7.0))
    pd.DataFrame(idx_rows, columns=["name", "province", "year", "value"]).to_csv(out / "indices.csv", index=False)

    ev, _ = ingest.load_events()
    ev.to_csv(out / "events.csv", index=False)

    rcp_rows = []
    for sc_i, scen in enumerate(SCENARIOS):
        for p in provinces:
            for s in SEASONS:
                warm = 1.0 + 0.4 * sc_i + (0.5 if s == "Winter" else 0.0)
                wet = (-10.0 if s == "Summer" else 5.0) * (1 + 0.5 * sc_i)
                rcp_rows.append((scen, p, s, "near", 0.6 * warm, 0.6 * wet))
                rcp_rows.append((scen, p, s, "mid", warm, wet))
    pd.DataFrame(rcp_rows, columns=["scenario", "province", "season", "horizon", "temp_delta",
                                    "precip_delta"]).to_csv(out / "rcp.csv", index=False)

    run = {
        "inputs": {"stations": "stations.csv", "econ": "econ.csv", "indices": "indices.csv",
                   "events": "events.csv", "rcp": "rcp.csv"},
        "baseline": [cfg.start_year, hi],
        "weighting": "unweighted",
        "specs": ["m1", "m2", "m3", "m4", "m5", "m6"],
        "sectors": [TOTAL],
        "scenarios": list(SCENARIOS),
        "project_spec": "m5",
        "bootstrap": {"spec": "m5", "scenario": "RCP4.5", "reps": 50, "seed": 20170101},
        "out": "run_out",
    }
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n")
    store.write_json(truth, out / "truth.json")
    return {"dir": str(out), "truth": truth}


# ---------------------------------------------------------------------------
# oracles


def dense_covariance(design: CompiledDesign, theta) -> np.ndarray:
    """Explicit ``I + sum_k theta_k Z_k Z_k'``."""
    V = np.eye(design.n)
    for t, b in zip(np.asarray(theta, dtype=float), design.blocks):
        V = V + t * b.Z @ b.Z.T
    return V


def dense_gls_oracle(design: CompiledDesign, theta):
    """GLS by explicit inversion of the covariance.

    Returns ``(beta, vcov, reml_loglik, ml_loglik)``; vcov is the model-based
    ``s2 (X' V^-1 X)^-1`` with the REML residual variance.
    """
    X, y = design.X, design.y
    n, p = X.shape
    V = dense_covariance(design, theta)
    Vi = np.linalg.inv(V)
    if not np.all(np.isfinite(Vi)):
        raise NumericalError("singular covariance")
    XtViX = X.T @ Vi @ X
    beta = np.linalg.inv(XtViX) @ (X.T @ Vi @ y)
    r = y - X @ beta
    q = float(r @ Vi @ r)
    s2 = q / (n - p)
    _, logdet_v = np.linalg.slogdet(V)
    _, logdet_x = np.linalg.slogdet(XtViX)
    reml = -0.5 * (logdet_v + logdet_x + (n - p) * np.log(2 * np.pi * s2) + q / s2)
    s2_ml = q / n
    ml = -0.5 * (logdet_v + n * np.log(2 * np.pi * s2_ml) + q / s2_ml)
    return beta, s2 * np.linalg.inv(XtViX), reml, ml


def _sym_pinv_sqrt(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    w, U = np.linalg.eigh(M)
    keep = w > rtol * max(1.0, w.max())
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / np.sqrt(w[keep])
    return (U * inv) @ U.T


def cr2_oracle(design: CompiledDesign, theta=None):
    """CR2 sandwich and Satterthwaite df from full N x N matrices.

    Whitening uses ``V^{-1/2}`` from a dense eigendecomposition of the
    working covariance at ``theta``. Returns ``(beta, vcov, df)`` with one df
    per coefficient.
    """
    X, y = design.X, design.y
    n, p = X.shape
    if theta is None or len(theta) == 0:
        W = np.eye(n)
    else:
        w, E = np.linalg.eigh(dense_covariance(design, theta))
        W = (E / np.sqrt(w)) @ E.T
    Xw, yw = W @ X, W @ y
    M = np.linalg.inv(Xw.T @ Xw)
    beta = M @ Xw.T @ yw
    H = Xw @ M @ Xw.T
    IH = np.eye(n) - H
    e = IH @ yw
    clusters = list(dict.fromkeys(design.cluster.tolist()))
    vcov = np.zeros((p, p))
    Bs = []
    for g in clusters:
        idx = np.flatnonzero(design.cluster == g)
        A = _sym_pinv_sqrt(IH[np.ix_(idx, idx)])
        B = A @ Xw[idx] @ M  # n_g x p
        s = B.T @ e[idx]
        vcov += np.outer(s, s)
        Bs.append((idx, B))
    df = np.empty(p)
    for j in range(p):
        P = np.zeros((n, len(clusters)))
        for k, (idx, B) in enumerate(Bs):
            g = np.zeros(n)
            g[idx] = B[:, j]
            P[:, k] = IH.T @ g
        Om = P.T @ P
        df[j] = np.trace(Om) ** 2 / np.sum(Om * Om)
    return beta, vcov, df


def central_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    """``(f(x + h) - f(x - h)) / 2h`` elementwise; error is O(h^2) for smooth f."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


def fd_margins_oracle(fit, panel: pd.DataFrame, variable: str, h: float = 1e-4) -> float:
    """Average central finite difference of the fitted climate surface.

    ``variable`` is a climate term; precipitation steps are in percentage
    points (the panel stores fractions).
    """
    spec = resolve_spec(fit.spec)
    scale = 0.01 if variable.startswith("P_") else 1.0
    coef = dict(zip(fit.columns, fit.beta))
    cols = list(climate_design(panel.head(1), spec).columns)
    b = np.array([coef[c] for c in cols])

    def surface(x):
        df = panel.copy()
        df[variable] = x * scale
        return climate_design(df, spec)[cols].to_numpy() @ b

    x0 = panel[variable].to_numpy(dtype=float) / scale
    return float(np.mean(central_difference(surface, x0, h)))


def index_names() -> tuple[str, ...]:
    return INDEX_NAMES
