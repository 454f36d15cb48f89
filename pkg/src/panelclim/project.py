"""Scenario climate paths and compounded impacts on GDP per capita.

Future seasonal levels are interpolated linearly between anchor years set by
the published RCP deltas; their anomalies against the historical baseline
feed the fitted climate terms. The yearly difference between the fitted
climate contribution under the path and under mean historical climate is
summed and exponentiated into a cumulative percentage change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from panelclim import store
from panelclim.constants import BASELINE, SEASONS, normalize_scenario
from panelclim.errors import ConfigError, DataError
from panelclim.estimate import FitResult
from panelclim.panel import climate_columns, climate_design, resolve_spec

REFERENCE_END = 2014
NEAR_END, MID_END = 2040, 2060
# window midpoints: reference 1995-2014, near 2021-2040, mid 2040-2060
MID_ANCHORS = (2004.5, 2030.5, 2050.0)
FIRST_YEAR, HORIZON = 2018, 2050


@dataclass(frozen=True)
class Anchors:
    """Anchor years of the piecewise-linear delta path and the join year."""

    t0: float
    t1: float
    t2: float

    @property
    def join(self) -> float:
        return self.t1


def anchors(kind: str = "end") -> Anchors:
    if kind == "end":
        return Anchors(REFERENCE_END, NEAR_END, MID_END)
    if kind == "mid":
        return Anchors(*MID_ANCHORS)
    raise ConfigError(f"anchor must be 'end' or 'mid', got {kind!r}")


def delta_segments(year, near: float, mid: float, a: Anchors, side: str = "auto"):
    """Delta at ``year`` on the path 0 -> near -> mid through the anchors.

    ``side`` picks the segment explicitly ("left" or "right") so the join
    can be evaluated from both sides.
    """
    year = np.asarray(year, dtype=float)
    left = near * (year - a.t0) / (a.t1 - a.t0)
    right = near + (mid - near) * (year - a.t1) / (a.t2 - a.t1)
    if side == "left":
        return left
    if side == "right":
        return right
    return np.where(year <= a.t1, left, right)


def _cells(rcp: pd.DataFrame, scenario: str) -> pd.DataFrame:
    sc = normalize_scenario(scenario)
    sub = rcp[rcp["scenario"] == sc]
    if sub.empty:
        raise DataError(f"no RCP deltas for scenario {sc}")
    wide = sub.pivot_table(index=["province", "season"], columns="horizon",
                           values=["temp_delta", "precip_delta"], aggfunc="first")
    if wide.isna().any().any() or {"near", "mid"} - set(wide.columns.get_level_values(1)):
        raise DataError(f"scenario {sc}: both horizons required in every cell")
    wide.columns = [f"{v}_{h}" for v, h in wide.columns]
    return wide.reset_index()


def extrapolate_climate(
    rcp: pd.DataFrame,
    baseline_climate: pd.DataFrame,
    scenario: str,
    anchor: str = "end",
    years=range(FIRST_YEAR, HORIZON + 1),
    anchor_level: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Predicted seasonal anomalies per province, season and year.

    The absolute level path starts at the anchor level (by default the
    baseline-period seasonal mean), reaches level + near delta at the first
    anchor and level + mid delta at the second; precipitation deltas scale
    the level multiplicatively. Anomalies are then taken against the
    baseline-period mean: additive for temperature, percent for
    precipitation.
    """
    a = anchors(anchor)
    cells = _cells(rcp, scenario)
    base = baseline_climate.set_index(["province", "season"])
    level = base if anchor_level is None else anchor_level.set_index(["province", "season"])
    years = np.asarray(list(years), dtype=int)
    rows = []
    for c in cells.itertuples(index=False):
        key = (c.province, c.season)
        if key not in base.index or key not in level.index:
            raise DataError(f"no baseline climate for {key}")
        t_mean, p_mean = float(base.at[key, "mean_temp"]), float(base.at[key, "mean_precip"])
        t0, p0 = float(level.at[key, "mean_temp"]), float(level.at[key, "mean_precip"])
        if p_mean <= 0:
            raise DataError(f"nonpositive baseline precipitation for {key}")
        t_path = t0 + delta_segments(years, c.temp_delta_near, c.temp_delta_mid, a)
        p_path = p0 * (1.0 + delta_segments(years, c.precip_delta_near, c.precip_delta_mid, a) / 100.0)
        rows.append(pd.DataFrame({
            "scenario": normalize_scenario(scenario), "province": c.province, "season": c.season,
            "year": years, "temp_pred": t_path, "precip_pred": p_path,
            "temp_anomaly_pred": t_path - t_mean,
            "precip_anomaly_pred": (p_path - p_mean) / p_mean * 100.0,
        }))
    out = pd.concat(rows, ignore_index=True)
    return out.sort_values(["province", "season", "year"]).reset_index(drop=True)


def continuity_gap(rcp: pd.DataFrame, scenario: str, anchor: str = "end") -> float:
    """Largest jump at the segment join over all cells and both variables."""
    a = anchors(anchor)
    cells = _cells(rcp, scenario)
    gap = 0.0
    for var in ("temp_delta", "precip_delta"):
        near, mid = cells[f"{var}_near"].to_numpy(), cells[f"{var}_mid"].to_numpy()
        left = delta_segments(np.full(len(near), a.join), near, mid, a, side="left")
        right = delta_segments(np.full(len(near), a.join), near, mid, a, side="right")
        gap = max(gap, float(np.max(np.abs(left - right))))
    return gap


def path_wide(path: pd.DataFrame, province: str) -> pd.DataFrame:
    """One row per year with ``T_*`` and ``P_*`` (precip as a fraction, as in panels)."""
    sub = path[path["province"] == province]
    if sub.empty:
        raise DataError(f"scenario path has no rows for {province}")
    t = sub.pivot(index="year", columns="season", values="temp_anomaly_pred")
    p = sub.pivot(index="year", columns="season", values="precip_anomaly_pred") / 100.0
    out = pd.DataFrame(index=t.index)
    for s in SEASONS:
        out[f"T_{s}"] = t[s]
        out[f"P_{s}"] = p[s]
    return out


# ---------------------------------------------------------------------------
# impacts


def compound(d) -> np.ndarray:
    """Cumulative percentage change ``100 (exp(cumsum d) - 1)``."""
    return 100.0 * np.expm1(np.cumsum(np.asarray(d, dtype=float)))


def historical_means(panel: pd.DataFrame, spec, province: str | None = None,
                     baseline=BASELINE) -> pd.Series:
    """Mean of every climate design column (squares and interactions included) over the baseline."""
    spec = resolve_spec(spec)
    lo, hi = baseline
    rows = panel[(panel["year"] >= lo) & (panel["year"] <= hi)]
    if province is not None and (rows["province"] == province).any():
        rows = rows[rows["province"] == province]
    if rows.empty:
        raise DataError("no historical rows to average")
    return climate_design(rows, spec).mean()


def climate_coefficients(fit: FitResult, province: str | None = None) -> pd.Series:
    """Fitted climate coefficients, plus the province's random slope where one exists."""
    spec = resolve_spec(fit.spec)
    cols = climate_columns(spec)
    b = pd.Series([fit.coef(c) for c in cols], index=cols)
    if province is not None:
        for name, u in fit.blup.items():
            if not name.startswith("slope["):
                continue
            term = name[len("slope["):-1]
            labels = fit.blup_labels.get(name, [])
            key = f"{province}:{term}"
            if key in labels:
                b[term] += float(u[labels.index(key)])
    return b


def _check_projectable(fit: FitResult, year_rule: str | None) -> None:
    spec = resolve_spec(fit.spec)
    if spec.year_effect == "fixed" and year_rule != "difference":
        raise ConfigError(
            "spec has fixed year effects and no rule for future years; "
            "pass year_rule='difference' to assume equal year effects with and without climate change"
        )


def annual_differences(
    fit: FitResult,
    path: pd.DataFrame,
    province: str,
    panel: pd.DataFrame,
    horizon: int = HORIZON,
    year_rule: str | None = None,
    coefficients: pd.Series | None = None,
) -> pd.Series:
    """Yearly climate-term difference between the scenario path and mean historical climate."""
    _check_projectable(fit, year_rule)
    spec = resolve_spec(fit.spec)
    wide = path_wide(path, province)
    wide = wide[(wide.index >= FIRST_YEAR) & (wide.index <= horizon)]
    if len(wide) != horizon - FIRST_YEAR + 1:
        raise DataError(f"scenario path does not cover {FIRST_YEAR}-{horizon}")
    b = climate_coefficients(fit, province) if coefficients is None else coefficients
    pred = climate_design(wide, spec)[b.index]
    ref = historical_means(panel, spec, province)[b.index]
    return pd.Series((pred.to_numpy() - ref.to_numpy()) @ b.to_numpy(), index=wide.index, name="d")


def project_impact(
    fit: FitResult,
    path: pd.DataFrame,
    province: str,
    panel: pd.DataFrame,
    sector: str = "TOTAL",
    horizon: int = HORIZON,
    year_rule: str | None = None,
) -> pd.DataFrame:
    """Trajectory of the percentage change in GDP per capita, 2017 (= 0) to ``horizon``."""
    d = annual_differences(fit, path, province, panel, horizon, year_rule)
    years = np.arange(FIRST_YEAR - 1, horizon + 1)
    pct = np.concatenate([[0.0], compound(d.to_numpy())])
    scen = path["scenario"].iloc[0]
    return pd.DataFrame({"scenario": scen, "province": province, "sector": sector,
                         "year": years, "pct_delta_gdp": pct})


def project_all(fit, path, panel, provinces=None, sector="TOTAL", horizon=HORIZON, year_rule=None):
    provinces = provinces or sorted(path["province"].unique())
    return pd.concat([project_impact(fit, path, p, panel, sector, horizon, year_rule) for p in provinces],
                     ignore_index=True)


def pct_at(traj: pd.DataFrame, year: int) -> pd.Series:
    sub = traj[traj["year"] == year]
    return sub.set_index(["scenario", "province", "sector"])["pct_delta_gdp"]


# ---------------------------------------------------------------------------
# plot-ready exports


def plotdata(paths: pd.DataFrame, trajectories: pd.DataFrame, out, year: int = HORIZON) -> dict[str, str]:
    """Per-figure CSVs: anomalies at ``year`` by season and by province, and impact series."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    at = paths[paths["year"] == year]
    files = {}
    by_season = at.groupby(["scenario", "season"])[["temp_anomaly_pred", "precip_anomaly_pred"]].mean()
    files["anomalies_by_season"] = by_season.reset_index()
    files["anomalies_by_province"] = at[["scenario", "province", "season", "temp_anomaly_pred",
                                         "precip_anomaly_pred"]].reset_index(drop=True)
    files["trajectories"] = trajectories
    final = trajectories[trajectories["year"] == year]
    files["impacts_at_horizon"] = final.reset_index(drop=True)
    written = {}
    for name, df in files.items():
        written[name] = store.write_table(df, out / f"{name}.csv")
    return written


def closed_form_constant(d: float, n_years: int) -> float:
    """``100 (exp(n d) - 1)``: the trajectory end point for a constant yearly difference."""
    return 100.0 * math.expm1(n_years * d)
