"""Model-ready variables from cleaned inputs.

Seasonal climate aggregates and their anomalies against a baseline period,
GDP per-capita growth rates (log differences), index growth and event
indicator columns.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from panelclim import store
from panelclim.constants import LEVEL_INDICES, LOG_DIFF_INDICES, SEASON_MONTHS, SEASONS
from panelclim.errors import ConfigError, DataError

log = logging.getLogger(__name__)

MONTH_SEASON = {m: s for s, months in SEASON_MONTHS.items() for m in months}


def season_year(year, month, winter_same_year: bool = False):
    """Year a month's season is attributed to.

    December belongs to the following year's Winter unless
    ``winter_same_year`` is set.
    """
    year = np.asarray(year)
    month = np.asarray(month)
    if winter_same_year:
        return year
    return np.where(month == 12, year + 1, year)


def station_weights(meta: pd.DataFrame) -> pd.Series:
    """Population weight per station: sub-region population over the provincial total."""
    pop = meta["subregion_population"]
    if pop.isna().any():
        missing = meta.loc[pop.isna(), "station_id"].head(10).tolist()
        raise DataError(f"population weighting needs subregion_population; missing for {missing}")
    total = pop.groupby(meta["province"]).transform("sum")
    if (total <= 0).any():
        raise DataError("population weighting: a province has zero total population")
    return pd.Series((pop / total).to_numpy(), index=meta["station_id"].to_numpy(), name="weight")


def seasonalize(
    records: pd.DataFrame,
    retained_meta: pd.DataFrame,
    weights: pd.Series | None = None,
    winter_same_year: bool = False,
) -> pd.DataFrame:
    """Seasonal mean temperature and precipitation per province and year.

    For each month the provincial value is the (weighted) mean over retained
    stations reporting that month; the seasonal value is the mean of its
    three monthly values. A cell lacking any of its three months is left
    missing. Station weights, when given, are renormalized over the stations
    reporting in each month.

    Returns columns ``province, season, year, mean_temp, mean_precip``.
    """
    rec = records[records["station_id"].isin(retained_meta["station_id"])].copy()
    if rec.empty:
        raise DataError("seasonalize: no records for retained stations")
    rec["season"] = rec["month"].map(MONTH_SEASON)
    rec["syear"] = season_year(rec["year"], rec["month"], winter_same_year)
    rec["w"] = 1.0 if weights is None else rec["station_id"].map(weights).astype(float)
    if rec["w"].isna().any():
        raise DataError("seasonalize: station without a weight")

    keys = ["province", "season", "syear", "month"]
    monthly = {}
    for var in ("mean_temp", "total_precip"):
        present = rec[rec[var].notna()]
        if weights is None:
            monthly[var] = present.groupby(keys)[var].mean()
        else:
            num = (present[var] * present["w"]).groupby([present[k] for k in keys]).sum()
            den = present["w"].groupby([present[k] for k in keys]).sum()
            monthly[var] = num / den
    m = pd.DataFrame(monthly)

    grouped = m.groupby(level=["province", "season", "syear"])
    seasonal = grouped.mean()
    complete = grouped.count()
    for var in ("mean_temp", "total_precip"):
        seasonal.loc[complete[var] < 3, var] = np.nan

    seasonal = seasonal.reset_index().rename(
        columns={"syear": "year", "total_precip": "mean_precip"}
    )
    lo, hi = int(rec["syear"].min()), int(rec["year"].max())
    seasonal = seasonal[(seasonal["year"] >= lo) & (seasonal["year"] <= hi)]

    provinces = sorted(retained_meta["province"].unique())
    full = pd.MultiIndex.from_product(
        [provinces, SEASONS, range(lo, hi + 1)], names=["province", "season", "year"]
    )
    seasonal = seasonal.set_index(["province", "season", "year"]).reindex(full)
    empty = seasonal.groupby(level=["province", "season"]).count()
    dead = empty[(empty["mean_temp"] == 0) & (empty["mean_precip"] == 0)]
    if len(dead):
        raise DataError(f"seasonalize: no contributing stations for {list(dead.index)[:10]}")
    n_missing = int(seasonal.isna().any(axis=1).sum())
    if n_missing:
        log.warning("seasonalize: %d province-season-year cells incomplete (left missing)", n_missing)
    return seasonal.reset_index()[["province", "season", "year", "mean_temp", "mean_precip"]]


def _baseline_means(sc: pd.DataFrame, var: str, baseline: tuple[int, int]) -> pd.Series:
    lo, hi = baseline
    if lo > hi:
        raise ConfigError(f"empty baseline {baseline}")
    base = sc[(sc["year"] >= lo) & (sc["year"] <= hi)]
    need = hi - lo + 1
    counts = base.groupby(["province", "season"])[var].count()
    cells = sc.groupby(["province", "season"]).size().index
    counts = counts.reindex(cells, fill_value=0)
    short = counts[counts < need]
    if len(short):
        raise DataError(
            f"baseline {lo}-{hi} incomplete for {var} in {list(short.index)[:10]} "
            "(Winter needs the preceding December unless winter_same_year is set)"
        )
    return base.groupby(["province", "season"])[var].mean()


def temp_anomaly(sc: pd.DataFrame, baseline: tuple[int, int] = (1998, 2017)) -> pd.DataFrame:
    """Seasonal temperature minus its baseline-period mean (degrees C)."""
    mean = _baseline_means(sc, "mean_temp", baseline)
    ref = sc.join(mean.rename("ref"), on=["province", "season"])
    return ref.assign(temp_anomaly=ref["mean_temp"] - ref["ref"])[
        ["province", "season", "year", "temp_anomaly"]
    ]


def precip_anomaly(sc: pd.DataFrame, baseline: tuple[int, int] = (1998, 2017)) -> pd.DataFrame:
    """Seasonal precipitation as percent deviation from its baseline-period mean."""
    mean = _baseline_means(sc, "mean_precip", baseline)
    zero = mean[mean <= 0]
    if len(zero):
        raise DataError(f"precip_anomaly: nonpositive baseline mean for {list(zero.index)}")
    ref = sc.join(mean.rename("ref"), on=["province", "season"])
    return ref.assign(precip_anomaly=(ref["mean_precip"] - ref["ref"]) / ref["ref"] * 100.0)[
        ["province", "season", "year", "precip_anomaly"]
    ]


def anomalies(sc: pd.DataFrame, baseline=(1998, 2017), weighting: str = "unweighted") -> pd.DataFrame:
    t = temp_anomaly(sc, baseline)
    p = precip_anomaly(sc, baseline)
    out = t.merge(p, on=["province", "season", "year"])
    out["weighting"] = weighting
    return out.sort_values(["province", "season", "year"]).reset_index(drop=True)


def baseline_climate(sc: pd.DataFrame, baseline=(1998, 2017)) -> pd.DataFrame:
    """Baseline-period seasonal means (absolute levels) per province and season."""
    t = _baseline_means(sc, "mean_temp", baseline)
    p = _baseline_means(sc, "mean_precip", baseline)
    return pd.concat([t, p], axis=1).reset_index()


def wide_anomalies(anom: pd.DataFrame) -> pd.DataFrame:
    """Pivot to one row per (province, year) with ``T_<season>`` and ``P_<season>`` columns.

    Precipitation stays in percent here; design matrices divide by 100.
    """
    t = anom.pivot(index=["province", "year"], columns="season", values="temp_anomaly")
    p = anom.pivot(index=["province", "year"], columns="season", values="precip_anomaly")
    t.columns = [f"T_{s}" for s in t.columns]
    p.columns = [f"P_{s}" for s in p.columns]
    out = pd.concat([t, p], axis=1).reset_index()
    cols = ["province", "year"] + [f"T_{s}" for s in SEASONS] + [f"P_{s}" for s in SEASONS]
    return out[cols]


def pcgr(econ: pd.DataFrame) -> pd.DataFrame:
    """Log difference of GDP per capita between consecutive years."""
    y = econ["gdp_chained"] / econ["population"]
    if not (y > 0).all() or not np.isfinite(y).all():
        raise DataError("pcgr: GDP per capita must be positive and finite")
    df = econ.assign(logy=np.log(y)).sort_values(["province", "sector", "year"])
    g = df.groupby(["province", "sector"], sort=False)
    prev_year = g["year"].shift(1)
    growth = df["logy"] - g["logy"].shift(1)
    ok = prev_year.notna()
    if (ok & (df["year"] - prev_year != 1)).any():
        raise DataError("pcgr: non-consecutive years")
    out = df.loc[ok, ["province", "sector", "year"]].assign(pcgr=growth[ok])
    return out.reset_index(drop=True)


def index_growth(series: pd.DataFrame) -> pd.DataFrame:
    """Log differences for world GDP and commodity indices; rates stay as levels."""
    parts = []
    for (name, prov), g in series.groupby(["name", "province"], sort=True):
        g = g.sort_values("year")
        if name in LOG_DIFF_INDICES:
            if (g["value"] <= 0).any():
                raise DataError(f"index_growth: nonpositive value in {name}")
            if (np.diff(g["year"].to_numpy()) != 1).any():
                raise DataError(f"index_growth: non-consecutive years in {name}")
            v = np.log(g["value"].to_numpy())
            parts.append(pd.DataFrame({"name": name, "province": prov,
                                       "year": g["year"].to_numpy()[1:], "value": np.diff(v)}))
        elif name in LEVEL_INDICES:
            parts.append(g[["name", "province", "year", "value"]])
        else:
            raise DataError(f"index_growth: unknown series {name}")
    return pd.concat(parts, ignore_index=True)


def event_matrix(events: pd.DataFrame, provinces, years) -> pd.DataFrame:
    """One 0/1 column ``ev_<id>`` per event; 1 iff the province is affected in the event year."""
    idx = pd.MultiIndex.from_product([list(provinces), list(years)], names=["province", "year"])
    out = pd.DataFrame(index=idx)
    prov_arr = idx.get_level_values("province")
    year_arr = idx.get_level_values("year")
    for r in events.itertuples():
        affected = set(r.provinces.split(";"))
        out[f"ev_{int(r.event_id)}"] = (prov_arr.isin(affected) & (year_arr == r.year)).astype(np.int8)
    return out.reset_index()


def build_features(
    store_dir,
    baseline: tuple[int, int] = (1998, 2017),
    weighting: str = "unweighted",
    winter_same_year: bool = False,
    out=None,
) -> dict:
    """Compute every feature table from an ingested store and write it back."""
    if weighting not in ("unweighted", "population"):
        raise ConfigError(f"weighting must be unweighted or population, got {weighting!r}")
    src = Path(store_dir)
    out = Path(out or src)
    stations = store.read_table(src / "stations.csv", dtype={"station_id": str, "subregion_id": str})
    meta = store.read_table(src / "station_meta.csv", dtype={"station_id": str, "subregion_id": str})
    retained = meta[meta["retained"].astype(bool)]
    weights = station_weights(retained) if weighting == "population" else None
    sc = seasonalize(stations, retained, weights, winter_same_year)
    anom = anomalies(sc, baseline, weighting)
    base = baseline_climate(sc, baseline)
    growth = pcgr(store.read_table(src / "econ.csv"))
    idx = index_growth(store.read_table(src / "indices.csv", keep_default_na=False,
                                        na_values={"value": [""]}))
    tables = {"seasonal": sc, "anomalies": anom, "baseline_climate": base,
              "growth": growth, "index_growth": idx}
    entries = {}
    for name, df in tables.items():
        digest = store.write_table(df, out / f"{name}.csv")
        entries[name] = {"file": f"{name}.csv", "rows": len(df), "sha256": digest}
    meta_info = {
        "baseline": list(baseline),
        "weighting": weighting,
        "winter_convention": "same-year" if winter_same_year else "december-of-previous-year",
    }
    store.update_manifest(out, "features", entries, meta_info)
    return entries
