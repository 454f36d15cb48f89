"""Parse, validate and clean raw inputs.

Every loader reads delimited text with one header row. A schema map
``{canonical_field: source_column}`` binds heterogeneous source layouts to
the canonical field names used below. Loaders return pandas DataFrames with
canonical columns; row-level problems are collected into a ``LoadReport``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from panelclim import store
from panelclim.constants import (
    HORIZONS,
    INDEX_NAMES,
    PROVINCES,
    SEASONS,
    SECTORS,
    TOTAL,
    normalize_scenario,
)
from panelclim.errors import ConfigError, DataError

log = logging.getLogger(__name__)

MISSING_TOKENS = {"", "NA", "na", "NaN", "nan"}

STATION_FIELDS = ("station_id", "province", "latitude", "longitude", "year", "month")
STATION_OPTIONAL = ("mean_temp", "total_precip", "subregion_id", "subregion_population")
META_COLUMNS = ("station_id", "province", "latitude", "longitude", "subregion_id", "subregion_population")
RECORD_COLUMNS = ("station_id", "province", "year", "month", "mean_temp", "total_precip")

ECON_FIELDS = ("province", "year", "sector", "gdp_chained", "population")
INDEX_FIELDS = ("name", "province", "year", "value")
EVENT_FIELDS = ("event_id", "label", "year", "month", "provinces")
RCP_FIELDS = ("scenario", "province", "season", "horizon", "temp_delta", "precip_delta")

MAX_INVALID_SHARE = 0.5


@dataclass
class LoadReport:
    table: str
    n_input: int = 0
    n_retained: int = 0
    drops: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def drop(self, reason: str, n: int) -> None:
        if n:
            self.drops[reason] = self.drops.get(reason, 0) + int(n)

    @property
    def n_dropped(self) -> int:
        return sum(self.drops.values())

    def as_dict(self) -> dict:
        return {
            "rows_in": self.n_input,
            "rows": self.n_retained,
            "drops": dict(sorted(self.drops.items())),
            "errors_sample": self.errors[:20],
        }


def _read_raw(path, schema: dict | None, required, optional=(), delimiter=",") -> pd.DataFrame:
    path = Path(path)
    try:
        raw = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {path}: file not found") from exc
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    schema = schema or {}
    rename = {src: canon for canon, src in schema.items() if src != canon}
    raw = raw.rename(columns=rename)
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise DataError(f"{path.name}: missing required columns {missing}")
    keep = [c for c in (*required, *optional) if c in raw.columns]
    df = raw[keep].copy()
    for c in keep:
        df[c] = df[c].str.strip()
    return df


def _numeric(col: pd.Series) -> tuple[pd.Series, pd.Series, pd.Series]:
    """Return (values, is_missing, is_bad) for a string column."""
    is_missing = col.isin(MISSING_TOKENS)
    values = pd.to_numeric(col.where(~is_missing), errors="coerce")
    is_bad = values.isna() & ~is_missing
    return values.astype(float), is_missing, is_bad


def _integer(col: pd.Series) -> tuple[pd.Series, pd.Series]:
    values = pd.to_numeric(col, errors="coerce")
    bad = values.isna() | (values != np.round(values))
    return values.fillna(-1).astype(np.int64), bad


def _fail_if_mostly_invalid(report: LoadReport, n_invalid: int, path) -> None:
    if report.n_input and n_invalid > MAX_INVALID_SHARE * report.n_input:
        sample = "; ".join(report.errors[:5])
        raise DataError(
            f"{Path(path).name}: {n_invalid} of {report.n_input} rows invalid (> 50%): {sample}"
        )


# ---------------------------------------------------------------------------
# stations


def load_stations(path, schema: dict | None = None, delimiter: str = ","):
    """Load station-month weather records.

    Returns ``(records, meta, report)``. ``meta`` has one row per station id
    (first occurrence wins). Rows with an unknown province or non-numeric
    fields are row-level errors; rows with missing or out-of-range
    coordinates are dropped. Rows that disagree with the retained metadata
    of their station id, and repeated (station, year, month) rows, are
    dropped as duplicates.
    """
    df = _read_raw(path, schema, STATION_FIELDS, STATION_OPTIONAL, delimiter)
    report = LoadReport("stations", n_input=len(df))
    for c in ("mean_temp", "total_precip", "subregion_id", "subregion_population"):
        if c not in df.columns:
            df[c] = ""

    invalid = pd.Series(False, index=df.index)

    def flag(mask: pd.Series, msg: str) -> None:
        nonlocal invalid
        new = mask & ~invalid
        for i in df.index[new][:5]:
            report.errors.append(f"row {i + 2}: {msg}")
        invalid |= mask

    flag(~df["province"].isin(PROVINCES), "unknown province code")
    lat, lat_missing, lat_bad = _numeric(df["latitude"])
    lon, lon_missing, lon_bad = _numeric(df["longitude"])
    flag(lat_bad | lon_bad, "non-numeric coordinate")
    year, year_bad = _integer(df["year"])
    month, month_bad = _integer(df["month"])
    flag(year_bad | month_bad | ~month.between(1, 12), "bad year/month")
    temp, _, temp_bad = _numeric(df["mean_temp"])
    prec, _, prec_bad = _numeric(df["total_precip"])
    flag(temp_bad | prec_bad, "non-numeric weather value")
    pop, _, pop_bad = _numeric(df["subregion_population"])
    flag(pop_bad | (pop < 0), "bad subregion population")

    n_invalid = int(invalid.sum())
    report.drop("invalid", n_invalid)
    _fail_if_mostly_invalid(report, n_invalid, path)

    coords_bad = ~invalid & (
        lat_missing | lon_missing | ~lat.between(-90, 90) | ~lon.between(-180, 180)
    )
    if coords_bad.any():
        log.info("stations: dropping %d rows with missing/out-of-range coordinates", int(coords_bad.sum()))
    report.drop("coordinates", int(coords_bad.sum()))

    ok = ~invalid & ~coords_bad
    clean = pd.DataFrame(
        {
            "station_id": df["station_id"],
            "province": df["province"],
            "latitude": lat,
            "longitude": lon,
            "year": year,
            "month": month,
            "mean_temp": temp,
            "total_precip": prec,
            "subregion_id": df["subregion_id"].where(~df["subregion_id"].isin(MISSING_TOKENS)),
            "subregion_population": pop,
        }
    )[ok]

    meta = clean.drop_duplicates("station_id", keep="first")[list(META_COLUMNS)]
    ref = clean[["station_id"]].merge(meta, on="station_id", how="left")
    ref.index = clean.index
    same = (
        (ref["province"] == clean["province"])
        & np.isclose(ref["latitude"], clean["latitude"], rtol=0, atol=0)
        & np.isclose(ref["longitude"], clean["longitude"], rtol=0, atol=0)
    )
    report.drop("duplicate_station", int((~same).sum()))
    clean = clean[same]
    dup_rec = clean.duplicated(["station_id", "year", "month"], keep="first")
    report.drop("duplicate_record", int(dup_rec.sum()))
    clean = clean[~dup_rec]

    records = clean[list(RECORD_COLUMNS)].reset_index(drop=True)
    meta = meta.reset_index(drop=True)
    report.n_retained = len(records)
    return records, meta, report


def station_frame(records: pd.DataFrame, meta: pd.DataFrame) -> pd.DataFrame:
    """Join records with metadata back into the raw station-month layout."""
    out = records.merge(meta.drop(columns="province"), on="station_id", how="left")
    cols = ["station_id", "province", "latitude", "longitude", "year", "month",
            "mean_temp", "total_precip", "subregion_id", "subregion_population"]
    return out[cols]


def coverage_filter(
    records: pd.DataFrame,
    meta: pd.DataFrame,
    period: tuple[int, int],
    threshold: Fraction | float = Fraction(9, 10),
) -> pd.DataFrame:
    """Keep stations with enough complete months on both variables.

    Per province, each station's count of months in ``period`` with a
    present temperature (and separately precipitation) is compared with the
    provincial maximum; a station is kept when both counts reach
    ``threshold`` times the respective maximum. Comparison is exact
    rational arithmetic on integer counts.
    """
    lo, hi = period
    if lo > hi:
        raise ConfigError(f"empty coverage period {period}")
    thr = Fraction(threshold).limit_denominator(10**9)
    in_period = records[(records["year"] >= lo) & (records["year"] <= hi)]
    counts = in_period.groupby("station_id").agg(
        n_temp=("mean_temp", "count"), n_prec=("total_precip", "count")
    )
    m = meta.set_index("station_id").join(counts).fillna({"n_temp": 0, "n_prec": 0})
    m[["n_temp", "n_prec"]] = m[["n_temp", "n_prec"]].astype(int)
    max_t = m.groupby("province")["n_temp"].transform("max")
    max_p = m.groupby("province")["n_prec"].transform("max")
    keep = (
        (m["n_temp"] * thr.denominator >= thr.numerator * max_t)
        & (m["n_prec"] * thr.denominator >= thr.numerator * max_p)
        & (max_t > 0)
        & (max_p > 0)
    )
    retained = m[keep]
    empty = sorted(set(m["province"]) - set(retained["province"]))
    if empty:
        diag = {
            p: {"stations": int((m["province"] == p).sum()),
                "max_temp_months": int(m.loc[m["province"] == p, "n_temp"].max()),
                "max_precip_months": int(m.loc[m["province"] == p, "n_prec"].max())}
            for p in empty
        }
        raise DataError(f"coverage filter retained no stations for {empty}: {diag}")
    return retained.reset_index()[list(META_COLUMNS) + ["n_temp", "n_prec"]]


# ---------------------------------------------------------------------------
# economic tables


def _check_unique(df: pd.DataFrame, key: list[str], what: str) -> None:
    dup = df[df.duplicated(key, keep=False)]
    if len(dup):
        keys = dup[key].drop_duplicates().head(10).to_dict("records")
        raise DataError(f"{what}: duplicate keys {keys}")


def _check_years(df: pd.DataFrame, by: list[str], what: str) -> None:
    gaps = []
    for k, g in df.groupby(by, dropna=False):
        yrs = np.sort(g["year"].to_numpy())
        full = np.arange(yrs[0], yrs[-1] + 1)
        if len(yrs) != len(full):
            gaps.append((k, sorted(set(full) - set(yrs))))
    if gaps:
        raise DataError(f"{what}: missing years {gaps[:10]}")


def load_econ(path, schema: dict | None = None, delimiter: str = ","):
    df = _read_raw(path, schema, ECON_FIELDS, delimiter=delimiter)
    bad_prov = ~df["province"].isin(PROVINCES)
    if bad_prov.any():
        raise DataError(f"econ: unknown provinces {sorted(set(df.loc[bad_prov, 'province']))}")
    bad_sector = ~df["sector"].isin((*SECTORS, TOTAL))
    if bad_sector.any():
        raise DataError(f"econ: unknown sectors {sorted(set(df.loc[bad_sector, 'sector']))}")
    year, year_bad = _integer(df["year"])
    gdp, _, gdp_bad = _numeric(df["gdp_chained"])
    pop, _, pop_bad = _numeric(df["population"])
    if year_bad.any() or gdp_bad.any() or pop_bad.any():
        raise DataError("econ: non-numeric year, gdp_chained or population")
    out = pd.DataFrame({"province": df["province"], "year": year, "sector": df["sector"],
                        "gdp_chained": gdp, "population": pop})
    if not ((out["gdp_chained"] > 0) & (out["population"] > 0)).all():
        raise DataError("econ: gdp_chained and population must be positive")
    _check_unique(out, ["province", "year", "sector"], "econ")
    _check_years(out, ["province", "sector"], "econ")
    out = out.sort_values(["sector", "province", "year"]).reset_index(drop=True)
    return out, LoadReport("econ", len(df), len(out))


def load_indices(path, schema: dict | None = None, delimiter: str = ","):
    df = _read_raw(path, schema, ("name", "year", "value"), ("province",), delimiter)
    if "province" not in df.columns:
        df["province"] = ""
    unknown = ~df["name"].isin(INDEX_NAMES)
    if unknown.any():
        raise DataError(f"indices: unknown series {sorted(set(df.loc[unknown, 'name']))}")
    prov = df["province"].replace(list(MISSING_TOKENS), "")
    need = df["name"] == "unemployment"
    if (need & ~prov.isin(PROVINCES)).any():
        raise DataError("indices: unemployment rows need a known province")
    if (~need & (prov != "")).any():
        raise DataError("indices: only unemployment is provincial")
    year, year_bad = _integer(df["year"])
    val, miss, bad = _numeric(df["value"])
    if year_bad.any() or bad.any() or miss.any() or not np.isfinite(val).all():
        raise DataError("indices: year and value must be finite numbers")
    out = pd.DataFrame({"name": df["name"], "province": prov, "year": year, "value": val})
    _check_unique(out, ["name", "province", "year"], "indices")
    _check_years(out, ["name", "province"], "indices")
    out = out.sort_values(["name", "province", "year"]).reset_index(drop=True)
    return out, LoadReport("indices", len(df), len(out))


def _expand_provinces(text: str) -> tuple[str, ...]:
    parts = [p.strip() for p in text.replace(",", ";").split(";") if p.strip()]
    if any(p.lower() == "all" for p in parts):
        return PROVINCES
    return tuple(parts)


def load_events(path=None, schema: dict | None = None, delimiter: str = ","):
    """Load the event list; ``path=None`` reads the bundled Appendix A table."""
    if path is None:
        path = resources.files("panelclim") / "data" / "events_appendix_a.csv"
    df = _read_raw(path, schema, EVENT_FIELDS, delimiter=delimiter)
    ids, id_bad = _integer(df["event_id"])
    year, year_bad = _integer(df["year"])
    month, month_bad = _integer(df["month"])
    if id_bad.any() or year_bad.any() or month_bad.any() or (ids < 1).any():
        raise DataError("events: event_id, year and month must be integers")
    if not month.between(1, 12).all():
        raise DataError("events: month out of range")
    provs = df["provinces"].map(_expand_provinces)
    for eid, ps in zip(ids, provs):
        if not ps:
            raise DataError(f"events: event {eid} affects no province")
        unknown = set(ps) - set(PROVINCES)
        if unknown:
            raise DataError(f"events: event {eid} has unknown provinces {sorted(unknown)}")
    out = pd.DataFrame({"event_id": ids, "label": df["label"], "year": year, "month": month,
                        "provinces": provs.map(lambda ps: ";".join(ps))})
    _check_unique(out, ["event_id"], "events")
    out = out.sort_values("event_id").reset_index(drop=True)
    return out, LoadReport("events", len(df), len(out))


def event_provinces(events: pd.DataFrame) -> dict[int, tuple[str, ...]]:
    return {int(r.event_id): tuple(r.provinces.split(";")) for r in events.itertuples()}


def load_rcp(path, schema: dict | None = None, delimiter: str = ","):
    df = _read_raw(path, schema, RCP_FIELDS, delimiter=delimiter)
    try:
        scen = df["scenario"].map(normalize_scenario)
    except ValueError as exc:
        raise DataError(f"rcp: {exc}") from exc
    if not df["province"].isin(PROVINCES).all():
        raise DataError("rcp: unknown province")
    if not df["season"].isin(SEASONS).all():
        raise DataError("rcp: unknown season")
    horizon = df["horizon"].str.lower()
    if not horizon.isin(HORIZONS).all():
        raise DataError(f"rcp: horizon must be one of {HORIZONS}")
    td, tm, tb = _numeric(df["temp_delta"])
    pdl, pm, pb = _numeric(df["precip_delta"])
    if (tm | tb | pm | pb).any():
        raise DataError("rcp: deltas must be numeric")
    out = pd.DataFrame({"scenario": scen, "province": df["province"], "season": df["season"],
                        "horizon": horizon, "temp_delta": td, "precip_delta": pdl})
    _check_unique(out, ["scenario", "province", "season", "horizon"], "rcp")
    cells = out.groupby(["scenario", "province", "season"])["horizon"].apply(set)
    incomplete = [k for k, hs in cells.items() if hs != set(HORIZONS)]
    if incomplete:
        raise DataError(f"rcp: both horizons required, incomplete cells {incomplete[:10]}")
    out = out.sort_values(["scenario", "province", "season", "horizon"]).reset_index(drop=True)
    return out, LoadReport("rcp", len(df), len(out))


# ---------------------------------------------------------------------------
# store


def ingest_to_store(
    out,
    stations,
    econ,
    indices,
    rcp,
    events=None,
    schema: dict | None = None,
    period: tuple[int, int] = (1998, 2017),
    threshold: Fraction | float = Fraction(9, 10),
) -> dict:
    """Load, validate and clean every input and write the normalized store."""
    schema = schema or {}
    delim = schema.get("delimiter", ",")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    records, meta, srep = load_stations(stations, schema.get("stations"), delim)
    retained = coverage_filter(records, meta, period, threshold)
    econ_df, erep = load_econ(econ, schema.get("econ"), delim)
    idx_df, irep = load_indices(indices, schema.get("indices"), delim)
    ev_df, evrep = load_events(events, schema.get("events"), delim)
    rcp_df, rrep = load_rcp(rcp, schema.get("rcp"), delim)

    meta = meta.assign(retained=meta["station_id"].isin(retained["station_id"]))
    tables = {
        "stations": (station_frame(records, meta.drop(columns="retained")), srep),
        "station_meta": (meta, None),
        "econ": (econ_df, erep),
        "indices": (idx_df, irep),
        "events": (ev_df, evrep),
        "rcp": (rcp_df, rrep),
    }
    entries = {}
    for name, (df, rep) in tables.items():
        digest = store.write_table(df, out / f"{name}.csv")
        entry = {"file": f"{name}.csv", "rows": len(df), "sha256": digest}
        if rep is not None:
            entry.update(rep.as_dict())
        entries[name] = entry
    per_prov = meta.groupby("province")["retained"].agg(["size", "sum"])
    meta_info = {
        "coverage_period": list(period),
        "coverage_threshold": str(Fraction(threshold).limit_denominator(10**9)),
        "stations_before_after": {p: [int(r["size"]), int(r["sum"])] for p, r in per_prov.iterrows()},
    }
    store.update_manifest(out, "ingest", entries, meta_info)
    return entries
