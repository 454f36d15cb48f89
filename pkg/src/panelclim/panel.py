"""Province-year panels and declarative model specifications.

A ``ModelSpec`` names which term types enter the regression; ``compile``
turns a panel plus a spec into a response vector, a fixed-effects design,
random-effect design blocks and cluster labels.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg

from panelclim import features, store
from panelclim.constants import CLIMATE_TERMS, INDEX_NAMES, SEASONS, TREND_ORIGIN
from panelclim.errors import ConfigError, DataError

log = logging.getLogger(__name__)

INDEX_COLUMNS = tuple(f"idx_{n}" for n in INDEX_NAMES)
YEAR_EFFECTS = ("fixed", "none", "random")
EVENT_MODES = ("none", "random")


@dataclass(frozen=True)
class ModelSpec:
    year_effect: str = "fixed"
    quadratics: bool = False
    interactions: bool = False
    province_trends: bool = False
    random_slopes: bool = False
    include_indices: bool = False
    include_events: str = "none"
    climate_terms: tuple[str, ...] = CLIMATE_TERMS
    # None means every climate term gets a province random slope
    slope_terms: tuple[str, ...] | None = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "climate_terms", tuple(self.climate_terms))
        if self.slope_terms is not None:
            object.__setattr__(self, "slope_terms", tuple(self.slope_terms))
        self.validate()

    def validate(self) -> None:
        if self.year_effect not in YEAR_EFFECTS:
            raise ConfigError(f"year_effect must be one of {YEAR_EFFECTS}")
        if self.include_events not in EVENT_MODES:
            raise ConfigError(f"include_events must be one of {EVENT_MODES}")
        unknown = set(self.climate_terms) - set(CLIMATE_TERMS)
        if unknown:
            raise ConfigError(f"unknown climate terms {sorted(unknown)}")
        if self.slope_terms is not None and not set(self.slope_terms) <= set(self.climate_terms):
            raise ConfigError("slope_terms must be a subset of climate_terms")
        if self.year_effect == "fixed" and self.include_indices:
            raise ConfigError(
                "fixed year effects with economic indices: annual indices are perfectly "
                "collinear with year dummies"
            )

    @property
    def has_random(self) -> bool:
        return self.year_effect == "random" or self.include_events == "random" or self.random_slopes

    @property
    def slopes(self) -> tuple[str, ...]:
        return self.climate_terms if self.slope_terms is None else self.slope_terms

    def to_dict(self) -> dict:
        d = asdict(self)
        d["climate_terms"] = list(self.climate_terms)
        d["slope_terms"] = None if self.slope_terms is None else list(self.slope_terms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown ModelSpec fields {sorted(extra)}")
        return cls(**d)


PRESETS = {
    "m1": ModelSpec(year_effect="fixed", name="m1"),
    "m2": ModelSpec(year_effect="fixed", quadratics=True, name="m2"),
    "m3": ModelSpec(year_effect="none", include_indices=True, name="m3"),
    "m4": ModelSpec(year_effect="none", include_indices=True, include_events="random", name="m4"),
    "m5": ModelSpec(year_effect="random", include_indices=True, name="m5"),
    "m6": ModelSpec(year_effect="random", include_indices=True, include_events="random", name="m6"),
    "m1s": ModelSpec(year_effect="fixed", include_events="random", name="m1s"),
    "m2s": ModelSpec(year_effect="fixed", interactions=True, name="m2s"),
    "m3s": ModelSpec(year_effect="fixed", province_trends=True, name="m3s"),
    "m4s": ModelSpec(year_effect="fixed", random_slopes=True, name="m4s"),
    "m5s": ModelSpec(year_effect="random", include_indices=True, interactions=True, name="m5s"),
    "m6s": ModelSpec(year_effect="random", include_indices=True, province_trends=True, name="m6s"),
}


def resolve_spec(spec) -> ModelSpec:
    """Accept a ModelSpec, a preset name or a dict (inline spec)."""
    if isinstance(spec, ModelSpec):
        return spec
    if isinstance(spec, str):
        key = spec.strip().lower()
        if key not in PRESETS:
            raise ConfigError(f"unknown preset {spec!r}; choose from {sorted(PRESETS)}")
        return PRESETS[key]
    if isinstance(spec, dict):
        return ModelSpec.from_dict(spec)
    raise ConfigError(f"cannot interpret model spec {spec!r}")


# ---------------------------------------------------------------------------
# assembly


def assemble_tables(
    growth: pd.DataFrame,
    anomalies: pd.DataFrame,
    index_growth: pd.DataFrame | None,
    events: pd.DataFrame | None,
    sector: str,
    spec: ModelSpec | str = "m1",
    years: tuple[int, int] = (1998, 2017),
) -> pd.DataFrame:
    """Join growth, lagged growth, climate anomalies, indices and events.

    Precipitation anomalies arrive in percent and leave as fractions.
    Rows missing anything the spec needs are dropped (logged).
    """
    spec = resolve_spec(spec)
    g = growth[growth["sector"] == sector].sort_values(["province", "year"])
    if g.empty:
        raise DataError(f"no growth series for sector {sector!r}")
    g = g.assign(pcgr_lag=g.groupby("province")["pcgr"].shift(1))
    g.loc[g["year"] - g.groupby("province")["year"].shift(1) != 1, "pcgr_lag"] = np.nan

    wide = features.wide_anomalies(anomalies) if "season" in anomalies.columns else anomalies.copy()
    for s in SEASONS:
        wide[f"P_{s}"] = wide[f"P_{s}"] / 100.0
    df = g.merge(wide, on=["province", "year"], how="left")

    if index_growth is not None and len(index_growth):
        nat = index_growth[index_growth["name"] != "unemployment"]
        nat = nat.pivot(index="year", columns="name", values="value")
        nat.columns = [f"idx_{c}" for c in nat.columns]
        df = df.merge(nat.reset_index(), on="year", how="left")
        un = index_growth[index_growth["name"] == "unemployment"]
        if len(un):
            un = un.rename(columns={"value": "idx_unemployment"})[["province", "year", "idx_unemployment"]]
            df = df.merge(un, on=["province", "year"], how="left")
    for c in INDEX_COLUMNS:
        if c not in df.columns:
            df[c] = np.nan

    lo, hi = years
    df = df[(df["year"] >= lo) & (df["year"] <= hi)]
    if events is not None and len(events):
        ev = features.event_matrix(events, sorted(df["province"].unique()), range(lo, hi + 1))
        df = df.merge(ev, on=["province", "year"], how="left")

    needed = ["pcgr", "pcgr_lag", *spec.climate_terms]
    if spec.include_indices:
        needed += list(INDEX_COLUMNS)
    bad = df[needed].isna().any(axis=1)
    if bad.any():
        log.warning("assemble: dropping %d rows with missing regressors", int(bad.sum()))
    df = df[~bad].sort_values(["province", "year"], kind="mergesort").reset_index(drop=True)
    if df.empty:
        raise DataError("assemble: empty panel")
    df.attrs["dropped_rows"] = int(bad.sum())
    return df


def assemble(store_dir, sector: str = "TOTAL", spec="m1", years=(1998, 2017)) -> pd.DataFrame:
    src = Path(store_dir)
    growth = store.read_table(src / "growth.csv")
    anom = store.read_table(src / "anomalies.csv")
    idx = store.read_table(src / "index_growth.csv", keep_default_na=False, na_values={"value": [""]})
    events = store.read_table(src / "events.csv")
    return assemble_tables(growth, anom, idx, events, sector, spec, years)


# ---------------------------------------------------------------------------
# design compilation


@dataclass
class RandomBlock:
    name: str
    Z: np.ndarray
    labels: list[str]


@dataclass
class CompiledDesign:
    y: np.ndarray
    X: np.ndarray
    columns: list[str]
    blocks: list[RandomBlock]
    cluster: np.ndarray
    spec: ModelSpec
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def col(self, name: str) -> int:
        return self.columns.index(name)


def square_name(term: str) -> str:
    return f"{term}^2"


def interaction_name(season: str) -> str:
    return f"T_{season}:P_{season}"


def climate_design(df: pd.DataFrame, spec: ModelSpec) -> pd.DataFrame:
    """Climate columns of the fixed design: raw terms, squares, T x P interactions."""
    cols = {t: df[t].to_numpy(dtype=float) for t in spec.climate_terms}
    if spec.quadratics:
        for t in spec.climate_terms:
            cols[square_name(t)] = cols[t] ** 2
    if spec.interactions:
        for s in SEASONS:
            if f"T_{s}" in cols and f"P_{s}" in cols:
                cols[interaction_name(s)] = cols[f"T_{s}"] * cols[f"P_{s}"]
    return pd.DataFrame(cols, index=df.index)


def climate_columns(spec: ModelSpec) -> list[str]:
    dummy = pd.DataFrame({t: [0.0] for t in spec.climate_terms})
    return list(climate_design(dummy, spec).columns)


def _rank_check(X: np.ndarray, columns: list[str]) -> None:
    if X.shape[0] < X.shape[1]:
        raise DataError(f"design has {X.shape[1]} columns but only {X.shape[0]} rows")
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = d[0] * max(X.shape) * np.finfo(float).eps * 1e3
    rank = int((d > tol).sum())
    if rank < X.shape[1]:
        bad = [columns[i] for i in piv[rank:]]
        raise DataError(f"rank-deficient design: columns {bad} are collinear with the others")


def compile_design(panel: pd.DataFrame, spec, check_rank: bool = True) -> CompiledDesign:
    """Build y, X, random blocks and cluster labels for ``spec``.

    Reference levels: alphabetically first province, first year. Province
    trends use ``year - 1998``; the reference province's trend is dropped
    under fixed year effects (it would be collinear with the year dummies).
    """
    spec = resolve_spec(spec)
    df = panel.sort_values(["province", "year"], kind="mergesort").reset_index(drop=True)
    n = len(df)
    prov = df["province"].astype(str).to_numpy()
    year = df["year"].to_numpy(dtype=int)
    provinces = sorted(set(prov))
    years = sorted(set(year))

    cols: dict[str, np.ndarray] = {"(Intercept)": np.ones(n)}
    for p in provinces[1:]:
        cols[f"prov[{p}]"] = (prov == p).astype(float)
    if spec.year_effect == "fixed":
        for t in years[1:]:
            cols[f"year[{t}]"] = (year == t).astype(float)
    cols["pcgr_lag"] = df["pcgr_lag"].to_numpy(dtype=float)
    for name, v in climate_design(df, spec).items():
        cols[name] = v.to_numpy()
    if spec.include_indices:
        for c in INDEX_COLUMNS:
            cols[c] = df[c].to_numpy(dtype=float)
    if spec.province_trends:
        trend_provs = provinces[1:] if spec.year_effect == "fixed" else provinces
        for p in trend_provs:
            cols[f"trend[{p}]"] = (prov == p) * (year - TREND_ORIGIN).astype(float)

    columns = list(cols)
    X = np.column_stack([cols[c] for c in columns])
    if not np.isfinite(X).all():
        raise DataError("design contains missing or non-finite values")

    blocks: list[RandomBlock] = []
    if spec.year_effect == "random":
        blocks.append(RandomBlock("year", np.column_stack([(year == t).astype(float) for t in years]),
                                  [str(t) for t in years]))
    if spec.include_events == "random":
        ev_cols = sorted((c for c in df.columns if c.startswith("ev_")), key=lambda c: int(c[3:]))
        if not ev_cols:
            raise ConfigError("spec requests event effects but the panel has no ev_* columns")
        blocks.append(RandomBlock("events", df[ev_cols].to_numpy(dtype=float), ev_cols))
    if spec.random_slopes:
        for t in spec.slopes:
            x = df[t].to_numpy(dtype=float)
            Z = np.column_stack([(prov == p) * x for p in provinces])
            blocks.append(RandomBlock(f"slope[{t}]", Z, [f"{p}:{t}" for p in provinces]))
    kept = []
    for b in blocks:
        if not np.any(b.Z):
            log.warning("dropping random block %s: design is all zeros", b.name)
            continue
        kept.append(b)

    if check_rank:
        _rank_check(X, columns)
    meta = {
        "reference_province": provinces[0],
        "reference_year": years[0] if spec.year_effect == "fixed" else None,
        "trend_origin": TREND_ORIGIN,
        "precip_scale": "fraction (percent / 100)",
        "provinces": provinces,
        "years": [int(t) for t in years],
        "row_keys": list(zip(prov.tolist(), year.tolist())),
    }
    return CompiledDesign(df["pcgr"].to_numpy(dtype=float), X, columns, kept, prov, spec, meta)

