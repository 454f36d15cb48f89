"""Province block bootstrap of fitted coefficients and projected trajectories.

Each replicate draws provinces with replacement, stacks every row of each
drawn province under a fresh cluster label, refits and re-projects the
original provinces. Replicate ``i`` draws from its own generator seeded by
``SeedSequence(seed, spawn_key=(i,))``, so results do not depend on the
order or parallelism of execution.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from panelclim import estimate, project, store
from panelclim.errors import DataError, NumericalError, PanelClimError
from panelclim.panel import climate_columns, climate_design, compile_design, resolve_spec

log = logging.getLogger(__name__)

MAX_FAILURE_SHARE = 0.10
QUANTILES = (0.025, 0.975)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def draw_provinces(provinces: list[str], seed: int, index: int) -> tuple[str, ...]:
    rng = replicate_rng(seed, index)
    picks = rng.integers(0, len(provinces), size=len(provinces))
    return tuple(provinces[i] for i in picks)


def resample_panel(panel: pd.DataFrame, draw) -> pd.DataFrame:
    """Stack all rows of each drawn province; repeated draws become distinct clusters."""
    parts = []
    seen: dict[str, int] = {}
    by_prov = {p: g for p, g in panel.groupby("province", sort=False)}
    for p in draw:
        k = seen.get(p, 0)
        seen[p] = k + 1
        g = by_prov[p].copy()
        g["source_province"] = p
        g["province"] = p if k == 0 else f"{p}~{k}"
        parts.append(g)
    return pd.concat(parts, ignore_index=True)


@dataclass
class _Context:
    """Read-only inputs shared by every replicate."""

    panel: pd.DataFrame
    spec: dict
    provinces: list[str]
    clim_cols: list[str]
    # per original province: (years x k) scenario design minus historical means
    deltas: dict[str, np.ndarray]
    years: np.ndarray
    seed: int
    # coefficients shared by every replicate design (no province-labelled terms)
    common: list[str] = field(default_factory=list)


def common_columns(columns) -> list[str]:
    return [c for c in columns if not c.startswith(("prov[", "trend["))]


def _prepare(panel, spec, path, horizon, seed) -> _Context:
    spec = resolve_spec(spec)
    provinces = sorted(panel["province"].unique())
    cols = climate_columns(spec)
    deltas = {}
    years = None
    for p in provinces:
        wide = project.path_wide(path, p)
        wide = wide[(wide.index >= project.FIRST_YEAR) & (wide.index <= horizon)]
        years = wide.index.to_numpy()
        pred = climate_design(wide, spec)[cols].to_numpy()
        ref = project.historical_means(panel, spec, p)[cols].to_numpy()
        deltas[p] = pred - ref
    common = common_columns(compile_design(panel, spec, check_rank=False).columns)
    return _Context(panel, spec.to_dict(), provinces, cols, deltas, years, seed, common)


def _slope_shift(fit: estimate.FitResult, province: str, cols: list[str]) -> np.ndarray:
    """Average random slope over the replicate copies of ``province`` (zero if not drawn)."""
    shift = np.zeros(len(cols))
    for name, u in fit.blup.items():
        if not name.startswith("slope["):
            continue
        term = name[len("slope["):-1]
        labels = fit.blup_labels.get(name, [])
        vals = [u[i] for i, lab in enumerate(labels)
                if lab.split(":")[0].split("~")[0] == province]
        if vals:
            shift[cols.index(term)] += float(np.mean(vals))
    return shift


def run_replicate(ctx: _Context, index: int, draw=None):
    """One replicate: (index, draw, beta or None, trajectories (provinces x years) or None, error)."""
    draw = tuple(draw) if draw is not None else draw_provinces(ctx.provinces, ctx.seed, index)
    try:
        rep = resample_panel(ctx.panel, draw)
        design = compile_design(rep, ctx.spec)
        fit = estimate.fit(design)
        if not fit.converged:
            return index, draw, None, None, "not converged"
        b = np.array([fit.coef(c) for c in ctx.clim_cols])
        traj = np.empty((len(ctx.provinces), len(ctx.years) + 1))
        for i, p in enumerate(ctx.provinces):
            d = ctx.deltas[p] @ (b + _slope_shift(fit, p, ctx.clim_cols))
            traj[i, 0] = 0.0
            traj[i, 1:] = project.compound(d)
        return index, draw, np.array([fit.coef(c) for c in ctx.common]), traj, None
    except (PanelClimError, np.linalg.LinAlgError) as exc:
        return index, draw, None, None, f"{type(exc).__name__}: {exc}"


_WORKER_CTX: _Context | None = None


def _init_worker(ctx: _Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_chunk(indices: list[int]):
    return [run_replicate(_WORKER_CTX, i) for i in indices]


@dataclass
class BootstrapRun:
    seed: int
    n_rep: int
    spec: dict
    scenario: str
    provinces: list[str]
    years: np.ndarray
    columns: list[str]
    draws: list[tuple[str, ...]]
    coefs: np.ndarray  # n_ok x len(columns)
    trajectories: np.ndarray  # n_ok x provinces x years
    ok: np.ndarray  # replicate indices that succeeded
    failures: dict[int, str] = field(default_factory=dict)
    quantiles: pd.DataFrame | None = None

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def meta(self) -> dict:
        return {"seed": self.seed, "n_rep": self.n_rep, "n_failed": self.n_failed,
                "failed": {str(k): v for k, v in sorted(self.failures.items())},
                "scenario": self.scenario, "spec": self.spec,
                "quantile_method": "linear interpolation of order statistics (type 7)",
                "bands": "pointwise", "quantiles": list(QUANTILES)}


def quantile_table(trajectories: np.ndarray, provinces, years, scenario, sector="TOTAL",
                   point: np.ndarray | None = None) -> pd.DataFrame:
    q = np.quantile(trajectories, QUANTILES, axis=0, method="linear")
    rows = []
    for i, p in enumerate(provinces):
        frame = {"scenario": scenario, "province": p, "sector": sector, "year": years,
                 "q025": q[0, i], "q975": q[1, i]}
        if point is not None:
            frame["point"] = point[i]
        rows.append(pd.DataFrame(frame))
    return pd.concat(rows, ignore_index=True)


def block_bootstrap(
    panel: pd.DataFrame,
    spec,
    path: pd.DataFrame,
    n_rep: int = 1000,
    seed: int = 20170101,
    workers: int = 1,
    sector: str = "TOTAL",
    horizon: int = project.HORIZON,
    draws: list | None = None,
) -> BootstrapRun:
    """Province block bootstrap with pointwise 2.5% / 97.5% trajectory bands.

    ``draws`` replaces the random draws (for tests); failed replicates are
    excluded from the quantiles and more than 10% failures is fatal.
    """
    spec = resolve_spec(spec)
    if spec.year_effect == "fixed":
        log.info("bootstrap with fixed year effects: future year effects assumed equal across scenarios")
    if n_rep < 1:
        raise DataError("n_rep must be positive")
    ctx = _prepare(panel, spec, path, horizon, seed)
    if draws is not None:
        if len(draws) != n_rep:
            raise DataError("need one draw per replicate")
        results = [run_replicate(ctx, i, d) for i, d in enumerate(draws)]
    elif workers <= 1:
        results = [run_replicate(ctx, i) for i in range(n_rep)]
    else:
        chunks = [list(range(i, n_rep, workers)) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            results = [r for chunk in ex.map(_run_chunk, chunks) for r in chunk]
    results.sort(key=lambda r: r[0])

    failures = {i: err for i, _, _, _, err in results if err is not None}
    if len(failures) > MAX_FAILURE_SHARE * n_rep:
        raise NumericalError(f"bootstrap: {len(failures)} of {n_rep} replicates failed")
    if failures:
        log.warning("bootstrap: %d of %d replicates failed and are excluded", len(failures), n_rep)
    good = [r for r in results if r[4] is None]
    years = np.concatenate([[project.FIRST_YEAR - 1], ctx.years])
    traj = np.stack([r[3] for r in good])
    coefs = np.stack([r[2] for r in good])
    full_design = compile_design(panel, spec)
    point_fit = estimate.fit(full_design)
    b = np.array([point_fit.coef(c) for c in ctx.clim_cols])
    point = np.stack([np.concatenate([[0.0], project.compound(
        ctx.deltas[p] @ (b + _slope_shift(point_fit, p, ctx.clim_cols)))]) for p in ctx.provinces])
    scen = str(path["scenario"].iloc[0])
    run = BootstrapRun(
        seed=seed, n_rep=n_rep, spec=spec.to_dict(), scenario=scen, provinces=ctx.provinces,
        years=years, columns=list(ctx.common), draws=[r[1] for r in results],
        coefs=coefs, trajectories=traj, ok=np.array([r[0] for r in good]), failures=failures,
    )
    run.quantiles = quantile_table(traj, ctx.provinces, years, scen, sector, point)
    return run


def write_run(run: BootstrapRun, out, coefficients: bool = False) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = {"quantiles": store.write_table(run.quantiles, out / "quantiles.csv")}
    draws = pd.DataFrame({"replicate": range(run.n_rep),
                          "draw": [";".join(d) for d in run.draws]})
    entries["draws"] = store.write_table(draws, out / "draws.csv")
    if coefficients:
        tab = pd.DataFrame(run.coefs, columns=run.columns)
        tab.insert(0, "replicate", run.ok)
        entries["coefficients"] = store.write_table(tab, out / "coefficients.csv")
    entries["meta"] = store.write_json(run.meta(), out / "bootstrap.json")
    return entries
