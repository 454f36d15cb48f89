"""Command-line entry point: one subcommand per pipeline stage plus ``run-all``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd

from panelclim import __version__, boot, estimate, features, infer, ingest, project, store, synth
from panelclim.constants import BASELINE, SCENARIOS, TOTAL, normalize_scenario
from panelclim.errors import ConfigError, DataError, PanelClimError
from panelclim.panel import PRESETS, assemble, compile_design, resolve_spec

log = logging.getLogger("panelclim")

FAILED_MARKER = "FAILED"
STAGE_STATE = "stages.json"


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class BootstrapSettings:
    enabled: bool = True
    spec: str | dict = "m5"
    scenario: str = "RCP4.5"
    reps: int = 1000
    seed: int = 20170101
    coefficients: bool = False


@dataclass
class RunConfig:
    inputs: dict[str, str]
    out: str = "run_out"
    schema: dict | str | None = None
    coverage_period: tuple[int, int] = BASELINE
    coverage_threshold: float | str = "9/10"
    baseline: tuple[int, int] = BASELINE
    weighting: str = "unweighted"
    winter_same_year: bool = False
    specs: list = field(default_factory=lambda: ["m1", "m2", "m3", "m4", "m5", "m6"])
    sectors: list[str] = field(default_factory=lambda: [TOTAL])
    scenarios: list[str] = field(default_factory=lambda: list(SCENARIOS))
    project_spec: str | dict = "m5"
    anchor: str = "end"
    year_rule: str | None = None
    years: tuple[int, int] = BASELINE
    bootstrap: BootstrapSettings = field(default_factory=BootstrapSettings)
    threads: int | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run-config keys {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("bootstrap"), dict):
            bad = set(d["bootstrap"]) - set(BootstrapSettings.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown bootstrap keys {sorted(bad)}")
            d["bootstrap"] = BootstrapSettings(**d["bootstrap"])
        for key in ("coverage_period", "baseline", "years"):
            if key in d:
                d[key] = tuple(d[key])
        d.setdefault("base_dir", str(base_dir))
        if "inputs" not in d:
            raise ConfigError("run config needs an 'inputs' mapping")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def validate(self) -> None:
        for key in ("stations", "econ", "indices", "rcp"):
            if key not in self.inputs:
                raise ConfigError(f"inputs.{key} is required")
            if not self.path(self.inputs[key]).exists():
                raise ConfigError(f"input file not found: {self.path(self.inputs[key])}")
        if self.inputs.get("events") and not self.path(self.inputs["events"]).exists():
            raise ConfigError(f"input file not found: {self.path(self.inputs['events'])}")
        if self.weighting not in ("unweighted", "population"):
            raise ConfigError("weighting must be unweighted or population")
        if self.anchor not in ("end", "mid"):
            raise ConfigError("anchor must be end or mid")
        if self.year_rule not in (None, "difference"):
            raise ConfigError("year_rule must be null or 'difference'")
        for rng in (self.coverage_period, self.baseline, self.years):
            if len(rng) != 2 or rng[0] > rng[1]:
                raise ConfigError(f"bad year range {rng}")
        if not self.specs:
            raise ConfigError("at least one spec is required")
        for s in [*self.specs, self.project_spec, self.bootstrap.spec]:
            resolve_spec(s)
        for s in [*self.scenarios, self.bootstrap.scenario]:
            try:
                normalize_scenario(s)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.bootstrap.reps < 1:
            raise ConfigError("bootstrap.reps must be positive")
        _threshold(self.coverage_threshold)

    def load_schema(self) -> dict | None:
        if isinstance(self.schema, str):
            return read_schema(self.path(self.schema))
        return self.schema

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def _threshold(value):
    from fractions import Fraction

    try:
        f = Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad coverage threshold {value!r}") from exc
    if not 0 < f <= 1:
        raise ConfigError("coverage threshold must be in (0, 1]")
    return f


def read_schema(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from exc


def parse_spec_arg(text: str) -> list:
    """Comma-separated presets, an inline JSON spec, or ``@file.json``."""
    text = text.strip()
    if text.startswith("@"):
        try:
            obj = json.loads(Path(text[1:]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read spec file {text[1:]}: {exc}") from exc
        return obj if isinstance(obj, list) else [obj]
    if text.startswith("{"):
        try:
            return [json.loads(text)]
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad inline spec: {exc}") from exc
    return [s.strip() for s in text.split(",") if s.strip()]


def spec_label(spec) -> str:
    s = resolve_spec(spec)
    if s.name != "custom":
        return s.name
    return "custom-" + store.text_hash(json.dumps(s.to_dict(), sort_keys=True))[:8]


def threads_from(arg: int | None) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("PANELCLIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"PANELCLIM_THREADS must be an integer, got {env!r}") from exc
    return 1


# ---------------------------------------------------------------------------
# stage helpers shared by subcommands and run-all


def input_hashes(store_dir, names=("growth", "anomalies", "index_growth", "events")) -> dict:
    src = Path(store_dir)
    return {n: store.file_hash(src / f"{n}.csv") for n in names if (src / f"{n}.csv").exists()}


def do_fit(store_dir, sector: str, spec, years=BASELINE):
    spec = resolve_spec(spec)
    panel = assemble(store_dir, sector, spec, years)
    design = compile_design(panel, spec)
    fit = estimate.fit(design)
    return panel, design, fit


def write_fit(fit, path, sector: str, store_dir) -> str:
    doc = fit.to_dict()
    doc.update({"sector": sector, "inputs": input_hashes(store_dir),
                "likelihood_convention": "AIC/BIC from the ML log-likelihood at the REML variance ratios",
                "version": __version__})
    return store.write_json(doc, path)


def read_fit(path) -> tuple[estimate.FitResult, dict]:
    try:
        doc = store.read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fit {path}: {exc}") from exc
    return estimate.FitResult.from_dict(doc), doc


def refit_design(store_dir, fit: estimate.FitResult, sector: str, years=BASELINE):
    spec = resolve_spec(fit.spec)
    panel = assemble(store_dir, sector, spec, years)
    design = compile_design(panel, spec)
    if list(design.columns) != list(fit.columns):
        raise DataError("store does not match the fit: design columns differ")
    return panel, design


def do_infer(fits: dict, designs: dict, panels: dict, sector: str, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vcovs = {k: infer.cr2_vcov(fits[k], designs[k]) for k in fits}
    table = infer.report_table(fits, vcovs)
    entries = {"table": store.write_table(table, out / "table.csv")}
    entries["table_json"] = store.write_json(
        {"sector": sector, "models": infer.report_records(fits, vcovs)}, out / "table.json")
    margins = pd.concat(
        [infer.all_margins(fits[k], vcovs[k], panels[k], sector).assign(model=k) for k in fits],
        ignore_index=True)
    entries["margins"] = store.write_table(margins, out / "margins.csv")
    return entries


def load_store_table(store_dir, name):
    return store.read_table(Path(store_dir) / f"{name}.csv")


def do_project(fit, panel, store_dir, scenarios, sector, anchor="end", year_rule=None):
    rcp = load_store_table(store_dir, "rcp")
    base = load_store_table(store_dir, "baseline_climate")
    paths, trajs = [], []
    for sc in scenarios:
        path = project.extrapolate_climate(rcp, base, sc, anchor)
        paths.append(path)
        trajs.append(project.project_all(fit, path, panel, sector=sector, year_rule=year_rule))
    return pd.concat(paths, ignore_index=True), pd.concat(trajs, ignore_index=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(a) -> int:
    schema = read_schema(a.schema) if a.schema else None
    entries = ingest.ingest_to_store(a.out, a.stations, a.econ, a.indices, a.rcp, a.events, schema,
                                     tuple(a.period), _threshold(a.threshold))
    for name, e in entries.items():
        print(f"{name}: {e['rows']} rows")
    return 0


def cmd_features(a) -> int:
    entries = features.build_features(a.store, tuple(a.baseline), a.weighting, a.winter_same_year, a.out)
    for name, e in entries.items():
        print(f"{name}: {e['rows']} rows")
    return 0


def cmd_fit(a) -> int:
    specs = parse_spec_arg(a.spec)
    results = {}
    for s in specs:
        label = spec_label(s)
        _, _, fit = do_fit(a.store, a.sector, s, tuple(a.years))
        results[label] = fit
        if len(specs) == 1 and a.out.endswith(".json"):
            target = Path(a.out)
        else:
            target = Path(a.out) / f"fit_{label}.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_fit(fit, target, a.sector, a.store)
        print(f"{label}: loglik_ml={fit.loglik_ml:.6g} aic={fit.aic:.6g} bic={fit.bic:.6g} "
              f"theta={dict(zip(fit.block_names, fit.theta.round(6).tolist()))} -> {target}")
    if len(results) > 1:
        cmp = pd.DataFrame([{"model": k, "n": f.n, "n_params": f.n_params, "loglik_ml": f.loglik_ml,
                             "loglik_reml": f.loglik_reml, "aic": f.aic, "bic": f.bic}
                            for k, f in results.items()])
        store.write_table(cmp, Path(a.out) / "comparison.csv")
        print(f"smallest BIC: {cmp.loc[cmp['bic'].idxmin(), 'model']}")
    return 0


def cmd_infer(a) -> int:
    fits, designs, panels = {}, {}, {}
    sector = None
    for path in a.fit:
        fit, doc = read_fit(path)
        label = spec_label(fit.spec)
        sector = doc.get("sector", TOTAL)
        panels[label], designs[label] = refit_design(a.store, fit, sector, tuple(a.years))
        fits[label] = fit
    do_infer(fits, designs, panels, sector, a.out)
    print(f"wrote {Path(a.out) / 'table.csv'} and margins.csv")
    return 0


def cmd_project(a) -> int:
    fit, doc = read_fit(a.fit)
    sector = doc.get("sector", TOTAL)
    panel, _ = refit_design(a.store, fit, sector, tuple(a.years))
    rcp = ingest.load_rcp(a.rcp)[0] if a.rcp else load_store_table(a.store, "rcp")
    base = load_store_table(a.store, "baseline_climate")
    scenarios = [s.strip() for s in a.scenario.split(",")]
    paths, trajs = [], []
    for sc in scenarios:
        path = project.extrapolate_climate(rcp, base, sc, a.anchor)
        paths.append(path)
        trajs.append(project.project_all(fit, path, panel, sector=sector, year_rule=a.year_rule))
    traj = pd.concat(trajs, ignore_index=True)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.write_table(traj, out)
    if a.plotdata:
        project.plotdata(pd.concat(paths, ignore_index=True), traj, a.plotdata)
    final = project.pct_at(traj, project.HORIZON)
    for key, v in final.items():
        print(f"{key[0]} {key[1]} {key[2]} {project.HORIZON}: {v:.4f}%")
    return 0


def cmd_bootstrap(a) -> int:
    specs = parse_spec_arg(a.spec)
    if len(specs) != 1:
        raise ConfigError("bootstrap takes exactly one spec")
    spec = resolve_spec(specs[0])
    panel = assemble(a.store, a.sector, spec, tuple(a.years))
    path = project.extrapolate_climate(load_store_table(a.store, "rcp"),
                                       load_store_table(a.store, "baseline_climate"), a.scenario, a.anchor)
    run = boot.block_bootstrap(panel, spec, path, a.reps, a.seed, threads_from(a.threads), a.sector)
    boot.write_run(run, a.out, a.coefficients)
    print(f"{run.n_rep} replicates, {run.n_failed} failed -> {a.out}")
    return 0


def cmd_synth(a) -> int:
    try:
        raw = json.loads(Path(a.config).read_text()) if a.config else {}
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read synth config: {exc}") from exc
    cfg = synth.SynthConfig.from_dict(raw)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.raw:
        synth.generate_raw(cfg, out)
        print(f"raw inputs and run.json written to {out}")
    else:
        panel, truth = synth.generate(cfg)
        store.write_table(panel, out / "panel.csv")
        store.write_json(truth, out / "truth.json")
        print(f"panel with {len(panel)} rows written to {out}")
    return 0


# ---------------------------------------------------------------------------
# run-all with stage caching


class Pipeline:
    """Stage runner: skips a stage when its input hash and output hashes match the last run."""

    def __init__(self, cfg: RunConfig, force: bool = False, threads: int = 1):
        self.cfg = cfg
        self.force = force
        self.threads = threads
        self.out = cfg.path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.state_path = self.out / STAGE_STATE
        self.state = store.read_json(self.state_path) if self.state_path.exists() else {}
        self.ran: list[str] = []
        self.skipped: list[str] = []

    def _outputs_intact(self, entry: dict) -> bool:
        for rel, digest in entry.get("outputs", {}).items():
            p = self.out / rel
            if not p.exists() or store.file_hash(p) != digest:
                return False
        return True

    def stage(self, name: str, key: dict, fn) -> None:
        key_hash = store.text_hash(json.dumps(store.to_jsonable(key), sort_keys=True))
        prev = self.state.get(name)
        if not self.force and prev and prev.get("input_hash") == key_hash and self._outputs_intact(prev):
            log.info("stage %s: inputs unchanged, skipped", name)
            self.skipped.append(name)
            return
        log.info("stage %s: running", name)
        files = fn()
        outputs = {str(Path(f).relative_to(self.out)): store.file_hash(f) for f in sorted(map(str, files))}
        self.state[name] = {"input_hash": key_hash, "outputs": outputs}
        store.write_json(self.state, self.state_path)
        self.ran.append(name)

    def hashes(self, stage: str) -> dict:
        return self.state.get(stage, {}).get("outputs", {})

    def run(self) -> None:
        cfg = self.cfg
        st = self.out / "store"
        config_doc = cfg.to_dict()
        store.write_json(config_doc, self.out / "run_config.json")

        inputs = {k: store.file_hash(cfg.path(v)) for k, v in sorted(cfg.inputs.items()) if v}
        schema = cfg.load_schema()

        def run_ingest():
            ingest.ingest_to_store(
                st, cfg.path(cfg.inputs["stations"]), cfg.path(cfg.inputs["econ"]),
                cfg.path(cfg.inputs["indices"]), cfg.path(cfg.inputs["rcp"]),
                cfg.path(cfg.inputs.get("events")), schema, cfg.coverage_period,
                _threshold(cfg.coverage_threshold))
            return _store_files(st, ("stations", "station_meta", "econ", "indices", "events", "rcp"))

        self.stage("ingest", {"inputs": inputs, "schema": schema, "period": cfg.coverage_period,
                              "threshold": str(cfg.coverage_threshold)}, run_ingest)

        def run_features():
            features.build_features(st, cfg.baseline, cfg.weighting, cfg.winter_same_year)
            return _store_files(st, ("seasonal", "anomalies", "baseline_climate", "growth", "index_growth"))

        self.stage("features", {"ingest": self.hashes("ingest"), "baseline": cfg.baseline,
                                "weighting": cfg.weighting, "winter": cfg.winter_same_year}, run_features)

        labels = [spec_label(s) for s in cfg.specs]
        fit_dir = self.out / "fits"

        def run_fits():
            files = []
            for sector in cfg.sectors:
                rows = []
                for s, label in zip(cfg.specs, labels):
                    _, _, fit = do_fit(st, sector, s, cfg.years)
                    target = fit_dir / sector / f"fit_{label}.json"
                    target.parent.mkdir(parents=True, exist_ok=True)
                    write_fit(fit, target, sector, st)
                    files.append(target)
                    rows.append({"model": label, "aic": fit.aic, "bic": fit.bic,
                                 "loglik_ml": fit.loglik_ml, "n_params": fit.n_params})
                cmp = pd.DataFrame(rows)
                store.write_table(cmp, fit_dir / sector / "comparison.csv")
                files.append(fit_dir / sector / "comparison.csv")
            return files

        self.stage("fit", {"features": self.hashes("features"), "specs": [resolve_spec(s).to_dict() for s in cfg.specs],
                           "sectors": cfg.sectors, "years": cfg.years}, run_fits)

        def run_infer():
            files = []
            for sector in cfg.sectors:
                fits, designs, panels = {}, {}, {}
                for label in labels:
                    fit, _ = read_fit(fit_dir / sector / f"fit_{label}.json")
                    panels[label], designs[label] = refit_design(st, fit, sector, cfg.years)
                    fits[label] = fit
                d = self.out / "report" / sector
                do_infer(fits, designs, panels, sector, d)
                files += [d / "table.csv", d / "table.json", d / "margins.csv"]
            return files

        self.stage("infer", {"fit": self.hashes("fit")}, run_infer)

        proj_label = spec_label(cfg.project_spec)

        def run_project():
            files = []
            all_paths, all_traj = [], []
            for sector in cfg.sectors:
                fpath = fit_dir / sector / f"fit_{proj_label}.json"
                if fpath.exists():
                    fit, _ = read_fit(fpath)
                    panel, _ = refit_design(st, fit, sector, cfg.years)
                else:
                    panel, _, fit = do_fit(st, sector, cfg.project_spec, cfg.years)
                paths, traj = do_project(fit, panel, st, cfg.scenarios, sector, cfg.anchor, cfg.year_rule)
                all_paths.append(paths)
                all_traj.append(traj)
            d = self.out / "project"
            d.mkdir(parents=True, exist_ok=True)
            traj = pd.concat(all_traj, ignore_index=True)
            paths = all_paths[0]
            store.write_table(traj, d / "trajectories.csv")
            store.write_table(paths, d / "scenario_paths.csv")
            project.plotdata(paths, traj, d / "plotdata")
            files += [d / "trajectories.csv", d / "scenario_paths.csv"]
            files += sorted((d / "plotdata").glob("*.csv"))
            return files

        self.stage("project", {"features": self.hashes("features"), "fit": self.hashes("fit"),
                               "spec": resolve_spec(cfg.project_spec).to_dict(), "scenarios": cfg.scenarios,
                               "anchor": cfg.anchor, "year_rule": cfg.year_rule}, run_project)

        b = cfg.bootstrap
        if b.enabled:
            def run_boot():
                spec = resolve_spec(b.spec)
                panel = assemble(st, TOTAL if TOTAL in cfg.sectors else cfg.sectors[0], spec, cfg.years)
                path = project.extrapolate_climate(load_store_table(st, "rcp"),
                                                   load_store_table(st, "baseline_climate"),
                                                   b.scenario, cfg.anchor)
                run = boot.block_bootstrap(panel, spec, path, b.reps, b.seed, self.threads)
                d = self.out / "bootstrap"
                boot.write_run(run, d, b.coefficients)
                return sorted(d.glob("*"))

            self.stage("bootstrap", {"features": self.hashes("features"), "settings": asdict(b),
                                     "anchor": cfg.anchor, "years": cfg.years}, run_boot)

        manifest = {"config": config_doc, "version": __version__,
                    "stages": {k: v for k, v in sorted(self.state.items())}}
        store.write_json(manifest, self.out / "manifest.json")


def _store_files(st: Path, names) -> list[Path]:
    # the store manifest is shared by stages, so it is not a cached output of either
    return [st / f"{n}.csv" for n in names]


def run_all(cfg: RunConfig, force: bool = False, threads: int = 1) -> Pipeline:
    pipe = Pipeline(cfg, force, threads)
    marker = pipe.out / FAILED_MARKER
    try:
        pipe.run()
    except BaseException as exc:
        stage = next((s for s in ("ingest", "features", "fit", "infer", "project", "bootstrap")
                      if s not in pipe.ran and s not in pipe.skipped), "unknown")
        marker.write_text(f"stage: {stage}\nerror: {type(exc).__name__}: {exc}\n")
        raise
    if marker.exists():
        marker.unlink()
    return pipe


def cmd_run_all(a) -> int:
    cfg = RunConfig.load(a.config)
    if a.out:
        cfg.out = str(Path(a.out).resolve())
    pipe = run_all(cfg, a.force, threads_from(a.threads if a.threads is not None else cfg.threads))
    print(f"ran: {', '.join(pipe.ran) or '-'}; skipped: {', '.join(pipe.skipped) or '-'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _years(p):
    p.add_argument("--years", nargs=2, type=int, default=list(BASELINE), metavar=("FIRST", "LAST"),
                   help="panel years (default 1998 2017)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="panelclim", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and clean raw inputs into a store")
    p.add_argument("--stations", required=True)
    p.add_argument("--econ", required=True)
    p.add_argument("--indices", required=True)
    p.add_argument("--rcp", required=True)
    p.add_argument("--events", help="event table (default: bundled list)")
    p.add_argument("--schema", help="JSON column-mapping file")
    p.add_argument("--period", nargs=2, type=int, default=list(BASELINE))
    p.add_argument("--threshold", default="9/10")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", help="seasonal anomalies, growth rates, index growth")
    p.add_argument("--store", required=True)
    p.add_argument("--baseline", nargs=2, type=int, default=list(BASELINE))
    p.add_argument("--weighting", choices=("unweighted", "population"), default="unweighted")
    p.add_argument("--winter-same-year", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", help="fit one or more specifications")
    p.add_argument("--store", required=True)
    p.add_argument("--sector", default=TOTAL)
    p.add_argument("--spec", default="m5", help=f"presets ({','.join(PRESETS)}), inline JSON or @file")
    _years(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="CR2 table and marginal effects for fitted models")
    p.add_argument("--fit", nargs="+", required=True)
    p.add_argument("--store", required=True)
    _years(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("project", help="scenario trajectories to 2050")
    p.add_argument("--fit", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--rcp", help="RCP delta table (default: the store's)")
    p.add_argument("--scenario", default="RCP4.5", help="one or more, comma-separated")
    p.add_argument("--anchor", choices=("end", "mid"), default="end")
    p.add_argument("--year-rule", choices=("difference",))
    _years(p)
    p.add_argument("--out", required=True)
    p.add_argument("--plotdata", help="directory for per-figure CSVs")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("bootstrap", help="province block bootstrap")
    p.add_argument("--store", required=True)
    p.add_argument("--spec", default="m5")
    p.add_argument("--sector", default=TOTAL)
    p.add_argument("--scenario", default="RCP4.5")
    p.add_argument("--anchor", choices=("end", "mid"), default="end")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=20170101)
    p.add_argument("--threads", type=int)
    p.add_argument("--coefficients", action="store_true", help="also write per-replicate coefficients")
    _years(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("synth", help="draw a synthetic panel or raw input set")
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--raw", action="store_true", help="write raw input files and a run config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run-all", help="every stage from one run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--force", action="store_true", help="recompute every stage")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_run_all)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    level = logging.WARNING - 10 * min(a.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except PanelClimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if a.verbose:
            traceback.print_exc()
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
