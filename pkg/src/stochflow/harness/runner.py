"""Execution, manifests and plot-data views."""
from __future__ import annotations

import datetime as _dt
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ConfigError, StochflowError, ViewError
from ..gridio import atomic_write, read_csv, rows_to_csv
from ..report import fit_loglog
from . import registry
from .config import ExperimentConfig, dumps_table, load, resolve

WORKERS_ENV = "STOCHFLOW_WORKERS"
MANIFEST = "manifest.toml"


@dataclass
class RunManifest:
    """Config echo, verdicts and timings of one run (one entry per experiment)."""

    experiments: list = field(default_factory=list)
    timestamp: str = ""
    version: str = __version__

    @property
    def verdicts(self) -> dict:
        return {e["id"]: e["verdict"] for e in self.experiments}

    @property
    def passed(self) -> bool:
        return bool(self.experiments) and all(v == "pass" for v in self.verdicts.values())

    def text(self) -> str:
        parts = [dumps_table({"version": self.version, "timestamp": self.timestamp})]
        for e in self.experiments:
            parts.append("\n[[experiments]]\n" + dumps_table(e))
        return "".join(parts)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return atomic_write(path, self.text())

    @classmethod
    def load(cls, path) -> "RunManifest":
        import tomli
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        try:
            data = tomli.loads(path.read_text())
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None
        m = cls(list(data.get("experiments", [])), data.get("timestamp", ""), data.get("version", ""))
        m.root = path.parent
        return m


def prepare(cfg: ExperimentConfig) -> tuple[registry.Experiment, dict]:
    """Look up and validate a config; every failure here happens before compute."""
    exp = registry.get(cfg.id)
    params = resolve(cfg, exp.defaults)
    if exp.validate is not None:
        exp.validate(params)
    return exp, params


def _execute(cfg: ExperimentConfig) -> dict:
    exp, params = prepare(cfg)
    outdir = Path(cfg.out) / cfg.id
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    entry = {**cfg.echo(), **{k: params[k] for k in exp.defaults}}
    try:
        rep = exp.run(params, cfg.seed, outdir)
        csv_path = rep.write(outdir)
        entry.update(verdict=rep.verdict, csv=str(csv_path.relative_to(Path(cfg.out))))
    except (StochflowError, ValueError, FloatingPointError, TypeError) as exc:
        entry.update(verdict="fail", error=f"{type(exc).__name__}: {exc}")
        atomic_write(outdir / "error.txt", traceback.format_exc())
    entry["seconds"] = round(time.perf_counter() - t0, 3)
    return entry


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, workers)


def run_many(cfgs: list[ExperimentConfig], out=None, *, workers: int | None = None) -> RunManifest:
    """Validate everything, run on a worker pool, write one manifest ordered by id."""
    if out is not None:
        cfgs = [ExperimentConfig(c.id, c.seed, str(out), dict(c.params)) for c in cfgs]
    if len({c.out for c in cfgs}) > 1:
        raise ConfigError("all experiments of one run must share an output directory")
    for c in cfgs:
        prepare(c)
    n = worker_count(workers)
    if n == 1 or len(cfgs) <= 1:
        entries = [_execute(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=min(n, len(cfgs))) as pool:
            entries = list(pool.map(_execute, cfgs))
    entries.sort(key=lambda e: (e["id"], e["seed"]))
    manifest = RunManifest(entries, _timestamp())
    if cfgs:
        manifest.write(Path(cfgs[0].out) / MANIFEST)
    return manifest


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    return run_many([cfg])


def list_experiments(module: str | None = None) -> list[dict]:
    return [{"id": e.id, "module": e.module, "description": e.description, "anchor": e.anchor}
            for e in registry.list_experiments(module)]


def configs_from(path=None, ids=None, seed: int | None = None) -> list[ExperimentConfig]:
    """Configs for ``ids`` (or all), optionally overlaid with a config file or manifest."""
    loaded = load(path) if path is not None else []
    by_id = {c.id: c for c in loaded if c.id}
    if ids is None:
        ids = [c.id for c in loaded if c.id] if loaded and by_id else [e.id for e in registry.list_experiments()]
    cfgs = []
    for i in ids:
        base = by_id.get(i)
        if base is None and len(loaded) == 1 and not loaded[0].id:
            base = loaded[0]
        c = ExperimentConfig(i, base.seed if base else 0, base.out if base else "results",
                             dict(base.params) if base else {})
        if seed is not None:
            c.seed = seed
        cfgs.append(c)
    return cfgs


# --------------------------------------------------------------------------
# plot-data views

VIEWS = {
    "holder": ("log_increment", ("axis", "log_increment", "moment")),
    "mlevels": ("level", ("level",)),
    "picard": ("iteration", ("sub_interval", "iteration", "residual")),
}
_VIEW_COLUMNS = {
    "holder": ["experiment_id", "seed", "axis", "log_increment", "log_moment", "slope"],
    "mlevels": ["experiment_id", "seed", "level", "quantity", "value"],
    "picard": ["experiment_id", "seed", "sub_interval", "iteration", "residual"],
}


def _as_float(v: str):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _view_rows(view: str, rows: list[dict]) -> list[dict]:
    if view == "holder":
        out = []
        groups: dict = {}
        for r in rows:
            groups.setdefault(r["axis"], []).append(r)
        for axis, rs in groups.items():
            xs = [float(r["log_increment"]) for r in rs]
            ys = [math.log(float(r["moment"])) for r in rs]
            out.extend({"axis": axis, "log_increment": x, "log_moment": y, "slope": ""} for x, y in zip(xs, ys))
            fit = fit_loglog(np.exp(xs), np.exp(ys)) if len(xs) > 1 else None
            out.append({"axis": axis, "log_increment": "", "log_moment": "",
                        "slope": fit.slope if fit else ""})
        return out
    if view == "mlevels":
        out = []
        for r in rows:
            for k, v in r.items():
                if k in ("experiment_id", "seed", "level") or _as_float(v) is None:
                    continue
                out.append({"level": r["level"], "quantity": k, "value": float(v)})
        return out
    return [{"sub_interval": int(r["sub_interval"]), "iteration": int(r["iteration"]),
             "residual": float(r["residual"])} for r in rows]


def emit_plot_data(manifests, view: str, out=None) -> str:
    """Tidy long-format CSV of ``view`` over every matching experiment in ``manifests``.

    ``manifests`` are :class:`RunManifest` objects or paths to them (or to
    their directories).  Entries whose CSV lacks the view's key column are
    skipped; entries that have it but miss other required columns, or a
    non-empty set with no matching entry at all, raise :class:`ViewError`.
    """
    if view not in VIEWS:
        raise ViewError(f"unknown view '{view}'; views: {', '.join(VIEWS)}")
    key, required = VIEWS[view]
    loaded = [m if isinstance(m, RunManifest) else RunManifest.load(m) for m in manifests]
    groups = []
    for m in loaded:
        root = Path(getattr(m, "root", "."))
        for e in m.experiments:
            if "csv" not in e:
                continue
            rows = read_csv(root / e["csv"])
            cols = set(rows[0]) if rows else set()
            if key not in cols:
                continue
            missing = [c for c in required if c not in cols]
            if missing:
                raise ViewError(f"{e['id']} lacks columns {missing} for view '{view}'")
            groups.append((int(e["seed"]), e["id"], rows))
    if loaded and not groups and any(e.get("csv") for m in loaded for e in m.experiments):
        raise ViewError(f"no experiment provides the columns of view '{view}'")
    out_rows = []
    for seed, eid, rows in sorted(groups, key=lambda g: (g[0], g[1])):
        out_rows.extend({"experiment_id": eid, "seed": seed, **r} for r in _view_rows(view, rows))
    text = rows_to_csv(out_rows, _VIEW_COLUMNS[view])
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        atomic_write(out, text)
    return text
