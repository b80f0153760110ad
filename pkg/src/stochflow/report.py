"""Experiment reports and log-log regression."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .gridio import atomic_write, fmt, rows_to_csv

VERDICTS = ("pass", "fail", "inconclusive")


class Fit(NamedTuple):
    slope: float
    intercept: float
    residual: float
    n: int


def fit_loglog(x, y) -> Fit:
    """OLS of log y on log x; ``residual`` is the RMS misfit in log space."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2:
        raise ValueError("need at least two points for a fit")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + intercept)
    return Fit(float(slope), float(intercept), float(np.sqrt(np.mean(res**2))), int(x.size))


def decide(checks: dict[str, bool], inconclusive: bool = False) -> str:
    if inconclusive:
        return "inconclusive"
    return "pass" if checks and all(checks.values()) else "fail"


def spread(values) -> float:
    """max/min of positive values (1 for a single value, inf if any is zero)."""
    v = np.asarray(list(values), float)
    if v.size == 0:
        return math.nan
    if v.min() <= 0:
        return math.inf if v.max() > 0 else 1.0
    return float(v.max() / v.min())


@dataclass
class EstimateReport:
    """Outcome of one verification: numbers, fits, tolerances and a verdict."""

    experiment_id: str
    verdict: str = "inconclusive"
    measured: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    axis: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict}")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def finalize(self, inconclusive: bool = False) -> "EstimateReport":
        self.verdict = decide(self.checks, inconclusive)
        return self

    def columns(self) -> list[str]:
        cols: list[str] = ["experiment_id", "seed"]
        for row in self.rows:
            for k in row:
                if k not in cols:
                    cols.append(k)
        return cols

    def csv_text(self) -> str:
        rows = [{"experiment_id": self.experiment_id, "seed": "" if self.seed is None else self.seed, **r}
                for r in self.rows]
        return rows_to_csv(rows, self.columns())

    def summary(self) -> str:
        lines = [f"experiment {self.experiment_id}: {self.verdict}"]
        for k, v in self.measured.items():
            lines.append(f"  measured {k} = {fmt(v)}")
        for k, f in self.fits.items():
            lines.append(f"  fit {k}: slope {fmt(f.slope)} residual {fmt(f.residual)} over {f.n} points")
        for k, v in self.std_errors.items():
            lines.append(f"  stderr {k} = {fmt(v)}")
        for k, v in self.tolerances.items():
            lines.append(f"  tolerance {k} = {fmt(v)}")
        for k, v in self.checks.items():
            lines.append(f"  check {k}: {'ok' if v else 'FAILED'}")
        for k, v in self.axis.items():
            lines.append(f"  axis {k} = {v}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def write(self, directory, stem: str | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.experiment_id
        atomic_write(directory / f"{stem}.csv", self.csv_text())
        atomic_write(directory / f"{stem}.txt", self.summary())
        return directory / f"{stem}.csv"
