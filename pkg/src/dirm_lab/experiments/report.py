"""Experiment reports: a tagged metric table plus its on-disk layout."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib
import tomli_w

from ..errors import ValidationError
from .svg import line_plot

TAG_COLUMNS = ("objective", "seed")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


@dataclass(frozen=True)
class PlotSpec:
    """One SVG line plot: ``y`` against ``x``, one series per ``series`` value."""

    name: str
    x: str
    y: str
    series: str = "objective"
    where: tuple = ()
    title: str = ""


@dataclass
class ExperimentReport:
    """Long-format metric table.

    Every row carries the objective and seed that produced it together with
    its grid coordinates (the columns named in ``axes``).
    """

    experiment_id: str
    axes: dict
    columns: tuple
    rows: list = field(default_factory=list)
    seeds: tuple = ()
    provenance: dict = field(default_factory=dict)
    plots: tuple = ()
    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        missing = [c for c in (*TAG_COLUMNS, *self.axes) if c not in self.columns]
        if missing:
            raise ValidationError(f"report columns lack tag columns {missing}", key="columns")
        for row in self.rows:
            self._check(row)

    def _check(self, row):
        if len(row) != len(self.columns):
            raise ValidationError(f"row has {len(row)} cells, expected {len(self.columns)}", key="rows")

    def add(self, **cells):
        row = tuple(cells[c] for c in self.columns)
        self.rows.append(row)

    def records(self, **where) -> list[dict[str, Any]]:
        out = []
        for row in self.rows:
            rec = dict(zip(self.columns, row))
            if all(rec[k] == v for k, v in where.items()):
                out.append(rec)
        return out

    def values(self, column: str, **where) -> list:
        return [r[column] for r in self.records(**where)]

    def median(self, column: str, **where) -> float:
        vals = self.values(column, **where)
        if not vals:
            raise ValidationError(f"no rows match {where}", key=column)
        return float(median(vals))

    def distinct(self, column: str, **where) -> list:
        seen = []
        for v in self.values(column, **where):
            if v not in seen:
                seen.append(v)
        return seen

    # -- serialization -------------------------------------------------------

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(c) for c in row])
        return path

    def manifest(self) -> dict:
        from .. import __version__

        return {
            "preset": self.experiment_id,
            "seeds": list(self.seeds),
            "code_version": __version__,
            "axes": _toml_safe({k: list(v) for k, v in self.axes.items()}),
            "provenance": _toml_safe(self.provenance),
        }

    def write(self, outdir, svg: bool = False) -> Path:
        """Write ``<outdir>/<experiment_id>/report.csv`` and ``manifest.toml``."""
        target = Path(outdir) / self.experiment_id
        target.mkdir(parents=True, exist_ok=True)
        self.to_csv(target / "report.csv")
        with (target / "manifest.toml").open("wb") as fh:
            tomli_w.dump(self.manifest(), fh)
        for name, (columns, rows) in self.tables.items():
            with (target / f"{name}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(columns)
                w.writerows([[_fmt(c) for c in row] for row in rows])
        if svg:
            for spec in self.plots:
                self.plot(spec, target / f"{spec.name}.svg")
        return target

    def plot(self, spec: PlotSpec, path) -> Path:
        where = dict(spec.where)
        series = {}
        for label in self.distinct(spec.series, **where):
            sel = {**where, spec.series: label}
            xs = self.distinct(spec.x, **sel)
            ys = [self.median(spec.y, **sel, **{spec.x: x}) for x in xs]
            series[str(label)] = (xs, ys)
        return line_plot(series, path, title=spec.title or spec.name, xlabel=spec.x, ylabel=spec.y)

    @classmethod
    def read(cls, directory) -> "ExperimentReport":
        """Load a report written by :meth:`write` (cells are parsed as numbers where possible)."""
        directory = Path(directory)
        with (directory / "manifest.toml").open("rb") as fh:
            man = tomllib.load(fh)
        with (directory / "report.csv").open(newline="") as fh:
            reader = csv.reader(fh)
            columns = tuple(next(reader))
            rows = [tuple(_parse(c) for c in row) for row in reader]
        return cls(man["preset"], man["axes"], columns, rows, tuple(man["seeds"]), man.get("provenance", {}))


def _parse(cell: str):
    for conv in (int, float):
        try:
            return conv(cell)
        except ValueError:
            pass
    return {"true": True, "false": False}.get(cell, cell)


def _toml_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _toml_safe(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_toml_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if hasattr(obj, "item"):
        return obj.item()
    return obj
