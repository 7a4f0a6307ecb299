"""Render profiling outputs as figures.

One renderer per figure kind, all fed by the toolkit's file formats:

    capacity     capacity.csv   (t_ns,bytes)
    bandwidth    bandwidth.csv  (t_ns,bytes_per_s)
    scatter      scatter.csv    (t_ns,address,region,phase), plus the
                 optional regions.json whose address ranges become
                 horizontal bands; phase labels become shaded time spans
    sensitivity  sweep.csv      (knob,value,seed,accuracy,overhead,
                 collisions,delivered): mean with sample-stddev error
                 bars per knob value, recomputed from the per-run rows

Rendering is read-only and deterministic: fixed backend, size and dpi,
no timestamps embedded.  Addresses are plotted as offsets from the
lowest plotted address, with hexadecimal ticks, since absolute virtual
addresses change run to run.
"""

from __future__ import annotations

import csv
import enum
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.figure import Figure
from matplotlib.ticker import FuncFormatter

FIGSIZE = (8.0, 4.5)
DPI = 100


class SchemaError(ValueError):
    """Input file does not match the expected schema; names the column."""


class FigureKind(enum.Enum):
    CAPACITY = "capacity"
    BANDWIDTH = "bandwidth"
    SCATTER = "scatter"
    SENSITIVITY = "sensitivity"


@dataclass
class FigureSpec:
    kind: FigureKind
    source: Path
    output: Path
    regions: Path | None = None  # scatter only
    options: dict = field(default_factory=dict)


def _check_header(path, got: list[str] | None, expected: list[str]) -> None:
    if got is None:
        raise SchemaError(f"{path}: empty file, expected header {','.join(expected)}")
    for i, col in enumerate(expected):
        if i >= len(got) or got[i] != col:
            found = got[i] if i < len(got) else "<missing>"
            raise SchemaError(f"{path}: expected column {col!r} at position "
                              f"{i + 1}, found {found!r}")
    if len(got) > len(expected):
        raise SchemaError(f"{path}: unexpected extra column {got[len(expected)]!r}")


def _read_csv(path, columns: list[str]) -> list[list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(path, header, columns)
        return [row for row in reader if row]


def _int_field(path, lineno: int, column: str, raw: str) -> int:
    try:
        return int(raw, 16 if raw.lower().startswith("0x") else 10)
    except ValueError:
        raise SchemaError(f"{path}:{lineno}: column {column!r}: "
                          f"expected integer, got {raw!r}") from None


def _float_field(path, lineno: int, column: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise SchemaError(f"{path}:{lineno}: column {column!r}: "
                          f"expected number, got {raw!r}") from None


def read_timeseries(path, value_column: str) -> tuple[list[int], list[float]]:
    rows = _read_csv(path, ["t_ns", value_column])
    ts, values = [], []
    for lineno, row in enumerate(rows, start=2):
        ts.append(_int_field(path, lineno, "t_ns", row[0]))
        values.append(_float_field(path, lineno, value_column, row[1]))
    return ts, values


@dataclass
class ScatterRow:
    t_ns: int
    address: int
    region: str
    phase: str


def read_scatter(path) -> list[ScatterRow]:
    rows = _read_csv(path, ["t_ns", "address", "region", "phase"])
    out = []
    for lineno, row in enumerate(rows, start=2):
        out.append(ScatterRow(
            t_ns=_int_field(path, lineno, "t_ns", row[0]),
            address=_int_field(path, lineno, "address", row[1]),
            region=row[2], phase=row[3]))
    return out


def read_region_bands(path) -> dict[str, tuple[int, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "regions" not in doc:
        raise SchemaError(f"{path}: expected top-level key 'regions'")
    bands = {}
    for name, entry in doc["regions"].items():
        rng = entry.get("range")
        if rng is None:
            continue  # the untagged bucket has no range
        bands[name] = (int(rng["start"], 16), int(rng["end"], 16))
    return bands


@dataclass
class SweepRow:
    knob: str
    value: int
    seed: int
    metrics: dict[str, float]


SWEEP_COLUMNS = ["knob", "value", "seed", "accuracy", "overhead",
                 "collisions", "delivered"]


def read_sweep(path) -> list[SweepRow]:
    """Per-run sweep rows; embedded mean/stddev summary rows are skipped."""
    rows = _read_csv(path, SWEEP_COLUMNS)
    out = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(SWEEP_COLUMNS):
            raise SchemaError(f"{path}:{lineno}: expected "
                              f"{len(SWEEP_COLUMNS)} columns, got {len(row)}")
        if row[2] in ("mean", "stddev"):
            continue
        out.append(SweepRow(
            knob=row[0],
            value=_int_field(path, lineno, "value", row[1]),
            seed=_int_field(path, lineno, "seed", row[2]),
            metrics={name: _float_field(path, lineno, name, raw)
                     for name, raw in zip(SWEEP_COLUMNS[3:], row[3:])}))
    return out


def _new_axes(options: dict, default_xlabel: str, default_ylabel: str):
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    ax.set_xlabel(options.get("xlabel", default_xlabel))
    ax.set_ylabel(options.get("ylabel", default_ylabel))
    if options.get("title"):
        ax.set_title(options["title"])
    if options.get("log_x"):
        ax.set_xscale("log")
    if options.get("log_y"):
        ax.set_yscale("log")
    return fig, ax


def render_capacity(spec: FigureSpec) -> Figure:
    ts, values = read_timeseries(spec.source, "bytes")
    fig, ax = _new_axes(spec.options, "time [ns]", "resident set [bytes]")
    if ts:
        ax.step([t / 1e9 for t in ts], values, where="post")
        ax.set_xlabel(spec.options.get("xlabel", "time [s]"))
    return fig


def render_bandwidth(spec: FigureSpec) -> Figure:
    ts, values = read_timeseries(spec.source, "bytes_per_s")
    fig, ax = _new_axes(spec.options, "time [s]", "bandwidth [bytes/s]")
    if ts:
        ax.plot([t / 1e9 for t in ts], values, marker=".")
    return fig


def render_scatter(spec: FigureSpec) -> Figure:
    rows = read_scatter(spec.source)
    bands = read_region_bands(spec.regions) if spec.regions else {}
    fig, ax = _new_axes(spec.options, "time [ns]", "address offset")

    addresses = [r.address for r in rows] + [b[0] for b in bands.values()]
    base = min(addresses) if addresses else 0

    for name, (start, end) in sorted(bands.items()):
        ax.axhspan(start - base, end - base, alpha=0.15, label=f"band:{name}")

    by_region: dict[str, list[ScatterRow]] = {}
    for row in rows:
        by_region.setdefault(row.region or "(untagged)", []).append(row)
    for name in sorted(by_region):
        group = by_region[name]
        ax.scatter([r.t_ns for r in group], [r.address - base for r in group],
                   s=4, label=name)

    phases: dict[str, tuple[int, int]] = {}
    for row in rows:
        if row.phase:
            lo, hi = phases.get(row.phase, (row.t_ns, row.t_ns))
            phases[row.phase] = (min(lo, row.t_ns), max(hi, row.t_ns))
    for name, (lo, hi) in sorted(phases.items()):
        ax.axvspan(lo, hi, alpha=0.08, color="grey", label=f"phase:{name}")

    ax.yaxis.set_major_formatter(FuncFormatter(lambda v, _: f"0x{int(v):x}"))
    if rows or bands:
        ax.legend(loc="upper right", fontsize="small")
    return fig


def sensitivity_stats(rows: list[SweepRow], metric: str
                      ) -> tuple[list[int], list[float], list[float]]:
    """Per-value mean and sample stddev of one metric, values ascending."""
    if metric not in SWEEP_COLUMNS[3:]:
        raise SchemaError(f"unknown metric column {metric!r}")
    groups: dict[int, list[float]] = {}
    for row in rows:
        groups.setdefault(row.value, []).append(row.metrics[metric])
    values = sorted(groups)
    means = [statistics.fmean(groups[v]) for v in values]
    stds = [statistics.stdev(groups[v]) if len(groups[v]) > 1 else 0.0
            for v in values]
    return values, means, stds


def render_sensitivity(spec: FigureSpec) -> Figure:
    rows = read_sweep(spec.source)
    metric = spec.options.get("metric", "accuracy")
    knob = rows[0].knob if rows else "knob"
    fig, ax = _new_axes(spec.options, knob, metric)
    if rows:
        values, means, stds = sensitivity_stats(rows, metric)
        ax.errorbar(values, means, yerr=stds, fmt="o-", capsize=3)
    return fig


_RENDERERS = {
    FigureKind.CAPACITY: render_capacity,
    FigureKind.BANDWIDTH: render_bandwidth,
    FigureKind.SCATTER: render_scatter,
    FigureKind.SENSITIVITY: render_sensitivity,
}


def render(spec: FigureSpec) -> Figure:
    """Render one figure and write it to spec.output; returns the figure."""
    fig = _RENDERERS[spec.kind](spec)
    fig.savefig(spec.output, format=Path(spec.output).suffix.lstrip(".") or "png")
    return fig
