"""Command-line entry point: simulate, decode, analyze, sweep, report.

Exit codes are a stable contract: 0 success, 1 I/O failure, 2 bad
configuration or usage, 3 data integrity failure.  Configuration layers
as defaults < environment variables < flags.  All outputs are UTF-8 with
LF line endings and deterministic for identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import statistics
import sys
from pathlib import Path

from . import analysis, profiler, sampler, tracefile
from .analysis import Knob, SensitivityRow, SweepBase
from .profiler import ConfigError, Mode, PhaseTag, RegionTag
from .transport import BufferConfig, TimescaleParams

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_INTEGRITY = 3

PAGES_PER_MIB = (1 << 20) // 65536

_MODELS = {
    "contended": sampler.contended_model,
    "collision-free": sampler.collision_free_model,
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _to_int(value, what: str) -> int:
    """Accept decimal ints or 0x-prefixed hex strings in JSON inputs."""
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 16 if value.lower().startswith("0x") else 10)
        except ValueError:
            pass
    raise CliError(f"{what}: expected an integer, got {value!r}", EXIT_CONFIG)


def _load_json(path, what: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"{what}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{what}: invalid JSON: {exc}", EXIT_CONFIG) from exc


def load_workload_spec(path) -> sampler.WorkloadSpec:
    doc = _load_json(path, f"workload spec {path}")
    try:
        kind = sampler.WorkloadKind(doc.get("kind", ""))
    except ValueError:
        raise CliError(f"workload spec: unknown kind {doc.get('kind')!r}",
                       EXIT_CONFIG) from None
    try:
        regions = tuple(
            sampler.Region(r["name"], _to_int(r["base_address"], "region base"),
                           _to_int(r["length_bytes"], "region length"))
            for r in doc.get("regions", []))
        return sampler.WorkloadSpec(
            kind=kind,
            total_ops=_to_int(doc.get("total_ops", 0), "total_ops"),
            threads=_to_int(doc.get("threads", 1), "threads"),
            regions=regions,
            load_fraction=float(doc.get("load_fraction", 0.5)),
            stride_bytes=_to_int(doc.get("stride_bytes", 8), "stride_bytes"),
            seed=_to_int(doc.get("seed", 0), "seed"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"workload spec: {exc}", EXIT_CONFIG) from exc


def load_tags(path) -> list[RegionTag]:
    doc = _load_json(path, f"tags file {path}")
    try:
        return [RegionTag(t["name"], _to_int(t["start"], "tag start"),
                          _to_int(t["end"], "tag end")) for t in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"tags file: {exc}", EXIT_CONFIG) from exc


def load_phases(path) -> list[PhaseTag]:
    doc = _load_json(path, f"phases file {path}")
    try:
        return [PhaseTag(p["name"], _to_int(p["t_start_ns"], "phase start"),
                         _to_int(p["t_end_ns"], "phase end")) for p in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"phases file: {exc}", EXIT_CONFIG) from exc


def _profile_config(args) -> profiler.ProfileConfig:
    try:
        config = profiler.parse_config(os.environ)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    overrides = {}
    if getattr(args, "name", None) is not None:
        overrides["name"] = args.name
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = Mode(args.mode)
    if getattr(args, "period", None) is not None:
        overrides["period"] = args.period
    if getattr(args, "ring_bufsize", None) is not None:
        overrides["ring_bufsize_mib"] = args.ring_bufsize
    if getattr(args, "aux_bufsize", None) is not None:
        overrides["aux_bufsize_mib"] = args.aux_bufsize
    return dataclasses.replace(config, **overrides)


def _buffer_config(config: profiler.ProfileConfig) -> BufferConfig:
    return BufferConfig(ring_pages=config.ring_bufsize_mib * PAGES_PER_MIB,
                        aux_pages=config.aux_bufsize_mib * PAGES_PER_MIB)


def _sampler_config(args, config: profiler.ProfileConfig) -> sampler.SamplerConfig:
    try:
        return sampler.SamplerConfig(
            period=config.period,
            jitter_max=args.jitter_max,
            filter=sampler.FilterSpec(op_kinds=profiler.mode_filter_kinds(config.mode)),
            buffers=_buffer_config(config),
            interrupt_cost_ops=args.interrupt_cost_ops,
            per_sample_cost_ops=args.per_sample_cost_ops)
    except ValueError as exc:
        raise CliError(f"sampler config: {exc}", EXIT_CONFIG) from exc


def _timescale(args) -> TimescaleParams:
    try:
        return TimescaleParams(time_zero=args.time_zero, time_shift=args.time_shift,
                               time_mult=args.time_mult)
    except ValueError as exc:
        raise CliError(f"timescale: {exc}", EXIT_CONFIG) from exc


def _write_text(path, content: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
    except OSError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from exc


# -- sim ------------------------------------------------------------------------

def cmd_sim(args) -> int:
    config = _profile_config(args)
    try:
        spec = load_workload_spec(args.spec)
        stream = sampler.gen_workload(spec)
    except ValueError as exc:
        raise CliError(f"workload: {exc}", EXIT_CONFIG) from exc

    timescale = TimescaleParams()
    sampling_on = config.mode is not Mode.NONE and config.period > 0
    if sampling_on:
        sim_config = _sampler_config(args, config)
        model = _MODELS[args.model]()
        result = sampler.run_sampling(stream, sim_config, model,
                                      rng_seed=args.seed, timescale=timescale)
        attr = profiler.encode_perf_attr(config)
        sampler_doc = {
            "period": sim_config.period,
            "jitter_max": sim_config.effective_jitter_max,
            "interrupt_cost_ops": sim_config.interrupt_cost_ops,
            "per_sample_cost_ops": sim_config.per_sample_cost_ops,
            "model": args.model,
            "buffers": {
                "page_size_bytes": sim_config.buffers.page_size_bytes,
                "ring_pages": sim_config.buffers.ring_pages,
                "aux_pages": sim_config.buffers.aux_pages,
                "aux_watermark_bytes": sim_config.buffers.watermark_bytes,
            },
        }
        attr_doc = {"pmu_type": f"0x{attr.pmu_type:x}",
                    "config_bits": f"0x{attr.config_bits:x}",
                    "sample_period": attr.sample_period}
    else:
        result = sampler.run_unsampled(stream)
        sampler_doc = None
        attr_doc = None

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / f"{config.name}.trace"
    manifest_path = out_dir / f"{config.name}.manifest.json"
    try:
        tracefile.write_trace(trace_path, 65536, result.core_traces)
    except OSError as exc:
        raise CliError(f"{trace_path}: {exc}", EXIT_IO) from exc

    manifest = {
        "name": config.name,
        "workload": {
            "kind": spec.kind.value,
            "total_ops": spec.total_ops,
            "threads": spec.threads,
            "regions": [{"name": r.name, "base_address": f"0x{r.base_address:x}",
                         "length_bytes": r.length_bytes} for r in spec.regions],
            "load_fraction": spec.load_fraction,
            "stride_bytes": spec.stride_bytes,
            "seed": spec.seed,
        },
        "profile_config": {
            "enable": config.enable,
            "name": config.name,
            "mode": config.mode.value,
            "period": config.period,
            "track_rss": config.track_rss,
            "ring_bufsize_mib": config.ring_bufsize_mib,
            "aux_bufsize_mib": config.aux_bufsize_mib,
        },
        "attr": attr_doc,
        "sampler": sampler_doc,
        "timescale": {"time_zero": timescale.time_zero,
                      "time_shift": timescale.time_shift,
                      "time_mult": timescale.time_mult},
        "rng_seed": args.seed,
        "outcome": result.outcome.as_dict(),
    }
    _write_text(manifest_path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


# -- decode ----------------------------------------------------------------------

def _build_trace_checked(trace_path, tags, phases, params, rss=()):
    try:
        return profiler.build_trace(trace_path, tags, phases, params, rss)
    except FileNotFoundError as exc:
        raise CliError(f"{trace_path}: {exc}", EXIT_IO) from exc
    except (tracefile.TraceIntegrityError, tracefile.TraceFormatError) as exc:
        raise CliError(f"{trace_path}: {exc}", EXIT_INTEGRITY) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def cmd_decode(args) -> int:
    trace = _build_trace_checked(args.trace, [], [], _timescale(args))
    out = sys.stdout
    for sample in trace.samples:
        out.write(profiler.sample_to_json(sample) + "\n")
    stats = {k: v for k, v in sorted(trace.counters.items())}
    sys.stderr.write(json.dumps(stats, sort_keys=True) + "\n")
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------

def cmd_analyze(args) -> int:
    tags = load_tags(args.tags) if args.tags else []
    phases = load_phases(args.phases) if args.phases else []
    rss = []
    if args.rss:
        try:
            rss = profiler.read_rss_file(args.rss)
        except OSError as exc:
            raise CliError(f"{args.rss}: {exc}", EXIT_IO) from exc
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
    trace = _build_trace_checked(args.trace, tags, phases, _timescale(args), rss)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    series, _ = analysis.capacity_series(trace)
    with open(out_dir / "capacity.csv", "w", encoding="utf-8", newline="\n") as fh:
        analysis.write_capacity_csv(fh, series)

    buckets: dict[int, int] = {}
    for s in trace.samples:
        buckets[s.t_ns // args.interval_ns] = buckets.get(s.t_ns // args.interval_ns, 0) + 1
    events = [(idx * args.interval_ns, count * args.sample_period)
              for idx, count in sorted(buckets.items())]
    points = analysis.bandwidth_series(events, args.interval_ns, args.bytes_per_event)
    with open(out_dir / "bandwidth.csv", "w", encoding="utf-8", newline="\n") as fh:
        analysis.write_bandwidth_csv(fh, points)

    profile = analysis.region_profile(trace, phase=args.phase)
    _write_text(out_dir / "regions.json", analysis.regions_json(trace, profile))

    with open(out_dir / "scatter.csv", "w", encoding="utf-8", newline="\n") as fh:
        analysis.write_scatter_csv(fh, trace)
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------

def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CliError(f"{what}: expected comma-separated integers, got {text!r}",
                       EXIT_CONFIG) from None
    if not values:
        raise CliError(f"{what}: empty list", EXIT_CONFIG)
    return values


def cmd_sweep(args) -> int:
    config = _profile_config(args)
    if config.period <= 0:
        raise CliError("NMO_PERIOD: sweep needs a positive base sampling period",
                       EXIT_CONFIG)
    try:
        spec = load_workload_spec(args.spec)
        knob = Knob(args.knob)
        base = SweepBase(spec, _sampler_config(args, config), _MODELS[args.model]())
        values = _parse_int_list(args.values, "--values")
        if args.seeds:
            seeds = _parse_int_list(args.seeds, "--seeds")
        else:
            seeds = list(range(args.seed, args.seed + args.trials))
        rows, summaries = analysis.run_sweep(knob, values, base, seeds)
    except ValueError as exc:
        raise CliError(f"sweep: {exc}", EXIT_CONFIG) from exc

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        analysis.write_sweep_csv(fh, rows, summaries)
    return EXIT_OK


# -- report ----------------------------------------------------------------------

def _read_sweep_rows(path) -> list[SensitivityRow]:
    rows: list[SensitivityRow] = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != analysis.SWEEP_HEADER.split(","):
            raise CliError(f"{path}:1: expected header {analysis.SWEEP_HEADER!r}",
                           EXIT_CONFIG)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 7:
                raise CliError(f"{path}:{lineno}: expected 7 columns, got {len(row)}",
                               EXIT_CONFIG)
            if row[2] in ("mean", "stddev"):
                continue  # summary rows are recomputed from the runs
            try:
                rows.append(SensitivityRow(
                    knob=Knob(row[0]), value=int(row[1]), seed=int(row[2]),
                    accuracy=float(row[3]), overhead=float(row[4]),
                    collisions=int(row[5]), delivered=int(row[6])))
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: {exc}", EXIT_CONFIG) from exc
    return rows


def cmd_report(args) -> int:
    rows = _read_sweep_rows(args.sweep_csv)
    if not rows:
        raise CliError(f"{args.sweep_csv}: no data rows", EXIT_CONFIG)

    by_point: dict[tuple[str, int], list[SensitivityRow]] = {}
    for row in rows:
        by_point.setdefault((row.knob.value, row.value), []).append(row)

    def stats_of(values):
        vals = list(values)
        return {
            "mean": statistics.fmean(vals),
            "stddev": statistics.stdev(vals) if len(vals) > 1 else 0.0,
        }

    points = []
    for (knob, value), group in sorted(by_point.items()):
        points.append({
            "knob": knob,
            "value": value,
            "trials": len(group),
            "accuracy": stats_of(r.accuracy for r in group),
            "overhead": stats_of(r.overhead for r in group),
            "collisions": stats_of(r.collisions for r in group),
            "delivered": stats_of(r.delivered for r in group),
        })

    report = {"points": points, "flags": {
        "accuracy_out_of_range": sum(1 for r in rows if not 0.0 <= r.accuracy <= 1.0),
    }}
    period_values = {r.value for r in rows if r.knob is Knob.PERIOD}
    if len(period_values) >= 3:
        report["linearity"] = analysis.linearity_check(rows)

    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _add_timescale_args(p):
    p.add_argument("--time-zero", type=int, default=0)
    p.add_argument("--time-shift", type=int, default=0)
    p.add_argument("--time-mult", type=int, default=1)


def _add_config_args(p):
    p.add_argument("--name", help="base name of output files (NMO_NAME)")
    p.add_argument("--mode", choices=[m.value for m in Mode],
                   help="collection mode (NMO_MODE)")
    p.add_argument("--period", type=int, help="sampling period (NMO_PERIOD)")
    p.add_argument("--ring-bufsize", type=int, metavar="MIB",
                   help="ring buffer size in MiB (NMO_BUFSIZE)")
    p.add_argument("--aux-bufsize", type=int, metavar="MIB",
                   help="aux buffer size in MiB (NMO_AUXBUFSIZE)")
    p.add_argument("--jitter-max", type=int, default=None,
                   help="max counter perturbation (default min(255, period-1))")
    p.add_argument("--interrupt-cost-ops", type=int, default=5000)
    p.add_argument("--per-sample-cost-ops", type=int, default=50)
    p.add_argument("--model", choices=sorted(_MODELS), default="contended")
    p.add_argument("--seed", type=int, default=0, help="sampling RNG seed")
    p.add_argument("--out-dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmo",
                                     description="memory-centric profiling toolkit")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("sim", help="simulate a sampling session over a workload")
    p.add_argument("spec", help="workload spec JSON file")
    _add_config_args(p)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("decode", help="decode a trace to JSON lines on stdout")
    p.add_argument("trace")
    _add_timescale_args(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("analyze", help="produce capacity/bandwidth/region outputs")
    p.add_argument("trace")
    p.add_argument("--tags", help="region tags JSON file")
    p.add_argument("--phases", help="phases JSON file")
    p.add_argument("--rss", help="RSS series file: 't_ns bytes' lines")
    p.add_argument("--phase", help="restrict the region profile to one phase")
    p.add_argument("--interval-ns", type=int, default=1_000_000_000)
    p.add_argument("--bytes-per-event", type=int, default=64)
    p.add_argument("--sample-period", type=int, default=1,
                   help="scale sample counts to event counts")
    p.add_argument("--out-dir", default=".")
    _add_timescale_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="run a sensitivity sweep over one knob")
    p.add_argument("spec", help="workload spec JSON file")
    p.add_argument("--knob", choices=[k.value for k in Knob], required=True)
    p.add_argument("--values", required=True, help="comma-separated knob values")
    p.add_argument("--seeds", help="comma-separated seeds (overrides --trials)")
    p.add_argument("--trials", type=int, default=5,
                   help="number of seeds starting at --seed")
    _add_config_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a sweep.csv into JSON")
    p.add_argument("sweep_csv")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"nmo {args.verb}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
