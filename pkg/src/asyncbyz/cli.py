"""Command line interface: run, aggregate, sweep and report.

Exit status is 0 on success, 1 when a simulation trial faulted and 2 for
malformed input (config, aggregate file or trace schema).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from collections import defaultdict
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import BASES, AggregatorSpec, WeightedVectorSet, aggregate
from .config import canonical, config_hash, experiment_hash, load_config
from .engine import mean_stderr, run, with_axis
from .errors import ConfigError, InvalidInputError

log = logging.getLogger("asyncbyz")

TRACE_FIELDS = ("trial", "t", "excess_loss", "grad_error_sq", "tau_max", "honest_frac")
SUMMARY_FIELDS = ("config_hash", "experiment_hash", "trials", "final_excess_mean",
                  "final_excess_stderr", "faults", "query_gap_checks", "query_gap_violations")
REPORT_FIELDS = ("experiment_hash", "label", "t", "mean", "stderr", "n")


class UsageError(Exception):
    """Malformed user input; maps to exit status 2."""


def fmt(x) -> str:
    """Float with 17 significant digits, enough to round-trip a double."""
    return "%.17g" % x


# ---------------------------------------------------------------- run / sweep


def _label(sim) -> str:
    parts = [sim.aggregator.name]
    if sim.attack is not None and sim.schedule.m_byzantine:
        parts.append(f"{sim.attack.kind} lambda={sim.schedule.lam:g}")
    parts.append(f"T={sim.horizon}")
    return " ".join(parts)


def write_trace(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_FIELDS) + "\n")
        for r in rows:
            fh.write(f"{r.trial},{r.t},{fmt(r.excess_loss)},{fmt(r.grad_error_sq)},"
                     f"{r.tau_max},{fmt(r.honest_frac)}\n")


def _execute(sim, out: Path, plot: bool) -> tuple[int, dict]:
    """Run one config into ``out``; returns (exit status, summary record)."""
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    result = run(sim)
    finished = datetime.now(timezone.utc).isoformat()

    trace_path, summary_path = out / "trace.csv", out / "summary.csv"
    write_trace(trace_path, result.rows)
    mean, err, n = result.summary()
    record = {
        "config_hash": config_hash(sim),
        "experiment_hash": experiment_hash(sim),
        "trials": n,
        "final_excess_mean": mean,
        "final_excess_stderr": err,
        "faults": len(result.faults),
        "query_gap_checks": result.query_gap_checks,
        "query_gap_violations": result.query_gap_violations,
    }
    with open(summary_path, "w", newline="") as fh:
        fh.write(",".join(SUMMARY_FIELDS) + "\n")
        fh.write(",".join(fmt(v) if isinstance(v, float) else str(v) for v in record.values()) + "\n")

    outputs = {"trace": trace_path.name, "summary": summary_path.name}
    if plot:
        from .plotting import plot_curves

        curves = _curves_from_rows(result.rows)
        plot_curves({_label(sim): curves}, out / "excess_loss.svg")
        outputs["plot"] = "excess_loss.svg"

    manifest = {
        "config_hash": record["config_hash"],
        "experiment_hash": record["experiment_hash"],
        "label": _label(sim),
        "seed": sim.seed,
        "trials": sim.trials,
        "started": started,
        "finished": finished,
        "versions": {"asyncbyz": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": outputs,
        "config": canonical(sim),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for trial, fault in result.faults:
        print(f"trial {trial} faulted: {fault}", file=sys.stderr)
    if result.query_gap_violations:
        print(f"{result.query_gap_violations} query-gap bound violations", file=sys.stderr)
    return (1 if result.faults else 0), record


def _load(args):
    loaded = load_config(args.config)
    sim = loaded.simulation
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.assert_level is not None:
        overrides["assertion_level"] = args.assert_level
    if overrides:
        sim = replace(sim, **overrides)
    return loaded, sim


def cmd_run(args) -> int:
    _, sim = _load(args)
    status, record = _execute(sim, Path(args.out), args.plot)
    print(",".join(SUMMARY_FIELDS))
    print(",".join(fmt(v) if isinstance(v, float) else str(v) for v in record.values()))
    return status


def cmd_sweep(args) -> int:
    loaded, sim = _load(args)
    if loaded.sweep is None:
        raise ConfigError("config has no sweep section", field="sweep")
    axis, values = loaded.sweep.axis, loaded.sweep.values
    configs = []
    for v in values:
        try:
            configs.append(with_axis(sim, axis, v))
        except ConfigError:
            raise
        except (InvalidInputError, ValueError) as exc:
            raise ConfigError(f"value {v!r}: {exc}", field="sweep.values") from None
    out = Path(args.out)
    status, means, errs = 0, [], []
    lines = [",".join(("axis", "value", "final_excess_mean", "final_excess_stderr", "trials", "faults"))]
    for v, cfg in zip(values, configs):
        code, rec = _execute(cfg, out / f"{axis}={v}", False)
        status = max(status, code)
        means.append(rec["final_excess_mean"])
        errs.append(rec["final_excess_stderr"])
        lines.append(",".join((axis, str(v), fmt(rec["final_excess_mean"]), fmt(rec["final_excess_stderr"]),
                               str(rec["trials"]), str(rec["faults"]))))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(axis, values, means, errs, out / "sweep.svg")
    return status


# ------------------------------------------------------------------ aggregate


def parse_aggregate_input(text: str):
    """Parse ``d m lambda base ctma`` followed by ``m`` lines ``weight v1 .. vd``."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise UsageError("empty input")
    head = lines[0]
    if len(head) != 5:
        raise UsageError("line 1: expected 'd m lambda base ctma'")
    try:
        d, m, lam = int(head[0]), int(head[1]), float(head[2])
    except ValueError:
        raise UsageError("line 1: d and m must be integers and lambda a number") from None
    base = head[3]
    if base not in BASES:
        raise UsageError(f"line 1: base must be one of {', '.join(BASES)}")
    flag = head[4].lower()
    if flag not in ("0", "1", "true", "false"):
        raise UsageError("line 1: ctma must be true/false or 1/0")
    if d < 1 or m < 1:
        raise UsageError("line 1: d and m must be >= 1")
    body = lines[1:]
    if len(body) != m:
        raise UsageError(f"expected {m} vector lines, found {len(body)}")
    rows = []
    for k, parts in enumerate(body, start=2):
        if len(parts) != d + 1:
            raise UsageError(f"vector line {k - 1}: expected weight plus {d} coordinates, got {len(parts) - 1}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise UsageError(f"vector line {k - 1}: non-numeric entry") from None
    arr = np.array(rows)
    try:
        spec = AggregatorSpec(base=base, ctma=flag in ("1", "true"), lam=lam)
        wset = WeightedVectorSet(arr[:, 1:], arr[:, 0])
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    return wset, spec


def cmd_aggregate(args) -> int:
    text = sys.stdin.read() if args.input == "-" else Path(args.input).read_text()
    wset, spec = parse_aggregate_input(text)
    print(" ".join(fmt(v) for v in aggregate(wset, spec)))
    return 0


# --------------------------------------------------------------------- report


def read_trace(path: Path):
    """Rows of a trace.csv as a dict of numpy columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_FIELDS:
            raise UsageError(f"{path}: header {header} does not match {','.join(TRACE_FIELDS)}")
        cols = [[] for _ in TRACE_FIELDS]
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TRACE_FIELDS):
                raise UsageError(f"{path}:{lineno}: expected {len(TRACE_FIELDS)} fields")
            try:
                for col, v in zip(cols, rec):
                    col.append(float(v))
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric field") from None
    data = {k: np.array(c) for k, c in zip(TRACE_FIELDS, cols)}
    data["trial"] = data["trial"].astype(np.int64)
    data["t"] = data["t"].astype(np.int64)
    return data


def _curves_from_rows(rows):
    data = {
        "trial": np.array([r.trial for r in rows], dtype=np.int64),
        "t": np.array([r.t for r in rows], dtype=np.int64),
        "excess_loss": np.array([r.excess_loss for r in rows]),
    }
    t, mean, err, _ = pooled_curve([data])
    return t, mean, err


def pooled_curve(traces):
    """Mean and stderr of excess loss at every recorded t, over all trials of all traces."""
    by_t = defaultdict(list)
    for data in traces:
        for t, v in zip(data["t"], data["excess_loss"]):
            by_t[int(t)].append(v)
    ts = np.array(sorted(by_t), dtype=np.int64)
    stats = [mean_stderr(by_t[t]) for t in ts]
    return ts, np.array([s[0] for s in stats]), np.array([s[1] for s in stats]), np.array([s[2] for s in stats])


def final_values(data) -> np.ndarray:
    """Last recorded excess loss of each trial in one trace."""
    out = []
    for trial in np.unique(data["trial"]):
        sel = data["trial"] == trial
        out.append(data["excess_loss"][sel][np.argmax(data["t"][sel])])
    return np.array(out)


def _group_key(path: Path):
    manifest = path.parent / "manifest.json"
    if manifest.exists():
        try:
            meta = json.loads(manifest.read_text())
            return meta["experiment_hash"], meta.get("label", meta["experiment_hash"][:12])
        except (ValueError, KeyError):
            raise UsageError(f"{manifest}: unreadable manifest") from None
    return str(path), str(path)


def summarize(paths):
    """Group traces by experiment, pooling trials; returns a list of groups."""
    groups = {}
    for p in paths:
        key, label = _group_key(p)
        groups.setdefault(key, {"label": label, "traces": []})["traces"].append(read_trace(p))
    out = []
    for key, g in groups.items():
        t, mean, err, n = pooled_curve(g["traces"])
        finals = np.concatenate([final_values(d) for d in g["traces"]])
        out.append({"key": key, "label": g["label"], "t": t, "mean": mean, "stderr": err, "n": n,
                    "final": mean_stderr(finals)})
    return out


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.traces]
    if not paths:
        raise UsageError("no trace files given")
    for p in paths:
        if not p.is_file():
            raise UsageError(f"{p}: no such file")
    groups = summarize(paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        fh.write(",".join(REPORT_FIELDS) + "\n")
        for g in groups:
            for t, m, e, n in zip(g["t"], g["mean"], g["stderr"], g["n"]):
                fh.write(f"{g['key']},{g['label']},{t},{fmt(m)},{fmt(e)},{n}\n")
    print("experiment_hash,label,trials,final_excess_mean,final_excess_stderr")
    for g in groups:
        mean, err, n = g["final"]
        print(f"{g['key']},{g['label']},{n},{fmt(mean)},{fmt(err)}")
    if args.plot:
        from .plotting import plot_curves

        plot_curves({g["label"]: (g["t"], g["mean"], g["stderr"]) for g in groups}, out / "excess_loss.svg")
    return 0


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncbyz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, out_default):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--trials", type=int, help="override the number of trials")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--assert-level", choices=("off", "debug"), help="debug enables query-gap checks")
        p.add_argument("--plot", action="store_true", help="also render an SVG figure")

    p = sub.add_parser("run", help="run one configuration")
    run_flags(p, "run-out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the config's sweep section")
    run_flags(p, "sweep-out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("aggregate", help="aggregate a weighted vector file ('-' for stdin)")
    p.add_argument("input")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("report", help="pool trace.csv files and summarize")
    p.add_argument("traces", nargs="*")
    p.add_argument("--out", default=".", help="directory for report.csv and the plot")
    p.add_argument("--plot", action="store_true", help="also render excess_loss.svg")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
