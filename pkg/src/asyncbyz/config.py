"""YAML run configuration: parsing, validation and canonical hashing.

A config file looks like::

    seed: 7
    trials: 5
    metric_stride: 100
    lambda: 0.25
    problem:   {kind: additive-noise-quadratic, dim: 20, sigma: 1.0}
    schedule:  {kind: iid-categorical, m_honest: 6, m_byzantine: 2}
    aggregator: {base: weighted-cwmed, ctma: true}
    optimizer: {horizon: 10000, eta: theory}
    attack:    {kind: sign-flip}
    sweep:     {axis: lambda, values: [0.0, 0.1, 0.2]}

``lambda`` is shared by the scheduler's Byzantine budget and the CTMA trim.
``optimizer.eta`` is a number or ``theory`` (``eta_scale / (4 L T)``).
Every error carries the offending key path and its line in the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import yaml

from .aggregation import BASES, AggregatorSpec
from .attacks import KINDS as ATTACK_KINDS
from .attacks import AttackSpec
from .engine import ASSERT_LEVELS, SWEEP_AXES, SimulationConfig
from .errors import ConfigError, InvalidInputError
from .optimizer import ALPHA_RULES, BETA_RULES, OptimizerConfig
from .problems import KINDS as PROBLEM_KINDS
from .problems import ProblemSpec
from .scheduler import KINDS as SCHEDULE_KINDS
from .scheduler import ScheduleSpec

_U64 = 2 ** 64

_TOP = {"seed", "trials", "metric_stride", "assert_level", "lambda",
        "problem", "schedule", "aggregator", "optimizer", "attack", "sweep"}


def _real(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}")
    return float(v)


def _count(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(v)


def _u64(v):
    v = _count(v)
    if not 0 <= v < _U64:
        raise ConfigError("must be a 64-bit unsigned integer")
    return v


def _flag(v):
    if not isinstance(v, bool):
        raise ConfigError(f"expected true or false, got {v!r}")
    return v


def _text(v):
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}")
    return v


def _choice(options):
    def parse(v):
        if v is False and "off" in options:
            v = "off"  # YAML 1.1 reads a bare off as a boolean
        v = _text(v)
        if v not in options:
            raise ConfigError(f"must be one of {', '.join(options)}; got {v!r}")
        return v
    return parse


def _eta(v):
    if v == "theory":
        return v
    return _real(v)


SECTIONS = {
    "problem": {
        "kind": _choice(PROBLEM_KINDS), "dim": _count, "L": _real, "mu_min": _real,
        "sigma": _real, "sigma_L": _real, "radius": _real, "seed": _u64,
        "n_samples": _count, "reg": _real,
    },
    "schedule": {
        "kind": _choice(SCHEDULE_KINDS), "m_honest": _count, "m_byzantine": _count,
        "weighting": _choice(("id", "uniform")), "byzantine_start": _count, "trace_path": _text,
    },
    "aggregator": {
        "base": _choice(BASES), "ctma": _flag, "gm_tolerance": _real, "gm_max_iters": _count,
    },
    "optimizer": {
        "horizon": _count, "eta": _eta, "eta_scale": _real, "alpha_rule": _choice(ALPHA_RULES),
        "gamma": _real, "beta_rule": _choice(BETA_RULES), "beta_const": _real,
    },
    "attack": {"kind": _choice(ATTACK_KINDS), "epsilon": _real},
    "sweep": {"axis": _choice(SWEEP_AXES), "values": None},
}


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple


@dataclass(frozen=True)
class LoadedConfig:
    simulation: SimulationConfig
    sweep: SweepSpec | None = None
    source: str | None = None


def _line_map(node, prefix="", out=None):
    """Map dotted key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _line_map(value, path, out)
    return out


def _locate(lines, path):
    while path:
        if path in lines:
            return lines[path]
        path = path.rpartition(".")[0]
    return None


def parse_config(text: str, source: str | None = None) -> LoadedConfig:
    """Parse and validate config text."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    lines = _line_map(root) if root is not None else {}

    def fail(path, message):
        return ConfigError(message, field=path, line=_locate(lines, path))

    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    for key in data:
        if key not in _TOP:
            raise fail(str(key), f"unknown key; expected one of {', '.join(sorted(_TOP))}")

    def top(key, parser, default):
        if key not in data:
            return default
        try:
            return parser(data[key])
        except ConfigError as exc:
            raise fail(key, str(exc)) from None

    def section(name, required):
        raw = data.get(name)
        if raw is None:
            if required:
                raise fail(name, "section is required")
            return None
        if not isinstance(raw, dict):
            raise fail(name, "must be a mapping")
        parsers = SECTIONS[name]
        out = {}
        for key, value in raw.items():
            if key not in parsers:
                raise fail(f"{name}.{key}", f"unknown key; expected one of {', '.join(parsers)}")
            parser = parsers[key]
            try:
                out[key] = value if parser is None else parser(value)
            except ConfigError as exc:
                raise fail(f"{name}.{key}", str(exc)) from None
        return out

    def build(name, ctor, kwargs, renames=None):
        try:
            return ctor(**kwargs)
        except (InvalidInputError, ConfigError) as exc:
            msg = str(exc)
            path = name
            for key in sorted(kwargs, key=len, reverse=True):
                shown = (renames or {}).get(key, key)
                if msg.startswith(shown + " ") or msg.startswith(shown + ":"):
                    path = f"{name}.{shown}" if shown != "lambda" else "lambda"
                    break
            raise fail(path, msg) from None

    lam = top("lambda", _real, 0.0)
    if not 0 <= lam < 0.5:
        raise fail("lambda", f"must satisfy 0 <= lambda < 0.5, got {lam}")

    problem = build("problem", ProblemSpec, section("problem", False) or {})
    sched_kw = section("schedule", False) or {}
    schedule = build("schedule", ScheduleSpec, {**sched_kw, "lam": lam}, {"lam": "lambda"})
    agg_kw = section("aggregator", False) or {}
    aggregator = build("aggregator", AggregatorSpec, {**agg_kw, "lam": lam}, {"lam": "lambda"})

    opt_kw = section("optimizer", True)
    if "horizon" not in opt_kw:
        raise fail("optimizer", "horizon is required")
    eta = opt_kw.pop("eta", "theory")
    scale = opt_kw.pop("eta_scale", None)
    if eta == "theory":
        scale = 1.0 if scale is None else scale
        if not scale > 0:
            raise fail("optimizer.eta_scale", "must be > 0")
        eta_value = 1.0  # replaced once the horizon is known
    else:
        if scale is not None:
            raise fail("optimizer.eta_scale", "only meaningful with eta: theory")
        eta_value = eta
    optimizer = build("optimizer", OptimizerConfig,
                      {**opt_kw, "eta": eta_value, "radius": problem.radius})

    attack_kw = section("attack", False)
    attack = build("attack", AttackSpec, attack_kw) if attack_kw is not None else None

    try:
        sim = SimulationConfig(
            problem=problem,
            schedule=schedule,
            aggregator=aggregator,
            optimizer=optimizer,
            attack=attack,
            trials=top("trials", _count, 1),
            metric_stride=top("metric_stride", _count, 1),
            assertion_level=top("assert_level", _choice(ASSERT_LEVELS), "off"),
            seed=top("seed", _u64, 0),
            eta_theory_scale=scale,
        )
    except ConfigError as exc:
        raise fail(exc.field or "", exc.args[0]) from None

    sweep_kw = section("sweep", False)
    sweep = None
    if sweep_kw is not None:
        if "axis" not in sweep_kw or "values" not in sweep_kw:
            raise fail("sweep", "needs both axis and values")
        values = sweep_kw["values"]
        if not isinstance(values, list) or not values:
            raise fail("sweep.values", "must be a non-empty list")
        sweep = SweepSpec(sweep_kw["axis"], tuple(values))
    return LoadedConfig(sim, sweep, source)


def load_config(path) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", field=str(path)) from None
    return parse_config(text, str(path))


def canonical(sim: SimulationConfig) -> dict:
    """Fully resolved config as plain data (defaults filled in)."""
    out = asdict(sim)
    out["optimizer"].pop("radius")
    return out


def config_hash(sim: SimulationConfig) -> str:
    """Content hash of the resolved config; key order in the file is irrelevant."""
    blob = json.dumps(canonical(sim), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def experiment_hash(sim: SimulationConfig) -> str:
    """Hash that ignores seed and trial count, used to pool repeated runs."""
    return config_hash(replace(sim, seed=0, trials=1))
