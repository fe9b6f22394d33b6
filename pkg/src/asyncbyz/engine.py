"""Deterministic event loop for asynchronous Byzantine-robust mu^2-SGD runs."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import AggregatorSpec, WeightedVectorSet
from .attacks import AttackSpec, byzantine_update
from .errors import ConfigError, EndOfTrace, InvalidInputError, InvalidStateError, SimulationFault
from .optimizer import (
    HonestWorkerState,
    OptimizerConfig,
    ServerState,
    beta_for,
    query_gap_ok,
    server_step,
    theory_eta,
    worker_update,
)
from .problems import ProblemSpec, build_problem
from .scheduler import ScheduleSpec, Scheduler

log = logging.getLogger(__name__)

ASSERT_LEVELS = ("off", "debug")
SWEEP_AXES = ("T", "lambda", "aggregator", "attack", "eta")


@dataclass(frozen=True)
class SimulationConfig:
    problem: ProblemSpec
    schedule: ScheduleSpec
    aggregator: AggregatorSpec
    optimizer: OptimizerConfig
    attack: AttackSpec | None = None
    trials: int = 1
    metric_stride: int = 1
    assertion_level: str = "off"
    seed: int = 0
    # When set, eta is tied to the horizon: eta = eta_theory_scale / (4 L T).
    eta_theory_scale: float | None = None

    def __post_init__(self):
        if self.eta_theory_scale is not None:
            if not self.eta_theory_scale > 0:
                raise ConfigError("must be > 0", field="optimizer.eta")
            eta = self.eta_theory_scale * theory_eta(self.problem.L, self.optimizer.horizon)
            object.__setattr__(self, "optimizer", replace(self.optimizer, eta=eta))
        if self.trials < 1:
            raise ConfigError("must be >= 1", field="trials")
        if self.metric_stride < 1:
            raise ConfigError("must be >= 1", field="metric_stride")
        if self.assertion_level not in ASSERT_LEVELS:
            raise ConfigError(f"must be one of {ASSERT_LEVELS}", field="assert_level")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("must be a 64-bit unsigned integer", field="seed")
        if self.schedule.m_byzantine > 0 and self.attack is None:
            raise ConfigError("Byzantine workers configured without an attack", field="attack")
        if abs(self.optimizer.radius - self.problem.radius) > 0:
            raise ConfigError("optimizer radius must equal the problem domain radius", field="optimizer.radius")

    @property
    def horizon(self) -> int:
        return self.optimizer.horizon


@dataclass(frozen=True)
class TraceRow:
    trial: int
    t: int
    excess_loss: float
    grad_error_sq: float
    tau_max: int
    honest_frac: float
    wallclock_ns: int = 0


@dataclass
class TrialResult:
    trial: int
    rows: list
    final_excess_loss: float
    t_byzantine: int
    counts: np.ndarray
    query_gap_checks: int = 0
    query_gap_violations: int = 0
    fault: str | None = None
    events: list | None = None
    last_sent: dict | None = None
    server: ServerState | None = None


@dataclass
class RunResult:
    config: SimulationConfig
    trials: list = field(default_factory=list)

    @property
    def rows(self) -> list:
        return [r for tr in self.trials for r in tr.rows]

    @property
    def query_gap_checks(self) -> int:
        return sum(tr.query_gap_checks for tr in self.trials)

    @property
    def query_gap_violations(self) -> int:
        return sum(tr.query_gap_violations for tr in self.trials)

    @property
    def faults(self) -> list:
        return [(tr.trial, tr.fault) for tr in self.trials if tr.fault]

    def final_excess_losses(self) -> np.ndarray:
        return np.array([tr.final_excess_loss for tr in self.trials])

    def summary(self) -> tuple[float, float, int]:
        """Mean and standard error of the final excess loss over trials."""
        return mean_stderr(self.final_excess_losses())


def mean_stderr(values) -> tuple[float, float, int]:
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        return math.nan, math.nan, 0
    mean = float(v.mean())
    if n == 1 or not np.all(np.isfinite(v)):
        return mean, math.nan if n > 1 else 0.0, n
    return mean, float(v.std(ddof=1) / math.sqrt(n)), n


def trial_streams(seed: int, trial: int):
    """Independent generators for the schedule, honest data and attackers of one trial."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial,))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def _honest_view(server: ServerState, m_honest: int):
    counts = server.counts[:m_honest]
    if not counts.any():
        return None
    keep = counts > 0
    return WeightedVectorSet(server.momenta[:m_honest][keep], counts[keep].astype(float))


def run_trial(config: SimulationConfig, trial: int, record: bool = False) -> TrialResult:
    """Run one trial; ``record`` keeps the event list and final server state."""
    problem = build_problem(config.problem)
    sched_spec, cfg, agg = config.schedule, config.optimizer, config.aggregator
    attack = config.attack
    sched_rng, data_rng, attack_rng = trial_streams(config.seed, trial)
    scheduler = Scheduler(sched_spec, sched_rng)
    m_honest, m = sched_spec.m_honest, sched_spec.m
    x1 = np.zeros(problem.dim)
    server = ServerState.initial(x1, m)
    workers: list[HonestWorkerState | None] = [None] * m
    shadow_problem = None
    if attack is not None and attack.kind == "label-flip":
        shadow_problem = problem.label_flipped()
    elif attack is not None and attack.needs_shadow:
        shadow_problem = problem

    latest_tau = np.zeros(m, dtype=np.int64)
    debug = config.assertion_level == "debug" and cfg.alpha_rule == "linear"
    diameter = cfg.diameter
    rows = []
    events = [] if record else None
    last_sent = {} if record else None
    checks = violations = 0
    fault = None
    start = time.perf_counter_ns()

    try:
        for _ in range(cfg.horizon):
            ev = scheduler.next_arrival()
            t, i = ev.t, ev.worker
            latest_tau[i] = ev.tau
            if ev.is_byzantine:
                oracle, rng = shadow_problem, attack_rng
            else:
                oracle, rng = problem, data_rng

            if oracle is not None:
                ws = workers[i]
                if ws is None:
                    ws = HonestWorkerState.initial(oracle.stochastic_gradient(x1, oracle.draw_sample(rng)), x1)
                sent = ws.d
                if ev.is_byzantine:
                    sent = byzantine_update(attack, None, ws.d)
            else:
                view = _honest_view(server, m_honest)
                sent = byzantine_update(attack, view, None, (t, scheduler.t_byz))

            if record:
                events.append(ev)
                last_sent[i] = np.array(sent, copy=True)
            step = server_step(server, i, sent, agg, cfg)
            q = step.query

            if oracle is not None:
                z = oracle.draw_sample(rng)
                g_new = oracle.stochastic_gradient(q, z)
                g_old = oracle.stochastic_gradient(ws.x_last, z)
                if debug and not ev.is_byzantine:
                    checks += 1
                    if not query_gap_ok(q, ws.x_last, diameter, t - ws.t_last, t):
                        violations += 1
                        log.warning("query-gap bound violated at t=%d worker=%d", t, i)
                workers[i] = worker_update(ws, g_new, g_old, beta_for(ws.s + 1, cfg), q, t)

            if t % config.metric_stride == 0:
                err = step.aggregate - problem.gradient(q)
                rows.append(TraceRow(
                    trial=trial,
                    t=t,
                    excess_loss=problem.excess_loss(server.x),
                    grad_error_sq=float(err @ err),
                    tau_max=int(latest_tau.max()),
                    honest_frac=(t - scheduler.t_byz) / t,
                    wallclock_ns=time.perf_counter_ns() - start,
                ))
    except (SimulationFault, InvalidInputError, InvalidStateError, EndOfTrace, FloatingPointError) as exc:
        fault = f"{type(exc).__name__}: {exc}"
        log.error("trial %d aborted at t=%d: %s", trial, server.t, fault)
        rows.append(TraceRow(trial, server.t + 1, math.nan, math.nan, int(latest_tau.max()),
                             (server.t - scheduler.t_byz) / max(server.t, 1),
                             time.perf_counter_ns() - start))

    final = problem.excess_loss(server.x) if fault is None else math.nan
    return TrialResult(
        trial=trial,
        rows=rows,
        final_excess_loss=final,
        t_byzantine=scheduler.t_byz,
        counts=server.counts.copy(),
        query_gap_checks=checks,
        query_gap_violations=violations,
        fault=fault,
        events=events,
        last_sent=last_sent,
        server=server if record else None,
    )


def _run_trial_star(args):
    return run_trial(*args)


def run(config: SimulationConfig, workers: int = 1) -> RunResult:
    """All trials of ``config``; ``workers > 1`` runs trials in worker processes.

    Trials only share the read-only config, so serial and parallel runs give
    identical results, merged in trial order.
    """
    jobs = [(config, k) for k in range(config.trials)]
    if workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_trial_star, jobs))
    else:
        trials = [run_trial(*job) for job in jobs]
    return RunResult(config=config, trials=trials)


def with_axis(config: SimulationConfig, axis: str, value) -> SimulationConfig:
    """Copy of ``config`` with one sweepable parameter replaced."""
    if axis == "T":
        horizon = int(value)
        opt = config.optimizer
        return replace(config, optimizer=replace(opt, horizon=horizon))
    if axis == "lambda":
        lam = float(value)
        return replace(
            config,
            schedule=replace(config.schedule, lam=lam),
            aggregator=replace(config.aggregator, lam=lam),
        )
    if axis == "aggregator":
        base, _, extra = str(value).partition("+")
        if extra not in ("", "ctma"):
            raise ConfigError(f"unknown aggregator {value!r}", field="sweep.values")
        return replace(config, aggregator=replace(config.aggregator, base=base, ctma=extra == "ctma"))
    if axis == "attack":
        if str(value) == "none":
            return replace(config, attack=None, schedule=replace(config.schedule, m_byzantine=0))
        base = config.attack or AttackSpec()
        return replace(config, attack=replace(base, kind=str(value)))
    if axis == "eta":
        return replace(config, optimizer=replace(config.optimizer, eta=float(value)), eta_theory_scale=None)
    raise ConfigError(f"not a sweepable axis; expected one of {SWEEP_AXES}", field="sweep.axis")


@dataclass
class SweepPoint:
    value: object
    config: SimulationConfig
    result: RunResult

    @property
    def summary(self):
        return self.result.summary()


def sweep(base: SimulationConfig, axis: str, values, workers: int = 1) -> list[SweepPoint]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"not a sweepable axis; expected one of {SWEEP_AXES}", field="sweep.axis")
    points = []
    for v in values:
        try:
            cfg = with_axis(base, axis, v)
        except (InvalidInputError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"value {v!r}: {exc}", field="sweep.values") from exc
        points.append(SweepPoint(v, cfg, run(cfg, workers=workers)))
    return points
