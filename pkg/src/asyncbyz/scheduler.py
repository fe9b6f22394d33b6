"""Arrival schedules for the asynchronous server.

Workers ``0 .. m_honest-1`` are honest and ``m_honest .. m-1`` Byzantine.
Every schedule enforces the Byzantine budget ``t_B <= lambda * t`` on every
prefix: a Byzantine draw that would break it is replaced by an honest draw.
Delays are measured from the arrival sequence, never sampled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EndOfTrace, InvalidInputError

KINDS = ("iid-categorical", "squared-id", "round-robin", "burst-then-lambda", "trace-file")
WEIGHTINGS = ("id", "uniform")


@dataclass(frozen=True)
class ScheduleSpec:
    """Who arrives when.

    ``iid-categorical`` and ``squared-id`` pick the Byzantine group with
    probability ``lam`` and otherwise the honest group, then a worker inside
    the group with probability proportional to its 1-based id (``weighting="id"``),
    its squared id (``squared-id``), or uniformly (``weighting="uniform"``).
    ``burst-then-lambda`` is ``iid-categorical`` with Byzantine arrivals held
    back until ``byzantine_start``. ``trace-file`` replays ``trace_path``.
    """

    kind: str = "iid-categorical"
    m_honest: int = 1
    m_byzantine: int = 0
    lam: float = 0.0
    weighting: str = "id"
    byzantine_start: int = 0
    trace_path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown schedule {self.kind!r}; expected one of {KINDS}")
        if self.m_honest < 1:
            raise InvalidInputError("m_honest must be >= 1")
        if self.m_byzantine < 0:
            raise InvalidInputError("m_byzantine must be >= 0")
        if not 0 <= self.lam < 0.5:
            raise InvalidInputError(f"lambda must satisfy 0 <= lambda < 0.5, got {self.lam}")
        if self.weighting not in WEIGHTINGS:
            raise InvalidInputError(f"weighting must be one of {WEIGHTINGS}")
        if self.kind == "round-robin" and self.m_byzantine / self.m > self.lam:
            raise InvalidInputError(
                f"round-robin gives Byzantine workers a {self.m_byzantine}/{self.m} share, above lambda={self.lam}"
            )
        if self.kind == "trace-file" and not self.trace_path:
            raise InvalidInputError("trace-file schedule needs trace_path")

    @property
    def m(self) -> int:
        return self.m_honest + self.m_byzantine

    def group_probabilities(self, size: int) -> np.ndarray:
        ids = np.arange(1, size + 1, dtype=float)
        if self.kind == "squared-id":
            p = ids ** 2
        elif self.weighting == "uniform":
            p = np.ones(size)
        else:
            p = ids
        return p / p.sum()

    def probabilities(self) -> np.ndarray:
        """Marginal arrival probabilities over all ``m`` workers before budget rejection."""
        if self.kind in ("round-robin", "trace-file"):
            raise InvalidInputError(f"{self.kind} schedule is not categorical")
        honest = self.group_probabilities(self.m_honest)
        if self.m_byzantine == 0:
            return honest
        byz = self.group_probabilities(self.m_byzantine)
        return np.concatenate([(1 - self.lam) * honest, self.lam * byz])


@dataclass(frozen=True)
class ArrivalEvent:
    t: int
    worker: int
    is_byzantine: bool
    tau: int


def _pick(cdf, u):
    return min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)


def budget_allows(t_byz: int, t: int, lam: float) -> bool:
    """Whether iteration ``t`` may be Byzantine given ``t_byz`` earlier Byzantine ones."""
    return t_byz + 1 <= lam * t


class Scheduler:
    """Stateful arrival generator; ``next_arrival`` emits iterations ``1, 2, ...``."""

    def __init__(self, spec: ScheduleSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.t = 0
        self.t_byz = 0
        self.last_arrival = np.zeros(spec.m, dtype=np.int64)
        self._events = None
        if spec.kind == "trace-file":
            self._events = iter(read_trace(spec.trace_path))
        elif spec.kind != "round-robin":
            self._honest_cdf = np.cumsum(spec.group_probabilities(spec.m_honest))
            if spec.m_byzantine:
                self._byz_cdf = np.cumsum(spec.group_probabilities(spec.m_byzantine))

    def _draw(self, t: int) -> int:
        spec = self.spec
        if spec.kind == "round-robin":
            return (t - 1) % spec.m
        byz_open = (
            spec.m_byzantine > 0
            and t > spec.byzantine_start
            and budget_allows(self.t_byz, t, spec.lam)
        )
        u = self.rng.random()
        if spec.m_byzantine and u < spec.lam:
            if byz_open:
                return spec.m_honest + _pick(self._byz_cdf, self.rng.random())
        return _pick(self._honest_cdf, self.rng.random())

    def next_arrival(self) -> ArrivalEvent:
        t = self.t + 1
        if self._events is not None:
            try:
                rec_t, worker, is_byz = next(self._events)
            except StopIteration:
                raise EndOfTrace(f"trace exhausted after {self.t} events") from None
            if rec_t != t:
                raise InvalidInputError(f"trace event {rec_t} out of order, expected {t}")
            if not 0 <= worker < self.spec.m or is_byz != (worker >= self.spec.m_honest):
                raise InvalidInputError(f"trace event {t}: worker {worker} inconsistent with schedule")
        else:
            worker = self._draw(t)
            is_byz = worker >= self.spec.m_honest
        if is_byz:
            if not budget_allows(self.t_byz, t, self.spec.lam):
                raise InvalidInputError(f"Byzantine arrival at t={t} exceeds budget lambda={self.spec.lam}")
            self.t_byz += 1
        tau = t - int(self.last_arrival[worker])
        self.last_arrival[worker] = t
        self.t = t
        return ArrivalEvent(t=t, worker=worker, is_byzantine=is_byz, tau=tau)


def generate(spec: ScheduleSpec, rng: np.random.Generator, horizon: int) -> list[ArrivalEvent]:
    sched = Scheduler(spec, rng)
    return [sched.next_arrival() for _ in range(horizon)]


@dataclass
class DelayStats:
    tau_max: np.ndarray  # per iteration, max over arrived workers of their latest delay
    mu_max: float
    k_per_worker: dict
    k_estimate: float


def delay_stats(events, m: int | None = None) -> DelayStats:
    """Delay diagnostics of a complete arrival trace.

    A worker's first arrival has no predecessor, so it enters ``tau_max`` but
    not the per-worker ratio ``max(tau) / min(tau)``.
    """
    events = list(events)
    if m is None:
        m = 1 + max(e.worker for e in events)
    latest = np.zeros(m, dtype=np.int64)
    tau_max = np.empty(len(events), dtype=np.int64)
    lo = {}
    hi = {}
    seen = set()
    for k, e in enumerate(events):
        latest[e.worker] = e.tau
        tau_max[k] = latest.max()
        if e.worker in seen:
            lo[e.worker] = min(lo.get(e.worker, e.tau), e.tau)
            hi[e.worker] = max(hi.get(e.worker, e.tau), e.tau)
        seen.add(e.worker)
    k_per = {w: hi[w] / lo[w] for w in sorted(lo)}
    k_est = max(k_per.values()) if k_per else 1.0
    mu = float(tau_max.mean()) if len(events) else 0.0
    return DelayStats(tau_max=tau_max, mu_max=mu, k_per_worker=k_per, k_estimate=k_est)


def write_trace(events, path):
    """Write ``t,worker,is_byz`` lines (0-based worker index, is_byz in {0,1})."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for e in events:
            w.writerow([e.t, e.worker, int(e.is_byzantine)])


def read_trace(path):
    """Yield ``(t, worker, is_byz)`` from a trace file; ``#`` lines are comments."""
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise InvalidInputError(f"{path}:{lineno}: expected 't,worker,is_byz'")
            try:
                t, worker, is_byz = (int(p) for p in parts)
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: non-integer field") from None
            yield t, worker, bool(is_byz)
