"""Server and worker state machines of asynchronous robust mu^2-SGD.

The server keeps the projected iterate ``w``, its AnyTime average ``x`` (the
point where gradients are queried) and, per worker, the latest momentum it
received and how many updates that worker has made. Honest workers keep a
STORM-style corrected momentum that reuses one sample at the new and the
previous query point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregatorSpec, WeightedVectorSet, aggregate
from .errors import InvalidInputError, InvalidStateError, SimulationFault

ALPHA_RULES = ("linear", "momentum-form")
BETA_RULES = ("one-over-s", "constant")


@dataclass(frozen=True)
class OptimizerConfig:
    """Step and averaging parameters.

    ``alpha_rule="linear"`` uses importance weights ``alpha_t = t`` and steps
    ``w <- Pi(w - eta * t * d)``. ``"momentum-form"`` keeps ``x`` as an
    exponential average with constant ``gamma`` (the AnyTime average for
    ``alpha_t = C * alpha_{1:t-1}``, ``gamma = C / (C + 1)``) and steps with
    ``eta`` alone.
    """

    eta: float
    radius: float
    horizon: int
    alpha_rule: str = "linear"
    gamma: float = 0.1
    beta_rule: str = "one-over-s"
    beta_const: float = 0.25

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidInputError("eta must be > 0")
        if not self.radius > 0:
            raise InvalidInputError("radius must be > 0")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.alpha_rule not in ALPHA_RULES:
            raise InvalidInputError(f"alpha_rule must be one of {ALPHA_RULES}")
        if self.beta_rule not in BETA_RULES:
            raise InvalidInputError(f"beta_rule must be one of {BETA_RULES}")
        if not 0 < self.gamma <= 1:
            raise InvalidInputError("gamma must be in (0, 1]")
        if not 0 < self.beta_const <= 1:
            raise InvalidInputError("beta_const must be in (0, 1]")

    @property
    def diameter(self):
        return 2 * self.radius


def theory_eta(L: float, horizon: int) -> float:
    """The largest step size covered by the convergence guarantee, ``1 / (4 L T)``."""
    return 1.0 / (4 * L * horizon)


def project(v, radius: float) -> np.ndarray:
    """Euclidean projection onto the centered ball of the given radius."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n <= radius:
        return v
    return v * (radius / n)


def beta_for(s: int, cfg: OptimizerConfig) -> float:
    """Momentum correction weight for a worker's ``s``-th momentum."""
    if s < 1:
        raise InvalidStateError(f"update count must be >= 1, got {s}")
    if cfg.beta_rule == "one-over-s":
        return 1.0 / s
    return cfg.beta_const


@dataclass
class HonestWorkerState:
    d: np.ndarray
    x_last: np.ndarray
    s: int = 1
    t_last: int = 1  # iteration index of x_last

    @classmethod
    def initial(cls, g_first, x1, t=1):
        """Worker state after its first gradient ``grad f(x_1; z)``."""
        g_first = np.asarray(g_first, dtype=float)
        _require_finite(g_first, "initial gradient")
        return cls(d=g_first, x_last=np.asarray(x1, dtype=float), s=1, t_last=t)


def _require_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise SimulationFault(f"non-finite {what}")


def worker_update(state: HonestWorkerState, g_new, g_stale, beta: float, x_query, t: int) -> HonestWorkerState:
    """Corrected momentum ``d <- g_new + (1 - beta) (d - g_stale)``.

    ``g_new`` and ``g_stale`` are the gradients of one sample at ``x_query``
    and at ``state.x_last``.
    """
    g_new = np.asarray(g_new, dtype=float)
    g_stale = np.asarray(g_stale, dtype=float)
    _require_finite(g_new, "gradient")
    _require_finite(g_stale, "stale gradient")
    if not 0 < beta <= 1:
        raise InvalidInputError(f"beta must be in (0, 1], got {beta}")
    d = g_new + (1 - beta) * (state.d - g_stale)
    return HonestWorkerState(d=d, x_last=np.asarray(x_query, dtype=float), s=state.s + 1, t_last=t)


@dataclass
class ServerState:
    """Global model and per-worker bookkeeping.

    ``t`` counts completed server iterations; the next arrival is iteration
    ``t + 1``. ``x`` is the query point handed to that arrival.
    """

    w: np.ndarray
    x: np.ndarray
    m: int
    t: int = 0
    alpha_sum: float = 1.0
    momenta: np.ndarray = field(default=None, repr=False)
    counts: np.ndarray = field(default=None)
    _alpha_comp: float = 0.0  # Kahan compensation for alpha_sum

    @classmethod
    def initial(cls, x1, m: int) -> ServerState:
        x1 = np.asarray(x1, dtype=float)
        return cls(
            w=x1.copy(),
            x=x1.copy(),
            m=m,
            momenta=np.zeros((m, x1.size)),
            counts=np.zeros(m, dtype=np.int64),
        )

    def weighted_set(self) -> WeightedVectorSet:
        return WeightedVectorSet(self.momenta, self.counts.astype(float))

    def _add_alpha(self, a):
        y = a - self._alpha_comp
        tot = self.alpha_sum + y
        self._alpha_comp = (tot - self.alpha_sum) - y
        self.alpha_sum = tot


@dataclass
class StepResult:
    query: np.ndarray  # x_t, sent to the arriving worker
    aggregate: np.ndarray  # robust aggregate used for the step


def server_step(state: ServerState, worker: int, d_received, agg: AggregatorSpec, cfg: OptimizerConfig) -> StepResult:
    """One server iteration on an arrival from ``worker``; mutates ``state``."""
    if not 0 <= worker < state.m:
        raise InvalidInputError(f"worker index {worker} out of range [0, {state.m})")
    d_received = np.asarray(d_received, dtype=float)
    _require_finite(d_received, f"momentum from worker {worker}")
    t = state.t + 1
    query = state.x.copy()

    state.momenta[worker] = d_received
    state.counts[worker] += 1
    try:
        d_hat = aggregate(state.weighted_set(), agg)
    except (InvalidInputError, FloatingPointError) as exc:
        raise SimulationFault(f"aggregation failed at t={t}: {exc}") from exc
    _require_finite(d_hat, "aggregate")

    if cfg.alpha_rule == "linear":
        state.w = project(state.w - cfg.eta * t * d_hat, cfg.radius)
        a_next = float(t + 1)
        prev = state.alpha_sum
        state._add_alpha(a_next)
        state.x = (prev / state.alpha_sum) * state.x + (a_next / state.alpha_sum) * state.w
    else:
        state.w = project(state.w - cfg.eta * d_hat, cfg.radius)
        state.x = cfg.gamma * state.w + (1 - cfg.gamma) * state.x
    # Convex combinations of ball points can drift past the boundary by an ulp.
    state.x = project(state.x, cfg.radius)
    state.t = t
    return StepResult(query=query, aggregate=d_hat)


def anytime_reference(ws, alphas) -> np.ndarray:
    """From-scratch ``sum_k alpha_k w_k / alpha_{1:t}`` for every prefix ``t``."""
    ws = np.asarray(ws, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    num = np.cumsum(alphas[:, None] * ws, axis=0)
    den = np.cumsum(alphas)
    return num / den[:, None]


def query_gap_bound(diameter: float, tau: int, t: int) -> float:
    """Upper bound ``4 D tau / t`` on the distance between consecutive query points."""
    return 4 * diameter * tau / t


def query_gap_ok(x_now, x_prev, diameter, tau, t, rtol=1e-12) -> bool:
    gap = float(np.linalg.norm(np.asarray(x_now) - np.asarray(x_prev)))
    return gap <= query_gap_bound(diameter, tau, t) * (1 + rtol) + 1e-15 * diameter


__all__ = [
    "OptimizerConfig",
    "ServerState",
    "HonestWorkerState",
    "StepResult",
    "project",
    "beta_for",
    "worker_update",
    "server_step",
    "theory_eta",
    "anytime_reference",
    "query_gap_bound",
    "query_gap_ok",
]
