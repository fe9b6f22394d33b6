"""Weighted robust aggregation rules.

Every rule takes a :class:`WeightedVectorSet` (``m`` vectors of dimension
``d`` with nonnegative weights, typically per-worker update counts) and
returns a single ``d``-vector. ``aggregate`` composes a base rule with the
optional centered trimmed meta-aggregator (CTMA).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

BASES = ("weighted-mean", "weighted-gm", "weighted-cwmed")

# Weiszfeld singularity guard: distances below this are clamped.
_GM_SINGULAR = 1e-12


class GMConvergenceWarning(RuntimeWarning):
    """Weiszfeld iteration stopped at ``max_iters`` before reaching tolerance."""


@dataclass(frozen=True)
class WeightedVectorSet:
    """``m`` vectors (rows of ``vectors``) with nonnegative ``weights``."""

    vectors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise InvalidInputError(f"vectors must be an (m, d) array, got shape {vectors.shape}")
        if weights.shape != (vectors.shape[0],):
            raise InvalidInputError(
                f"got {vectors.shape[0]} vectors but weights of shape {weights.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise InvalidInputError("vectors contain NaN or Inf")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvalidInputError("weights must be finite and nonnegative")
        if not weights.sum() > 0:
            raise InvalidInputError("total weight must be positive")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def positive(self) -> WeightedVectorSet:
        """The subset with strictly positive weight."""
        keep = self.weights > 0
        if keep.all():
            return self
        return WeightedVectorSet(self.vectors[keep], self.weights[keep])


@dataclass(frozen=True)
class AggregatorSpec:
    base: str = "weighted-cwmed"
    ctma: bool = False
    lam: float = 0.0
    gm_tolerance: float = 1e-9
    gm_max_iters: int = 1000

    def __post_init__(self):
        if self.base not in BASES:
            raise InvalidInputError(f"unknown base aggregator {self.base!r}; expected one of {BASES}")
        if not 0 <= self.lam < 0.5:
            raise InvalidInputError(f"lambda must satisfy 0 <= lambda < 0.5, got {self.lam}")
        if not self.gm_tolerance > 0:
            raise InvalidInputError("gm_tolerance must be > 0")
        if self.gm_max_iters < 1:
            raise InvalidInputError("gm_max_iters must be >= 1")

    @property
    def name(self) -> str:
        return self.base + ("+ctma" if self.ctma else "")


@dataclass(frozen=True)
class RobustnessCertificate:
    c_lambda: float


def weighted_mean(wset: WeightedVectorSet) -> np.ndarray:
    w = wset.weights
    return (w / w.sum()) @ wset.vectors


def weiszfeld(wset: WeightedVectorSet, tolerance=1e-9, max_iters=1000):
    """Weighted Weiszfeld iteration for the geometric median.

    Returns ``(y, n_iter, converged)``. Starts at the weighted mean and stops
    once the iterate moves less than ``tolerance``; the returned point is the
    iterate with the lowest objective seen. The input point nearest the
    iterate is tested for optimality (its subgradient condition) whenever the
    iterate comes close to it and on power-of-two iterations; a passing point
    is returned exactly. This avoids the slow crawl Weiszfeld makes towards
    minimizers sitting on an input point, which can stall far from the point
    when its optimality condition is nearly tight.
    """
    x, s = wset.vectors, wset.weights
    if wset.m == 1:
        return x[0].copy(), 0, True
    y = s @ x / s.sum()
    best, best_obj = y, math.inf
    for it in range(1, max_iters + 1):
        diff = x - y
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        obj = float(s @ dist)
        if obj < best_obj:
            best, best_obj = y, obj
        k = int(np.argmin(dist))
        near = dist[k] <= 1e-3 * dist.max() or it & (it - 1) == 0
        if near and _is_vertex_optimum(k, x, s):
            return x[k].copy(), it, True
        inv = s / np.maximum(dist, _GM_SINGULAR)
        y_new = inv @ x / inv.sum()
        step = y_new - y
        y = y_new
        if math.sqrt(float(step @ step)) <= tolerance:
            diff = x - y
            if float(s @ np.sqrt(np.einsum("ij,ij->i", diff, diff))) <= best_obj:
                best = y
            return best, it, True
    warnings.warn(
        f"weighted geometric median did not reach tolerance {tolerance} in {max_iters} iterations",
        GMConvergenceWarning,
        stacklevel=2,
    )
    return best, max_iters, False


def _is_vertex_optimum(k, x, s):
    # x_k minimizes sum s_i ||y - x_i|| iff ||sum_{i != k} s_i u_i|| <= s_k,
    # u_i the unit vector from x_k towards x_i (coincident points fold into s_k).
    diff = x - x[k]
    dist = np.linalg.norm(diff, axis=1)
    same = dist == 0
    others = ~same
    if not others.any():
        return True
    pull = (s[others] / dist[others]) @ diff[others]
    return float(np.linalg.norm(pull)) <= float(s[same].sum())


def weighted_geometric_median(wset: WeightedVectorSet, tolerance=1e-9, max_iters=1000) -> np.ndarray:
    """Approximate minimizer of ``sum_i s_i * ||y - x_i||``."""
    y, _, _ = weiszfeld(wset.positive(), tolerance, max_iters)
    return y


def weighted_median_1d(values, weights) -> float:
    """Weighted median of scalars.

    The first sorted value whose cumulative weight exceeds half the total;
    if some prefix sums to exactly half, the midpoint of that value and the
    next one.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v, cum = values[order], np.cumsum(weights[order])
    half = cum[-1] / 2
    exact = np.flatnonzero(cum == half)
    if exact.size and exact[0] + 1 < v.size:
        j = exact[0]
        return float((v[j] + v[j + 1]) / 2)
    return float(v[np.argmax(cum > half)])


def weighted_cwmed(wset: WeightedVectorSet) -> np.ndarray:
    """Coordinate-wise weighted median (ties in value keep input order)."""
    x, s = wset.vectors, wset.weights
    order = np.argsort(x, axis=0, kind="stable")
    v = np.take_along_axis(x, order, axis=0)
    cum = np.cumsum(s[order], axis=0)
    half = cum[-1] / 2
    cols = np.arange(x.shape[1])
    out = v[np.argmax(cum > half, axis=0), cols]
    exact = cum == half
    exact[-1] = False
    if exact.any():
        for k in np.flatnonzero(exact.any(axis=0)):
            j = int(np.argmax(exact[:, k]))
            out[k] = (v[j, k] + v[j + 1, k]) / 2
    return out


def ctma_retained(wset: WeightedVectorSet, lam: float, anchor):
    """Indices and weights kept by the centered trim.

    Inputs are ranked by distance to ``anchor`` (stable, so equal distances
    keep input order) and the closest ones are kept until their weight
    reaches ``(1 - lam)`` of the total; the last kept input contributes only
    the fraction of its weight needed to hit that target exactly.
    """
    if not 0 <= lam < 0.5:
        raise InvalidInputError(f"lambda must satisfy 0 <= lambda < 0.5, got {lam}")
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    if anchor.shape != (wset.dim,):
        raise InvalidInputError(f"anchor has dimension {anchor.size}, expected {wset.dim}")
    dist = np.linalg.norm(wset.vectors - anchor, axis=1)
    order = np.argsort(dist, kind="stable")
    cum = np.cumsum(wset.weights[order])
    target = (1 - lam) * cum[-1]
    j = min(int(np.searchsorted(cum, target, side="left")), wset.m - 1)
    kept = order[: j + 1]
    weights = wset.weights[kept].copy()
    weights[-1] = target - (cum[j - 1] if j > 0 else 0.0)
    return kept, weights


def ctma(wset: WeightedVectorSet, lam: float, anchor) -> np.ndarray:
    """Centered trimmed meta-aggregation around ``anchor``."""
    kept, weights = ctma_retained(wset, lam, anchor)
    return weights @ wset.vectors[kept] / weights.sum()


def base_aggregate(wset: WeightedVectorSet, spec: AggregatorSpec) -> np.ndarray:
    if spec.base == "weighted-mean":
        return weighted_mean(wset)
    if spec.base == "weighted-gm":
        y, _, _ = weiszfeld(wset, spec.gm_tolerance, spec.gm_max_iters)
        return y
    return weighted_cwmed(wset)


def aggregate(wset: WeightedVectorSet, spec: AggregatorSpec) -> np.ndarray:
    """Apply the configured rule to the positive-weight entries of ``wset``."""
    wset = wset.positive()
    out = base_aggregate(wset, spec)
    if spec.ctma:
        out = ctma(wset, spec.lam, out)
    return out


def certificate(spec: AggregatorSpec) -> RobustnessCertificate:
    """Theoretical robustness coefficient of the configured rule.

    ``inf`` for the weighted mean, which has no bounded coefficient.
    """
    if spec.base == "weighted-mean":
        return RobustnessCertificate(math.inf)
    lam = spec.lam
    c = (1 + lam / (1 - 2 * lam)) ** 2
    if spec.ctma:
        c *= lam
    return RobustnessCertificate(c)


def ctma_bound(c_base: float, lam: float) -> float:
    """Robustness coefficient guaranteed for CTMA over a base with ``c_base``."""
    return 60 * lam * (1 + c_base)
