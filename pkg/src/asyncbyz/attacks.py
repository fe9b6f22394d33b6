"""Byzantine worker behaviours.

sign-flip and label-flip workers run the honest protocol (label-flip against
a corrupted oracle) and only tamper with what they send. little and empire
are omniscient: they see the honest momenta currently stored at the server,
weighted by update counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .aggregation import WeightedVectorSet, weighted_mean
from .errors import InvalidInputError, InvalidStateError

KINDS = ("sign-flip", "label-flip", "little", "empire")
COLLUDING = ("little", "empire")

_Q_HI = 1 - 1e-9


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "sign-flip"
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown attack {self.kind!r}; expected one of {KINDS}")
        if self.kind == "empire" and not self.epsilon > 0:
            raise InvalidInputError("empire attack needs epsilon > 0")

    @property
    def collusion(self) -> bool:
        return self.kind in COLLUDING

    @property
    def needs_shadow(self) -> bool:
        """Whether the attacker runs its own (possibly corrupted) honest worker."""
        return self.kind in ("sign-flip", "label-flip")


def weighted_std(wset: WeightedVectorSet) -> np.ndarray:
    """Coordinate-wise weighted population standard deviation."""
    mu = weighted_mean(wset)
    w = wset.weights
    var = w @ (wset.vectors - mu) ** 2 / w.sum()
    return np.sqrt(var)


def zmax(s: int, s_byz: int) -> float:
    """Deviation budget of the little attack, in standard deviations.

    The synchronous rule with ``n`` workers of which ``f`` are Byzantine takes
    ``k = floor(n/2 + 1) - f`` supporters and ``z = Phi^{-1}((n - k) / n)``;
    here update counts stand in for worker counts. The quantile is clamped to
    ``[0.5, 1 - 1e-9]`` so ``z >= 0``.
    """
    if s < 1 or not 0 <= s_byz < s:
        raise InvalidInputError(f"need s >= 1 and 0 <= s_byz < s, got s={s}, s_byz={s_byz}")
    supporters = math.floor(s / 2 + 1) - s_byz
    q = (s - supporters) / s
    q = min(max(q, 0.5), _Q_HI)
    return NormalDist().inv_cdf(q)


def byzantine_update(spec: AttackSpec, honest_view: WeightedVectorSet | None, own_honest_d=None,
                     update_counts: tuple[int, int] | None = None) -> np.ndarray:
    """The vector a Byzantine worker transmits.

    ``own_honest_d`` is what the worker would have sent if honest (for
    label-flip, already computed against the flipped oracle). ``update_counts``
    is ``(total updates, Byzantine updates)`` so far, used by little.
    """
    if spec.kind == "sign-flip":
        return -np.asarray(own_honest_d, dtype=float)
    if spec.kind == "label-flip":
        return np.asarray(own_honest_d, dtype=float).copy()
    if honest_view is None:
        raise InvalidStateError(f"{spec.kind} attack needs a view of honest momenta, none available")
    if spec.kind == "empire":
        return -spec.epsilon * weighted_mean(honest_view)
    if update_counts is None:
        raise InvalidStateError("little attack needs update counts")
    z = zmax(*update_counts)
    return weighted_mean(honest_view) - weighted_std(honest_view) * z
