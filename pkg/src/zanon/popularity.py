"""Per-attribute popularity inputs for the model and the simulator."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Literal, Optional, Sequence

import numpy as np

Kind = Literal["rates", "exposure-probs"]

DEFAULT_TOP_RATE = 0.05


@dataclass(frozen=True)
class RatePopularity:
    """Rank-ordered exposure rates (per unit time) or exposure probabilities.

    Values are stored most popular first. ``labels`` optionally names the
    attribute at each rank.
    """

    kind: Kind
    values: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("rates", "exposure-probs"):
            raise ValueError(f"unknown popularity kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("popularity values must be one-dimensional")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("popularity values must be finite and >= 0")
        if self.kind == "exposure-probs" and np.any(values > 1):
            raise ValueError("exposure probabilities must lie in [0, 1]")
        if np.any(np.diff(values) > 0):
            raise ValueError("popularity values must be non-increasing by rank")
        if self.labels is not None and len(self.labels) != len(values):
            raise ValueError("labels must align with values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self):
        return len(self.values)

    def top(self, A: int) -> "RatePopularity":
        if A > len(self):
            raise ValueError(f"only {len(self)} ranks available, asked for {A}")
        labels = None if self.labels is None else self.labels[:A]
        return RatePopularity(self.kind, self.values[:A], labels)

    def as_rates(self, delta_t: float = 1.0) -> np.ndarray:
        """Per-unit-time rates; probabilities are inverted through 1 - exp(-rate*dt)."""
        if self.kind == "rates":
            return np.array(self.values)
        with np.errstate(divide="ignore"):
            return -np.log1p(-self.values) / delta_t

    def as_probs(self, delta_t: float = 1.0) -> np.ndarray:
        if self.kind == "exposure-probs":
            return np.array(self.values)
        return -np.expm1(-self.values * delta_t)


def power_law_rates(A: int, lambda_1: float = DEFAULT_TOP_RATE) -> RatePopularity:
    """Rates ``lambda_1 / r`` for ranks ``r = 1..A``."""
    if isinstance(A, bool) or int(A) != A or A < 1:
        raise ValueError(f"A must be a positive integer, got {A!r}")
    if not (math.isfinite(lambda_1) and lambda_1 > 0):
        raise ValueError(f"lambda_1 must be > 0, got {lambda_1!r}")
    ranks = np.arange(1, int(A) + 1, dtype=float)
    return RatePopularity("rates", lambda_1 / ranks)


def piecewise_power_law(A: int, anchors: Sequence[tuple[int, float]],
                        tail_count: int = 0, tail_value: float = 0.0) -> RatePopularity:
    """Exposure probabilities interpolated linearly in log-log space.

    ``anchors`` are ``(rank, p)`` points covering ranks 1 to ``A - tail_count``.
    The last ``tail_count`` ranks take the constant ``tail_value``, e.g. the
    probability of an attribute seen by a single user once in a whole log.
    """
    ranks = np.array([r for r, _ in anchors], dtype=float)
    probs = np.array([p for _, p in anchors], dtype=float)
    if np.any(np.diff(ranks) <= 0) or ranks[0] != 1:
        raise ValueError("anchor ranks must start at 1 and increase")
    if tail_count < 0 or tail_count >= A:
        raise ValueError("tail_count must be in [0, A)")
    head = A - tail_count
    if ranks[-1] != head:
        raise ValueError(f"last anchor must be at rank {head}")
    r = np.arange(1, A + 1, dtype=float)
    values = np.exp(np.interp(np.log(r), np.log(ranks), np.log(probs)))
    values[head:] = tail_value
    return RatePopularity("exposure-probs", values)


@dataclass(frozen=True)
class AccessLog:
    """Observations spanning ``[start, start + period_length)``."""

    records: Sequence
    period_length: float
    window: float
    start: float = 0.0

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be > 0")
        if self.period_length < self.window:
            raise ValueError("period_length must be at least one window")


@dataclass(frozen=True)
class Estimate:
    popularity: RatePopularity
    users: int
    windows: int


def estimate_exposure_probs(log: AccessLog) -> Estimate:
    """Average, over whole windows, of the fraction of users exposing each attribute.

    Records past the last whole window are ignored. The user population is
    every distinct user appearing anywhere in the log.
    """
    if not log.records:
        raise ValueError("access log is empty")
    W = int(math.floor(log.period_length / log.window + 1e-9))
    end = log.start + W * log.window
    users: set = set()
    seen: dict[Hashable, set] = defaultdict(set)
    for t, u, a in log.records:
        users.add(u)
        if log.start <= t < end:
            w = int((t - log.start) // log.window)
            seen[a].add((u, min(w, W - 1)))
    denom = W * len(users)
    items = sorted(((len(uw) / denom, a) for a, uw in seen.items()),
                   key=lambda x: (-x[0], str(x[1])))
    values = np.array([p for p, _ in items], dtype=float)
    labels = tuple(a for _, a in items)
    return Estimate(RatePopularity("exposure-probs", values, labels), len(users), W)
