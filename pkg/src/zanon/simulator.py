"""Synthetic streams from the homogeneous Poisson user model, a brute-force
reference anonymizer, and empirical k-anonymity measurement."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .popularity import RatePopularity
from .stream import (AnonymizerState, Decision, Observation, Verdict,
                     ZAnonConfig)


@dataclass(frozen=True)
class SimConfig:
    U: int
    A: int
    rates: RatePopularity
    delta_t: float = 1.0
    N: int = 24
    z: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.U < 1:
            raise ValueError("U must be >= 1")
        if self.A < 1 or self.A > len(self.rates):
            raise ValueError(f"A must be in [1, {len(self.rates)}]")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be > 0")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.z < 1:
            raise ValueError("z must be >= 1")

    @property
    def horizon(self) -> float:
        return self.N * self.delta_t

    def rate_vector(self) -> np.ndarray:
        return self.rates.as_rates(self.delta_t)[: self.A]


def generate_arrays(config: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time-sorted ``(t, user, attribute_rank0)`` arrays.

    One merged Poisson process per attribute, each arrival assigned to a
    uniformly drawn user. For independent homogeneous users this has the same
    law as simulating every user separately.
    """
    rng = np.random.default_rng(config.seed)
    rates = config.rate_vector()
    counts = rng.poisson(config.U * rates * config.horizon)
    total = int(counts.sum())
    attrs = np.repeat(np.arange(config.A, dtype=np.int64), counts)
    users = rng.integers(0, config.U, size=total, dtype=np.int64)
    times = rng.uniform(0.0, config.horizon, size=total)
    # ties: time, then attribute rank, then generation order
    order = np.lexsort((np.arange(total), attrs, times))
    return times[order], users[order], attrs[order]


def generate_stream(config: SimConfig) -> list[Observation]:
    times, users, attrs = generate_arrays(config)
    return [Observation(t, u, a) for t, u, a in zip(times.tolist(), users.tolist(), attrs.tolist())]


def oracle_anonymize(stream: Sequence[Observation], z: int, delta_t: float) -> list[Decision]:
    """Reference decisions by direct counting over the stream history.

    For each record, walk back through earlier records of the same attribute
    and collect distinct users whose timestamp lies in ``[t - delta_t, t]``.
    """
    history: dict = defaultdict(list)
    decisions = []
    prev_t = None
    for t, u, a in stream:
        if prev_t is not None and t < prev_t:
            raise ValueError(f"stream is not time-ordered at t={t!r}")
        prev_t = t
        past = history[a]
        past.append((t, u))
        lo = t - delta_t
        distinct = set()
        for tp, up in reversed(past):
            if tp < lo:
                break
            distinct.add(up)
        n = len(distinct)
        decisions.append(Decision(Verdict.RELEASE if n >= z else Verdict.SUPPRESS, n))
    return decisions


def audit_released(released: Iterable[Observation], full_stream: Sequence[Observation],
                   z: int, delta_t: float) -> list[Observation]:
    """Released records violating the z-anonymity property.

    Counts, over the complete input stream up to and including each released
    record, the distinct users exposing the same attribute in its window.
    """
    position = {id(obs): i for i, obs in enumerate(full_stream)}
    by_attr = defaultdict(list)
    for i, (t, u, a) in enumerate(full_stream):
        by_attr[a].append((i, t, u))
    violations = []
    for obs in released:
        i = position[id(obs)]
        t, u, a = obs
        users = {up for j, tp, up in by_attr[a] if j <= i and t - delta_t <= tp <= t}
        if len(users) < z:
            violations.append(obs)
    return violations


@dataclass
class EmpiricalReport:
    config: SimConfig
    empirical_p_y: np.ndarray
    empirical_p_x: np.ndarray
    fingerprints: list[frozenset]
    k_anon_fraction: dict[int, float]
    stream_stats: dict[str, int] = field(default_factory=dict)

    def class_sizes(self) -> np.ndarray:
        """Size of each user's fingerprint equivalence class, per user."""
        counts = Counter(self.fingerprints)
        return np.array([counts[f] for f in self.fingerprints])

    def kanon(self, k: int) -> float:
        """Fraction of users whose published set is shared by at least k-1 others."""
        if k < 1:
            raise ValueError("k must be >= 1")
        return float(np.mean(self.class_sizes() >= k))


def _window_fraction(times: np.ndarray, users: np.ndarray, attrs: np.ndarray,
                     config: SimConfig) -> np.ndarray:
    # fraction of (user, window) pairs in which each attribute occurs
    if len(times) == 0:
        return np.zeros(config.A)
    w = np.minimum((times // config.delta_t).astype(np.int64), config.N - 1)
    key = (attrs * config.U + users) * config.N + w
    uniq = np.unique(key)
    per_attr = np.bincount(uniq // (config.U * config.N), minlength=config.A)
    return per_attr / (config.U * config.N)


def run_experiment(config: SimConfig, k_values: Iterable[int] = (2,)) -> EmpiricalReport:
    """Generate a stream, anonymize it, and measure what an attacker sees."""
    times, users, attrs = generate_arrays(config)
    state = AnonymizerState(ZAnonConfig(z=config.z, delta_t=config.delta_t))
    proc = state.process
    released = np.zeros(len(times), dtype=bool)
    for i, obs in enumerate(zip(times.tolist(), users.tolist(), attrs.tolist())):
        released[i] = proc(obs).verdict is Verdict.RELEASE

    published: list[set] = [set() for _ in range(config.U)]
    for u, a in zip(users[released].tolist(), attrs[released].tolist()):
        published[u].add(a)
    fingerprints = [frozenset(s) for s in published]

    report = EmpiricalReport(
        config=config,
        empirical_p_y=_window_fraction(times[released], users[released], attrs[released], config),
        empirical_p_x=_window_fraction(times, users, attrs, config),
        fingerprints=fingerprints,
        k_anon_fraction={},
        stream_stats=state.stats.as_dict(),
    )
    for k in k_values:
        report.k_anon_fraction[k] = report.kanon(k)
    return report


def run_seeds(config: SimConfig, seeds: Sequence[int],
              k_values: Iterable[int] = (2,)) -> list[EmpiricalReport]:
    k_values = list(k_values)
    return [run_experiment(replace(config, seed=s), k_values) for s in seeds]


def mean_report(reports: Sequence[EmpiricalReport]) -> tuple[np.ndarray, dict[int, float]]:
    """Seed-averaged empirical p_y and k-anonymity fractions."""
    p_y = np.mean([r.empirical_p_y for r in reports], axis=0)
    ks = reports[0].k_anon_fraction.keys()
    frac = {k: float(np.mean([r.k_anon_fraction[k] for r in reports])) for k in ks}
    return p_y, frac
