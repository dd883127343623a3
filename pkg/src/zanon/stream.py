"""Zero-delay z-anonymity engine.

Each attribute keeps an insertion-ordered map ``user -> last timestamp``.
The map doubles as the user membership set and as the recency list: the
most recently refreshed user sits at the end, so expired users are popped
from the front. Attributes themselves are kept in a second recency map so
that entries whose users have all expired can be dropped in O(1) amortized
time without scanning the table.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, NamedTuple, Optional


class ZAnonError(Exception):
    """Base class for engine errors."""


class InvalidConfigError(ZAnonError, ValueError):
    pass


class InvalidObservationError(ZAnonError, ValueError):
    pass


class TimestampRegressionError(ZAnonError):
    """An observation arrived earlier than the clock policy allows.

    The engine state is left untouched when this is raised.
    """

    def __init__(self, t: float, last_seen_t: float, slack: float):
        self.t = t
        self.last_seen_t = last_seen_t
        self.slack = slack
        super().__init__(
            f"timestamp {t!r} is older than last seen {last_seen_t!r} "
            f"by more than the allowed slack {slack!r}"
        )


class Observation(NamedTuple):
    """One stream record: user ``u`` exposed attribute ``a`` at time ``t``."""

    t: float
    u: Hashable
    a: Hashable


def validate_observation(obs: Observation) -> None:
    t, u, a = obs
    if not isinstance(t, (int, float)) or not math.isfinite(t) or t < 0:
        raise InvalidObservationError(f"timestamp must be finite and >= 0, got {t!r}")
    if u is None or u == "":
        raise InvalidObservationError("user token must be non-empty")
    if a is None or a == "":
        raise InvalidObservationError("attribute token must be non-empty")


class Verdict(enum.Enum):
    RELEASE = "release"
    SUPPRESS = "suppress"


class Decision(NamedTuple):
    verdict: Verdict
    count: int  # distinct users in window after update and eviction

    @property
    def released(self) -> bool:
        return self.verdict is Verdict.RELEASE


@dataclass(frozen=True)
class ZAnonConfig:
    """Engine parameters.

    ``slack`` selects the clock policy: ``0`` is strict-monotonic, a positive
    value tolerates records up to ``slack`` seconds older than the newest one
    seen so far.
    """

    z: int
    delta_t: float
    initial_capacity: int = 0
    slack: float = 0.0

    def __post_init__(self):
        if isinstance(self.z, bool) or not isinstance(self.z, int) or self.z < 1:
            raise InvalidConfigError(f"z must be an integer >= 1, got {self.z!r}")
        if not (isinstance(self.delta_t, (int, float)) and math.isfinite(self.delta_t)
                and self.delta_t > 0):
            raise InvalidConfigError(f"delta_t must be a finite number > 0, got {self.delta_t!r}")
        if self.initial_capacity < 0:
            raise InvalidConfigError("initial_capacity must be >= 0")
        if not (math.isfinite(self.slack) and self.slack >= 0):
            raise InvalidConfigError(f"slack must be >= 0, got {self.slack!r}")

    @property
    def clock_policy(self) -> str:
        return "strict-monotonic" if self.slack == 0 else f"tolerate-slack({self.slack:g})"


class AttributeEntry:
    """Window state of a single attribute.

    ``users`` maps each user in the window to its latest timestamp, oldest
    first. Its length is the distinct-user count ``c_a``.
    """

    __slots__ = ("users",)

    def __init__(self):
        self.users: OrderedDict[Hashable, float] = OrderedDict()

    @property
    def count(self) -> int:
        return len(self.users)

    @property
    def newest_t(self) -> float:
        return next(reversed(self.users.values()))

    def recency_list(self) -> list[tuple[float, Hashable]]:
        """``(t, u)`` pairs, newest first."""
        return [(t, u) for u, t in reversed(self.users.items())]

    def __len__(self):
        return len(self.users)

    def __repr__(self):
        return f"AttributeEntry(count={self.count}, recency={self.recency_list()!r})"


@dataclass
class EngineStats:
    observations_in: int = 0
    released: int = 0
    suppressed: int = 0
    rejected: int = 0
    insertions: int = 0
    updates: int = 0
    evictions: int = 0
    attributes_dropped: int = 0
    peak_table_size: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


@dataclass
class AnonymizerState:
    """The z-anonymity engine. Feed observations in time order via :meth:`process`."""

    config: ZAnonConfig
    table: OrderedDict = field(default_factory=OrderedDict)
    last_seen_t: Optional[float] = None
    stats: EngineStats = field(default_factory=EngineStats)

    # dict sizing hints are not exposed in CPython; initial_capacity is
    # accepted for interface parity and ignored.

    def process(self, obs: Observation) -> Decision:
        t, u, a = obs
        if not (t >= 0 and math.isfinite(t)):
            raise InvalidObservationError(f"timestamp must be finite and >= 0, got {t!r}")
        cfg = self.config
        last = self.last_seen_t
        if last is not None and t < last:
            if last - t > cfg.slack:
                self.stats.rejected += 1
                raise TimestampRegressionError(t, last, cfg.slack)
            # late record within slack: processed at the current clock so
            # recency lists stay time-sorted
            t = last
        self.last_seen_t = t
        stats = self.stats
        table = self.table

        entry = table.get(a)
        if entry is None:
            entry = AttributeEntry()
            entry.users[u] = t
            table[a] = entry
            stats.insertions += 1
            if len(table) > stats.peak_table_size:
                stats.peak_table_size = len(table)
        else:
            users = entry.users
            if u in users:
                users[u] = t
                users.move_to_end(u)
                stats.updates += 1
            else:
                users[u] = t
                stats.insertions += 1
            table.move_to_end(a)

        horizon = t - cfg.delta_t
        users = entry.users
        while True:
            oldest_u, oldest_t = next(iter(users.items()))
            if oldest_t >= horizon:
                break
            del users[oldest_u]
            stats.evictions += 1
        count = len(users)

        self._drop_stale_attributes(horizon)

        stats.observations_in += 1
        if count >= cfg.z:
            stats.released += 1
            return Decision(Verdict.RELEASE, count)
        stats.suppressed += 1
        return Decision(Verdict.SUPPRESS, count)

    def _drop_stale_attributes(self, horizon: float) -> None:
        # table is ordered by last touch, so the front holds the attributes
        # whose newest user is oldest
        table = self.table
        stats = self.stats
        while table:
            a, entry = next(iter(table.items()))
            if entry.newest_t >= horizon:
                return
            stats.evictions += len(entry.users)
            stats.attributes_dropped += 1
            del table[a]

    def window_count(self, a: Hashable, now: float) -> int:
        """Distinct users that exposed ``a`` within ``[now - delta_t, now]``.

        Expired users are evicted as a side effect.
        """
        entry = self.table.get(a)
        if entry is None:
            return 0
        horizon = now - self.config.delta_t
        users = entry.users
        while users:
            oldest_u, oldest_t = next(iter(users.items()))
            if oldest_t >= horizon:
                break
            del users[oldest_u]
            self.stats.evictions += 1
        if not users:
            del self.table[a]
            self.stats.attributes_dropped += 1
            return 0
        if entry.newest_t <= now:
            return len(users)
        return sum(1 for ts in users.values() if ts <= now)

    def run(self, stream: Iterable[Observation]) -> Iterator[tuple[Observation, Decision]]:
        for obs in stream:
            yield obs, self.process(obs)

    def check_invariants(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        for a, entry in self.table.items():
            ts = list(entry.users.values())
            assert len(ts) == entry.count == len(set(entry.users)), a
            assert all(x <= y for x, y in zip(ts, ts[1:])), f"recency list unsorted for {a!r}"
        s = self.stats
        assert s.released + s.suppressed == s.observations_in
        assert s.evictions <= s.insertions


def new_anonymizer(config: ZAnonConfig) -> AnonymizerState:
    return AnonymizerState(config=config)


def process(state: AnonymizerState, obs: Observation) -> Decision:
    return state.process(obs)


def attribute_window_count(state: AnonymizerState, a: Hashable, now: float) -> int:
    return state.window_count(a, now)


def anonymize(stream: Iterable[Observation], z: int, delta_t: float,
              slack: float = 0.0) -> Iterator[Observation]:
    """Yield only the released observations of ``stream``."""
    state = AnonymizerState(ZAnonConfig(z=z, delta_t=delta_t, slack=slack))
    for obs in stream:
        if state.process(obs).verdict is Verdict.RELEASE:
            yield obs
