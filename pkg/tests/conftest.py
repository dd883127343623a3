import numpy as np
import pytest

from zanon.stream import Observation

DT = 10.0
# user u0 at t0, u1 at t1, u0 again at t2, u2 at t3 (all within one window),
# then u3 at t4 after u1's and u0's entries have aged out
FIVE_EVENT_TRACE = [
    Observation(0.0, "u0", "a0"),
    Observation(2.0, "u1", "a0"),
    Observation(4.0, "u0", "a0"),
    Observation(6.0, "u2", "a0"),
    Observation(15.0, "u3", "a0"),
]


def random_stream(rng: np.random.Generator, n: int, n_users: int, n_attrs: int,
                  span: float, tie_prob: float = 0.1) -> list[Observation]:
    """Time-ordered stream with occasional exact timestamp ties."""
    times = np.sort(rng.uniform(0.0, span, size=n))
    ties = rng.random(n) < tie_prob
    for i in range(1, n):
        if ties[i]:
            times[i] = times[i - 1]
    # integer-valued times exercise the closed window boundary
    if rng.random() < 0.3:
        times = np.floor(times)
    users = rng.integers(0, n_users, size=n)
    attrs = rng.integers(0, n_attrs, size=n)
    return [Observation(float(t), f"u{u}", f"a{a}") for t, u, a in zip(times, users, attrs)]


@pytest.fixture
def five_event_trace():
    return list(FIVE_EVENT_TRACE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion.

    Usage: ``criterion(3, "model point", ok, detail)``; the test should still
    assert on ``ok`` afterwards.
    """
    def record(number, title, ok, detail=""):
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE, key=lambda n: (int(str(n).rstrip("ab")), str(n))):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
