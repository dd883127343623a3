"""Closed-form z-anonymity to k-anonymity probability chain.

Per attribute: exposure in a window (p_x), passing the z filter (p_o),
publishing in a window (p_y), publishing within the attacker horizon (p_n).
Across attributes: probability that two users publish identical attribute
sets (p_q), and that a user shares its set with at least k-1 others
(p_k_anon).

All heavy lifting happens in log space. With tens of thousands of users the
binomial coefficients overflow doubles, and with tens of thousands of
attributes the pair-match product underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import gammaln

from .popularity import RatePopularity

ArrayLike = Union[float, np.ndarray]

# relative size below which the rest of a tail sum is ignored
_TAIL_EPS = 2.0 ** -64


class ModelParams(NamedTuple):
    U: int
    A: int
    delta_t: float = 1.0
    N: int = 24
    z: int = 20
    k: int = 2

    def validate(self) -> None:
        if self.U < 2:
            raise ValueError(f"U must be >= 2, got {self.U}")
        if self.A < 1:
            raise ValueError(f"A must be >= 1, got {self.A}")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be > 0, got {self.delta_t}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.z < 1:
            raise ValueError(f"z must be >= 1, got {self.z}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


DEFAULT_PARAMS = ModelParams(U=50_000, A=5_000, delta_t=1.0, N=24, z=20, k=2)


class PairMatch(NamedTuple):
    p_q: float
    log_p_q: float


@dataclass
class KAnonReport:
    params: ModelParams
    p_x: np.ndarray
    p_o: np.ndarray
    p_y: np.ndarray
    p_n: np.ndarray
    p_q: float
    log_p_q: float
    p_k_anon: float


def p_exposure(lambda_a: ArrayLike, delta_t: float) -> ArrayLike:
    """Probability of at least one Poisson(lambda_a * delta_t) arrival."""
    lam = np.asarray(lambda_a, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("exposure rate must be >= 0")
    if not delta_t > 0:
        raise ValueError("delta_t must be > 0")
    out = -np.expm1(-lam * delta_t)
    return float(out) if out.ndim == 0 else out


def _log_binomial_tail(n: int, m: int, logp: np.ndarray, log1mp: np.ndarray) -> np.ndarray:
    """log P[Binomial(n, p) >= m] for 0 < p < 1 and 1 <= m <= n.

    The sum runs over whichever side of ``m`` excludes the mean, starting at
    the boundary term and moving away from the mode so terms shrink
    monotonically. Summation stops once the geometric bound on the remainder
    falls below ``_TAIL_EPS`` relative to the partial sum. The partial sum is
    Kahan-compensated and kept relative to the boundary term, so it never
    overflows or underflows.
    """
    p = np.exp(logp)
    upper = m > n * p
    # boundary index: first term of the upper sum, or last term of the lower
    i0 = np.where(upper, m, m - 1).astype(float)
    log_start = gammaln(n + 1.0) - gammaln(i0 + 1.0) - gammaln(n - i0 + 1.0) \
        + i0 * logp + (n - i0) * log1mp
    log_odds = logp - log1mp

    total = np.ones_like(logp)
    comp = np.zeros_like(logp)
    log_term = np.zeros_like(logp)
    i = i0.copy()
    active = np.ones(logp.shape, dtype=bool)
    while np.any(active):
        idx = np.nonzero(active)[0]
        ii = i[idx]
        up = upper[idx]
        # log of term(i+1)/term(i) going up, term(i-1)/term(i) going down
        with np.errstate(divide="ignore"):
            log_ratio = np.where(
                up,
                np.log(n - ii) - np.log(ii + 1.0) + log_odds[idx],
                np.log(ii) - np.log(n - ii + 1.0) - log_odds[idx],
            )
        at_end = np.where(up, ii >= n, ii <= 0)
        lt = log_term[idx] + log_ratio
        ratio = np.exp(log_ratio)
        term = np.exp(lt)
        # Kahan step
        y = np.where(at_end, 0.0, term) - comp[idx]
        s = total[idx] + y
        comp[idx] = (s - total[idx]) - y
        total[idx] = s
        log_term[idx] = lt
        i[idx] = np.where(up, ii + 1, ii - 1)
        with np.errstate(divide="ignore"):
            remainder = term * ratio / (1.0 - ratio)
        done = at_end | (ratio < 1.0) & (remainder <= _TAIL_EPS * s)
        active[idx[done]] = False

    log_side = log_start + np.log(total)
    with np.errstate(divide="ignore"):
        lower_complement = np.log(-np.expm1(np.minimum(log_side, 0.0)))
    return np.where(upper, np.minimum(log_side, 0.0), lower_complement)


def log_binomial_tail(n: int, p: ArrayLike = None, m: int = 0, *,
                      log_p: Optional[ArrayLike] = None) -> ArrayLike:
    """Natural log of ``P[Binomial(n, p) >= m]``.

    ``p`` may be given as ``log_p`` instead, which keeps precision for
    probabilities far below the smallest normal double.
    """
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ValueError(f"n must be a non-negative integer, got {n!r}")
    if int(m) != m or m < 0 or m > n + 1:
        raise ValueError(f"m must be an integer in [0, n+1], got {m!r}")
    n, m = int(n), int(m)
    if log_p is not None:
        lp = np.asarray(log_p, dtype=float)
        if np.any(lp > 0) or np.any(np.isnan(lp)):
            raise ValueError("log_p must be <= 0")
        scalar = lp.ndim == 0
        lp = np.atleast_1d(lp)
        with np.errstate(divide="ignore"):
            l1mp = np.log1p(-np.exp(lp))
            # exp(lp) rounds to 1 for lp in (-1.1e-16, 0]; fall back to the series
            l1mp = np.where(lp > -1e-10, np.log(-np.expm1(lp)), l1mp)
    else:
        pa = np.asarray(p, dtype=float)
        if np.any(pa < 0) or np.any(pa > 1) or np.any(np.isnan(pa)):
            raise ValueError("p must lie in [0, 1]")
        scalar = pa.ndim == 0
        pa = np.atleast_1d(pa)
        with np.errstate(divide="ignore"):
            lp = np.log(pa)
            l1mp = np.log1p(-pa)

    out = np.empty(lp.shape)
    if m == 0:
        out.fill(0.0)
    elif m == n + 1:
        out.fill(-np.inf)
    else:
        zero = np.isneginf(lp)
        one = np.isneginf(l1mp)
        out[zero] = -np.inf
        out[one] = 0.0
        mid = ~(zero | one)
        if np.any(mid):
            out[mid] = _log_binomial_tail(n, m, lp[mid], l1mp[mid])
    return float(out[0]) if scalar else out


def binomial_tail(n: int, p: ArrayLike = None, m: int = 0, *,
                  log_p: Optional[ArrayLike] = None) -> ArrayLike:
    """``P[Binomial(n, p) >= m]``, elementwise over ``p``.

    >>> binomial_tail(4, 0.5, 1)
    0.9375
    """
    out = np.exp(log_binomial_tail(n, p, m, log_p=log_p))
    return float(out) if np.ndim(out) == 0 else out


def p_output(p_x: ArrayLike, U: int, z: int) -> ArrayLike:
    """Probability that an exposure passes the filter: at least z-1 of the
    other U-1 users exposed the same attribute in the window."""
    if U < 2:
        raise ValueError("U must be >= 2")
    if z < 1:
        raise ValueError("z must be >= 1")
    if z - 1 > U - 1:
        # more co-exposers required than there are other users
        out = np.zeros_like(np.asarray(p_x, dtype=float))
        return float(out) if out.ndim == 0 else out
    return binomial_tail(U - 1, p_x, z - 1)


def p_publish(p_x: ArrayLike, p_o: ArrayLike) -> ArrayLike:
    out = np.asarray(p_x, dtype=float) * np.asarray(p_o, dtype=float)
    return float(out) if out.ndim == 0 else out


def p_publish_horizon(p_y: ArrayLike, N: int) -> ArrayLike:
    """Probability of publishing in at least one of N windows."""
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    py = np.asarray(p_y, dtype=float)
    with np.errstate(divide="ignore"):
        out = -np.expm1(N * np.log1p(-py))
    return float(out) if out.ndim == 0 else out


def p_pair_match(p_n) -> PairMatch:
    """Probability that two independent users publish the same attribute set.

    Each factor ``p^2 + (1-p)^2 = 1 - 2p(1-p)`` lies in [1/2, 1]; the product
    is accumulated as a compensated sum of logs.
    """
    pn = np.asarray(p_n, dtype=float)
    if np.any(pn < 0) or np.any(pn > 1):
        raise ValueError("p_n entries must lie in [0, 1]")
    log_factors = np.log1p(-2.0 * pn * (1.0 - pn))
    log_p_q = math.fsum(log_factors.tolist())
    return PairMatch(math.exp(log_p_q), log_p_q)


def p_k_anon(p_q: Optional[float], U: int, k: int, *, log_p_q: Optional[float] = None) -> float:
    """Probability that at least k-1 of the other U-1 users share a user's set."""
    if U < 2:
        raise ValueError("U must be >= 2")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return 1.0
    if k - 1 > U - 1:
        return 0.0
    if log_p_q is None:
        if p_q is None:
            raise ValueError("one of p_q or log_p_q is required")
        if p_q <= 0:
            return 0.0
        log_p_q = math.log(p_q)
    if k == 2:
        # 1 - (1 - p_q)^(U-1)
        if log_p_q >= 0:
            return 1.0
        q = math.exp(log_p_q)
        log1m = math.log1p(-q) if q < 0.5 else math.log(-math.expm1(log_p_q))
        return -math.expm1((U - 1) * log1m)
    return binomial_tail(U - 1, m=k - 1, log_p=log_p_q)


def exposure_probs(popularity: RatePopularity, A: int, delta_t: float) -> np.ndarray:
    """Top-``A`` exposure probabilities from either rates or probabilities."""
    if len(popularity) < A:
        raise ValueError(f"popularity has {len(popularity)} ranks, need at least A={A}")
    values = np.asarray(popularity.values[:A], dtype=float)
    if popularity.kind == "rates":
        return p_exposure(values, delta_t)
    return values


def evaluate(params: ModelParams, popularity: RatePopularity) -> KAnonReport:
    """Run the full probability chain at one parameter point."""
    params.validate()
    p_x = np.atleast_1d(exposure_probs(popularity, params.A, params.delta_t))
    p_o = np.atleast_1d(p_output(p_x, params.U, params.z))
    p_y = p_x * p_o
    p_n = np.atleast_1d(p_publish_horizon(p_y, params.N))
    pm = p_pair_match(p_n)
    pk = p_k_anon(pm.p_q, params.U, params.k, log_p_q=pm.log_p_q)
    return KAnonReport(params=params, p_x=p_x, p_o=p_o, p_y=p_y, p_n=p_n,
                       p_q=pm.p_q, log_p_q=pm.log_p_q, p_k_anon=pk)


def p_k_anon_for_ks(params: ModelParams, popularity: RatePopularity, ks) -> dict[int, float]:
    """p_k_anon for several k at once; the chain up to p_q does not depend on k."""
    rep = evaluate(params._replace(k=1), popularity)
    return {k: p_k_anon(rep.p_q, params.U, k, log_p_q=rep.log_p_q) for k in ks}
