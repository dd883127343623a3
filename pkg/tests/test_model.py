import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zanon.model import (ModelParams, DEFAULT_PARAMS, binomial_tail, evaluate,
                         log_binomial_tail, p_exposure, p_k_anon, p_output,
                         p_pair_match, p_publish, p_publish_horizon)
from zanon.popularity import RatePopularity, power_law_rates


def exact_tail(n, p, m):
    """P[Bin(n, p) >= m] by exact rational enumeration of every outcome count."""
    p = Fraction(p)
    return sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(m, n + 1))


P_GRID = [Fraction(i, 10) for i in range(11)]


class TestExposure:
    def test_zero_rate(self):
        assert p_exposure(0.0, 1.0) == 0.0

    def test_top_rank(self):
        series = sum((-1) ** (j + 1) * 0.05**j / math.factorial(j) for j in range(1, 15))
        assert p_exposure(0.05, 1.0) == pytest.approx(series, rel=1e-14)
        assert p_exposure(0.05, 1.0) == pytest.approx(0.048770575, abs=1e-9)

    def test_large_rate(self):
        assert p_exposure(1e6, 1.0) == 1.0

    def test_tiny_rate_keeps_precision(self):
        assert p_exposure(1e-20, 1.0) == pytest.approx(1e-20, rel=1e-12)

    def test_negative_rate(self):
        with pytest.raises(ValueError):
            p_exposure(-0.1, 1.0)


class TestBinomialTail:
    def test_four_coins(self):
        # enumerate the 16 outcomes of four fair coins
        hits = sum(1 for o in itertools.product((0, 1), repeat=4) if sum(o) >= 1)
        assert binomial_tail(4, 0.5, 1) == pytest.approx(hits / 16, abs=1e-15)

    def test_no_success_possible(self):
        assert binomial_tail(10, 0.0, 1) == 0.0

    def test_n20(self):
        want = float(exact_tail(20, Fraction(3, 10), 5))
        assert binomial_tail(20, 0.3, 5) == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("n", range(0, 21))
    def test_exact_grid(self, n):
        for p in P_GRID:
            for m in range(0, n + 2):
                want = float(exact_tail(n, p, m))
                got = binomial_tail(n, float(p), m)
                assert abs(got - want) <= 1e-12, (n, p, m)

    def test_vectorized_matches_scalar(self):
        ps = np.linspace(0, 1, 23)
        vec = binomial_tail(50, ps, 7)
        assert np.allclose(vec, [binomial_tail(50, float(p), 7) for p in ps], rtol=0, atol=1e-15)

    def test_edges(self):
        assert binomial_tail(7, 0.3, 0) == 1.0
        assert binomial_tail(7, 0.3, 8) == 0.0
        assert binomial_tail(7, 1.0, 7) == 1.0

    def test_extreme_no_overflow(self):
        v = binomial_tail(100_000, 1e-8, 300)
        assert math.isfinite(v) and 0.0 <= v <= 1.0
        lv = log_binomial_tail(100_000, 1e-8, 300)
        # leading term dominates: C(n,300) p^300
        lead = (math.lgamma(100_001) - math.lgamma(301) - math.lgamma(99_701)
                + 300 * math.log(1e-8) + 99_700 * math.log1p(-1e-8))
        assert lv == pytest.approx(lead, rel=1e-9)

    def test_large_n_against_scipy(self):
        from scipy.stats import binom
        for p in (1e-6, 1e-4, 0.01, 0.0488, 0.3):
            for m in (1, 5, 19, 100, 400):
                got = binomial_tail(49_999, p, m)
                want = binom.sf(m - 1, 49_999, p)
                assert got == pytest.approx(want, rel=1e-9, abs=1e-300), (p, m)

    def test_log_p_input(self):
        assert binomial_tail(30, m=3, log_p=math.log(0.2)) == pytest.approx(binomial_tail(30, 0.2, 3), rel=1e-13)
        # p far below the smallest double
        lv = log_binomial_tail(10, m=1, log_p=-2000.0)
        assert lv == pytest.approx(math.log(10) - 2000.0, rel=1e-12)

    @pytest.mark.parametrize("args", [(5, -0.1, 1), (5, 1.1, 1), (5, 0.5, 7), (5, 0.5, -1), (-1, 0.5, 0)])
    def test_bad_args(self, args):
        with pytest.raises(ValueError):
            binomial_tail(*args)


class TestOutput:
    def test_z1(self):
        assert p_output(0.01, 100, 1) == 1.0

    def test_z2(self):
        assert p_output(0.5, 5, 2) == pytest.approx(0.9375, abs=1e-15)

    def test_zero_px(self):
        assert p_output(0.0, 100, 3) == 0.0

    def test_impossible_threshold(self):
        assert p_output(0.9, 3, 5) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.integers(2, 500))
    def test_reduction_z2(self, p, U):
        assert p_output(p, U, 2) == pytest.approx(1 - (1 - p) ** (U - 1), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.integers(2, 300), st.integers(1, 40))
    def test_monotone(self, p, U, z):
        v = p_output(p, U, z)
        assert 0.0 <= v <= 1.0
        assert p_output(p, U, z + 1) <= v + 1e-15
        assert p_output(min(1.0, p + 0.01), U, z) >= v - 1e-15
        assert p_output(p, U + 1, z) >= v - 1e-15


class TestPublish:
    def test_products(self):
        assert p_publish(0.5, 0.0) == 0.0
        assert p_publish(1.0, 1.0) == 1.0
        assert p_publish(0.048771, 0.9375) == pytest.approx(0.045722, abs=1e-6)

    def test_horizon(self):
        assert p_publish_horizon(0.3, 1) == pytest.approx(0.3, abs=1e-16)
        assert p_publish_horizon(0.0, 50) == 0.0
        direct = 1 - (1 - 0.045722) ** 24
        via_log = -math.expm1(24 * math.log1p(-0.045722))
        assert p_publish_horizon(0.045722, 24) == pytest.approx(direct, abs=1e-14)
        assert p_publish_horizon(0.045722, 24) == pytest.approx(via_log, abs=1e-15)
        assert p_publish_horizon(0.045722, 24) == pytest.approx(0.6743, abs=1e-3)

    def test_horizon_tiny(self):
        assert p_publish_horizon(1e-20, 10) == pytest.approx(1e-19, rel=1e-12)

    def test_horizon_rejects_fractional(self):
        with pytest.raises(ValueError):
            p_publish_horizon(0.1, 2.5)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.integers(1, 200))
    def test_horizon_monotone(self, p, N):
        assert p_publish_horizon(p, N + 1) >= p_publish_horizon(p, N) - 1e-15


class TestPairMatch:
    def test_degenerate(self):
        assert p_pair_match([0.0, 1.0, 1.0, 0.0]).p_q == 1.0

    def test_single_half(self):
        assert p_pair_match([0.5]).p_q == pytest.approx(0.5)

    def test_three_attributes(self):
        pn = (0.9, 0.1, 0.5)
        # enumerate the joint outcomes of two users and keep the matching ones
        want = 0.0
        for y in itertools.product((0, 1), repeat=3):
            for v in itertools.product((0, 1), repeat=3):
                if y == v:
                    pr = 1.0
                    for p, bit in zip(pn, y):
                        pr *= (p if bit else 1 - p) ** 2
                    want += pr
        assert p_pair_match(pn).p_q == pytest.approx(want, abs=1e-14)
        assert want == pytest.approx(0.3362, abs=1e-12)

    def test_log_survives_underflow(self):
        pm = p_pair_match(np.full(30_000, 0.5))
        assert pm.p_q == 0.0
        assert pm.log_p_q == pytest.approx(30_000 * math.log(0.5), rel=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_bounds(self, pn):
        pm = p_pair_match(pn)
        assert pm.log_p_q >= len(pn) * math.log(0.5) - 1e-9
        assert pm.log_p_q <= 1e-15


class TestKAnon:
    def test_k1(self):
        assert p_k_anon(1e-9, 100, 1) == 1.0

    def test_k2_closed_form(self):
        assert p_k_anon(0.01, 200, 2) == pytest.approx(1 - 0.99**199, rel=1e-13)

    def test_k2_from_subnormal_log(self):
        lq = -300 * math.log(10)
        got = p_k_anon(None, 50_000, 2, log_p_q=lq)
        assert got == pytest.approx(49_999 * 1e-300, rel=1e-9)

    def test_general_k_log_form(self):
        a = p_k_anon(0.002, 5_000, 4)
        b = p_k_anon(None, 5_000, 4, log_p_q=math.log(0.002))
        assert a == pytest.approx(b, rel=1e-12)
        assert a == pytest.approx(binomial_tail(4_999, 0.002, 3), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.integers(2, 2000), st.integers(1, 20))
    def test_monotone(self, q, U, k):
        v = p_k_anon(q, U, k)
        assert 0.0 <= v <= 1.0
        assert p_k_anon(q, U, k + 1) <= v + 1e-15
        assert p_k_anon(min(1.0, q + 0.01), U, k) >= v - 1e-15


class TestEvaluate:
    def test_no_anonymization_no_requirement(self):
        rep = evaluate(ModelParams(U=100, A=50, N=3, z=1, k=1), power_law_rates(50))
        assert rep.p_k_anon == 1.0
        assert np.all(rep.p_o == 1.0)
        assert np.allclose(rep.p_y, rep.p_x * rep.p_o)

    def test_probability_input_path(self):
        rates = power_law_rates(200)
        probs = RatePopularity("exposure-probs", rates.as_probs(1.0))
        params = ModelParams(U=1000, A=200, N=5, z=4, k=2)
        assert evaluate(params, rates).p_k_anon == pytest.approx(evaluate(params, probs).p_k_anon, rel=1e-12)

    def test_truncates_to_top_A(self):
        full = evaluate(ModelParams(U=1000, A=100, N=5, z=4, k=2), power_law_rates(1000))
        assert len(full.p_x) == 100

    def test_too_short_popularity(self):
        with pytest.raises(ValueError):
            evaluate(ModelParams(U=1000, A=100), power_law_rates(10))

    def test_default_point(self):
        rep = evaluate(DEFAULT_PARAMS, power_law_rates(DEFAULT_PARAMS.A))
        assert 0.0 <= rep.p_k_anon <= 1.0
        assert rep.p_y[299] < 1e-6

    def test_saturates_past_z35(self):
        pop = power_law_rates(5000)
        for k in (2, 3, 4):
            assert evaluate(DEFAULT_PARAMS._replace(z=36, k=k), pop).p_k_anon > 0.99

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 5000), st.integers(1, 300), st.integers(1, 50),
           st.integers(1, 40), st.integers(1, 6), st.floats(0.001, 1.0))
    def test_ranges(self, U, A, N, z, k, lam):
        rep = evaluate(ModelParams(U=U, A=A, N=N, z=z, k=k), power_law_rates(A, lam))
        for arr in (rep.p_x, rep.p_o, rep.p_y, rep.p_n):
            assert np.all((arr >= 0) & (arr <= 1))
        assert 0 <= rep.p_q <= 1 and 0 <= rep.p_k_anon <= 1


class TestMonteCarlo:
    """Direct sampling of independent Bernoulli fingerprints."""

    def _sample(self, pn, U, trials, rng):
        hits_pair = 0
        frac = []
        for _ in range(trials):
            F = rng.random((U, len(pn))) < pn
            keys = [row.tobytes() for row in F]
            hits_pair += keys[0] == keys[1]
            c = Counter(keys)
            frac.append(np.mean([c[k] >= 2 for k in keys]))
        return hits_pair / trials, np.array(frac)

    def test_pair_match_probability(self):
        rng = np.random.default_rng(7)
        pn = np.array([0.9, 0.1, 0.5, 0.3, 0.05, 0.7])
        trials = 40_000
        F1 = rng.random((trials, len(pn))) < pn
        F2 = rng.random((trials, len(pn))) < pn
        est = np.mean(np.all(F1 == F2, axis=1))
        q = p_pair_match(pn).p_q
        se = math.sqrt(q * (1 - q) / trials)
        assert abs(est - q) <= 3 * se

    def test_k_anon_uniform_realizations(self):
        # every fingerprint equally likely: the closed form is exact here
        rng = np.random.default_rng(11)
        pn = np.array([0.5] * 6 + [0.0, 1.0])
        U = 50
        _, frac = self._sample(pn, U, 2000, rng)
        want = p_k_anon(p_pair_match(pn).p_q, U, 2)
        se = frac.std(ddof=1) / math.sqrt(len(frac))
        assert abs(frac.mean() - want) <= 3 * se

    def test_closed_form_bounds_sampled_k2(self):
        # with unequal fingerprint probabilities the closed form is an upper bound
        rng = np.random.default_rng(13)
        pn = np.array([0.9, 0.1, 0.5, 0.3, 0.05, 0.7, 0.2, 0.6])
        U = 50
        _, frac = self._sample(pn, U, 2000, rng)
        want = p_k_anon(p_pair_match(pn).p_q, U, 2)
        se = frac.std(ddof=1) / math.sqrt(len(frac))
        assert frac.mean() <= want + 3 * se
