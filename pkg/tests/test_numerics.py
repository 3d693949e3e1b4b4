import math

import numpy as np
import pytest
import scipy.signal
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from layerif.numerics import (
    NumericsError,
    compensated_row_sum,
    compensated_sum,
    rank_average,
    savgol_coeffs,
    savitzky_golay,
    sherman_morrison_apply,
    sherman_morrison_mean,
    softmax,
    softmax_topk,
    solve_spd,
    spearman,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


class TestShermanMorrison:
    def test_examples(self):
        np.testing.assert_allclose(sherman_morrison_apply([2, 0], [1, 0], 1.0), [1, 0])
        np.testing.assert_array_equal(sherman_morrison_apply([0, 0], [3, -1], 0.7), [0, 0])
        np.testing.assert_allclose(sherman_morrison_apply([1, 1], [0, 0], 2.0), [0.5, 0.5])

    def test_errors(self):
        with pytest.raises(NumericsError):
            sherman_morrison_apply([1, 2], [1, 2, 3], 1.0)
        with pytest.raises(NumericsError):
            sherman_morrison_apply([1, 2], [1, 2], 0.0)
        with pytest.raises(NumericsError):
            sherman_morrison_apply([1, 2], [1, 2], -1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 64), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
    def test_matches_dense_solve(self, d, lam, seed):
        r = np.random.default_rng(seed)
        v, g = r.normal(size=d), r.normal(size=d)
        dense = solve_spd(lam * np.eye(d) + np.outer(g, g), v)
        got = sherman_morrison_apply(v, g, lam)
        assert np.linalg.norm(got - dense) <= 1e-9 * max(np.linalg.norm(dense), 1e-300)

    def test_batched_mean_equals_loop(self, rng):
        G = rng.normal(size=(7, 5))
        v = rng.normal(size=5)
        loop = np.mean([sherman_morrison_apply(v, g, 0.3) for g in G], axis=0)
        np.testing.assert_allclose(sherman_morrison_mean(v, G, 0.3), loop, rtol=1e-12)


class TestSolveSpd:
    def test_examples(self):
        np.testing.assert_allclose(solve_spd(np.eye(3), [1, 2, 3]), [1, 2, 3])
        np.testing.assert_allclose(solve_spd([[2, 0], [0, 1]], [2, 0]), [1, 0])
        # Cramer's rule: det = 11, x1 = (1*3 - 1*2)/11, x2 = (4*2 - 1*1)/11
        np.testing.assert_allclose(solve_spd([[4, 1], [1, 3]], [1, 2]), [1 / 11, 7 / 11], rtol=1e-14)

    def test_residual(self, rng):
        M = rng.normal(size=(40, 40))
        A = M @ M.T + 0.5 * np.eye(40)
        b = rng.normal(size=40)
        x = solve_spd(A, b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10

    def test_rejects_indefinite(self):
        with pytest.raises(NumericsError, match="Cholesky"):
            solve_spd([[1, 2], [2, 1]], [1, 1])

    def test_rejects_asymmetric(self):
        with pytest.raises(NumericsError, match="symmetric"):
            solve_spd([[2, 1], [0, 2]], [1, 1])


class TestSavitzkyGolay:
    def test_published_kernel(self):
        np.testing.assert_allclose(savgol_coeffs(7, 3), np.array([-2, 3, 6, 7, 6, 3, -2]) / 21, atol=1e-14)

    def test_impulse_center(self):
        out = savitzky_golay([0, 0, 0, 21, 0, 0, 0], 7, 3)
        assert out[3] == pytest.approx(7.0, abs=1e-12)

    def test_constant(self):
        np.testing.assert_allclose(savitzky_golay(np.full(12, 5.0)), 5.0, atol=1e-12)

    @pytest.mark.parametrize("n", [7, 8, 13, 32])
    def test_cubic_fixed_point(self, n):
        i = np.arange(n, dtype=float)
        x = i**3 - 2 * i**2 + 1
        np.testing.assert_allclose(savitzky_golay(x, 7, 3), x, atol=1e-9 * np.abs(x).max())

    @settings(max_examples=100, deadline=None)
    @given(
        st.integers(7, 64),
        st.sampled_from([(5, 2), (7, 3), (9, 4), (7, 2)]),
        st.lists(st.floats(-3, 3), min_size=5, max_size=5),
    )
    def test_low_degree_polynomials_fixed(self, n, params, coefs):
        window, order = params
        t = np.linspace(-1, 1, n)
        x = np.polynomial.polynomial.polyval(t, coefs[: order + 1])
        np.testing.assert_allclose(savitzky_golay(x, window, order), x, atol=1e-9 * max(1.0, np.abs(x).max()))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(7, 40), elements=finite))
    def test_matches_scipy_interp_mode(self, x):
        ref = scipy.signal.savgol_filter(x, 7, 3, mode="interp")
        np.testing.assert_allclose(savitzky_golay(x, 7, 3), ref, atol=1e-9 * max(1.0, np.abs(x).max()))

    @pytest.mark.parametrize("window,order,n", [(6, 3, 10), (7, 7, 10), (7, 3, 6)])
    def test_errors(self, window, order, n):
        with pytest.raises(NumericsError):
            savitzky_golay(np.zeros(n), window, order)


def _rank_formula(a, b):
    n = len(a)
    d = scipy.stats.rankdata(a) - scipy.stats.rankdata(b)
    return 1 - 6 * np.sum(d**2) / (n * (n**2 - 1))


class TestSpearman:
    def test_examples(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        # Sum of squared rank differences is 4 here, giving 1 - 24/120.
        assert _rank_formula([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8)
        assert spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-12)

    def test_average_ranks(self):
        np.testing.assert_array_equal(rank_average([3, 1, 3, 2]), [3.5, 1, 3.5, 2])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=30))
    def test_matches_scipy_with_ties(self, pairs):
        a, b = map(np.array, zip(*pairs))
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            with pytest.raises(NumericsError):
                spearman(a, b)
            return
        assert spearman(a, b) == pytest.approx(scipy.stats.spearmanr(a, b).statistic, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-50, 50), min_size=2, max_size=30, unique=True), st.integers(0, 1000))
    def test_monotone_invariance(self, ints, seed):
        a = np.array(ints, dtype=float) / 10
        b = np.random.default_rng(seed).permutation(a)
        ref = spearman(a, b)
        assert spearman(np.exp(a), b) == pytest.approx(ref, abs=1e-12)
        assert spearman(a, 3 * b**3 + 1) == pytest.approx(ref, abs=1e-12)

    def test_errors(self):
        with pytest.raises(NumericsError):
            spearman([1], [1])
        with pytest.raises(NumericsError):
            spearman([1, 1, 1], [1, 2, 3])
        with pytest.raises(NumericsError):
            spearman([1, 2], [1, 2, 3])


class TestSoftmaxTopk:
    def test_examples(self):
        np.testing.assert_allclose(softmax_topk([0, 0], 2), [0.5, 0.5])
        np.testing.assert_allclose(softmax_topk([10, 0, -10], 1), [1, 0, 0])
        np.testing.assert_allclose(softmax_topk([math.log(2), 0, math.log(2)], 2), [0.5, 0, 0.5])

    def test_renormalizes_softmax(self, rng):
        logits = rng.normal(size=6)
        full = softmax(logits)
        top = np.argsort(-full)[:3]
        expected = np.zeros(6)
        expected[top] = full[top] / full[top].sum()
        np.testing.assert_allclose(softmax_topk(logits, 3), expected, rtol=1e-12)

    def test_ties_go_to_lower_index(self):
        out = softmax_topk([1, 1, 1, 1], 2)
        np.testing.assert_allclose(out, [0.5, 0.5, 0, 0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 16), elements=finite), st.data())
    def test_invariants(self, logits, data):
        k = data.draw(st.integers(1, logits.size))
        out = softmax_topk(logits, k)
        assert np.count_nonzero(out) == k
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, k):
        with pytest.raises(NumericsError):
            softmax_topk([1, 2, 3], k)


class TestCompensatedSum:
    def test_examples(self):
        assert compensated_sum([1, 2, 3]) == 6
        assert compensated_sum([]) == 0
        assert compensated_sum([1e16, 1, -1e16]) == 1

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e10, 1e10), max_size=50))
    def test_close_to_exact(self, xs):
        exact = math.fsum(xs)
        assert compensated_sum(xs) == pytest.approx(exact, rel=1e-12, abs=1e-5)

    def test_repeatable(self, rng):
        xs = rng.normal(size=1000) * 1e8
        assert compensated_sum(xs) == compensated_sum(list(xs))

    def test_row_sum(self):
        rows = np.array([[1e16, 2.0], [1.0, 3.0], [-1e16, -5.0]])
        np.testing.assert_array_equal(compensated_row_sum(rows), [1.0, 0.0])
