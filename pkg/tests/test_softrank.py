import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selcal.softrank import (
    SoftRankConfig,
    hard_rank_ascending,
    isotonic_decreasing,
    normalized_soft_rank,
    soft_rank_ascending,
    soft_rank_vjp,
)

from conftest import distinct_scores, fd_grad, pairwise_rank, qp_permutahedron_projection, rel_err

EPSILONS = [1e-6, 0.01, 0.05, 0.1, 1.0, 100.0]
score_vectors = st.lists(st.floats(-10, 10), min_size=1, max_size=30).map(np.array)


def ranks(s, eps):
    return soft_rank_ascending(s, SoftRankConfig(eps)).ranks


class TestHardRank:
    def test_examples(self):
        np.testing.assert_array_equal(hard_rank_ascending([0.1, 0.2, 0.3]), [1, 2, 3])
        np.testing.assert_array_equal(hard_rank_ascending([0.5, 0.5]), [1, 2])

    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=25))
    def test_matches_pairwise_count(self, s):
        s = np.array(s, dtype=float)
        r = hard_rank_ascending(s)
        np.testing.assert_array_equal(r, pairwise_rank(s))
        assert sorted(r) == list(range(1, s.size + 1))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            hard_rank_ascending([0.1, np.nan])


class TestPav:
    def test_pools_violators(self):
        fit, blocks = isotonic_decreasing([1.0, 3.0, 2.0, 0.0])
        np.testing.assert_allclose(fit, [2.0, 2.0, 2.0, 0.0])
        # adjacent blocks with equal means stay separate
        assert blocks == ((0, 2), (2, 3), (3, 4))

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=20))
    def test_output_is_nonincreasing_and_sum_preserving(self, y):
        fit, blocks = isotonic_decreasing(y)
        assert np.all(np.diff(fit) <= 1e-12)
        assert abs(fit.sum() - sum(y)) < 1e-9
        assert blocks[0][0] == 0 and blocks[-1][1] == len(y)


class TestSoftRank:
    def test_hard_limit_two_points(self):
        np.testing.assert_allclose(ranks([0.0, 1.0], 1e-8), [1.0, 2.0], atol=1e-4)

    def test_closed_form_two_points(self):
        # projection of (0, 0.1) onto {a + b = 3, 1 <= a, b <= 2} is interior
        np.testing.assert_allclose(ranks([0.0, 1.0], 10.0), [1.45, 1.55], atol=1e-12)

    def test_three_points_against_qp(self):
        s = np.array([0.1, 0.5, 0.3])
        expected = qp_permutahedron_projection(s / 0.05)
        np.testing.assert_allclose(expected, [1.0, 3.0, 2.0], atol=1e-8)
        np.testing.assert_allclose(ranks(s, 0.05), expected, atol=1e-8)

    def test_matches_qp_oracle(self, rng):
        for _ in range(25):
            n = int(rng.integers(1, 9))
            s = rng.normal(size=n)
            eps = float(rng.choice([0.01, 0.1, 1.0, 10.0]))
            np.testing.assert_allclose(ranks(s, eps), qp_permutahedron_projection(s / eps), atol=1e-6)

    def test_centroid_limit(self):
        np.testing.assert_allclose(ranks([3.0, -1.0, 2.0, 0.5], 1e9), [2.5] * 4, atol=1e-8)
        np.testing.assert_allclose(ranks([3.0, -1.0, 2.0, 0.5], np.inf), [2.5] * 4)

    def test_rejects_bad_epsilon(self):
        for eps in (0.0, -1.0):
            with pytest.raises(ValueError):
                SoftRankConfig(eps)

    @settings(max_examples=60)
    @given(score_vectors, st.sampled_from(EPSILONS))
    def test_sum_bounds_and_order(self, s, eps):
        r = ranks(s, eps)
        n = s.size
        assert abs(r.sum() - n * (n + 1) / 2) <= 1e-8 * max(1.0, np.abs(s).max() / eps)
        assert r.min() >= 1 - 1e-9 and r.max() <= n + 1e-9
        order = np.argsort(s)
        assert np.all(np.diff(r[order]) >= -1e-10 * max(1.0, np.abs(s).max() / eps))

    def test_hard_limit_agreement(self, rng):
        for _ in range(100):
            s = distinct_scores(rng, int(rng.integers(2, 30)), gap=1e-3)
            assert np.max(np.abs(ranks(s, 1e-6) - hard_rank_ascending(s))) <= 1e-3

    def test_normalized(self):
        np.testing.assert_allclose(normalized_soft_rank([0.1, 0.2, 0.3], SoftRankConfig(1e-9)), [0.25, 0.5, 0.75])
        np.testing.assert_allclose(normalized_soft_rank([0.7], SoftRankConfig(0.1)), [0.5])
        np.testing.assert_allclose(normalized_soft_rank([1, 2, 3, 4.0], SoftRankConfig(np.inf)), [0.5] * 4)
        with pytest.raises(ValueError):
            normalized_soft_rank([0.1, 0.2], SoftRankConfig(0.1), n_total=3)


class TestVjp:
    def test_single_block_centres_upstream(self):
        # one pooled block: r = z - mean(z - w), so J = (I - 11^T / n) / eps
        s, eps = np.array([0.3, -0.2, 0.1, 0.4]), 1e4
        u = np.array([1.0, 2.0, -3.0, 0.5])
        res = soft_rank_ascending(s, SoftRankConfig(eps))
        assert res.blocks == ((0, 4),)
        np.testing.assert_allclose(soft_rank_vjp(s, SoftRankConfig(eps), u), (u - u.mean()) / eps, atol=1e-15)

    def test_two_points_interior_jacobian(self):
        s, eps = np.array([0.0, 1.0]), 10.0
        cfg = SoftRankConfig(eps)
        jac = np.stack([soft_rank_vjp(s, cfg, e) for e in np.eye(2)])
        numeric = np.stack([fd_grad(lambda x, i=i: ranks(x, eps)[i], s) for i in range(2)])
        np.testing.assert_allclose(numeric, np.array([[0.5, -0.5], [-0.5, 0.5]]) / eps, atol=1e-8)
        np.testing.assert_allclose(jac, numeric, atol=1e-8)

    def test_vertex_is_locally_constant(self):
        s = np.array([0.3, 0.1, 0.2])
        np.testing.assert_array_equal(soft_rank_vjp(s, SoftRankConfig(1e-6), np.ones(3) * 7.0), 0.0)

    @pytest.mark.parametrize("eps", [0.01, 0.1, 1.0])
    def test_matches_finite_differences(self, rng, eps):
        cfg = SoftRankConfig(eps)
        for _ in range(40):
            n = int(rng.integers(2, 21))
            s = rng.normal(scale=0.05 * n * eps, size=n) + rng.uniform(-1e-3, 1e-3, size=n)
            u = rng.normal(size=n)
            analytic = soft_rank_vjp(s, cfg, u)
            numeric = fd_grad(lambda x: float(u @ ranks(x, eps)), s, h=1e-6 * eps)
            assert rel_err(analytic, numeric) <= 1e-4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            soft_rank_vjp([0.1, 0.2], SoftRankConfig(0.1), [1.0])
