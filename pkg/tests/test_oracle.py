import math

import numpy as np
import pytest

from selcal.metrics import mc_aurc
from selcal.oracle import (
    DiscreteDistribution,
    MixtureSpec,
    TableModel,
    aurc_error_bound,
    aurc_lower_bound_check,
    bayes_error,
    expected_conditional_variance,
    gen_mixture,
    mixture_posterior,
    polygon_mixture,
    population_aurc_closed_form,
    population_brier,
    population_ce_rho,
    population_cwece,
    population_top_ece,
    random_instance,
    sample_profile,
)


class TestPopulationCalibration:
    def test_posterior_model_is_calibrated(self, rng):
        for _ in range(10):
            dist, _ = random_instance(rng, 8, 3)
            model = TableModel(dist.posterior)
            for rho in (1, 2):
                assert population_ce_rho(dist, model, rho) == 0.0
            assert population_top_ece(dist, model) == pytest.approx(0.0, abs=1e-15)
            assert population_cwece(dist, model) == pytest.approx(0.0, abs=1e-15)

    def test_grouped_atoms_calibrated(self):
        dist = DiscreteDistribution([0.5, 0.5], [[0.9, 0.1], [0.5, 0.5]])
        model = TableModel([[0.7, 0.3], [0.7, 0.3]])
        assert population_ce_rho(dist, model, 1) == pytest.approx(0.0, abs=1e-15)

    def test_single_atom(self):
        dist = DiscreteDistribution([1.0], [[1.0, 0.0]])
        model = TableModel([[0.7, 0.3]])
        assert population_ce_rho(dist, model, 1) == pytest.approx(0.6)
        assert population_ce_rho(dist, model, 2) == pytest.approx(math.sqrt(0.18))
        # direct expansion: the label is always class 0
        assert population_brier(dist, model) == pytest.approx(0.3 ** 2 + 0.3 ** 2)
        assert population_top_ece(dist, model) == pytest.approx(0.3)
        assert population_cwece(dist, model) == pytest.approx(0.3)

    def test_brier_against_sampling_free_expansion(self, rng):
        dist, model = random_instance(rng, 6, 4)
        direct = 0.0
        for m in range(6):
            for c in range(4):
                e = np.zeros(4)
                e[c] = 1.0
                direct += dist.px[m] * dist.posterior[m, c] * np.sum((model.preds[m] - e) ** 2)
        assert population_brier(dist, model) == pytest.approx(direct, abs=1e-14)

    def test_conditional_variance_identity(self, rng):
        for _ in range(100):
            dist, model = random_instance(rng, int(rng.integers(2, 12)), int(rng.integers(2, 5)),
                                          distinct_preds=int(rng.integers(1, 4)))
            ce2 = population_ce_rho(dist, model, 2)
            bs = population_brier(dist, model)
            assert abs(bs - ce2 ** 2 - expected_conditional_variance(dist, model)) <= 1e-12
            assert ce2 <= math.sqrt(bs) + 1e-15

    def test_validation(self):
        with pytest.raises(ValueError):
            DiscreteDistribution([0.5, 0.6], [[1, 0], [0, 1]])
        with pytest.raises(ValueError):
            TableModel([[0.5, 0.6]])


class TestAurcOracle:
    def test_closed_forms(self):
        assert population_aurc_closed_form("constant", 1.0) == 1.0
        assert population_aurc_closed_form("constant", 0.0) == 0.0
        assert population_aurc_closed_form("linear") == 0.25
        with pytest.raises(ValueError):
            population_aurc_closed_form("quadratic")

    def test_closed_forms_by_quadrature(self):
        from scipy.integrate import quad

        assert quad(lambda u: -math.log(1 - u), 0, 1)[0] == pytest.approx(1.0, abs=1e-8)
        assert quad(lambda u: -math.log(1 - u) * (1 - u), 0, 1)[0] == pytest.approx(0.25, abs=1e-10)

    @pytest.mark.parametrize("profile", ["constant", "linear"])
    def test_sampled_estimator_converges(self, profile):
        truth = population_aurc_closed_form(profile)
        gaps = []
        for n in (100, 1000, 10000):
            gaps.append(np.mean([abs(mc_aurc(*sample_profile(profile, n, np.random.default_rng(s))) - truth)
                                 for s in range(50)]))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 0.01

    def test_bound_hand_value(self):
        expected = 4 * math.log(2) / 10 * 0.25 + math.log(2) / 10 * 0.5
        assert aurc_error_bound(4, 0.5) == pytest.approx(expected)
        assert expected == pytest.approx(0.10397, abs=1e-5)

    def test_bound_on_constructed_instance(self):
        p = np.array([[0.9, 0.1], [0.8, 0.2], [0.4, 0.6], [0.3, 0.7]])
        chk = aurc_lower_bound_check(p, [0, 0, 0, 0], competitor_scores=[[0.4, 0.3, 0.2, 0.1]])
        assert chk.rhs == pytest.approx(0.10397, abs=1e-5)
        assert chk.lhs > chk.rhs
        assert chk.ok

    def test_zero_error(self):
        chk = aurc_lower_bound_check(np.eye(3) * 0.8 + 0.2 / 3, [0, 1, 2])
        assert chk.rhs == 0 and chk.bound_ok


class TestMixture:
    def test_posteriors_normalised(self, rng):
        for _ in range(10):
            spec = MixtureSpec(rng.normal(size=(4, 3)), float(rng.uniform(0.1, 3)), rng.dirichlet(np.ones(4)))
            _, _, post = gen_mixture(spec, 200, seed=int(rng.integers(1 << 30)))
            np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-9)

    def test_separated_and_identical_means(self):
        far = MixtureSpec([[0.0, 0.0], [100.0, 0.0]], variance=1.0)
        _, _, post = gen_mixture(far, 500)
        assert np.min(post.max(axis=1)) > 1 - 1e-9
        same = MixtureSpec([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], priors=[0.2, 0.3, 0.5])
        x, _, post = gen_mixture(same, 50)
        np.testing.assert_allclose(post, np.tile([0.2, 0.3, 0.5], (50, 1)), atol=1e-12)

    def test_deterministic(self):
        spec = polygon_mixture(seed=7)
        a, b = gen_mixture(spec, 100), gen_mixture(spec, 100)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_posterior_matches_direct_density_ratio(self):
        spec = MixtureSpec([[0.0], [2.0]], variance=0.5, priors=[0.25, 0.75])
        x = 0.7
        d = [pr * math.exp(-(x - m) ** 2 / (2 * 0.5)) for pr, m in ((0.25, 0.0), (0.75, 2.0))]
        np.testing.assert_allclose(mixture_posterior(spec, [[x]])[0], np.array(d) / sum(d), atol=1e-14)

    def test_polygon_bayes_error_near_fifteen_percent(self):
        assert 0.13 <= bayes_error(polygon_mixture(), n=50_000) <= 0.17

    def test_bad_specs(self):
        with pytest.raises(ValueError):
            MixtureSpec([[0.0], [1.0]], variance=0.0)
        with pytest.raises(ValueError):
            MixtureSpec([[0.0], [1.0]], priors=[0.5, 0.6])
        with pytest.raises(ValueError):
            gen_mixture(polygon_mixture(), 0)
