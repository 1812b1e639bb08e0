import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from ldpfair import noise, synth
from ldpfair.correction import c1
from ldpfair.privacy import mechanism_for, privatize_array


def anchored(n, pi, seed):
    x, d = synth.anchor_sample(n, pi, seed)
    return x, privatize_array(d, mechanism_for(pi, 2), seed + 1000)


class TestC1Map:
    @given(value=st.floats(0.5001, 1.0), k=st.integers(2, 6))
    def test_involution(self, value, k):
        value = max(value, 1 / k + 1e-4)
        assert noise.c1_map(noise.c1_map(value, k), k) == pytest.approx(value, rel=1e-9)
        assert noise.c1_map(value, k) == pytest.approx(c1(value, k), rel=1e-12)

    def test_examples(self):
        assert noise.c1_map(0.9, 2) == pytest.approx(1.125)
        assert noise.c1_map(1.125, 2) == pytest.approx(0.9)
        assert noise.c1_map(1.0, 3) == 1.0


class TestPosterior:
    def test_logistic_posterior_recovered(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, 10_000)
        s = (rng.random(10_000) < expit(2 * x)).astype(int)
        g = noise.fit_posterior(x, s, 1)
        assert np.mean(np.abs(g.predict(x[:, None]) - expit(2 * x))) < 0.05

    def test_constant_feature_gives_frequency(self):
        s = np.array([1] * 30 + [0] * 70)
        assert noise.estimate_pi_anchor(np.ones(100), s, j_star=0) == pytest.approx(0.7, abs=1e-4)

    def test_missing_level(self):
        with pytest.raises(ValueError, match="every level"):
            noise.fit_posterior(np.ones(10), np.zeros(10, dtype=int), 0)

    def test_uninformative(self):
        s = np.array([0, 1] * 50)
        with pytest.raises(ValueError, match="no informative anchor"):
            noise.estimate_pi_anchor(np.ones(100), s, j_star=0)

    def test_j_star_rule(self):
        assert noise.choose_j_star([0, 1, 1, 2], 3) == 1
        assert noise.choose_j_star([0, 1, 1, 0], 2) == 0


class TestAnchorEstimate:
    @pytest.mark.parametrize("pi", [0.9, 0.75])
    def test_anchor_design(self, pi):
        x, s = anchored(8000, pi, 3)
        assert noise.estimate_pi_anchor(x, s) == pytest.approx(pi, abs=0.03)

    def test_single_group_matches_direct_estimate(self):
        x, s = anchored(3000, 0.85, 4)
        est = noise.c1_procedure(x, s, n1=1)
        assert est.pi_hat == pytest.approx(noise.estimate_pi_anchor(x, s), rel=1e-12)
        assert est.m == 3000 and est.excluded_groups == []

    def test_grouped_estimate(self):
        x, s = anchored(8000, 0.8, 5)
        est = noise.c1_procedure(x, s, n1=4, seed=1)
        assert len(est.c1_per_group) == 4 and est.m == 2000
        assert est.c1_hat == pytest.approx(np.mean(est.c1_per_group))
        assert est.pi_hat == pytest.approx(noise.c1_map(est.c1_hat, 2))
        assert est.pi_hat == pytest.approx(0.8, abs=0.05)

    def test_groups_too_small(self):
        x, s = anchored(400, 0.8, 5)
        with pytest.raises(ValueError, match="group size"):
            noise.c1_procedure(x, s, n1=10)

    def test_partial_anchor_mixture_value(self):
        # P(D=1|x) = 0.5 + 0.1 x peaks at 0.6; after privatization at 0.9 the
        # posterior peaks at 0.6 * 0.9 + 0.4 * 0.1 = 0.58
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, 40_000)
        d = (rng.random(40_000) < 0.5 + 0.1 * x).astype(int)
        s = privatize_array(d, mechanism_for(0.9, 2), 7)
        assert noise.estimate_pi_anchor(x, s, j_star=1) == pytest.approx(0.58, abs=0.01)

    def test_estimate_grows_with_anchor_purity(self):
        pure, mixed = [], []
        for seed in range(20):
            rng = np.random.default_rng([seed, 1])
            x, d = synth.anchor_sample(3000, 0.9, seed)
            pure.append(noise.estimate_pi_anchor(x, privatize_array(d, mechanism_for(0.9, 2), seed), j_star=1))
            d = (rng.random(3000) < 0.5 + 0.1 * x[:, 0]).astype(int)
            mixed.append(noise.estimate_pi_anchor(x, privatize_array(d, mechanism_for(0.9, 2), seed), j_star=1))
        diff = np.array(pure) - np.array(mixed)
        assert diff.mean() > 2 * diff.std(ddof=1) / np.sqrt(20)

    def test_no_anchor_underestimates(self):
        # the claim-cost design has no covariate value that pins gender
        ds = synth.dgp_sample(synth.SynthConfig(n=5000, seed=0))
        s = privatize_array(ds.d, mechanism_for(0.9, 2), 0)
        est = noise.c1_procedure(ds.x, s, n1=1)
        assert est.pi_hat < 0.8


class TestPerturb:
    def test_absolute(self):
        assert noise.perturb_pi(0.9, -0.05) == 0.85
        assert noise.perturb_pi(0.9, 0.05) == 0.95

    def test_relative(self):
        assert noise.perturb_pi(0.8, 0.1, "relative") == 0.88
        assert noise.perturb_pi(0.8, -0.15, "relative") == 0.68

    @pytest.mark.parametrize("pi,err", [(0.9, 0.2), (0.55, -0.1)])
    def test_out_of_range(self, pi, err):
        with pytest.raises(ValueError):
            noise.perturb_pi(pi, err)

    def test_mode(self):
        with pytest.raises(ValueError):
            noise.perturb_pi(0.9, 0.0, "multiplicative")
