import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldpfair import synth
from ldpfair.data import Dataset
from ldpfair.privacy import (
    RRParams,
    ldp_ratio,
    mechanism_for,
    pi_from_target,
    privatize,
    privatize_array,
    privatize_dataset,
    rr_params,
)


class TestParams:
    def test_ln9_binary(self):
        p = rr_params(math.log(9), 2)
        assert p.pi == pytest.approx(0.9, abs=1e-15) and p.pi_bar == pytest.approx(0.1, abs=1e-15)

    def test_ln9_four_levels(self):
        p = rr_params(math.log(9), 4)
        assert p.pi == pytest.approx(0.75, abs=1e-15)
        assert p.pi_bar == pytest.approx(1 / 12, abs=1e-15)

    def test_small_epsilon_is_uninformative(self):
        p = rr_params(1e-12, 2)
        assert p.pi == pytest.approx(0.5, abs=1e-11) and p.pi_bar == pytest.approx(0.5, abs=1e-11)

    @pytest.mark.parametrize("eps,k", [(0.0, 2), (-1.0, 2), (1.0, 1)])
    def test_invalid(self, eps, k):
        with pytest.raises(ValueError):
            rr_params(eps, k)

    def test_inconsistent_record(self):
        with pytest.raises(ValueError):
            RRParams(math.log(9), 2, 0.8, 0.2)

    def test_from_target(self):
        assert pi_from_target(0.9, 2).epsilon == pytest.approx(2.1972245773362196, abs=1e-14)
        assert pi_from_target(0.7, 2).epsilon == pytest.approx(0.8472978603872037, abs=1e-14)
        assert pi_from_target(0.5 + 1e-9, 2).epsilon == pytest.approx(4e-9, rel=1e-6)

    @pytest.mark.parametrize("pi", [0.5, 1.0, 0.2, 1.2])
    def test_from_target_open_interval(self, pi):
        with pytest.raises(ValueError):
            pi_from_target(pi, 2)

    def test_noiseless_mechanism(self):
        p = mechanism_for(1.0, 3)
        assert p.pi == 1.0 and p.pi_bar == 0.0 and math.isinf(p.epsilon)

    @given(pi=st.floats(0.2001, 0.9999), k=st.integers(2, 5))
    def test_round_trip(self, pi, k):
        pi = max(pi, 1 / k + 1e-4)
        a = pi_from_target(pi, k)
        b = rr_params(a.epsilon, k)
        assert abs(a.pi - b.pi) <= 1e-12 and abs(a.pi_bar - b.pi_bar) <= 1e-12
        assert abs(b.pi + (k - 1) * b.pi_bar - 1) <= 1e-12

    @given(eps=st.floats(1e-3, 20), k=st.integers(2, 6))
    def test_ldp_inequality(self, eps, k):
        q = rr_params(eps, k).matrix()
        ratios = q[:, :, None] / q[:, None, :]
        assert ratios.max() <= math.exp(eps) * (1 + 1e-9)
        assert ldp_ratio(rr_params(eps, k)) == pytest.approx(math.exp(eps), rel=1e-9)


class TestSampling:
    def test_noiseless_identity(self):
        d = np.arange(1000) % 3
        assert np.array_equal(privatize_array(d, mechanism_for(1.0, 3), seed=4), d)

    def test_keep_rate(self):
        # binomial concentration: 3 sqrt(0.9 * 0.1 / 1e5) ~ 0.00285
        s = privatize_array(np.zeros(100_000, dtype=int), pi_from_target(0.9, 2), seed=11)
        assert abs((s == 0).mean() - 0.9) <= 3 * math.sqrt(0.09 / 100_000)

    def test_uninformative_limit_is_uniform(self):
        n = 120_000
        s = privatize_array(np.zeros(n, dtype=int), rr_params(1e-9, 4), seed=2)
        freq = np.bincount(s, minlength=4) / n
        assert np.all(np.abs(freq - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n))

    def test_other_levels_exchangeable(self):
        n = 200_000
        p = pi_from_target(0.6, 4)
        s = privatize_array(np.full(n, 2), p, seed=8)
        other = np.bincount(s, minlength=4)[[0, 1, 3]] / n
        tol = 3 * math.sqrt(p.pi_bar * (1 - p.pi_bar) / n)
        assert np.all(np.abs(other - p.pi_bar) <= tol)

    def test_scalar_matches_vector(self):
        p = pi_from_target(0.7, 3)
        d = np.random.default_rng(0).integers(0, 3, 50)
        vec = privatize_array(d, p, seed=99)
        assert [privatize(int(v), p, 99, index=i) for i, v in enumerate(d)] == vec.tolist()

    def test_insertion_does_not_move_other_draws(self):
        p = pi_from_target(0.6, 2)
        d = np.random.default_rng(1).integers(0, 2, 40)
        full = privatize_array(d, p, seed=5)
        tail = privatize_array(d[20:], p, seed=5, offset=20)
        assert np.array_equal(full[20:], tail)

    def test_independent_of_features_and_outcome(self):
        ds = synth.dgp_sample(synth.SynthConfig(n=500, seed=3))
        perm = np.random.default_rng(0).permutation(len(ds))
        shuffled = ds.replace(x=ds.x[perm], y=ds.y[perm])
        p = pi_from_target(0.8, 2)
        assert np.array_equal(privatize_dataset(ds, p, 7).s, privatize_dataset(shuffled, p, 7).s)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            privatize_array([0], pi_from_target(0.8, 2), seed=-1)


class TestDataset:
    def test_requires_truth(self):
        ds = Dataset(x=np.zeros((3, 1)), y=np.zeros(3), s=[0, 1, 0])
        with pytest.raises(ValueError):
            privatize_dataset(ds, pi_from_target(0.8, 2), 0)

    def test_truth_dropped_unless_requested(self):
        ds = synth.dgp_sample(synth.SynthConfig(n=50))
        p = pi_from_target(0.8, 2)
        assert privatize_dataset(ds, p, 1).d is None
        kept = privatize_dataset(ds, p, 1, keep_truth=True)
        assert np.array_equal(kept.d, ds.d)

    def test_deterministic(self):
        ds = synth.dgp_sample(synth.SynthConfig(n=300))
        p = pi_from_target(0.8, 2)
        assert np.array_equal(privatize_dataset(ds, p, 3).s, privatize_dataset(ds, p, 3).s)

    def test_noiseless(self):
        ds = synth.dgp_sample(synth.SynthConfig(n=300))
        assert np.array_equal(privatize_dataset(ds, mechanism_for(1.0, 2), 3).s, ds.d)

    def test_privatized_marginal(self):
        # P(S=F) = 0.8 * 0.45 + 0.2 * 0.55 = 0.47
        n = 200_000
        ds = synth.dgp_sample(synth.SynthConfig(n=n, seed=21))
        s = privatize_dataset(ds, pi_from_target(0.8, 2), 22).s
        assert abs(s.mean() - 0.47) <= 3 * math.sqrt(0.47 * 0.53 / n)
