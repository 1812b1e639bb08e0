import numpy as np
import pytest

from ldpfair import fair, synth
from ldpfair.data import Dataset
from ldpfair.models import TrainConfig, TrainingDiverged
from ldpfair.privacy import mechanism_for, privatize_dataset

FAST = TrainConfig(restarts=1, epochs=500)


def linear_groups(n=400, k=2, seed=0):
    """Noise-free data that is exactly linear within every group."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    d = np.arange(n) % k
    slopes = np.array([[1.0, 2.0], [-1.0, 0.5], [3.0, 0.0]])[:k]
    y = np.einsum("ij,ij->i", x, slopes[d]) + 10 * d
    return Dataset(x=x, y=y, d=d, sensitive_cardinality=k)


class TestMptp:
    def test_recovers_group_functions(self):
        ds = linear_groups()
        gms, report = fair.mptp(ds, "linear", cfg=FAST)
        pred = gms.predict_groups(ds.x)
        assert np.allclose(pred[ds.d == 0, 0], ds.y[ds.d == 0], atol=1e-6)
        assert np.allclose(pred[ds.d == 1, 1], ds.y[ds.d == 1], atol=1e-6)
        assert np.allclose(gms.p_hat, [0.5, 0.5]) and gms.pi == 1.0
        assert np.allclose(report.raw_dfp, pred @ [0.5, 0.5])

    def test_empty_level(self):
        ds = Dataset(x=np.zeros((4, 1)), y=np.ones(4), d=[0, 0, 0, 0])
        with pytest.raises(ValueError, match="empty"):
            fair.mptp(ds, "linear", cfg=FAST)

    def test_three_levels(self):
        ds = linear_groups(k=3)
        gms, _ = fair.mptp(ds, "linear", cfg=FAST)
        assert gms.cardinality == 3
        pred = gms.predict_groups(ds.x)[np.arange(len(ds)), ds.d]
        assert np.allclose(pred, ds.y, atol=1e-6)

    def test_noiseless_dgp_with_nets(self):
        # linear within each (smoker, gender) cell except the female age band; nets fit it
        ds = synth.dgp_sample(synth.SynthConfig(n=2000, sigma=0.0, seed=1))
        gms, _ = fair.mptp(ds, "net", cfg=TrainConfig(seed=1))
        pred = gms.predict_groups(ds.x)[np.arange(len(ds)), ds.d]
        assert np.mean(np.abs(pred - ds.y)) < 5.0


class TestMptpLdp:
    @pytest.mark.parametrize("hypothesis", ["linear", "net"])
    def test_noiseless_equals_mptp(self, hypothesis):
        ds = synth.dgp_sample(synth.SynthConfig(n=400, seed=2))
        cfg = TrainConfig(restarts=1, epochs=300, seed=2)
        clean, r1 = fair.mptp(ds, hypothesis, cfg=cfg)
        priv = privatize_dataset(ds, mechanism_for(1.0, 2), 0, keep_truth=True)
        ldp, r2 = fair.mptp_ldp(priv, 1.0, hypothesis, cfg=cfg)
        for a, b in zip(clean.models, ldp.models):
            assert np.array_equal(a.get_flat(), b.get_flat())
        assert np.array_equal(r1.raw_dfp, r2.raw_dfp)

    def test_privatized_linear_close_to_benchmark(self):
        ds = linear_groups(n=20000, seed=3)
        priv = privatize_dataset(ds, mechanism_for(0.85, 2), 4, keep_truth=True)
        gms, _ = fair.mptp_ldp(priv, 0.85, "linear", cfg=FAST)
        pred = gms.predict_groups(ds.x)[np.arange(len(ds)), ds.d]
        assert np.mean(np.abs(pred - ds.y)) < 0.5
        assert gms.corrections is not None and gms.corrections.c1 == pytest.approx(0.85 / 0.7)

    def test_unknown_noise_uses_anchor_estimate(self):
        x, d = synth.anchor_sample(8000, 0.8, seed=1)
        y = 2 * x[:, 0] + d
        ds = privatize_dataset(Dataset(x=x, y=y, d=d), mechanism_for(0.8, 2), 9)
        gms, _ = fair.mptp_ldp(ds, None, "linear", cfg=FAST, n1=2)
        assert gms.noise is not None and gms.noise.n1 == 2
        assert gms.pi == pytest.approx(0.8, abs=0.05)

    def test_needs_privatized_column(self):
        with pytest.raises(ValueError):
            fair.mptp_ldp(linear_groups(), 0.9, "linear", cfg=FAST)

    def test_net_divergence_is_explained(self, monkeypatch):
        def boom(*args, **kwargs):
            raise TrainingDiverged("objective -1e13 at epoch 3")

        monkeypatch.setattr(fair, "_fit_groups", boom)
        ds = privatize_dataset(linear_groups(), mechanism_for(0.7, 2), 0)
        with pytest.raises(TrainingDiverged, match="unbounded below"):
            fair.mptp_ldp(ds, 0.7, "net", cfg=FAST)


class TestPremiums:
    def setup_method(self):
        self.ds = linear_groups()
        self.gms, _ = fair.mptp(self.ds, "linear", cfg=FAST)

    def test_dfp_is_reference_mixture(self):
        r = fair.premium_report(self.gms, [0.2, 0.8], self.ds)
        assert np.allclose(r.raw_dfp, r.raw_best_estimate @ [0.2, 0.8])

    def test_does_not_read_sensitive_columns(self):
        blind = Dataset(x=self.ds.x, y=self.ds.y)
        a = fair.premium_report(self.gms, [0.5, 0.5], self.ds)
        b = fair.premium_report(self.gms, [0.5, 0.5], blind)
        assert np.array_equal(a.raw_dfp, b.raw_dfp)

    def test_point_mass_reference(self):
        ref = fair.ReferenceWeights.point_mass(1, 2)
        r = fair.premium_report(self.gms, ref, self.ds)
        assert np.array_equal(r.raw_dfp, r.raw_best_estimate[:, 1])

    @pytest.mark.parametrize("p", [[0.5, 0.6], [1.2, -0.2], [1.0]])
    def test_reference_validation(self, p):
        with pytest.raises(ValueError):
            fair.premium_report(self.gms, p, self.ds)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fair.premium_report(self.gms, [0.2, 0.3, 0.5], self.ds)

    def test_regression_premiums_floored(self):
        r = fair.PremiumReport(np.array([[-1.0, 2.0]]), np.array([-0.5]), np.array([0.5, 0.5]))
        assert r.dfp[0] == 0.0 and r.raw_dfp[0] == -0.5 and r.best_estimate[0, 0] == 0.0

    def test_frame_columns(self, tmp_path):
        un = fair.unawareness_model(self.ds, "linear", cfg=FAST)
        r = fair.premium_report(self.gms, [0.5, 0.5], self.ds, unawareness=un)
        cols = list(r.to_frame().columns)
        assert cols[:5] == ["record_id", "mu_0", "mu_1", "unawareness", "dfp"]
        r.to_csv(tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text().startswith("record_id,")

    def test_unawareness_ignores_level(self):
        un = fair.unawareness_model(self.ds, "linear", cfg=FAST)
        # the fitted linear model equals least squares on x alone
        a = np.column_stack([self.ds.x, np.ones(len(self.ds))])
        beta = np.linalg.lstsq(a, self.ds.y, rcond=None)[0]
        assert np.allclose(fair.predict_unaware(un, self.ds.x), a @ beta, atol=1e-5)


class TestEvaluateAndFiles:
    def test_evaluate_targets(self):
        ds = linear_groups()
        gms, _ = fair.mptp(ds, "linear", cfg=FAST)
        assert fair.evaluate(gms, ds) == pytest.approx(0.0, abs=1e-10)
        dfp = gms.predict_groups(ds.x) @ gms.p_hat
        assert fair.evaluate(gms, ds, target="dfp") == pytest.approx(np.mean((dfp - ds.y) ** 2))
        with pytest.raises(ValueError):
            fair.evaluate(gms, ds, target="other")

    def test_model_set_round_trip(self):
        ds = synth.dgp_sample(synth.SynthConfig(n=300))
        cfg = TrainConfig(restarts=1, epochs=100)
        t = fair.train_transformation(ds, cfg=cfg)
        gms, _ = fair.mptp(ds, "linear", cfg=cfg, transformation=t)
        back = fair.loads_model_set(fair.dumps_model_set(gms))
        assert np.array_equal(back.predict_groups(ds.x), gms.predict_groups(ds.x))
        assert np.array_equal(back.p_hat, gms.p_hat) and back.pi == gms.pi

    def test_transformation_dimension(self):
        ds = synth.dgp_sample(synth.SynthConfig(n=200))
        t = fair.train_transformation(ds, cfg=TrainConfig(restarts=1, epochs=50))
        assert t.representation(ds.x).shape == (200, 5)
        with pytest.raises(ValueError):
            fair.train_transformation(ds, arch=(2, 1))
