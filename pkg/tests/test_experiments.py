import numpy as np
import pandas as pd
import pytest

from ldpfair import experiments as E

SMALL = dict(n=400, seeds=(0, 1), epochs=300, restarts=1, pi_grid=(1.0, 0.8))


class TestPlan:
    def test_defaults_valid(self):
        plan = E.ExperimentPlan()
        plan.validate()
        assert plan.pi_grid == (0.9, 0.8, 0.7) and len(plan.seeds) == 20

    @pytest.mark.parametrize("key,value", [("pi_grid", ()), ("seeds", []), ("pi_grid", (0.5,)),
                                           ("mode", "guess"), ("n1_grid", (0,)),
                                           ("sample_sizes", ("quarter",)), ("sample_sizes", (1.5,)),
                                           ("test_fraction", 1.0), ("dataset", "csv")])
    def test_invalid(self, key, value):
        with pytest.raises(E.PlanError):
            E.plan_from_dict({key: value})

    def test_unknown_key(self):
        with pytest.raises(E.PlanError, match="unknown"):
            E.plan_from_dict({"pi_gird": [0.9]})

    def test_scalar_promoted(self):
        assert E.ExperimentPlan(pi_grid=0.9).pi_grid == (0.9,)

    def test_load(self, tmp_path):
        path = tmp_path / "plan.toml"
        path.write_text('pi_grid = [0.9]\nsample_sizes = ["full", "half"]\nseeds = [3]\n')
        plan = E.load_plan(path, {"n": 700})
        assert plan.sample_sizes == ("full", "half") and plan.n == 700

    def test_empty_file(self, tmp_path):
        path = tmp_path / "plan.toml"
        path.write_text("")
        with pytest.raises(E.PlanError, match="empty"):
            E.load_plan(path)

    @pytest.mark.parametrize("size,expected", [("full", 800), ("half", 400), (0.25, 200),
                                               (300, 300), (0, 800), (5000, 800)])
    def test_resolve_size(self, size, expected):
        assert E.resolve_size(size, 800) == expected

    def test_fast_profile(self):
        plan = E.fast_profile(E.ExperimentPlan())
        assert plan.n == 1000 and plan.seeds == (0, 1, 2, 3, 4)


class TestRun:
    def test_long_form_and_reproducible(self):
        plan = E.ExperimentPlan(**SMALL)
        a, traces = E.run_plan(plan)
        b, _ = E.run_plan(plan)
        assert list(a.columns) == E.RESULT_COLUMNS and list(traces.columns) == E.TRACE_COLUMNS
        pd.testing.assert_frame_equal(a, b)
        assert (a.status == "ok").all()
        assert {"benchmark_loss", "unaware_loss", "ldp_loss", "dfp_gap"} <= set(a.metric)
        assert len(traces) > 0

    def test_noiseless_cell_equals_benchmark(self):
        res, _ = E.run_plan(E.ExperimentPlan(**SMALL))
        for seed in (0, 1):
            r = res[res.seed == seed]
            bench = r[r.metric == "benchmark_loss"].value.item()
            clean = r[(r.metric == "ldp_loss") & (r.pi == 1.0)].value.item()
            assert clean == bench
            assert r[(r.metric == "dfp_gap") & (r.pi == 1.0)].value.item() == 0.0

    def test_sample_sizes(self):
        plan = E.ExperimentPlan(**{**SMALL, "sample_sizes": ("full", "half"), "seeds": (0,)})
        res, _ = E.run_plan(plan)
        assert sorted(res.n_train.unique()) == [160, 320]

    def test_failing_cell_recorded(self):
        # 60 training records cannot be split into 4 anchor groups of 50
        plan = E.ExperimentPlan(n=75, seeds=(0,), pi_grid=(0.8,), mode="unknown_noise",
                                n1_grid=(4,), epochs=100, restarts=1)
        res, _ = E.run_plan(plan)
        bad = res[res.status == "error"]
        assert len(bad) == 1 and "group size" in bad.error.item()
        assert (res[res.metric == "benchmark_loss"].status == "ok").all()

    def test_perturbed_cells(self):
        plan = E.ExperimentPlan(**{**SMALL, "pi_grid": (0.8,), "seeds": (0,),
                                   "mode": "perturbed_noise", "perturbations": (-0.05, 0.0, 0.05)})
        res, _ = E.run_plan(plan)
        # failed cells (an underestimated pi can make the risk unbounded) still record pi_used
        used = sorted(res[res.metric == "ldp_loss"].pi_used)
        assert used == pytest.approx([0.75, 0.8, 0.85])
        assert sorted(res.perturbation.unique()) == [-0.05, 0.0, 0.05]

    def test_summarize(self):
        res, _ = E.run_plan(E.ExperimentPlan(**SMALL))
        s = E.summarize(res)
        assert list(s["count"]) == [2, 2]
        assert np.allclose(s["se"], s["std"] / np.sqrt(2))
