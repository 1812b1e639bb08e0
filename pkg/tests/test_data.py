import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from ldpfair.data import (
    Dataset,
    Record,
    SplitConfig,
    empirical_marginal,
    from_frame,
    load_csv,
    n_test_records,
    split,
    write_csv,
)


def make(n, k=2, seed=0, with_s=False):
    r = np.random.default_rng(seed)
    d = r.integers(0, k, n)
    return Dataset(x=r.normal(size=(n, 3)), y=r.normal(size=n), d=d,
                   s=d.copy() if with_s else None, sensitive_cardinality=k)


class TestSplit:
    def test_ten_records(self):
        train, test = split(make(10), SplitConfig(0.2, seed=5))
        assert (len(train), len(test)) == (8, 2)

    def test_health_insurance_size(self):
        # 1,338 observations in the health insurance study
        train, test = split(make(1338), SplitConfig(0.2, seed=1))
        assert (len(train), len(test)) == (1070, 268)

    def test_same_seed_same_partition(self):
        ds = make(100)
        a = split(ds, SplitConfig(0.3, seed=9))
        b = split(ds, SplitConfig(0.3, seed=9))
        assert np.array_equal(a[0].x, b[0].x) and np.array_equal(a[1].y, b[1].y)

    def test_rounding_half_up(self):
        assert n_test_records(5, 0.5) == 3
        assert n_test_records(1338, 0.2) == 268

    def test_empty_dataset(self):
        ds = Dataset(x=np.zeros((0, 2)), y=np.zeros(0))
        with pytest.raises(ValueError):
            split(ds)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_fraction_bounds(self, frac):
        with pytest.raises(ValueError):
            SplitConfig(frac)

    @given(n=st.integers(2, 300), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**63))
    def test_partition_is_exact(self, n, frac, seed):
        ds = Dataset(x=np.arange(n, dtype=float)[:, None], y=np.zeros(n))
        train, test = split(ds, SplitConfig(frac, seed))
        ids = np.concatenate([train.x[:, 0], test.x[:, 0]])
        assert sorted(ids) == list(range(n))
        assert len(test) == n_test_records(n, frac)


class TestMarginal:
    def test_balanced(self):
        ds = Dataset(x=np.zeros((4, 1)), y=np.zeros(4), d=[0, 1, 0, 1])
        assert np.allclose(empirical_marginal(ds, "d"), [0.5, 0.5])

    def test_three_seven(self):
        ds = Dataset(x=np.zeros((10, 1)), y=np.zeros(10), d=[0] * 3 + [1] * 7)
        assert np.allclose(empirical_marginal(ds, "d"), [0.3, 0.7])

    def test_missing_attribute(self):
        with pytest.raises(ValueError):
            empirical_marginal(make(10), "s")

    @given(levels=st.lists(st.integers(0, 3), min_size=1, max_size=200), seed=st.integers(0, 1000))
    def test_simplex_and_permutation(self, levels, seed):
        n = len(levels)
        ds = Dataset(x=np.zeros((n, 1)), y=np.zeros(n), d=levels, sensitive_cardinality=4)
        p = empirical_marginal(ds, "d")
        assert abs(p.sum() - 1) <= 1e-12 and np.all(p >= 0)
        perm = np.random.default_rng(seed).permutation(n)
        assert np.array_equal(p, empirical_marginal(ds.subset(perm), "d"))


class TestDataset:
    def test_level_out_of_range(self):
        with pytest.raises(ValueError):
            Dataset(x=np.zeros((2, 1)), y=np.zeros(2), d=[0, 2])

    def test_non_finite_outcome(self):
        with pytest.raises(ValueError):
            Dataset(x=np.zeros((2, 1)), y=[0.0, np.nan])

    def test_non_finite_feature(self):
        with pytest.raises(ValueError):
            Dataset(x=[[np.inf], [0.0]], y=[0.0, 1.0])

    def test_classification_outcome(self):
        with pytest.raises(ValueError):
            Dataset(x=np.zeros((2, 1)), y=[0.0, 0.5], task="classification")

    def test_arrays_are_read_only(self):
        ds = make(5)
        with pytest.raises(ValueError):
            ds.x[0, 0] = 1.0

    def test_record_round_trip(self):
        ds = make(6, with_s=True)
        back = Dataset.from_records(list(ds.records()), sensitive_cardinality=2)
        assert np.array_equal(back.x, ds.x) and np.array_equal(back.s, ds.s)
        assert isinstance(next(iter(ds.records())), Record)


class TestCsv:
    def test_one_hot_and_levels(self, tmp_path):
        frame = pd.DataFrame({
            "age": [20, 30, 40, 50],
            "region": ["north", "south", "north", "east"],
            "sex": ["male", "female", "female", "male"],
            "charges": [1.0, 2.0, 3.0, 4.0],
        })
        path = tmp_path / "h.csv"
        frame.to_csv(path, index=False)
        ds, enc = load_csv(path, outcome="charges", sensitive="sex")
        assert enc["features"] == ["age", "region=east", "region=north", "region=south"]
        assert enc["sensitive_levels"] == ["female", "male"]
        assert ds.d.tolist() == [1, 0, 0, 1]
        assert ds.x[:, 1:].sum(axis=1).tolist() == [1, 1, 1, 1]

    def test_numeric_levels_sort_numerically(self):
        frame = pd.DataFrame({"x": [1.0, 2.0, 3.0], "y": [0.0, 1.0, 2.0], "g": [10, 2, 2]})
        ds, enc = from_frame(frame, "y", sensitive="g")
        assert enc["sensitive_levels"] == ["2", "10"]
        assert ds.d.tolist() == [1, 0, 0]

    def test_missing_values_rejected(self):
        frame = pd.DataFrame({"x": [1.0, None], "y": [0.0, 1.0]})
        with pytest.raises(ValueError, match="missing"):
            from_frame(frame, "y")

    def test_missing_column(self):
        with pytest.raises(ValueError):
            from_frame(pd.DataFrame({"x": [1.0]}), "y")

    def test_write_then_load(self, tmp_path):
        ds = make(20, with_s=True)
        write_csv(ds.replace(feature_names=("a", "b", "c")), tmp_path / "d.csv")
        back, _ = load_csv(tmp_path / "d.csv", outcome="y", sensitive="d", privatized="s")
        assert np.array_equal(back.x, ds.x) and np.array_equal(back.d, ds.d)
