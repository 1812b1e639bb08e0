"""Datasets, train/test splits and CSV ingestion.

A :class:`Dataset` stores its columns as read-only numpy arrays: features
``x`` of shape ``(n, q)``, outcomes ``y``, and optional integer columns ``d``
(true sensitive level) and ``s`` (privatized sensitive level).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

TASKS = ("regression", "classification")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def check_level(level: int, cardinality: int) -> int:
    """Validate a sensitive level index and return it as an int."""
    level = int(level)
    if not 0 <= level < cardinality:
        raise ValueError(f"sensitive level {level} outside [0, {cardinality})")
    return level


@dataclass(frozen=True)
class Record:
    x: np.ndarray
    y: float
    d: int | None = None
    s: int | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    d: np.ndarray | None = None
    s: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    sensitive_cardinality: int = 2
    task: str = "regression"

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        y = np.array(self.y, dtype=float).reshape(-1)
        if len(y) != len(x):
            raise ValueError(f"x has {len(x)} rows but y has {len(y)}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite feature values")
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite outcome values")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "classification" and not np.all((y == 0) | (y == 1)):
            raise ValueError("classification outcomes must be 0/1")
        k = int(self.sensitive_cardinality)
        if k < 2:
            raise ValueError("sensitive_cardinality must be >= 2")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("feature_names length does not match x")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "sensitive_cardinality", k)
        for col in ("d", "s"):
            v = getattr(self, col)
            if v is None:
                continue
            v = np.array(v).reshape(-1)
            if len(v) != len(y):
                raise ValueError(f"column {col} has {len(v)} rows, expected {len(y)}")
            if not np.all(np.equal(np.mod(v, 1), 0)):
                raise ValueError(f"column {col} must hold integer levels")
            v = v.astype(np.int64)
            if len(v) and (v.min() < 0 or v.max() >= k):
                raise ValueError(f"column {col} has levels outside [0, {k})")
            object.__setattr__(self, col, _frozen(v))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def records(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield Record(
                x=self.x[i],
                y=float(self.y[i]),
                d=None if self.d is None else int(self.d[i]),
                s=None if self.s is None else int(self.s[i]),
            )

    @classmethod
    def from_records(cls, records: Iterable[Record], **kwargs) -> "Dataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        x = np.array([np.atleast_1d(r.x) for r in records], dtype=float)
        y = np.array([r.y for r in records], dtype=float)
        cols = {}
        for col in ("d", "s"):
            vals = [getattr(r, col) for r in records]
            if all(v is None for v in vals):
                cols[col] = None
            elif any(v is None for v in vals):
                raise ValueError(f"column {col} present on some records only")
            else:
                cols[col] = np.array(vals)
        return cls(x=x, y=y, **cols, **kwargs)

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return self.replace(
            x=self.x[index],
            y=self.y[index],
            d=None if self.d is None else self.d[index],
            s=None if self.s is None else self.s[index],
        )

    def levels(self, which: str) -> np.ndarray:
        """Return the ``d`` or ``s`` column, raising if it is absent."""
        if which not in ("d", "s"):
            raise ValueError("which must be 'd' or 's'")
        v = getattr(self, which)
        if v is None:
            raise ValueError(f"dataset has no {which!r} column")
        return v


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


def n_test_records(n: int, test_fraction: float) -> int:
    # round half up; Python's round() would send 0.5 to even
    return int(math.floor(n * test_fraction + 0.5))


def split(dataset: Dataset, cfg: SplitConfig = SplitConfig()) -> tuple[Dataset, Dataset]:
    """Random train/test partition; record order is kept inside each part."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_test = n_test_records(n, cfg.test_fraction)
    perm = np.random.default_rng(cfg.seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def empirical_marginal(dataset: Dataset, which: str = "d") -> np.ndarray:
    levels = dataset.levels(which)
    if len(levels) == 0:
        raise ValueError("empty dataset")
    counts = np.bincount(levels, minlength=dataset.sensitive_cardinality)
    return counts / counts.sum()


# --------------------------------------------------------------------------
# CSV ingestion

def _level_sort(values) -> list[str]:
    """Sort labels numerically when they all parse as numbers, else as text."""
    values = list(values)
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


def load_csv(
    path,
    outcome: str,
    sensitive: str | None = None,
    privatized: str | None = None,
    task: str = "regression",
    features: list[str] | None = None,
    sensitive_levels: list[str] | None = None,
) -> tuple[Dataset, dict]:
    """Read a CSV into a :class:`Dataset`.

    Non-numeric feature columns are one-hot encoded in column order.  The
    returned encoding map records the feature layout and the mapping from raw
    sensitive values to level indices so the same layout can be reapplied.
    """
    frame = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    return from_frame(frame, outcome, sensitive, privatized, task, features, sensitive_levels)


def from_frame(frame, outcome, sensitive=None, privatized=None, task="regression",
               features=None, sensitive_levels=None) -> tuple[Dataset, dict]:
    for col in (outcome, sensitive, privatized):
        if col is not None and col not in frame.columns:
            raise ValueError(f"column {col!r} not found")
    if frame.isna().any().any():
        bad = [c for c in frame.columns if frame[c].isna().any()]
        raise ValueError(f"missing values in columns {bad}")
    skip = {c for c in (outcome, sensitive, privatized) if c is not None}
    if features is None:
        features = [c for c in frame.columns if c not in skip]

    blocks, names, categorical = [], [], {}
    for col in features:
        series = frame[col]
        if pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series):
            blocks.append(series.to_numpy(dtype=float)[:, None])
            names.append(col)
        else:
            cats = _level_sort(series.astype(str).unique())
            categorical[col] = cats
            values = series.astype(str).to_numpy()
            blocks.append(np.stack([(values == c).astype(float) for c in cats], axis=1))
            names.extend(f"{col}={c}" for c in cats)
    x = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))

    y = frame[outcome]
    if task == "classification" and not pd.api.types.is_numeric_dtype(y):
        classes = sorted(y.astype(str).unique())
        if len(classes) != 2:
            raise ValueError("classification outcome must have two classes")
        categorical[outcome] = classes
        y = (y.astype(str) == classes[1]).astype(float)
    y = np.asarray(y, dtype=float)

    if sensitive_levels is None:
        cols = [frame[c] for c in (sensitive, privatized) if c is not None]
        sensitive_levels = _level_sort(pd.concat(cols).astype(str).unique()) if cols else []
    level_of = {v: i for i, v in enumerate(sensitive_levels)}

    def encode(col):
        if col is None:
            return None
        vals = frame[col].astype(str)
        unknown = set(vals) - set(level_of)
        if unknown:
            raise ValueError(f"column {col!r} has undeclared levels {sorted(unknown)}")
        return vals.map(level_of).to_numpy()

    k = max(len(sensitive_levels), 2)
    ds = Dataset(x=x, y=y, d=encode(sensitive), s=encode(privatized), feature_names=tuple(names),
                 sensitive_cardinality=k, task=task)
    encoding = {
        "features": list(names),
        "categorical": categorical,
        "outcome": outcome,
        "sensitive": sensitive,
        "privatized": privatized,
        "sensitive_levels": list(sensitive_levels),
        "task": task,
    }
    return ds, encoding


def to_frame(dataset: Dataset) -> pd.DataFrame:
    cols = {name: dataset.x[:, j] for j, name in enumerate(dataset.feature_names)}
    cols["y"] = dataset.y
    if dataset.d is not None:
        cols["d"] = dataset.d
    if dataset.s is not None:
        cols["s"] = dataset.s
    return pd.DataFrame(cols)


def write_csv(dataset: Dataset, path) -> None:
    to_frame(dataset).to_csv(path, index=False, float_format="%.17g")
