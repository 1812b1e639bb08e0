"""Seeded experiment sweeps over noise level, sample size and noise-rate handling.

A plan is a flat TOML document whose keys mirror :class:`ExperimentPlan`.
For every seed the runner draws (or loads) a dataset, splits it, privatizes
the training part once and then fits the benchmark (true levels), the
unawareness model and one corrected model set per cell.  Privatization uses
the seed as its key for every noise level, so cells that differ only in
``pi`` share their uniforms.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fair, noise, privacy, synth
from .data import Dataset, SplitConfig, load_csv, split
from .models import TrainConfig

MODES = ("known_noise", "unknown_noise", "perturbed_noise")
REPRESENTATIONS = ("raw", "transformed")
DATASETS = ("synthetic", "classification", "csv")

RESULT_COLUMNS = ["seed", "sample_size", "n_train", "pi", "mode", "n1", "perturbation",
                  "pi_used", "metric", "value", "status", "error"]
TRACE_COLUMNS = ["seed", "sample_size", "pi", "mode", "n1", "perturbation", "role", "model",
                 "iteration", "objective"]


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    pi_grid: tuple = (0.9, 0.8, 0.7)
    sample_sizes: tuple = ("full",)
    seeds: tuple = tuple(range(20))
    mode: str = "known_noise"
    representation: str = "raw"
    n1_grid: tuple = (1,)
    perturbations: tuple = (0.0,)
    perturbation_mode: str = "absolute"
    hypothesis: str = "linear"
    dataset: str = "synthetic"
    n: int = 5000
    sigma: float = 40.0
    test_fraction: float = 0.2
    csv_path: str = ""
    outcome: str = "y"
    sensitive: str = "d"
    task: str = "regression"
    epochs: int = 5000
    restarts: int = 4
    traces: bool = True

    def __post_init__(self):
        for name in ("pi_grid", "sample_sizes", "seeds", "n1_grid", "perturbations"):
            value = getattr(self, name)
            if isinstance(value, (str, int, float)):
                value = (value,)
            object.__setattr__(self, name, tuple(value))

    @property
    def cardinality(self) -> int:
        return 2

    def validate(self, cardinality: int = 2) -> None:
        for name in ("pi_grid", "sample_sizes", "seeds", "n1_grid", "perturbations"):
            if not getattr(self, name):
                raise PlanError(f"{name} must not be empty")
        for pi in self.pi_grid:
            if not 1.0 / cardinality < pi <= 1.0:
                raise PlanError(f"pi={pi} outside (1/{cardinality}, 1]")
        if self.mode not in MODES:
            raise PlanError(f"mode must be one of {MODES}")
        if self.representation not in REPRESENTATIONS:
            raise PlanError(f"representation must be one of {REPRESENTATIONS}")
        if self.dataset not in DATASETS:
            raise PlanError(f"dataset must be one of {DATASETS}")
        if self.dataset == "csv" and not self.csv_path:
            raise PlanError("dataset = 'csv' needs csv_path")
        if self.hypothesis not in ("linear", "net"):
            raise PlanError("hypothesis must be 'linear' or 'net'")
        if any(n1 < 1 for n1 in self.n1_grid):
            raise PlanError("n1 values must be >= 1")
        for size in self.sample_sizes:
            _check_size(size)
        if not 0 < self.test_fraction < 1:
            raise PlanError("test_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _check_size(size) -> None:
    if isinstance(size, str):
        if size not in ("full", "half"):
            raise PlanError(f"sample size {size!r} must be an integer, a fraction, 'full' or 'half'")
    elif isinstance(size, bool) or not isinstance(size, (int, float)) or size < 0:
        raise PlanError(f"invalid sample size {size!r}")
    elif isinstance(size, float) and size > 1:
        raise PlanError(f"fractional sample size {size} must lie in (0, 1]")


def resolve_size(size, n_train: int) -> int:
    """Number of training records for a plan entry.

    Integers are absolute counts (``0`` or anything ``>= n_train`` means all),
    floats are fractions of the training split.
    """
    _check_size(size)
    if size == "full":
        return n_train
    if size == "half":
        return n_train // 2
    if isinstance(size, float):
        return max(1, int(math.floor(size * n_train + 0.5)))
    return n_train if size == 0 or size >= n_train else int(size)


def plan_from_dict(doc: dict) -> ExperimentPlan:
    known = {f.name for f in fields(ExperimentPlan)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise PlanError(f"unknown plan keys: {unknown}")
    plan = ExperimentPlan(**doc)
    plan.validate()
    return plan


def load_plan(path, overrides: dict | None = None) -> ExperimentPlan:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise PlanError(f"{path}: {exc}") from exc
    if not doc:
        raise PlanError(f"{path}: empty plan")
    doc.update(overrides or {})
    return plan_from_dict(doc)


# --------------------------------------------------------------------------

def _base_data(plan: ExperimentPlan, seed: int, external: Dataset | None) -> Dataset:
    if external is not None:
        return external
    if plan.dataset == "synthetic":
        return synth.dgp_sample(synth.SynthConfig(n=plan.n, seed=seed, sigma=plan.sigma))
    if plan.dataset == "classification":
        return synth.classification_sample(plan.n, seed)
    raise PlanError("csv plans need the dataset passed in")


def _cells(plan: ExperimentPlan):
    for pi in plan.pi_grid:
        if plan.mode == "known_noise":
            yield pi, 0, 0.0
        elif plan.mode == "perturbed_noise":
            for e in plan.perturbations:
                yield pi, 0, e
        else:
            for n1 in plan.n1_grid:
                yield pi, n1, 0.0


def _trace_rows(key: dict, role: str, models) -> list[dict]:
    rows = []
    for j, m in enumerate(models):
        for it, obj in enumerate(getattr(m, "history", [])):
            rows.append({**key, "role": role, "model": j, "iteration": it, "objective": obj})
    return rows


def run_plan(plan: ExperimentPlan, data: Dataset | None = None) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Run every (seed, sample size, cell) and return ``(results, traces)``.

    ``results`` is long-form: one row per cell, seed and metric.  A failing
    cell yields rows with ``status="error"`` and the message, and the sweep
    carries on.
    """
    k = data.sensitive_cardinality if data is not None else 2
    plan.validate(k)
    rows, traces = [], []
    for seed in plan.seeds:
        cfg = TrainConfig(seed=seed, epochs=plan.epochs, restarts=plan.restarts)
        base = _base_data(plan, seed, data)
        train_all, test = split(base, SplitConfig(plan.test_fraction, seed))
        order = np.random.default_rng([seed, 11]).permutation(len(train_all))
        # privatize once per seed so every noise level and size shares the key
        s_keys = {pi: privacy.privatize_array(train_all.levels("d"), privacy.mechanism_for(pi, k),
                                              seed) for pi in plan.pi_grid}
        for size in plan.sample_sizes:
            m = resolve_size(size, len(train_all))
            idx = np.sort(order[:m])
            train = train_all.subset(idx)
            head = {"seed": seed, "sample_size": str(size), "n_train": m}

            def emit(cell, metric, value, status="ok", error=""):
                rows.append({**head, **cell, "metric": metric, "value": value,
                             "status": status, "error": error})

            empty = {"pi": np.nan, "mode": "", "n1": 0, "perturbation": 0.0, "pi_used": np.nan}
            try:
                transformation = None
                if plan.representation == "transformed":
                    transformation = fair.train_transformation(train, cfg=cfg)
                bench, _ = fair.mptp(train, plan.hypothesis, cfg=cfg, transformation=transformation)
                emit(empty, "benchmark_loss", fair.evaluate(bench, test))
                emit(empty, "benchmark_dfp_loss", fair.evaluate(bench, test, target="dfp"))
                unaware = fair.unawareness_model(train, plan.hypothesis, cfg=cfg,
                                                 transformation=transformation)
                emit(empty, "unaware_loss", fair.evaluate(unaware, test))
                if plan.traces:
                    traces += _trace_rows({**head, **{c: empty[c] for c in ("pi", "mode", "n1", "perturbation")}},
                                          "benchmark", bench.models)
            except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                emit(empty, "benchmark_loss", np.nan, "error", f"{type(exc).__name__}: {exc}")
                continue
            bench_dfp = bench.predict_groups(test.x) @ bench.p_hat

            for pi, n1, pert in _cells(plan):
                cell = {"pi": pi, "mode": plan.mode, "n1": n1, "perturbation": pert,
                        "pi_used": np.nan}
                try:
                    ldp_train = train.replace(s=s_keys[pi][idx])
                    pi_arg = pi
                    if plan.mode == "perturbed_noise":
                        pi_arg = noise.perturb_pi(pi, pert, plan.perturbation_mode, k)
                    elif plan.mode == "unknown_noise":
                        pi_arg = None
                    cell["pi_used"] = np.nan if pi_arg is None else pi_arg
                    gms, _ = fair.mptp_ldp(ldp_train, pi_arg, plan.hypothesis, cfg=cfg,
                                           transformation=transformation, n1=max(n1, 1))
                    cell["pi_used"] = gms.pi
                    if gms.noise is not None:
                        emit(cell, "pi_hat", gms.noise.pi_hat)
                    emit(cell, "ldp_loss", fair.evaluate(gms, test))
                    emit(cell, "ldp_dfp_loss", fair.evaluate(gms, test, target="dfp"))
                    dfp = gms.predict_groups(test.x) @ gms.p_hat
                    emit(cell, "dfp_gap", float(np.mean(np.abs(dfp - bench_dfp))))
                    if plan.traces:
                        traces += _trace_rows({**head, **{c: cell[c] for c in ("pi", "mode", "n1", "perturbation")}},
                                              "ldp", gms.models)
                except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                    emit(cell, "ldp_loss", np.nan, "error", f"{type(exc).__name__}: {exc}")
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return results, pd.DataFrame(traces, columns=TRACE_COLUMNS)


def summarize(results: pd.DataFrame, metric: str = "ldp_loss") -> pd.DataFrame:
    """Seed mean and standard error of ``metric`` per cell."""
    ok = results[(results.metric == metric) & (results.status == "ok")]
    keys = ["sample_size", "pi", "mode", "n1", "perturbation"]
    g = ok.groupby(keys, dropna=False)["value"]
    out = g.agg(["mean", "std", "count"]).reset_index()
    out["se"] = out["std"] / np.sqrt(out["count"])
    return out


def plan_for_csv(plan: ExperimentPlan) -> Dataset:
    data, _ = load_csv(plan.csv_path, outcome=plan.outcome, sensitive=plan.sensitive,
                       task=plan.task)
    return data


def fast_profile(plan: ExperimentPlan) -> ExperimentPlan:
    """CI-sized variant: 1000 records and five seeds."""
    return replace(plan, n=1000, seeds=tuple(plan.seeds[:5]) or tuple(range(5)))
