"""Group-specific training with true or privatized sensitive attributes, and premiums.

``mptp`` fits one score function per sensitive level on the records of that
level.  ``mptp_ldp`` fits the same functions from privatized levels by
minimizing the corrected risk, where every record carries a signed weight for
every level.  Both return a :class:`GroupModelSet` and the
:class:`PremiumReport` on the training data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import correction
from .data import Dataset, empirical_marginal
from .models import (
    FeedForwardNet,
    TrainConfig,
    TrainingDiverged,
    default_link,
    default_loss,
    dumps_model,
    loads_model,
    loss,
    loss_kind,
    make_model,
    train_weighted,
)

HIDDEN = (5, 5, 5)


@dataclass(frozen=True, eq=False)
class ReferenceWeights:
    p_star: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_star, dtype=float).reshape(-1)
        if len(p) < 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p_star must be a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "p_star", p)

    @classmethod
    def point_mass(cls, level: int, cardinality: int) -> "ReferenceWeights":
        p = np.zeros(cardinality)
        p[level] = 1.0
        return cls(p)


def _as_reference(p_star) -> ReferenceWeights:
    return p_star if isinstance(p_star, ReferenceWeights) else ReferenceWeights(p_star)


@dataclass(eq=False)
class GroupModelSet:
    """One score function per sensitive level, optionally behind a transformation.

    ``p_hat`` is the marginal of D the set was trained with (empirical for
    MPTP, recovered from S otherwise); ``pi`` is the keep probability used for
    the correction (1.0 when trained on true levels).
    """

    models: list
    transformation: FeedForwardNet | None = None
    task: str = "regression"
    p_hat: np.ndarray | None = None
    pi: float = 1.0
    noise: object = None
    corrections: correction.CorrectionMatrices | None = None

    def __post_init__(self):
        if len(self.models) < 2:
            raise ValueError("need one score function per sensitive level (>= 2)")
        dims = {m.n_inputs for m in self.models}
        if len(dims) != 1:
            raise ValueError("score functions must share their input dimension")
        if self.transformation is not None and self.transformation.representation_dim not in dims:
            raise ValueError("score functions must take the transformation's output")

    @property
    def cardinality(self) -> int:
        return len(self.models)

    def features(self, x) -> np.ndarray:
        if self.transformation is None:
            return np.asarray(x, dtype=float)
        return self.transformation.representation(x)

    def predict_groups(self, x) -> np.ndarray:
        """``(n, k)`` matrix of ``f_k(x_i)``."""
        z = self.features(x)
        return np.column_stack([m.predict(z) for m in self.models])


@dataclass(eq=False)
class PremiumReport:
    """Per-record premiums.

    ``raw_*`` hold model outputs; the public properties floor regression
    premiums at zero (classification outputs are probabilities already).
    """

    raw_best_estimate: np.ndarray
    raw_dfp: np.ndarray
    p_star: np.ndarray
    raw_unawareness: np.ndarray | None = None
    task: str = "regression"

    def _floor(self, a):
        if a is None or self.task == "classification":
            return a
        return np.maximum(a, 0.0)

    @property
    def best_estimate(self) -> np.ndarray:
        return self._floor(self.raw_best_estimate)

    @property
    def dfp(self) -> np.ndarray:
        return self._floor(self.raw_dfp)

    @property
    def unawareness(self) -> np.ndarray | None:
        return self._floor(self.raw_unawareness)

    def __len__(self):
        return len(self.raw_dfp)

    def to_frame(self) -> pd.DataFrame:
        cols = {"record_id": np.arange(len(self))}
        k = self.raw_best_estimate.shape[1]
        for j in range(k):
            cols[f"mu_{j}"] = self.best_estimate[:, j]
        if self.raw_unawareness is not None:
            cols["unawareness"] = self.unawareness
        cols["dfp"] = self.dfp
        for j in range(k):
            cols[f"raw_mu_{j}"] = self.raw_best_estimate[:, j]
        if self.raw_unawareness is not None:
            cols["raw_unawareness"] = self.raw_unawareness
        cols["raw_dfp"] = self.raw_dfp
        return pd.DataFrame(cols)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


# --------------------------------------------------------------------------

def _kind(kind, task):
    return loss_kind(kind) if kind is not None else default_loss(task)


def train_transformation(train: Dataset, arch=(5, 5, 5), kind: str | None = None,
                         cfg: TrainConfig = TrainConfig()) -> FeedForwardNet:
    """Fit a supervised net ``u`` on ``(x, y)``; its last hidden layer is the transformation."""
    kind = _kind(kind, train.task)
    dims = list(arch)
    if dims and dims[0] == train.n_features:
        dims = dims[1:]
    if dims and dims[-1] == 1:
        dims = dims[:-1]
    if not dims:
        raise ValueError("transformation needs at least one hidden layer")
    net = make_model("net", train.n_features, default_link(kind), cfg.seed, index=101,
                     hidden=dims, init_scale=cfg.init_scale)
    w = np.full(len(train), 1.0 / len(train))
    return train_weighted([net], train.x, train.y, w, kind, cfg)[0]


def _group_models(hypothesis, n_inputs, kind, cfg, k, hidden):
    link = default_link(kind)
    return [make_model(hypothesis, n_inputs, link, cfg.seed, index=j, hidden=hidden,
                       init_scale=cfg.init_scale) for j in range(k)]


def _fit_groups(train, levels, table, hypothesis, kind, cfg, transformation, hidden):
    z = train.x if transformation is None else transformation.representation(train.x)
    weights = correction.record_weights(levels, table)
    models = _group_models(hypothesis, z.shape[1], kind, cfg, train.sensitive_cardinality, hidden)
    return train_weighted(models, z, train.y, weights, kind, cfg)


def mptp(train: Dataset, hypothesis: str = "net", kind: str | None = None,
         cfg: TrainConfig = TrainConfig(), p_star=None, transformation=None,
         hidden=HIDDEN) -> tuple[GroupModelSet, PremiumReport]:
    """Group-specific training on the true sensitive levels.

    The weight of record ``i`` for model ``k`` is ``1{D_i = k} / n``, so each
    model only sees its own group.
    """
    kind = _kind(kind, train.task)
    d = train.levels("d")
    counts = np.bincount(d, minlength=train.sensitive_cardinality)
    if np.any(counts == 0):
        raise ValueError(f"sensitive levels {np.flatnonzero(counts == 0).tolist()} are empty")
    p_hat = empirical_marginal(train, "d")
    models = _fit_groups(train, d, correction.indicator_weights(counts), hypothesis, kind, cfg,
                         transformation, hidden)
    gms = GroupModelSet(models, transformation, train.task, p_hat=p_hat, pi=1.0)
    ref = _as_reference(p_hat if p_star is None else p_star)
    return gms, premium_report(gms, ref, train)


def mptp_ldp(train: Dataset, pi: float | None = None, hypothesis: str = "net",
             kind: str | None = None, cfg: TrainConfig = TrainConfig(), p_star=None,
             transformation=None, hidden=HIDDEN, n1: int = 4, j_star: int | None = None,
             x_star=None) -> tuple[GroupModelSet, PremiumReport]:
    """Group-specific training from privatized levels via the corrected risk.

    With ``pi=None`` the keep probability is estimated first by the grouped
    anchor procedure on ``x_star`` (default: the training features the models
    see).
    """
    kind = _kind(kind, train.task)
    s = train.levels("s")
    k = train.sensitive_cardinality
    counts = np.bincount(s, minlength=k)
    noise = None
    z = train.x if transformation is None else transformation.representation(train.x)
    if pi is None:
        from .noise import c1_procedure

        xs = z if x_star is None else x_star
        noise = c1_procedure(xs, s, n1=n1, cardinality=k, j_star=j_star, seed=cfg.seed)
        pi = noise.pi_hat
    mats, table = correction.corrected_risk_weights(counts, pi)
    try:
        models = _fit_groups(train, s, table, hypothesis, kind, cfg, transformation, hidden)
    except TrainingDiverged as exc:
        raise TrainingDiverged(
            f"{exc}. The corrected risk has negative record weights and is unbounded below "
            f"for hypotheses flexible enough to isolate small regions of x (pi={pi:.4g}, "
            f"C1={mats.c1:.4g}); use the linear hypothesis, a transformed representation or "
            "more data"
        ) from exc
    gms = GroupModelSet(models, transformation, train.task, p_hat=mats.p_d, pi=float(pi),
                        noise=noise, corrections=mats)
    ref = _as_reference(mats.p_d if p_star is None else p_star)
    return gms, premium_report(gms, ref, train)


def unawareness_model(train: Dataset, hypothesis: str = "net", kind: str | None = None,
                      cfg: TrainConfig = TrainConfig(), transformation=None, hidden=HIDDEN):
    """A single model of ``E[Y | X]`` that ignores ``d`` and ``s``."""
    kind = _kind(kind, train.task)
    z = train.x if transformation is None else transformation.representation(train.x)
    model = make_model(hypothesis, z.shape[1], default_link(kind), cfg.seed, index=100,
                       hidden=hidden, init_scale=cfg.init_scale)
    w = np.full(len(train), 1.0 / len(train))
    model = train_weighted([model], z, train.y, w, kind, cfg)[0]
    model.transformation = transformation
    return model


def predict_unaware(model, x) -> np.ndarray:
    t = getattr(model, "transformation", None)
    return model.predict(x if t is None else t.representation(x))


def premium_report(models: GroupModelSet, p_star, data: Dataset, unawareness=None) -> PremiumReport:
    """Premiums for every record of ``data``; its ``d``/``s`` columns are never read."""
    ref = _as_reference(p_star)
    if len(ref.p_star) != models.cardinality:
        raise ValueError("p_star length does not match the number of score functions")
    best = models.predict_groups(data.x)
    un = None if unawareness is None else predict_unaware(unawareness, data.x)
    return PremiumReport(best, best @ ref.p_star, ref.p_star.copy(), un, models.task)


def evaluate(model, data: Dataset, kind: str | None = None, target: str = "stratified",
             p_star=None) -> float:
    """Mean test loss.

    For a :class:`GroupModelSet`, ``target="stratified"`` scores ``f_{d_i}(x_i)``
    (needs true ``d``) and ``target="dfp"`` scores the discrimination-free
    premium.  Any other model is scored directly.
    """
    kind = _kind(kind, data.task)
    if isinstance(model, GroupModelSet):
        preds = model.predict_groups(data.x)
        if target == "stratified":
            d = data.levels("d")
            pred = preds[np.arange(len(data)), d]
        elif target == "dfp":
            ref = _as_reference(model.p_hat if p_star is None else p_star)
            pred = preds @ ref.p_star
        else:
            raise ValueError(f"unknown evaluation target {target!r}")
    else:
        pred = predict_unaware(model, data.x)
    return float(np.mean(loss(kind, pred, data.y)))


# --------------------------------------------------------------------------
# model-set files

def dumps_model_set(gms: GroupModelSet) -> str:
    p_hat = "" if gms.p_hat is None else " ".join("%.17g" % v for v in gms.p_hat)
    lines = [
        "ldpfair-modelset 1",
        f"task {gms.task}",
        f"pi {gms.pi!r}",
        f"p_hat {p_hat}",
        f"models {gms.cardinality}",
        f"transformation {int(gms.transformation is not None)}",
    ]
    text = "\n".join(lines) + "\n"
    if gms.transformation is not None:
        text += dumps_model(gms.transformation)
    return text + "".join(dumps_model(m) for m in gms.models)


def loads_model_set(text: str) -> GroupModelSet:
    lines = text.splitlines()
    if not lines or lines[0].split() != ["ldpfair-modelset", "1"]:
        raise ValueError("not a version-1 model-set file")
    meta = dict(ln.partition(" ")[::2] for ln in lines[1:6])
    blocks, cur = [], []
    for ln in lines[6:]:
        cur.append(ln)
        if ln.strip() == "end":
            blocks.append("\n".join(cur))
            cur = []
    models = [loads_model(b) for b in blocks]
    transformation = models.pop(0) if meta["transformation"].strip() == "1" else None
    if len(models) != int(meta["models"]):
        raise ValueError("model count mismatch")
    p_hat = np.array([float(v) for v in meta["p_hat"].split()]) if meta["p_hat"].strip() else None
    return GroupModelSet(models, transformation, meta["task"].strip(), p_hat=p_hat,
                         pi=float(meta["pi"]))
