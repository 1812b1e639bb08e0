"""Estimating the keep probability from anchor points.

If some covariate value pins the true level to ``j*`` with certainty, then
``P(S = j* | x_anchor) = pi``.  A fitted posterior ``P(S = j* | x)`` maximized
over the sample therefore estimates ``pi``.  :func:`c1_procedure` repeats the
estimate on disjoint groups and averages the implied correction factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correction import c1
from .models import BINARY_CROSS_ENTROPY, LinearModel, TrainConfig, make_model, train_weighted

POSTERIOR_CLIP = 1e-6
MIN_GROUP_SIZE = 50

POSTERIOR_CONFIG = TrainConfig(epochs=2000, convergence_tol=1e-10)


def c1_map(value: float, k: int) -> float:
    """``x -> (x + k - 2) / (k x - 1)``.

    Maps ``pi`` to the correction factor ``C1`` and, being an involution,
    ``C1`` back to ``pi``.
    """
    return (value + k - 2) / (k * value - 1)


@dataclass
class AnchorEstimate:
    pi_hat: float
    level_used: int
    eta_max_per_group: list = field(default_factory=list)
    c1_per_group: list = field(default_factory=list)
    c1_hat: float = float("nan")
    n1: int = 1
    m: int = 0
    excluded_groups: list = field(default_factory=list)


def choose_j_star(s, cardinality: int) -> int:
    """Most frequent privatized level (lowest index on ties)."""
    return int(np.argmax(np.bincount(np.asarray(s), minlength=cardinality)))


def fit_posterior(x_star, s, j_star: int, cardinality: int = 2,
                  cfg: TrainConfig = POSTERIOR_CONFIG) -> LinearModel:
    """Logistic model of ``P(S = j* | x*)`` fitted by cross-entropy."""
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim == 1:
        x_star = x_star[:, None]
    s = np.asarray(s)
    present = np.unique(s)
    if len(present) < 2 or len(present) < cardinality:
        raise ValueError(f"posterior fit needs every level present; saw {present.tolist()}")
    target = (s == j_star).astype(float)
    model = make_model("linear", x_star.shape[1], "sigmoid", cfg.seed, index=200)
    w = np.full(len(s), 1.0 / len(s))
    return train_weighted([model], x_star, target, w, BINARY_CROSS_ENTROPY, cfg)[0]


def estimate_pi_anchor(x_star, s, j_star: int | None = None, cardinality: int = 2,
                       cfg: TrainConfig = POSTERIOR_CONFIG) -> float:
    """Largest fitted ``P(S = j* | x*)`` over the sample."""
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim == 1:
        x_star = x_star[:, None]
    s = np.asarray(s)
    if j_star is None:
        j_star = choose_j_star(s, cardinality)
    g = fit_posterior(x_star, s, j_star, cardinality, cfg)
    eta = np.clip(g.predict(x_star), POSTERIOR_CLIP, 1 - POSTERIOR_CLIP)
    pi_hat = float(eta.max())
    if pi_hat <= 1.0 / cardinality:
        raise ValueError(
            f"no informative anchor found: max posterior {pi_hat:.4f} <= 1/{cardinality}"
        )
    return min(max(pi_hat, 1.0 / cardinality + 1e-6), 1.0)


def c1_procedure(x_star, s, n1: int, cardinality: int = 2, j_star: int | None = None,
                 cfg: TrainConfig = POSTERIOR_CONFIG, seed: int = 0,
                 min_group_size: int = MIN_GROUP_SIZE) -> AnchorEstimate:
    """Grouped estimate of ``C1`` and the implied ``pi``.

    The sample is shuffled and cut into ``n1`` groups of ``m = n // n1``
    records (the remainder is dropped).  Each group gets its own anchor
    estimate ``pi_k``; groups whose estimate is uninformative are excluded.
    ``C1`` is the mean of ``c1(pi_k)`` and ``pi_hat = c1_map(C1)``.
    """
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim == 1:
        x_star = x_star[:, None]
    s = np.asarray(s)
    n = len(s)
    if n1 < 1:
        raise ValueError("n1 must be >= 1")
    m = n // n1
    if m < min_group_size:
        raise ValueError(f"group size {m} below the minimum {min_group_size}")
    if j_star is None:
        j_star = choose_j_star(s, cardinality)
    if n1 == 1:
        groups = [np.arange(n)]
    else:
        perm = np.random.default_rng([seed, 17]).permutation(n)
        groups = [np.sort(perm[g * m:(g + 1) * m]) for g in range(n1)]

    etas, c1s, excluded = [], [], []
    for g, idx in enumerate(groups):
        try:
            pi_k = estimate_pi_anchor(x_star[idx], s[idx], j_star, cardinality, cfg)
        except ValueError:
            excluded.append(g)
            continue
        etas.append(pi_k)
        c1s.append(c1(pi_k, cardinality))
    if not c1s:
        raise ValueError("every group was uninformative; no anchor found")
    c1_hat = float(np.mean(c1s))
    pi_hat = min(c1_map(c1_hat, cardinality), 1.0)
    return AnchorEstimate(pi_hat=pi_hat, level_used=int(j_star), eta_max_per_group=etas,
                          c1_per_group=c1s, c1_hat=c1_hat, n1=n1, m=m,
                          excluded_groups=excluded)


def perturb_pi(pi: float, error: float, mode: str = "absolute", cardinality: int = 2) -> float:
    """Shift ``pi`` by an absolute offset or a relative factor ``pi * (1 + error)``."""
    if mode == "absolute":
        out = pi + error
    elif mode == "relative":
        out = pi * (1.0 + error)
    else:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    out = round(out, 12)
    if not 1.0 / cardinality < out <= 1.0:
        raise ValueError(f"perturbed pi={out} outside (1/{cardinality}, 1]")
    return out
