"""Synthetic claim-cost design with closed-form premiums, plus two auxiliary designs.

Claim cost design (ages 18-80, smoker flag, gender):

    Y = 100 + 4 age + 100 smoker + 120 female + 200 female * 1{20 <= age <= 40} + N(0, sigma^2)

with age uniform on the integers, age independent of smoker and gender,
``P(smoker) = 0.3``, ``P(female) = 0.45`` and ``P(female | smoker) = 0.8``.
Level 0 is male, level 1 female.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import Dataset

MALE, FEMALE = 0, 1
AGES = np.arange(18, 81)
FEATURES = ("age", "smoker")


@dataclass(frozen=True)
class SynthConfig:
    n: int = 5000
    seed: int = 0
    sigma: float = 40.0
    age_range: tuple[int, int] = (18, 80)
    p_smoker: float = 0.3
    p_female: float = 0.45
    p_female_given_smoker: float = 0.8

    @property
    def p_female_given_nonsmoker(self) -> float:
        return (self.p_female - self.p_female_given_smoker * self.p_smoker) / (1 - self.p_smoker)

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        for name in ("p_smoker", "p_female", "p_female_given_smoker"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if not 0 <= self.p_female_given_nonsmoker <= 1:
            raise ValueError(
                f"implied P(female | non-smoker) = {self.p_female_given_nonsmoker:.4f} "
                "is not a probability"
            )


def _flag(value, true_label: str, false_label: str) -> int:
    if isinstance(value, str):
        if value == true_label:
            return 1
        if value == false_label:
            return 0
        raise ValueError(f"expected {true_label!r} or {false_label!r}, got {value!r}")
    return int(bool(value))


def mean_array(age, smoker, female) -> np.ndarray:
    age = np.asarray(age, dtype=float)
    smoker = np.asarray(smoker, dtype=float)
    female = np.asarray(female, dtype=float)
    band = ((age >= 20) & (age <= 40)).astype(float)
    return 100 + 4 * age + 100 * smoker + 120 * female + 200 * band * female


def dgp_mean(x_a: int, x_s, d) -> float:
    """Noise-free claim cost; ``x_s`` is ``"S"``/``"NS"`` (or a flag), ``d`` is ``"F"``/``"M"`` (or a level)."""
    if not 18 <= x_a <= 80:
        raise ValueError(f"age {x_a} outside [18, 80]")
    return float(mean_array(x_a, _flag(x_s, "S", "NS"), _flag(d, "F", "M")))


def dgp_sample(cfg: SynthConfig = SynthConfig()) -> Dataset:
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 5])
    lo, hi = cfg.age_range
    age = rng.integers(lo, hi + 1, cfg.n)
    smoker = (rng.random(cfg.n) < cfg.p_smoker).astype(int)
    p_f = np.where(smoker == 1, cfg.p_female_given_smoker, cfg.p_female_given_nonsmoker)
    female = (rng.random(cfg.n) < p_f).astype(int)
    noise = rng.standard_normal(cfg.n)
    y = mean_array(age, smoker, female) + cfg.sigma * noise
    return Dataset(x=np.column_stack([age, smoker]).astype(float), y=y, d=female,
                   feature_names=FEATURES, sensitive_cardinality=2, task="regression")


@dataclass(frozen=True)
class AnalyticPremiums:
    best_estimate: tuple[float, float]
    unawareness: float
    dfp: float


def analytic_premiums(x_a: int, x_s, cfg: SynthConfig = SynthConfig(), p_star=None) -> AnalyticPremiums:
    """Population best-estimate, unawareness and discrimination-free premiums for one cell.

    ``p_star`` defaults to the population gender marginal.
    """
    smoker = _flag(x_s, "S", "NS")
    best = (dgp_mean(x_a, smoker, MALE), dgp_mean(x_a, smoker, FEMALE))
    p_f = cfg.p_female_given_smoker if smoker else cfg.p_female_given_nonsmoker
    if p_star is None:
        p_star = (1 - cfg.p_female, cfg.p_female)
    unaware = (1 - p_f) * best[0] + p_f * best[1]
    dfp = p_star[0] * best[0] + p_star[1] * best[1]
    return AnalyticPremiums(best, unaware, dfp)


def grid_cells() -> np.ndarray:
    """All 252 ``(age, smoker, female)`` cells, one per row."""
    a, s, f = np.meshgrid(AGES, [0, 1], [0, 1], indexing="ij")
    return np.column_stack([a.ravel(), s.ravel(), f.ravel()])


# --------------------------------------------------------------------------
# auxiliary designs

def classification_sample(n: int = 5000, seed: int = 0) -> Dataset:
    """Binary claim indicator whose log-odds depend on age, smoking and gender.

    Gender is correlated with smoking as in the claim cost design.
    """
    rng = np.random.default_rng([seed, 6])
    age = rng.integers(18, 81, n)
    smoker = (rng.random(n) < 0.3).astype(int)
    female = (rng.random(n) < np.where(smoker == 1, 0.8, 0.3)).astype(int)
    a = (age - 49) / 18.0
    logits = -0.5 + 0.8 * a + 1.0 * smoker + 1.5 * female - 1.6 * a * female
    y = (rng.random(n) < expit(logits)).astype(float)
    return Dataset(x=np.column_stack([age, smoker]).astype(float), y=y, d=female,
                   feature_names=FEATURES, sensitive_cardinality=2, task="classification")


def anchor_sample(n: int, pi: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Covariate ``x ~ U[-1, 1]`` and true binary level with anchors at both ends.

    ``P(D=1 | x)`` is chosen so that after randomized response with keep
    probability ``pi`` the posterior ``P(S=1 | x) = sigmoid(logit(pi) x)`` is
    exactly logistic.  At ``x = 1`` the level is 1 with certainty and at
    ``x = -1`` it is 0, so the maximal posterior of either level equals ``pi``.
    """
    if not 0.5 < pi < 1:
        raise ValueError("pi must lie in (0.5, 1)")
    rng = np.random.default_rng([seed, 7])
    x = rng.uniform(-1.0, 1.0, n)
    p_d = (expit(logit(pi) * x) - (1 - pi)) / (2 * pi - 1)
    d = (rng.random(n) < np.clip(p_d, 0.0, 1.0)).astype(int)
    return x[:, None], d
