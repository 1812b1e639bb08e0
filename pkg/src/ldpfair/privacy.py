"""Randomized response under epsilon-local differential privacy.

Each record's draw comes from its own block of a counter-based Philox stream
keyed by the seed, so the privatized level of record ``i`` depends only on
``(d_i, params, seed, i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, check_level

_U53 = 2.0 ** -53
_MAX_SEED = 2 ** 64


@dataclass(frozen=True)
class RRParams:
    """Randomized-response parameters.

    ``pi`` is the probability of reporting the true level and ``pi_bar`` the
    probability of reporting any one specific other level.  Both are stored
    alongside ``epsilon`` and checked for consistency.
    """

    epsilon: float
    cardinality: int
    pi: float
    pi_bar: float

    def __post_init__(self):
        k = self.cardinality
        if k < 2:
            raise ValueError("cardinality must be >= 2")
        if not 1.0 / k < self.pi <= 1.0:
            raise ValueError(f"pi={self.pi} outside (1/{k}, 1]")
        if abs(self.pi + (k - 1) * self.pi_bar - 1.0) > 1e-12:
            raise ValueError("pi + (k-1) pi_bar must equal 1")
        if math.isinf(self.epsilon):
            expected = 1.0
        else:
            expected = 1.0 / (1.0 + (k - 1) * math.exp(-self.epsilon))
        if abs(expected - self.pi) > 1e-12:
            raise ValueError("epsilon and pi are inconsistent")

    def matrix(self) -> np.ndarray:
        """``Q[s, d]``: probability of reporting ``s`` when the truth is ``d``."""
        k = self.cardinality
        q = np.full((k, k), self.pi_bar)
        np.fill_diagonal(q, self.pi)
        return q


def rr_params(epsilon: float, cardinality: int) -> RRParams:
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if cardinality < 2:
        raise ValueError("cardinality must be >= 2")
    if math.isinf(epsilon):
        return RRParams(epsilon, cardinality, 1.0, 0.0)
    # e^eps / (k - 1 + e^eps) written to stay finite for large epsilon
    t = math.exp(-epsilon)
    denom = 1.0 + (cardinality - 1) * t
    return RRParams(float(epsilon), int(cardinality), 1.0 / denom, t / denom)


def pi_from_target(pi: float, cardinality: int) -> RRParams:
    """Parameterize the mechanism by its keep probability."""
    if cardinality < 2:
        raise ValueError("cardinality must be >= 2")
    if not 1.0 / cardinality < pi < 1.0:
        raise ValueError(f"pi={pi} outside the open interval (1/{cardinality}, 1)")
    epsilon = math.log(pi * (cardinality - 1) / (1.0 - pi))
    return RRParams(epsilon, int(cardinality), float(pi), (1.0 - pi) / (cardinality - 1))


def mechanism_for(pi: float, cardinality: int) -> RRParams:
    """Like :func:`pi_from_target` but also accepts the noiseless ``pi = 1``."""
    if pi == 1.0:
        return rr_params(math.inf, cardinality)
    return pi_from_target(pi, cardinality)


def ldp_ratio(params: RRParams) -> float:
    """Largest likelihood ratio ``Q(s|d) / Q(s|d')`` over all s, d, d'."""
    if params.pi_bar == 0:
        return math.inf
    return params.pi / params.pi_bar


def _record_words(seed: int, n: int, offset: int = 0) -> np.ndarray:
    if not 0 <= seed < _MAX_SEED:
        raise ValueError("seed must be a non-negative 64-bit integer")
    gen = np.random.Philox(key=seed, counter=offset)
    return gen.random_raw(4 * n).reshape(n, 4)


def privatize_array(d, params: RRParams, seed: int, offset: int = 0) -> np.ndarray:
    """Privatize a vector of levels; element ``i`` uses stream block ``offset + i``."""
    d = np.asarray(d, dtype=np.int64).reshape(-1)
    k = params.cardinality
    if len(d) and (d.min() < 0 or d.max() >= k):
        raise ValueError(f"levels outside [0, {k})")
    words = _record_words(seed, len(d), offset)
    u = (words[:, 0] >> np.uint64(11)).astype(np.float64) * _U53
    keep = u < params.pi
    shift = 1 + (words[:, 1] % np.uint64(k - 1)).astype(np.int64)
    return np.where(keep, d, (d + shift) % k)


def privatize(d: int, params: RRParams, seed: int, index: int = 0) -> int:
    d = check_level(d, params.cardinality)
    return int(privatize_array([d], params, seed, offset=index)[0])


def privatize_dataset(dataset: Dataset, params: RRParams, seed: int,
                      keep_truth: bool = False) -> Dataset:
    """Fill the ``s`` column from ``d``; drop ``d`` unless ``keep_truth``."""
    if dataset.d is None:
        raise ValueError("privatize_dataset needs the true sensitive column d")
    if params.cardinality != dataset.sensitive_cardinality:
        raise ValueError("mechanism cardinality does not match the dataset")
    s = privatize_array(dataset.d, params, seed)
    return dataset.replace(s=s, d=dataset.d if keep_truth else None)
