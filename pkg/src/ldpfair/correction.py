"""Closed-form inverse transition matrices and corrected risk weights.

Conventions (``k`` sensitive levels, keep probability ``pi``):

* ``T[s, d] = P(S=s | D=d)``: ``pi`` on the diagonal, ``(1-pi)/(k-1)`` off it.
  ``P(S) = T @ P(D)``.
* ``Pi[s, d] = P(D=d | S=s)``, so ``P(.|S=s) = sum_d Pi[s, d] P(.|D=d)``.

The corrected risk of a set of group models is
``sum_k sum_j w[k, j] * mean_{i: S_i=j} L(f_k(x_i), y_i)`` with
``w[k, j] = Pi^-1[k, j] * p_d[k]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MARGINAL_FLOOR = 1e-3


def _check_pi(pi: float, k: int) -> None:
    if k < 2:
        raise ValueError("cardinality must be >= 2")
    if not pi > 1.0 / k:
        raise ValueError(f"pi={pi} <= 1/{k}: the noise model is singular")
    if pi > 1.0:
        raise ValueError(f"pi={pi} > 1")


def c1(pi: float, k: int) -> float:
    """Diagonal of ``T^-1``: ``(pi + k - 2) / (k pi - 1)``."""
    return (pi + k - 2) / (k * pi - 1)


def c2(pi: float, k: int) -> float:
    """Off-diagonal of ``T^-1``: ``(pi - 1) / (k pi - 1)``."""
    return (pi - 1) / (k * pi - 1)


def forward_t(pi: float, k: int) -> np.ndarray:
    t = np.full((k, k), (1.0 - pi) / (k - 1))
    np.fill_diagonal(t, pi)
    return t


def t_inverse(pi: float, k: int) -> np.ndarray:
    _check_pi(pi, k)
    t = np.full((k, k), c2(pi, k))
    np.fill_diagonal(t, c1(pi, k))
    return t


def _check_marginal(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or len(p) < 2:
        raise ValueError("marginal must be a vector with at least two entries")
    if np.any(p <= 0):
        raise ValueError("marginal entries must be strictly positive")
    return p


def forward_pi(pi: float, p_d) -> np.ndarray:
    """``Pi[s, d] = T[s, d] p_d / P(S=s)``."""
    p = _check_marginal(p_d)
    t = forward_t(pi, len(p))
    joint = t * p[None, :]
    return joint / joint.sum(axis=1, keepdims=True)


def pi_inverse(pi: float, p_d) -> np.ndarray:
    """Closed form ``Pi^-1[k, j] = T^-1[k, j] * P(S=j) / p_d[k]`` with ``P(S) = T p_d``."""
    p = _check_marginal(p_d)
    k = len(p)
    t_inv = t_inverse(pi, k)
    p_s = forward_t(pi, k) @ p
    return t_inv * p_s[None, :] / p[:, None]


def recover_marginal(p_s, pi: float, floor: float = MARGINAL_FLOOR) -> tuple[np.ndarray, bool]:
    """Invert ``P(S) = T P(D)``.

    Entries below ``floor`` are raised to it and the vector renormalized;
    the second return value reports whether that happened.  A result that is
    already inside the floored simplex is returned untouched.
    """
    p_s = np.asarray(p_s, dtype=float)
    k = len(p_s)
    raw = t_inverse(pi, k) @ p_s
    if np.all(raw >= floor):
        return raw, False
    clamped = np.maximum(raw, floor)
    # renormalize the unclamped mass so clamped entries stay exactly at floor
    low = raw < floor
    free = clamped[~low]
    clamped[~low] = free * (1.0 - floor * low.sum()) / free.sum()
    return clamped, True


@dataclass(frozen=True, eq=False)
class CorrectionMatrices:
    t_inv: np.ndarray
    pi_inv: np.ndarray
    p_d: np.ndarray
    p_s: np.ndarray
    c1: float
    pi: float
    clamped: bool = False

    @property
    def cardinality(self) -> int:
        return len(self.p_d)


def correction_matrices(p_s, pi: float) -> CorrectionMatrices:
    p_s = np.asarray(p_s, dtype=float)
    k = len(p_s)
    _check_pi(pi, k)
    p_d, clamped = recover_marginal(p_s, pi)
    return CorrectionMatrices(
        t_inv=t_inverse(pi, k),
        pi_inv=pi_inverse(pi, p_d),
        p_d=p_d,
        p_s=p_s,
        c1=c1(pi, k),
        pi=float(pi),
        clamped=clamped,
    )


def corrected_risk_weights(s_counts, pi: float) -> tuple[CorrectionMatrices, np.ndarray]:
    """Correction matrices plus the ``(k, j)`` weight table of the corrected risk."""
    counts = np.asarray(s_counts)
    if counts.ndim != 1 or len(counts) < 2:
        raise ValueError("need one count per sensitive level")
    if np.any(counts < 1):
        empty = np.flatnonzero(counts < 1).tolist()
        raise ValueError(
            f"privatized levels {empty} have no records; use a larger sample or merge levels"
        )
    mats = correction_matrices(counts / counts.sum(), pi)
    return mats, mats.pi_inv * mats.p_d[:, None]


def indicator_weights(counts) -> np.ndarray:
    """Weight table of the clean group-stratified risk: ``diag(n_k / n)``."""
    counts = np.asarray(counts)
    return np.diag(counts / counts.sum())


def record_weights(levels, table: np.ndarray) -> np.ndarray:
    """Spread a ``(k, j)`` table over records.

    Returns ``W`` of shape ``(n, k)`` with ``W[i, k] = table[k, levels[i]] / n_j``
    where ``n_j`` counts records at level ``levels[i]``, so that
    ``sum_i W[i, k] L_ik`` equals ``sum_j table[k, j] * mean_{levels=j} L_k``.
    """
    levels = np.asarray(levels, dtype=np.int64)
    k = table.shape[1]
    counts = np.bincount(levels, minlength=k)
    per_level = table / np.maximum(counts, 1)[None, :]
    return per_level[:, levels].T


def weighted_risk(losses: np.ndarray, weights: np.ndarray) -> float:
    """``sum_i sum_k W[i, k] * losses[i, k]``."""
    return float(np.sum(weights * losses))
