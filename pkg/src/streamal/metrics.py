"""Informativeness and diversity measures used by the selection strategies.

All logarithms are natural. Dot products inside :func:`cosine_distance` are
correctly rounded (``math.fsum``), so pairwise distances, and therefore
:func:`diversity`, do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

PROB_ATOL = 1e-6
LOGDET_JITTER = 1e-6


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_i: float = 1.0
    lambda_d: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("lambda_i", "lambda_d", "alpha"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        if self.lambda_i < 0 or self.lambda_d < 0:
            raise ValueError("objective weights must be non-negative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def _check_prob(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"probability vector must be 1-D and non-empty, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_ATOL:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")
    return p


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 ln 0 taken as 0."""
    p = _check_prob(p)
    nz = p[p > 0]
    return float(-math.fsum((nz * np.log(nz)).tolist())) + 0.0


def margin_informativeness(p) -> float:
    """1 - (largest - second largest); 1 at uniform, 0 at one-hot."""
    p = _check_prob(p)
    if p.size < 2:
        raise ValueError("margin needs at least two classes")
    top2 = np.sort(p)[-2:]
    return float(1.0 - (top2[1] - top2[0]))


_SPLITTER = 134217729.0  # 2**27 + 1


def _split(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _exact_dot(u: np.ndarray, v: np.ndarray) -> float:
    """Correctly rounded dot product.

    Each product is split into its rounded value and exact rounding error
    (Dekker's two-product), so fsum sees the exact terms. Assumes no
    overflow or underflow in the products.
    """
    p = u * v
    uh, ul = _split(u)
    vh, vl = _split(v)
    err = ((uh * vh - p) + uh * vl + ul * vh) + ul * vl
    return math.fsum(np.concatenate([p, err]).tolist())


def cosine_distance(u, v) -> float:
    """1 - cos(u, v). A zero vector on either side gives 1."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    nu = math.sqrt(_exact_dot(u, u))
    nv = math.sqrt(_exact_dot(v, v))
    if nu == 0.0 or nv == 0.0:
        return 1.0
    cos = _exact_dot(u, v) / (nu * nv)
    return 1.0 - min(1.0, max(-1.0, cos))


def _check_lengths(V: Sequence) -> None:
    lengths = {np.asarray(v).size for v in V}
    if len(lengths) > 1:
        raise ValueError(f"vectors have mixed lengths {sorted(lengths)}")


def pairwise_distances(V: Sequence) -> list[float]:
    """All pairwise cosine distances, i < j in lexicographic order."""
    return [cosine_distance(a, b) for a, b in combinations(V, 2)]


def diversity(V: Sequence) -> float:
    """Mean pairwise cosine distance; 0 when fewer than two vectors."""
    _check_lengths(V)
    n = len(V)
    if n < 2:
        return 0.0
    return math.fsum(pairwise_distances(V)) / (n * (n - 1) // 2)


def info_objective(P: Sequence) -> float:
    """Sum of entropies over the batch."""
    return math.fsum(entropy(p) for p in P)


def _normalized_rows(V: Sequence) -> np.ndarray:
    X = np.asarray([np.asarray(v, dtype=np.float64).ravel() for v in V])
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def logdet_diversity(V: Sequence, alpha: float = 1.0) -> float:
    """0.5 * ln det(I + alpha * A) with A the Gram matrix of unit-normalized V."""
    if alpha <= 0 or not math.isfinite(alpha):
        raise ValueError("alpha must be positive and finite")
    if len(V) == 0:
        return 0.0
    _check_lengths(V)
    X = _normalized_rows(V)
    M = np.eye(len(X)) + alpha * (X @ X.T)
    return 0.5 * _logdet_spd(M)


def _logdet_spd(M: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(M + LOGDET_JITTER * np.eye(len(M)))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("log-det matrix not positive definite after jitter") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def combined_objective(P: Sequence, V: Sequence, w: ObjectiveWeights = ObjectiveWeights()) -> float:
    """lambda_i * info_objective(P) + lambda_d * logdet_diversity(V, alpha)."""
    if len(P) != len(V):
        raise ValueError(f"{len(P)} probability vectors but {len(V)} feature vectors")
    value = 0.0
    if w.lambda_i:
        value += w.lambda_i * info_objective(P)
    if w.lambda_d:
        value += w.lambda_d * logdet_diversity(V, w.alpha)
    return value
