"""Feature maps for an ordered subsequence of feature vectors."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .core import DimensionMismatch, TooShort


class FeatureMapKind(str, Enum):
    MEAN_PAIRWISE_DIFF = "mean_pairwise_diff"
    STACKED = "stacked"
    STACKED_DIFF = "stacked_diff"
    # all (i, j) differences stacked; kept for ablations only
    FULL_PAIRWISE_DIFF = "full_pairwise_diff"


DEFAULT_KINDS = (
    FeatureMapKind.MEAN_PAIRWISE_DIFF,
    FeatureMapKind.STACKED,
    FeatureMapKind.STACKED_DIFF,
)


def map_dim(kind: FeatureMapKind, lam: int, d: int) -> int:
    kind = FeatureMapKind(kind)
    if kind is FeatureMapKind.MEAN_PAIRWISE_DIFF:
        return d
    if kind is FeatureMapKind.STACKED:
        return lam * d
    if kind is FeatureMapKind.STACKED_DIFF:
        return (lam - 1) * d
    return lam * (lam - 1) // 2 * d


def _check(vectors) -> np.ndarray:
    try:
        x = np.asarray(vectors, dtype=np.float64)
    except ValueError as exc:
        raise DimensionMismatch("vectors do not share one dimension") from exc
    if x.ndim != 2:
        raise DimensionMismatch("expected a list of equal-length vectors")
    if x.shape[0] < 2:
        raise TooShort(f"need at least 2 vectors, got {x.shape[0]}")
    return x


def psi(vectors, kind: FeatureMapKind) -> np.ndarray:
    """Map vectors, already arranged in the candidate order, to one feature vector."""
    x = _check(vectors)
    kind = FeatureMapKind(kind)
    lam = x.shape[0]
    if kind is FeatureMapKind.STACKED:
        return x.reshape(-1).copy()
    if kind is FeatureMapKind.STACKED_DIFF:
        return (x[:-1] - x[1:]).reshape(-1)
    iu, ju = np.triu_indices(lam, k=1)
    diffs = x[iu] - x[ju]
    if kind is FeatureMapKind.MEAN_PAIRWISE_DIFF:
        return diffs.mean(axis=0)
    return diffs.reshape(-1)


def position_coefficients(theta, kind: FeatureMapKind, lam: int, d: int) -> np.ndarray:
    """Split a linear model into per-slot weight vectors.

    Every supported map is linear in the window's items, so
    ``theta @ psi(x[order])`` equals ``sum_a W[a] @ x[order[a]]`` for the
    returned ``W`` of shape ``(lam, d)``.
    """
    kind = FeatureMapKind(kind)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (map_dim(kind, lam, d),):
        raise DimensionMismatch(
            f"theta has shape {theta.shape}, expected ({map_dim(kind, lam, d)},) for {kind.value}"
        )
    if kind is FeatureMapKind.STACKED:
        return theta.reshape(lam, d).copy()
    if kind is FeatureMapKind.STACKED_DIFF:
        blocks = theta.reshape(lam - 1, d)
        w = np.zeros((lam, d))
        w[:-1] += blocks
        w[1:] -= blocks
        return w
    if kind is FeatureMapKind.MEAN_PAIRWISE_DIFF:
        npairs = lam * (lam - 1) / 2
        slots = (lam - 1 - 2 * np.arange(lam)) / npairs
        return slots[:, None] * theta[None, :]
    iu, ju = np.triu_indices(lam, k=1)
    blocks = theta.reshape(len(iu), d)
    w = np.zeros((lam, d))
    np.add.at(w, iu, blocks)
    np.subtract.at(w, ju, blocks)
    return w
