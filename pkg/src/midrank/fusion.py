"""Combining the per-length rankings of one sequence into a final order."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence as Seq

import numpy as np

from .core import LengthMismatch, MidRankError, Permutation
from .inference import SearchConfig, SearchTrace, rank
from .models import Ensemble, FusionStrategy, LengthRanker

__all__ = [
    "Ensemble",
    "EmptyRankings",
    "FusionStrategy",
    "RankerResult",
    "EnsembleResult",
    "VoteWeighting",
    "vote_weights",
    "vote_matrix",
    "fuse_weighted_majority",
    "fuse_winner_takes_all",
    "rank_ensemble",
]


class EmptyRankings(MidRankError):
    pass


class VoteWeighting(str, Enum):
    SHIFTED = "shifted"  # raw scores shifted so the lowest negative one is zero
    EQUAL = "equal"


@dataclass
class RankerResult:
    lam: int
    perm: Permutation
    score: float
    trace: SearchTrace


@dataclass
class EnsembleResult:
    perm: Permutation
    per_ranker: list[RankerResult]
    fused: dict[str, Permutation]


def _check(rankings: Seq[tuple[Permutation, float]], length: Optional[int] = None) -> int:
    if not rankings:
        raise EmptyRankings("no rankings to fuse")
    n = len(rankings[0][0]) if length is None else length
    for perm, _ in rankings:
        if len(perm) != n:
            raise LengthMismatch(f"ranking of length {len(perm)} where {n} expected")
    return n


def vote_weights(scores: Iterable[float], weighting: VoteWeighting = VoteWeighting.SHIFTED) -> np.ndarray:
    """Shift raw scores so the smallest negative one becomes zero.

    Falls back to equal weights when every shifted weight is zero.
    """
    s = np.asarray(list(scores), dtype=np.float64)
    if VoteWeighting(weighting) is VoteWeighting.EQUAL:
        return np.ones_like(s)
    w = s - min(0.0, float(s.min()))
    if not np.any(w > 0):
        w = np.ones_like(w)
    return w


def vote_matrix(
    rankings: Seq[tuple[Permutation, float]],
    length: Optional[int] = None,
    weighting: VoteWeighting = VoteWeighting.SHIFTED,
) -> np.ndarray:
    """``votes[item, position]`` summed over rankers, each weighted by its vote weight."""
    n = _check(rankings, length)
    w = vote_weights((score for _, score in rankings), weighting)
    votes = np.zeros((n, n))
    positions = np.arange(n)
    for (perm, _), wr in zip(rankings, w):
        votes[perm.as_array(), positions] += wr
    return votes


def fuse_weighted_majority(
    rankings: Seq[tuple[Permutation, float]],
    length: Optional[int] = None,
    weighting: VoteWeighting = VoteWeighting.SHIFTED,
) -> Permutation:
    """Fill positions from the top, each with the free item holding most votes there."""
    votes = vote_matrix(rankings, length, weighting)
    n = votes.shape[0]
    free = np.ones(n, dtype=bool)
    order = []
    for p in range(n):
        col = np.where(free, votes[:, p], -np.inf)
        item = int(np.argmax(col))
        order.append(item)
        free[item] = False
    return Permutation(tuple(order))


def fuse_winner_takes_all(rankings: Seq[tuple[Permutation, float]]) -> Permutation:
    """Order of the highest-scoring ranker; give rankings by ascending lambda so ties favour the shortest."""
    _check(rankings)
    best = max(range(len(rankings)), key=lambda i: (rankings[i][1], -i))
    return rankings[best][0]


def rank_ensemble(
    seq_vectors,
    ensemble: Ensemble,
    config: SearchConfig = SearchConfig(),
    strategies: Optional[Seq[FusionStrategy]] = None,
    rankers: Optional[Seq[LengthRanker]] = None,
    weighting: VoteWeighting = VoteWeighting.SHIFTED,
) -> EnsembleResult:
    """Rank with every voting ranker, then fuse.

    ``perm`` follows ``ensemble.fusion``; ``fused`` holds every requested
    strategy. Rankers longer than the sequence are left out.
    """
    n = len(seq_vectors)
    pool = [r for r in (rankers or ensemble.fused_rankers()) if r.lam <= n]
    if not pool:
        raise EmptyRankings(f"no ranker fits a sequence of length {n} (lambdas {ensemble.lambdas})")
    pair = ensemble.pair_ranker()
    results = []
    for r in pool:
        perm, trace = rank(seq_vectors, r, config, pair_ranker=pair)
        results.append(RankerResult(r.lam, perm, trace.best_score, trace))
    pairs = [(res.perm, res.score) for res in results]
    wanted = set(strategies or ()) | {ensemble.fusion}
    fused: dict[str, Permutation] = {}
    for strat in wanted:
        strat = FusionStrategy(strat)
        if strat is FusionStrategy.WEIGHTED_MAJORITY:
            fused[strat.value] = fuse_weighted_majority(pairs, n, weighting)
        elif strat is FusionStrategy.WINNER_TAKES_ALL:
            fused[strat.value] = fuse_winner_takes_all(pairs)
        else:
            lam = ensemble.best_single_lambda
            match = [res for res in results if res.lam == lam]
            if lam is None or not match:
                # best ranker unknown or too long here: longest one that fits
                match = results[-1:]
            fused[strat.value] = match[0].perm
    return EnsembleResult(fused[ensemble.fusion.value], results, fused)
