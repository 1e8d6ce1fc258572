"""Evaluation protocol shared by the CLI and the benchmark tests."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence as Seq

import numpy as np

from .core import Permutation, Sequence, rng_for
from .fusion import FusionStrategy, VoteWeighting, rank_ensemble
from .inference import SearchConfig, exhaustive_rank, rank, ranksvm_init
from .metrics import RankingReport, aggregate, evaluate, kendall_tau
from .models import Ensemble
from .training import TrainConfig, train_ensemble


@dataclass
class SequenceOutcome:
    seq_id: str
    fused: dict[str, Permutation]
    per_lambda: dict[int, Permutation]
    scores: dict[int, float]
    baseline: Optional[Permutation]


def _search_for(config: SearchConfig, index: int) -> SearchConfig:
    # one restart stream per sequence keeps results independent of thread scheduling
    return replace(config, seed=int(rng_for(config.seed, "sequence", str(index)).integers(2**31)))


def run_sequence(
    seq: Sequence,
    ensemble: Ensemble,
    config: SearchConfig,
    index: int = 0,
    all_lambdas: bool = False,
    weighting: VoteWeighting = VoteWeighting.SHIFTED,
) -> SequenceOutcome:
    strategies = list(FusionStrategy)
    cfg = _search_for(config, index)
    res = rank_ensemble(seq.items, ensemble, cfg, strategies=strategies, weighting=weighting)
    per = {r.lam: r.perm for r in res.per_ranker}
    scores = {r.lam: r.score for r in res.per_ranker}
    pair = ensemble.pair_ranker()
    if all_lambdas and pair is not None and pair.lam not in per:
        perm, trace = rank(seq.items, pair, cfg)
        per[pair.lam], scores[pair.lam] = perm, trace.best_score
    baseline = ranksvm_init(seq.items, pair) if pair is not None else None
    return SequenceOutcome(seq.id, res.fused, per, scores, baseline)


def run_all(
    seqs: Seq[Sequence],
    ensemble: Ensemble,
    config: SearchConfig,
    threads: int = 1,
    all_lambdas: bool = False,
    weighting: VoteWeighting = VoteWeighting.SHIFTED,
) -> list[SequenceOutcome]:
    jobs = [(s, i) for i, s in enumerate(seqs)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda j: run_sequence(j[0], ensemble, config, j[1], all_lambdas, weighting), jobs))
    return [run_sequence(s, ensemble, config, i, all_lambdas, weighting) for s, i in jobs]


def report_rows(
    seqs: Seq[Sequence],
    outcomes: Seq[SequenceOutcome],
    ensemble: Ensemble,
    all_fusions: bool = False,
    ablate_lambda: bool = False,
) -> list[dict]:
    truth = [s.ground_truth for s in seqs]

    def row(method: str, perms: Seq[Optional[Permutation]]) -> dict:
        reps: list[RankingReport] = [evaluate(p, t) for p, t in zip(perms, truth) if p is not None]
        return aggregate(method, reps)

    rows = [row(f"midrank-{ensemble.fusion.value}", [o.fused[ensemble.fusion.value] for o in outcomes])]
    if all_fusions:
        for strat in FusionStrategy:
            if strat is not ensemble.fusion:
                rows.append(row(f"midrank-{strat.value}", [o.fused[strat.value] for o in outcomes]))
    if outcomes and outcomes[0].baseline is not None:
        rows.append(row("ranksvm", [o.baseline for o in outcomes]))
    if ablate_lambda:
        for lam in ensemble.lambdas:
            perms = [o.per_lambda.get(lam) for o in outcomes]
            if any(p is not None for p in perms):
                rows.append(row(f"lambda={lam}", perms))
    return rows


def compare_exhaustive(
    seqs: Seq[Sequence], ensemble: Ensemble, config: SearchConfig, lam: Optional[int] = None
) -> dict:
    """Greedy vs exhaustive search for one ranker: score agreement, timing, node counts.

    Each method runs over all sequences in its own timed pass so neither
    pays for the other's cache and allocator churn.
    """
    ranker = ensemble.ranker(lam) if lam is not None else ensemble.fused_rankers()[-1]
    pair = ensemble.pair_ranker()
    configs = [_search_for(config, i) for i in range(len(seqs))]
    t0 = time.perf_counter()
    greedy = [rank(s.items, ranker, cfg, pair_ranker=pair) for s, cfg in zip(seqs, configs)]
    t1 = time.perf_counter()
    exact = [exhaustive_rank(s.items, ranker) for s in seqs]
    t2 = time.perf_counter()
    n = len(seqs)
    return {
        "lambda": ranker.lam,
        "num_trees": config.num_trees,
        "n_sequences": n,
        "agreement": sum(tr.best_score == best for (_, tr), (_, best) in zip(greedy, exact)) / n,
        "greedy_seconds_mean": (t1 - t0) / n,
        "exhaustive_seconds_mean": (t2 - t1) / n,
        "speedup": (t2 - t1) / (t1 - t0) if t1 > t0 else float("inf"),
        "max_nodes_per_tree": max(max(tr.tree_nodes) for _, tr in greedy),
        "kt_greedy": float(np.mean([kendall_tau(p, s.ground_truth) for (p, _), s in zip(greedy, seqs)])),
        "kt_exhaustive": float(np.mean([kendall_tau(p, s.ground_truth) for (p, _), s in zip(exact, seqs)])),
    }


def restrict(seq: Sequence, idx: Seq[int], new_id: str) -> Sequence:
    """Sub-sequence of chosen items; the ground truth restricts to their relative order."""
    idx = list(idx)
    rank_of = seq.ground_truth.inverse().order
    local = sorted(range(len(idx)), key=lambda k: rank_of[idx[k]])
    return Sequence(
        items=seq.items[idx],
        ground_truth=Permutation(tuple(local)),
        id=new_id,
        item_ids=None if seq.item_ids is None else tuple(seq.item_ids[i] for i in idx),
        keys=None if seq.keys is None else tuple(seq.keys[i] for i in idx),
    )


def validation_sequences(seqs: Seq[Sequence], length: int, seed: int) -> list[Sequence]:
    rng = rng_for(seed, "validation")
    out = []
    for s in seqs:
        if len(s) < length:
            continue
        idx = sorted(int(i) for i in rng.choice(len(s), size=length, replace=False))
        out.append(restrict(s, idx, f"{s.id}-val"))
    return out


def select_best_single(
    seqs: Seq[Sequence],
    ensemble: Ensemble,
    config: TrainConfig,
    test_length: int,
    search: SearchConfig,
    holdout: float = 1 / 3,
) -> tuple[Optional[int], dict[int, float]]:
    """Pick the single ranker with the best validation Kendall-Tau at ``test_length``.

    Every ranker is refit on the remaining sequences with its own mu, then
    scored on held-out sequences cut down to ``test_length``.
    """
    order = rng_for(config.seed, "best-single").permutation(len(seqs))
    n_val = max(1, int(round(len(seqs) * holdout)))
    val = validation_sequences([seqs[i] for i in order[:n_val]], test_length, config.seed)
    fit_seqs = [seqs[i] for i in order[n_val:]]
    if not fit_seqs or not val:
        return None, {}
    refit = {}
    for r in ensemble.rankers:
        cfg = replace(config, lambdas=(r.lam,), mu=r.mu or config.mu, cv_folds=0)
        refit[r.lam] = train_ensemble(fit_seqs, cfg).rankers[0]
    pair = refit.get(2)
    kts: dict[int, float] = {}
    for r in ensemble.fused_rankers():
        if r.lam > test_length:
            continue
        vals = []
        for i, s in enumerate(val):
            perm, _ = rank(s.items, refit[r.lam], _search_for(search, i), pair_ranker=pair)
            vals.append(kendall_tau(perm, s.ground_truth))
        kts[r.lam] = float(np.mean(vals))
    if not kts:
        return None, {}
    best = max(sorted(kts), key=lambda lam: kts[lam])
    return best, kts
