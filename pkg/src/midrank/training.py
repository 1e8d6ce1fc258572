"""Subsequence sampling and max-margin training of per-length rankers."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence as Seq

import numpy as np
from numba import njit

from .core import MidRankError, Sequence, Subsequence, rng_for
from .features import FeatureMapKind, map_dim, psi
from .models import Ensemble, FusionStrategy, LengthRanker

log = logging.getLogger(__name__)

DEFAULT_MU_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class SequenceTooShort(MidRankError):
    pass


class MissingGroundTruth(MidRankError):
    pass


class LambdaTooSmall(MidRankError):
    pass


class DegenerateData(MidRankError):
    pass


class NonFiniteLoss(MidRankError):
    pass


class EmptyLambdaRange(MidRankError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambdas: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8)
    positives_per_sequence: int = 10
    mu: float = 1e-2
    mu_grid: tuple[float, ...] = DEFAULT_MU_GRID
    cv_folds: int = 3
    sdca_epochs: int = 1000
    tolerance: float = 1e-4
    seed: int = 0
    feature_map: FeatureMapKind = FeatureMapKind.STACKED_DIFF
    threads: int = 1
    # lambda=2 only: every ordered pair of a sequence instead of sampled windows
    pair_samples: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(int(x) for x in self.lambdas))
        object.__setattr__(self, "mu_grid", tuple(float(x) for x in self.mu_grid))
        object.__setattr__(self, "feature_map", FeatureMapKind(self.feature_map))
        if not self.lambdas:
            raise EmptyLambdaRange("lambda range is empty")
        if min(self.lambdas) < 2:
            raise LambdaTooSmall(f"every lambda must be >= 2, got {list(self.lambdas)}")
        if len(set(self.lambdas)) != len(self.lambdas):
            raise MidRankError(f"duplicate lambda values: {list(self.lambdas)}")
        if self.mu <= 0 or any(m <= 0 for m in self.mu_grid):
            raise MidRankError("mu must be positive")
        if self.positives_per_sequence < 1 or self.sdca_epochs < 1:
            raise MidRankError("positives_per_sequence and sdca_epochs must be >= 1")
        if self.tolerance < 0 or self.cv_folds < 0:
            raise MidRankError("tolerance and cv_folds must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambdas"] = list(self.lambdas)
        out["mu_grid"] = list(self.mu_grid)
        out["feature_map"] = self.feature_map.value
        return out


@dataclass(frozen=True, eq=False)
class TrainingSample:
    x: np.ndarray
    y: int
    weight: float = 1.0

    def __post_init__(self):
        if self.y not in (1, -1):
            raise MidRankError(f"label must be +1 or -1, got {self.y}")


@dataclass
class SDCAResult:
    theta: np.ndarray
    alpha: np.ndarray
    primal: float
    dual: float
    epochs: int
    converged: bool
    dual_history: list[float] = field(default_factory=list)
    gap_history: list[float] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.primal - self.dual


def sample_positives(seqs: Seq[Sequence], lam: int, count: int, seed: int) -> list[Subsequence]:
    """Draw ``count`` correctly ordered windows of length ``lam`` per sequence.

    Windows are distinct while the sequence has enough of them; otherwise
    they are drawn with replacement.
    """
    if lam < 2:
        raise LambdaTooSmall(f"lambda={lam} < 2")
    rng = rng_for(seed, "positives")
    out = []
    for seq in seqs:
        if seq.ground_truth is None:
            raise MissingGroundTruth(f"sequence {seq.id!r} has no ground truth")
        n = len(seq)
        if n < lam:
            raise SequenceTooShort(f"sequence {seq.id!r} has length {n} < lambda={lam}")
        n_windows = n - lam + 1
        replace = count > n_windows
        starts = np.sort(rng.choice(n_windows, size=count, replace=replace))
        ordered = seq.ordered_items()
        for s in starts:
            s = int(s)
            out.append(Subsequence(seq.id, s, lam, ordered[s : s + lam], 1))
    return out


def _scramble(lam: int, rng: np.random.Generator) -> tuple[int, ...]:
    identity = tuple(range(lam))
    while True:
        p = tuple(int(i) for i in rng.permutation(lam))
        if p != identity:
            return p


def generate_negatives(positives: Seq[Subsequence], seed: int) -> list[Subsequence]:
    """One uniformly drawn non-identity scramble per positive."""
    rng = rng_for(seed, "negatives")
    used: dict[tuple[str, int], set] = {}
    out = []
    for pos in positives:
        if pos.label != 1:
            raise MidRankError("generate_negatives expects positives only")
        if pos.lam < 2:
            raise LambdaTooSmall(f"lambda={pos.lam} < 2")
        seen = used.setdefault((pos.parent_id, pos.start), set())
        p = _scramble(pos.lam, rng)
        for _ in range(10):
            if p not in seen:
                break
            p = _scramble(pos.lam, rng)
        seen.add(p)
        out.append(Subsequence(pos.parent_id, pos.start, pos.lam, pos.vectors[list(p)], -1))
    return out


def make_samples(subseqs: Seq[Subsequence], kind: FeatureMapKind) -> list[TrainingSample]:
    return [TrainingSample(psi(s.vectors, kind), s.label) for s in subseqs]


def stack_samples(samples: Seq[TrainingSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.vstack([s.x for s in samples])
    y = np.array([s.y for s in samples], dtype=np.float64)
    c = np.array([s.weight for s in samples], dtype=np.float64)
    return X, y, c


@njit(cache=True, nogil=True)
def _sdca_epoch(X, y, c, sqnorm, alpha, w, mu, order):
    for i in order:
        if sqnorm[i] == 0.0:
            continue
        margin = 0.0
        for k in range(X.shape[1]):
            margin += w[k] * X[i, k]
        margin *= y[i]
        a = alpha[i] + mu * (1.0 - margin) / sqnorm[i]
        if a < 0.0:
            a = 0.0
        elif a > c[i]:
            a = c[i]
        delta = a - alpha[i]
        if delta != 0.0:
            alpha[i] = a
            step = delta * y[i] / mu
            for k in range(X.shape[1]):
                w[k] += step * X[i, k]


def primal_objective(theta, X, y, mu, c=None) -> float:
    c = np.ones(len(y)) if c is None else c
    hinge = np.maximum(0.0, 1.0 - y * (X @ theta))
    return float(0.5 * mu * theta @ theta + c @ hinge)


def dual_objective(alpha, X, y, mu) -> float:
    w = (alpha * y) @ X / mu
    return float(alpha.sum() - 0.5 * mu * w @ w)


def fit_sdca(
    X: np.ndarray,
    y: np.ndarray,
    mu: float,
    weights: Optional[np.ndarray] = None,
    epochs: int = 1000,
    tol: float = 1e-4,
    seed: int = 0,
) -> SDCAResult:
    """Minimise ``mu/2 |w|^2 + sum_i c_i max(0, 1 - y_i w.x_i)`` by dual coordinate ascent.

    Stops once the duality gap falls to ``tol * max(1, primal)`` or after
    ``epochs`` passes.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    c = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if n == 0:
        raise DegenerateData("no training samples")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateData("training samples must contain both labels")
    rng = rng_for(seed, "sdca")
    sqnorm = np.einsum("ij,ij->i", X, X)
    alpha = np.zeros(n)
    w = np.zeros(X.shape[1])
    res = SDCAResult(w, alpha, primal=float(c.sum()), dual=0.0, epochs=0, converged=False)
    for epoch in range(1, epochs + 1):
        _sdca_epoch(X, y, c, sqnorm, alpha, w, mu, rng.permutation(n))
        w = (alpha * y) @ X / mu
        primal = primal_objective(w, X, y, mu, c)
        dual = float(alpha.sum() - 0.5 * mu * w @ w)
        if not (np.isfinite(primal) and np.isfinite(dual)):
            raise NonFiniteLoss(f"objective became non-finite at epoch {epoch}")
        res.dual_history.append(dual)
        res.gap_history.append(primal - dual)
        res.primal, res.dual, res.epochs = primal, dual, epoch
        if primal - dual <= tol * max(1.0, primal):
            res.converged = True
            break
    res.theta = w
    res.alpha = alpha
    return res


def zero_one_error(theta, X, y) -> float:
    return float(np.mean(y * (X @ theta) <= 0.0))


def train_length_ranker(
    samples: Seq[TrainingSample], config: TrainConfig, lam: int, mu: Optional[float] = None, d=None
) -> LengthRanker:
    if not samples:
        raise DegenerateData("no training samples")
    X, y, c = stack_samples(samples)
    mu = config.mu if mu is None else mu
    res = fit_sdca(X, y, mu, c, config.sdca_epochs, config.tolerance, config.seed + lam)
    if d is None:
        d = _infer_d(config.feature_map, lam, X.shape[1])
    return LengthRanker(lam=lam, theta=res.theta, feature_map=config.feature_map, d=d, mu=mu)


def _infer_d(kind: FeatureMapKind, lam: int, dim: int) -> int:
    unit = map_dim(kind, lam, 1)
    if dim % unit:
        raise MidRankError(f"sample dimension {dim} does not fit {kind.value} with lambda={lam}")
    return dim // unit


def pair_subsequences(seqs: Seq[Sequence]) -> tuple[list[Subsequence], list[Subsequence]]:
    """All item pairs of each sequence, in truth order (+1) and reversed (-1)."""
    pos, neg = [], []
    for s in seqs:
        order = s.ground_truth.order
        n = len(order)
        for a in range(n):
            for b in range(a + 1, n):
                hi, lo = s.items[order[a]], s.items[order[b]]
                pos.append(Subsequence(s.id, a * n + b, 2, np.stack([hi, lo]), 1))
                neg.append(Subsequence(s.id, a * n + b, 2, np.stack([lo, hi]), -1))
    return pos, neg


def _subsequences_for(seqs: Seq[Sequence], lam: int, config: TrainConfig):
    if lam == 2 and config.pair_samples:
        return pair_subsequences(seqs)
    seed = config.seed + lam
    pos = sample_positives(seqs, lam, config.positives_per_sequence, seed)
    neg = generate_negatives(pos, seed)
    return pos, neg


def cross_validate_mu(
    seqs: Seq[Sequence], lam: int, config: TrainConfig
) -> tuple[float, list[dict]]:
    """Pick mu by k-fold validation zero-one error over held-out sequences.

    Ties go to the larger mu.
    """
    pos, neg = _subsequences_for(seqs, lam, config)
    samples = make_samples(pos + neg, config.feature_map)
    X, y, c = stack_samples(samples)
    parents = [s.parent_id for s in pos + neg]
    seq_ids = [s.id for s in seqs]
    folds = np.array_split(rng_for(config.seed + lam, "cv").permutation(len(seq_ids)), config.cv_folds)
    fold_of = {}
    for k, idx in enumerate(folds):
        for i in idx:
            fold_of[seq_ids[i]] = k
    sample_fold = np.array([fold_of[p] for p in parents])
    table = []
    for mu in config.mu_grid:
        errs = []
        for k in range(config.cv_folds):
            tr, va = sample_fold != k, sample_fold == k
            if not va.any() or len(np.unique(y[tr])) < 2:
                continue
            res = fit_sdca(X[tr], y[tr], mu, c[tr], config.sdca_epochs, config.tolerance, config.seed + lam)
            errs.append(zero_one_error(res.theta, X[va], y[va]))
        table.append({"mu": mu, "val_error": float(np.mean(errs)) if errs else float("nan")})
    scored = [row for row in table if np.isfinite(row["val_error"])]
    if not scored:
        return config.mu, table
    best = min(scored, key=lambda row: (row["val_error"], -row["mu"]))
    return best["mu"], table


def _train_one(seqs: Seq[Sequence], lam: int, config: TrainConfig) -> tuple[LengthRanker, dict]:
    usable = [s for s in seqs if len(s) >= lam]
    if len(usable) < len(seqs):
        log.warning("lambda=%d: skipping %d sequences shorter than lambda", lam, len(seqs) - len(usable))
    if not usable:
        raise SequenceTooShort(f"no training sequence is long enough for lambda={lam}")
    d = usable[0].dim
    report: dict = {"lambda": lam}
    mu = config.mu
    if config.cv_folds >= 2 and len(usable) >= config.cv_folds and len(config.mu_grid) > 1:
        mu, table = cross_validate_mu(usable, lam, config)
        report["cv"] = table
        report["val_error"] = next(r["val_error"] for r in table if r["mu"] == mu)
    pos, neg = _subsequences_for(usable, lam, config)
    X, y, c = stack_samples(make_samples(pos + neg, config.feature_map))
    res = fit_sdca(X, y, mu, c, config.sdca_epochs, config.tolerance, config.seed + lam)
    if not res.converged:
        log.warning("lambda=%d: SDCA stopped after %d epochs with duality gap %.3g", lam, res.epochs, res.gap)
    report.update(
        mu=mu,
        n_samples=int(len(y)),
        train_error=zero_one_error(res.theta, X, y),
        epochs=res.epochs,
        converged=res.converged,
        duality_gap=res.gap,
        primal=res.primal,
    )
    ranker = LengthRanker(lam=lam, theta=res.theta, feature_map=config.feature_map, d=d, mu=mu)
    return ranker, report


def train_ensemble(seqs: Seq[Sequence], config: TrainConfig) -> Ensemble:
    """Fit one ranker per lambda; each lambda samples with seed ``config.seed + lambda``."""
    if not seqs:
        raise DegenerateData("no training sequences")
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise MidRankError(f"training sequences have mixed dimensions {sorted(dims)}")
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(lambda lam: _train_one(seqs, lam, config), config.lambdas))
    else:
        results = [_train_one(seqs, lam, config) for lam in config.lambdas]
    ens = Ensemble(
        rankers=tuple(r for r, _ in results),
        fusion=FusionStrategy.WEIGHTED_MAJORITY,
        config={"train": config.to_dict()},
    )
    ens.diagnostics["training"] = [rep for _, rep in results]
    return ens
