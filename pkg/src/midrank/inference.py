"""Scoring of candidate orders and permutation-tree search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import permutations
from typing import Callable, Optional

import numpy as np
from numba import njit

from .core import DimensionMismatch, MidRankError, Permutation, consecutive_subsequences, make_permutation, stream_seed
from .features import psi
from .models import LengthRanker

MAX_EXHAUSTIVE_LENGTH = 9
# longest sequence whose orders fit an int64 key (15**15 < 2**63) for the compiled search
MAX_FAST_LENGTH = 15

BatchScorer = Callable[[np.ndarray], np.ndarray]


class LambdaExceedsLength(MidRankError):
    pass


class SequenceTooLongForExhaustive(MidRankError):
    pass


class Initializer(str, Enum):
    RANKSVM = "ranksvm"
    IDENTITY = "identity"
    RANDOM = "random"


@dataclass(frozen=True)
class SearchConfig:
    num_trees: int = 5
    max_depth: Optional[int] = None  # None: the sequence length
    initializer: Initializer = Initializer.RANKSVM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "initializer", Initializer(self.initializer))
        if self.num_trees < 1:
            raise MidRankError("num_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise MidRankError("max_depth must be >= 0")


@dataclass
class SearchTrace:
    nodes_visited: int = 0
    depth_reached: int = 0
    restarts_used: int = 0
    best_score: float = -math.inf
    # parent scores accepted along each tree, root first
    tree_paths: list[list[float]] = field(default_factory=list)
    tree_nodes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nodes_visited": self.nodes_visited,
            "depth_reached": self.depth_reached,
            "restarts_used": self.restarts_used,
            "best_score": self.best_score,
        }


def signed_sqrt(s):
    return np.sign(s) * np.sqrt(np.abs(s))


def _as_matrix(seq_vectors, ranker: LengthRanker) -> np.ndarray:
    X = np.asarray(seq_vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ranker.d:
        raise DimensionMismatch(f"items have shape {X.shape}, ranker expects dimension {ranker.d}")
    if X.shape[0] < ranker.lam:
        raise LambdaExceedsLength(f"sequence length {X.shape[0]} < lambda={ranker.lam}")
    return X


def window_responses(seq_vectors, perm: Permutation, ranker: LengthRanker) -> np.ndarray:
    """Linear response ``theta . psi`` of every consecutive window under ``perm``."""
    X = _as_matrix(seq_vectors, ranker)
    if len(perm) != X.shape[0]:
        raise DimensionMismatch(f"permutation length {len(perm)} != sequence length {X.shape[0]}")
    ordered = X[perm.as_array()]
    return np.array(
        [ranker.theta @ psi(ordered[a:b], ranker.feature_map) for a, b in consecutive_subsequences(len(X), ranker.lam)]
    )


def score_sequence(seq_vectors, perm: Permutation, ranker: LengthRanker) -> float:
    return float(signed_sqrt(window_responses(seq_vectors, perm, ranker)).sum())


@njit(cache=True, nogil=True)
def _score_one(S, perm):
    lam = S.shape[0]
    total = 0.0
    for j in range(perm.shape[0] - lam + 1):
        w = 0.0
        for a in range(lam):
            w += S[a, perm[j + a]]
        if w > 0:
            total += math.sqrt(w)
        elif w < 0:
            total -= math.sqrt(-w)
    return total


@njit(cache=True, nogil=True)
def _score_batch(S, P):
    out = np.empty(P.shape[0])
    for r in range(P.shape[0]):
        out[r] = _score_one(S, P[r])
    return out


class WindowScorer:
    """Batched sequence scores for one (sequence, ranker) pair.

    ``slot_scores[a, i]`` is item ``i``'s contribution when it sits at slot
    ``a`` of a window, so a window's response is a sum of table lookups.
    """

    def __init__(self, seq_vectors, ranker: LengthRanker):
        X = _as_matrix(seq_vectors, ranker)
        self.ranker = ranker
        self.length = X.shape[0]
        self.lam = ranker.lam
        self.n_windows = self.length - self.lam + 1
        self.slot_scores = ranker.slot_weights() @ X.T

    def __call__(self, perms) -> np.ndarray:
        P = np.asarray(perms, dtype=np.int64)
        if P.ndim == 1:
            P = P[None, :]
        return _score_batch(self.slot_scores, P)

    def score(self, perm) -> float:
        return float(self(np.asarray(tuple(perm)))[0])


@lru_cache(maxsize=64)
def _swap_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def _neighbor_array(parent: np.ndarray) -> np.ndarray:
    iu, ju = _swap_pairs(len(parent))
    P = np.tile(parent, (len(iu), 1))
    rows = np.arange(len(iu))
    P[rows, iu] = parent[ju]
    P[rows, ju] = parent[iu]
    return P


def pairswap_neighbors(perm: Permutation) -> list[Permutation]:
    """All orders reachable by swapping one pair, ordered by (i, j) with i < j."""
    return [Permutation(tuple(row)) for row in _neighbor_array(perm.as_array()).tolist()]


def greedy_search(
    scorer: BatchScorer,
    init: Permutation,
    visited: Optional[set] = None,
    max_depth: Optional[int] = None,
) -> tuple[Permutation, float, SearchTrace]:
    """Hill-climb through single swaps, expanding the best unvisited child.

    A child is expanded only if it scores strictly above its parent; exact
    ties among children go to the first in neighbor order. Every scored
    order is added to ``visited``.
    """
    visited = set() if visited is None else visited
    n = len(init)
    max_depth = n if max_depth is None else max_depth
    parent = init.as_array()
    parent_score = float(scorer(parent[None, :])[0])
    visited.add(init.order)
    trace = SearchTrace(nodes_visited=1, restarts_used=1, best_score=parent_score)
    path = [parent_score]
    for _ in range(max_depth):
        cand = _neighbor_array(parent)
        keys = list(map(tuple, cand.tolist()))
        fresh = [k not in visited for k in keys]
        if not any(fresh):
            break
        cand = cand[np.asarray(fresh)]
        scores = scorer(cand)
        visited.update(k for k, f in zip(keys, fresh) if f)
        trace.nodes_visited += len(cand)
        best = int(np.argmax(scores))
        if not scores[best] > parent_score:
            break
        parent, parent_score = cand[best], float(scores[best])
        trace.depth_reached += 1
        path.append(parent_score)
    trace.best_score = parent_score
    trace.tree_paths.append(path)
    trace.tree_nodes.append(trace.nodes_visited)
    return Permutation(tuple(int(i) for i in parent)), parent_score, trace


@njit(cache=True, nogil=True)
def _perm_key(perm):
    n = perm.shape[0]
    k = 0
    for i in range(n - 1, -1, -1):
        k = k * n + perm[i]
    return k


@njit(cache=True, nogil=True)
def _slot(table, key):
    mask = table.shape[0] - 1
    h = (np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(20)
    i = np.int64(h & np.uint64(mask))
    while table[i] != -1 and table[i] != key:
        i = (i + 1) & mask
    return i


@njit(cache=True, nogil=True)
def _greedy_tree(S, init, table, max_depth, path):
    n = init.shape[0]
    parent = init.copy()
    parent_score = _score_one(S, parent)
    pkey = _perm_key(parent)
    table[_slot(table, pkey)] = pkey
    power = np.empty(n, np.int64)
    power[0] = 1
    for i in range(1, n):
        power[i] = power[i - 1] * n
    nodes = 1
    depth = 0
    path[0] = parent_score
    for _ in range(max_depth):
        bi = -1
        bj = -1
        best_score = -np.inf
        for i in range(n):
            for j in range(i + 1, n):
                diff = parent[j] - parent[i]
                key = pkey + diff * power[i] - diff * power[j]
                slot = _slot(table, key)
                if table[slot] == key:
                    continue
                table[slot] = key
                nodes += 1
                # score the child in place, then undo the swap
                parent[i], parent[j] = parent[j], parent[i]
                sc = _score_one(S, parent)
                parent[i], parent[j] = parent[j], parent[i]
                if bi < 0 or sc > best_score:
                    bi, bj = i, j
                    best_score = sc
        if bi < 0 or not best_score > parent_score:
            break
        diff = parent[bj] - parent[bi]
        pkey += diff * power[bi] - diff * power[bj]
        parent[bi], parent[bj] = parent[bj], parent[bi]
        parent_score = best_score
        depth += 1
        path[depth] = parent_score
    return parent, parent_score, nodes, depth


@njit(cache=True, nogil=True)
def _seen(table, perm):
    key = _perm_key(perm)
    return table[_slot(table, key)] == key


@njit(cache=True, nogil=True)
def _next_permutation(a):
    i = a.shape[0] - 2
    while i >= 0 and a[i] >= a[i + 1]:
        i -= 1
    if i < 0:
        return False
    j = a.shape[0] - 1
    while a[j] <= a[i]:
        j -= 1
    a[i], a[j] = a[j], a[i]
    a[i + 1 :] = a[i + 1 :][::-1].copy()
    return True


# Restart draws come from numba's own random stream, which is per thread.
# The reference path draws through the same helpers so both stay in step.
@njit(cache=True, nogil=True)
def _seed_stream(seed):
    np.random.seed(seed)


@njit(cache=True, nogil=True)
def _shuffled(n):
    a = np.arange(n)
    np.random.shuffle(a)
    return a


@njit(cache=True, nogil=True)
def _randint(high):
    return np.random.randint(0, high)


@njit(cache=True, nogil=True)
def _draw_unvisited(table, n, out):
    for _ in range(1000):
        a = _shuffled(n)
        if not _seen(table, a):
            out[:] = a
            return
    a = np.arange(n)
    count = 0
    while True:
        count += not _seen(table, a)
        if not _next_permutation(a):
            break
    k = _randint(count)
    a = np.arange(n)
    while True:
        if not _seen(table, a):
            if k == 0:
                out[:] = a
                return
            k -= 1
        _next_permutation(a)


@njit(cache=True, nogil=True)
def _search_trees(S, init, table, num_trees, max_depth, n_orders, paths, depths, nodes):
    start = init.copy()
    best = init.copy()
    best_score = -np.inf
    size = 0
    trees = 0
    for t in range(num_trees):
        perm, score, k, depth = _greedy_tree(S, start, table, max_depth, paths[t])
        depths[t] = depth
        nodes[t] = k
        size += k
        trees += 1
        if score > best_score:
            best[:] = perm
            best_score = score
        if size >= n_orders or t + 1 == num_trees:
            break
        _draw_unvisited(table, init.shape[0], start)
    return best, best_score, trees


def _rank_compiled(scorer: WindowScorer, init: Permutation, config: SearchConfig, depth: int):
    n = scorer.length
    n_orders = math.factorial(n)
    need = min(config.num_trees * (1 + depth * n * (n - 1) // 2), n_orders)
    table = np.full(max(64, 1 << (2 * need).bit_length()), -1, dtype=np.int64)
    paths = np.empty((config.num_trees, depth + 1))
    depths, nodes = np.zeros((2, config.num_trees), dtype=np.int64)
    best, best_score, trees = _search_trees(
        np.ascontiguousarray(scorer.slot_scores),
        init.as_array().astype(np.int64),
        table,
        config.num_trees,
        depth,
        n_orders,
        paths,
        depths,
        nodes,
    )
    tree_nodes = nodes[:trees].tolist()
    depth_list = depths[:trees].tolist()
    trace = SearchTrace(
        nodes_visited=sum(tree_nodes),
        depth_reached=max(depth_list),
        restarts_used=trees,
        best_score=best_score,
        tree_paths=[paths[t, : k + 1].tolist() for t, k in enumerate(depth_list)],
        tree_nodes=tree_nodes,
    )
    return Permutation(tuple(best.tolist())), trace


class _ReferenceSearch:
    def __init__(self, scorer: WindowScorer, max_depth: int):
        self.scorer = scorer
        self.visited: set = set()
        self.max_depth = max_depth

    def __len__(self) -> int:
        return len(self.visited)

    def __contains__(self, order) -> bool:
        return tuple(order) in self.visited

    def tree(self, start: Permutation) -> tuple[Permutation, float, SearchTrace]:
        return greedy_search(self.scorer, start, self.visited, self.max_depth)


def ranksvm_init(seq_vectors, pair_ranker: LengthRanker) -> Permutation:
    """Sort items by the point-wise score implied by a pairwise ranker."""
    if pair_ranker.lam != 2:
        raise MidRankError(f"ranksvm_init needs a lambda=2 ranker, got lambda={pair_ranker.lam}")
    X = _as_matrix(seq_vectors, pair_ranker)
    W = pair_ranker.slot_weights()
    point = X @ (W[0] - W[1])
    return Permutation(tuple(int(i) for i in np.argsort(-point, kind="stable")))


def _random_unvisited(n: int, visited) -> Optional[Permutation]:
    if len(visited) >= math.factorial(n):
        return None
    for _ in range(1000):
        p = tuple(_shuffled(n).tolist())
        if p not in visited:
            return Permutation(p)
    rest = [p for p in permutations(range(n)) if p not in visited]
    return Permutation(rest[_randint(len(rest))])


def rank(
    seq_vectors,
    ranker: LengthRanker,
    config: SearchConfig = SearchConfig(),
    pair_ranker: Optional[LengthRanker] = None,
    init: Optional[Permutation] = None,
) -> tuple[Permutation, SearchTrace]:
    """Best order found by ``config.num_trees`` greedy trees sharing one visited set.

    The first tree starts from ``init`` when given, otherwise from the
    configured initializer; later trees start from random unvisited orders.
    """
    scorer = WindowScorer(seq_vectors, ranker)
    n = scorer.length
    _seed_stream(stream_seed(config.seed, "restarts"))
    if init is None:
        if config.initializer is Initializer.RANKSVM:
            pr = ranker if ranker.lam == 2 else pair_ranker
            if pr is None:
                raise MidRankError("RankSVM initialization needs a lambda=2 pair ranker")
            init = ranksvm_init(seq_vectors, pr)
        elif config.initializer is Initializer.IDENTITY:
            init = Permutation.identity(n)
        else:
            init = Permutation(tuple(_shuffled(n).tolist()))
    else:
        init = make_permutation(init.order)
        if len(init) != n:
            raise DimensionMismatch(f"init has length {len(init)}, sequence {n}")
    depth = n if config.max_depth is None else config.max_depth
    if n <= MAX_FAST_LENGTH:
        return _rank_compiled(scorer, init, config, depth)
    search = _ReferenceSearch(scorer, depth)
    total = SearchTrace(restarts_used=0)
    best_perm, best_score = init, -math.inf
    start: Optional[Permutation] = init
    for _ in range(config.num_trees):
        if start is None:
            break
        perm, score, tr = search.tree(start)
        total.nodes_visited += tr.nodes_visited
        total.depth_reached = max(total.depth_reached, tr.depth_reached)
        total.restarts_used += 1
        total.tree_paths.extend(tr.tree_paths)
        total.tree_nodes.extend(tr.tree_nodes)
        if score > best_score:
            best_perm, best_score = perm, score
        start = _random_unvisited(n, search)
    total.best_score = best_score
    return best_perm, total


@lru_cache(maxsize=4)
def _all_permutations(n: int) -> np.ndarray:
    out = np.array(list(permutations(range(n))), dtype=np.int8)
    out.setflags(write=False)
    return out


def exhaustive_rank(seq_vectors, ranker: LengthRanker, chunk: int = 65536) -> tuple[Permutation, float]:
    """Score all orders; exact ties go to the lexicographically smallest."""
    X = np.asarray(seq_vectors)
    if X.ndim == 2 and X.shape[0] > MAX_EXHAUSTIVE_LENGTH:
        raise SequenceTooLongForExhaustive(
            f"exhaustive search is limited to {MAX_EXHAUSTIVE_LENGTH} items, got {X.shape[0]}"
        )
    scorer = WindowScorer(seq_vectors, ranker)
    perms = _all_permutations(scorer.length)
    best_i, best_s = 0, -math.inf
    for lo in range(0, len(perms), chunk):
        s = scorer(perms[lo : lo + chunk])
        i = int(np.argmax(s))
        if s[i] > best_s:
            best_i, best_s = lo + i, float(s[i])
    return Permutation(tuple(int(v) for v in perms[best_i])), best_s
