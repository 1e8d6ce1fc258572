"""Sequence and permutation types shared across the package.

Positions are 0-based throughout. A permutation's ``order`` lists item indices
from the top of the ranking down: ``order[0]`` is the item ranked first.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


class MidRankError(ValueError):
    """Base class for all validation errors raised by this package."""


class DuplicateIndex(MidRankError):
    pass


class IndexOutOfRange(MidRankError):
    pass


class TooShort(MidRankError):
    pass


class LambdaOutOfRange(MidRankError):
    pass


class NonFiniteEntry(MidRankError):
    pass


class DimensionMismatch(MidRankError):
    pass


class LengthMismatch(MidRankError):
    pass


@dataclass(frozen=True)
class Permutation:
    order: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def __getitem__(self, i):
        return self.order[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.order, dtype=np.intp)

    def inverse(self) -> "Permutation":
        """Rank of every item: ``inverse()[item]`` is the item's position."""
        inv = [0] * len(self.order)
        for pos, item in enumerate(self.order):
            inv[item] = pos
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """Apply ``other`` first, then ``self``: ``(self . other)[i] = self[other[i]]``."""
        if len(other) != len(self):
            raise LengthMismatch(f"cannot compose lengths {len(self)} and {len(other)}")
        return Permutation(tuple(self.order[i] for i in other.order))

    def reversed(self) -> "Permutation":
        return Permutation(self.order[::-1])

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))


def make_permutation(order: Iterable[int], min_length: int = 2) -> Permutation:
    """Validate ``order`` as a bijection on ``0..len-1`` and wrap it."""
    idx = [int(i) for i in order]
    n = len(idx)
    if n < min_length:
        raise TooShort(f"permutation of length {n} is shorter than {min_length}")
    seen = [False] * n
    for i in idx:
        if i < 0 or i >= n:
            raise IndexOutOfRange(f"index {i} outside 0..{n - 1}")
        if seen[i]:
            raise DuplicateIndex(f"index {i} appears more than once")
        seen[i] = True
    return Permutation(tuple(idx))


def consecutive_subsequences(seq_len: int, lam: int) -> list[tuple[int, int]]:
    """Half-open windows ``(j, j + lam)`` for every consecutive run of ``lam`` positions."""
    if lam < 2 or lam > seq_len:
        raise LambdaOutOfRange(f"lambda={lam} must satisfy 2 <= lambda <= {seq_len}")
    return [(j, j + lam) for j in range(seq_len - lam + 1)]


def l2_normalize(v) -> np.ndarray:
    x = np.array(v, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteEntry("feature vector contains NaN or Inf")
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return x
    return x / norm


@dataclass(frozen=True, eq=False)
class Sequence:
    """A list of same-dimension feature vectors, optionally with its true order.

    ``keys`` holds the ranking criterion per item (larger ranks first) and
    ``item_ids`` names items across a dataset; both are optional and only
    needed to resample new sequences from a pool.
    """

    items: np.ndarray
    ground_truth: Optional[Permutation] = None
    id: str = ""
    item_ids: Optional[tuple[str, ...]] = None
    keys: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        items = np.array(self.items, dtype=np.float64)
        if items.ndim != 2:
            raise DimensionMismatch(f"sequence {self.id!r}: items must be a 2-D array")
        if items.shape[0] < 2:
            raise TooShort(f"sequence {self.id!r} has {items.shape[0]} items, need >= 2")
        if not np.all(np.isfinite(items)):
            raise NonFiniteEntry(f"sequence {self.id!r} contains NaN or Inf")
        items.setflags(write=False)
        object.__setattr__(self, "items", items)
        n = items.shape[0]
        if self.ground_truth is not None and len(self.ground_truth) != n:
            raise LengthMismatch(
                f"sequence {self.id!r}: ground truth has length {len(self.ground_truth)}, items {n}"
            )
        for name in ("item_ids", "keys"):
            val = getattr(self, name)
            if val is not None and len(val) != n:
                raise LengthMismatch(f"sequence {self.id!r}: {name} has length {len(val)}, items {n}")

    def __len__(self) -> int:
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]

    def ordered_items(self) -> np.ndarray:
        if self.ground_truth is None:
            raise MidRankError(f"sequence {self.id!r} has no ground truth")
        return self.items[self.ground_truth.as_array()]


@dataclass(frozen=True, eq=False)
class Subsequence:
    parent_id: str
    start: int
    lam: int
    vectors: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (1, -1):
            raise MidRankError(f"label must be +1 or -1, got {self.label}")
        if len(self.vectors) != self.lam:
            raise LengthMismatch(f"subsequence holds {len(self.vectors)} vectors, lambda={self.lam}")


def rng_for(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    key = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(n.encode()) for n in names]
    return np.random.default_rng(key)


def stream_seed(seed: int, *names: str) -> int:
    """32-bit seed for a named stream; cheaper than ``rng_for`` on hot paths."""
    return zlib.crc32("/".join([str(int(seed)), *names]).encode())
