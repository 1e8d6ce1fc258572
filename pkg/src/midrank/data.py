"""Dataset files and the synthetic sequence generator.

A dataset file is JSON Lines. The first line is a header ``{"dim", "split"}``;
every following line is one sequence::

    {"id": ..., "items": [[...], ...], "order": [...], "item_ids": [...], "keys": [...]}

``order`` is the 0-based ground-truth permutation (top item first).
``item_ids`` and ``keys`` are optional; ``keys`` carries the ranking
criterion per item and lets new test sequences be drawn from a split.
Paths ending in ``.gz`` are read and written gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence as Seq

import numpy as np

from .core import MidRankError, Permutation, Sequence, make_permutation, rng_for


class ParseError(MidRankError):
    pass


class InvariantViolation(MidRankError):
    def __init__(self, where: str, why: str):
        super().__init__(f"{where}: {why}")
        self.where = where
        self.why = why


class InsufficientItems(MidRankError):
    pass


@dataclass(eq=False)
class Dataset:
    dim: int
    sequences: list[Sequence]
    split: str = "train"

    def __post_init__(self):
        for s in self.sequences:
            if s.dim != self.dim:
                raise InvariantViolation(s.id, f"dimension {s.dim} != dataset dimension {self.dim}")

    def __len__(self) -> int:
        return len(self.sequences)

    def item_ids(self) -> set[str]:
        return {i for s in self.sequences if s.item_ids for i in s.item_ids}


@dataclass(frozen=True)
class SyntheticConfig:
    dim: int = 10
    num_sequences: int = 100
    seq_len: int = 8
    noise_sigma: float = 0.1
    seed: int = 0
    split: str = "train"
    latent_direction: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise MidRankError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seq_len < 2:
            raise MidRankError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.dim < 1 or self.num_sequences < 0:
            raise MidRankError("dim must be >= 1 and num_sequences >= 0")
        if self.latent_direction is not None:
            w = np.asarray(self.latent_direction, dtype=np.float64)
            if w.shape != (self.dim,) or abs(np.linalg.norm(w) - 1.0) > 1e-9:
                raise MidRankError("latent_direction must be a unit vector of length dim")


def latent_direction(config: SyntheticConfig) -> np.ndarray:
    """The ranking direction; depends on the seed only, so splits share it."""
    if config.latent_direction is not None:
        return np.asarray(config.latent_direction, dtype=np.float64)
    w = rng_for(config.seed, "direction").standard_normal(config.dim)
    return w / np.linalg.norm(w)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Random unit-vector items ordered by a noisy projection onto a latent direction.

    The noise perturbs each item's sort key once, so orders stay consistent
    across every sequence an item could appear in.
    """
    w = latent_direction(config)
    n_items = config.num_sequences * config.seq_len
    items = rng_for(config.seed, "items", config.split).standard_normal((n_items, config.dim))
    items /= np.linalg.norm(items, axis=1, keepdims=True)
    keys = items @ w + config.noise_sigma * rng_for(config.seed, "noise", config.split).standard_normal(n_items)
    seqs = []
    for k in range(config.num_sequences):
        sl = slice(k * config.seq_len, (k + 1) * config.seq_len)
        kk = keys[sl]
        seqs.append(
            Sequence(
                items=items[sl],
                ground_truth=Permutation(tuple(int(i) for i in np.argsort(-kk, kind="stable"))),
                id=f"{config.split}-{k:06d}",
                item_ids=tuple(f"{config.split}-item-{i:07d}" for i in range(sl.start, sl.stop)),
                keys=tuple(float(v) for v in kk),
            )
        )
    return Dataset(dim=config.dim, sequences=seqs, split=config.split)


def sample_test_sequences(dataset: Dataset, length: int, count: int, seed: int) -> list[Sequence]:
    """New sequences of ``length`` distinct items drawn from the split's item pool."""
    if length < 2:
        raise MidRankError(f"length must be >= 2, got {length}")
    pool: dict[str, tuple[np.ndarray, float]] = {}
    for s in dataset.sequences:
        if s.keys is None or s.item_ids is None:
            raise InsufficientItems(f"sequence {s.id!r} lacks item_ids/keys; cannot resample")
        for iid, x, key in zip(s.item_ids, s.items, s.keys):
            pool.setdefault(iid, (x, key))
    if length > len(pool):
        raise InsufficientItems(f"requested length {length} but split has {len(pool)} items")
    ids = sorted(pool)
    rng = rng_for(seed, "test-sequences", dataset.split)
    out = []
    for k in range(count):
        pick = [ids[i] for i in rng.choice(len(ids), size=length, replace=False)]
        keys = np.array([pool[i][1] for i in pick])
        out.append(
            Sequence(
                items=np.vstack([pool[i][0] for i in pick]),
                ground_truth=Permutation(tuple(int(i) for i in np.argsort(-keys, kind="stable"))),
                id=f"{dataset.split}-sample-{k:06d}",
                item_ids=tuple(pick),
                keys=tuple(float(v) for v in keys),
            )
        )
    return out


def check_disjoint(train: Dataset, test: Dataset) -> None:
    shared = train.item_ids() & test.item_ids()
    if shared:
        raise InvariantViolation("train/test", f"{len(shared)} items appear in both splits")


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _sequence_record(s: Sequence) -> dict:
    rec = {"id": s.id, "items": s.items.tolist()}
    if s.ground_truth is not None:
        rec["order"] = list(s.ground_truth.order)
    if s.item_ids is not None:
        rec["item_ids"] = list(s.item_ids)
    if s.keys is not None:
        rec["keys"] = list(s.keys)
    return rec


def dumps_dataset(ds: Dataset) -> str:
    lines = [json.dumps({"dim": ds.dim, "split": ds.split}, separators=(",", ":"))]
    lines += [json.dumps(_sequence_record(s), separators=(",", ":")) for s in ds.sequences]
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    text = dumps_dataset(ds)
    if path.suffix == ".gz":
        # fixed mtime keeps compressed output reproducible
        path.write_bytes(gzip.compress(text.encode(), mtime=0))
    else:
        path.write_text(text, encoding="utf-8")


def _parse_sequence(rec: dict, dim: int, where: str) -> Sequence:
    if not isinstance(rec, dict) or "items" not in rec:
        raise ParseError(f"{where}: expected an object with 'items'")
    sid = str(rec.get("id", where))
    try:
        items = np.asarray(rec["items"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(sid, f"items are not a rectangular numeric array ({exc})") from exc
    if items.ndim != 2 or items.shape[1] != dim:
        raise InvariantViolation(sid, f"items have shape {items.shape}, dataset dimension is {dim}")
    gt = None
    if rec.get("order") is not None:
        try:
            gt = make_permutation(rec["order"])
        except MidRankError as exc:
            raise InvariantViolation(sid, f"bad ground-truth order: {exc}") from exc
    keys = rec.get("keys")
    if keys is not None:
        keys = tuple(float(k) for k in keys)
        if len(set(keys)) != len(keys):
            raise InvariantViolation(sid, "tied keys; only strict total orders are supported")
        if gt is not None and len(keys) == len(gt):
            ranked = [keys[i] for i in gt.order]
            if any(a < b for a, b in zip(ranked, ranked[1:])):
                raise InvariantViolation(sid, "order disagrees with keys")
    item_ids = rec.get("item_ids")
    try:
        return Sequence(
            items=items,
            ground_truth=gt,
            id=sid,
            item_ids=None if item_ids is None else tuple(str(i) for i in item_ids),
            keys=keys,
        )
    except MidRankError as exc:
        raise InvariantViolation(sid, str(exc)) from exc


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    try:
        with _open(path, "r") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from exc
    if not lines:
        raise ParseError(f"{path}: empty file")
    records = []
    for n, ln in enumerate(lines, 1):
        try:
            records.append(json.loads(ln))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{n}: {exc}") from exc
    header = records[0]
    if not isinstance(header, dict) or "dim" not in header:
        raise ParseError(f"{path}:1: header must be an object with 'dim'")
    dim = int(header["dim"])
    seqs = [_parse_sequence(rec, dim, f"{path}:{n}") for n, rec in enumerate(records[1:], 2)]
    return Dataset(dim=dim, sequences=seqs, split=str(header.get("split", "train")))


def config_dict(config: SyntheticConfig) -> dict:
    out = asdict(config)
    if config.latent_direction is not None:
        out["latent_direction"] = list(config.latent_direction)
    return out
