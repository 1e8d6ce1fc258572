"""Trained model containers and their JSON envelope."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .core import DimensionMismatch, MidRankError
from .features import FeatureMapKind, map_dim, position_coefficients

MODEL_VERSION = 1


class ModelFormatError(MidRankError):
    pass


class FusionStrategy(str, Enum):
    WEIGHTED_MAJORITY = "weighted_majority"
    WINNER_TAKES_ALL = "winner_takes_all"
    BEST_SINGLE = "best_single"


@dataclass(frozen=True, eq=False)
class LengthRanker:
    """Linear scorer for ordered windows of ``lam`` items."""

    lam: int
    theta: np.ndarray
    feature_map: FeatureMapKind
    d: int
    mu: Optional[float] = None
    _slots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        object.__setattr__(self, "feature_map", FeatureMapKind(self.feature_map))
        if self.lam < 2:
            raise MidRankError(f"lambda must be >= 2, got {self.lam}")
        expected = map_dim(self.feature_map, self.lam, self.d)
        if theta.shape != (expected,):
            raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({expected},)")
        if not np.all(np.isfinite(theta)):
            raise MidRankError("theta contains NaN or Inf")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        slots = position_coefficients(theta, self.feature_map, self.lam, self.d)
        slots.setflags(write=False)
        object.__setattr__(self, "_slots", slots)

    def slot_weights(self) -> np.ndarray:
        """(lam, d) weights: item at window slot a contributes slot_weights()[a] . x."""
        return self._slots

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"lambda": self.lam}
        if self.mu is not None:
            out["mu"] = self.mu
        out["theta"] = [float(t) for t in self.theta]
        return out


@dataclass(eq=False)
class Ensemble:
    rankers: tuple[LengthRanker, ...]
    fusion: FusionStrategy = FusionStrategy.WEIGHTED_MAJORITY
    best_single_lambda: Optional[int] = None
    config: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.rankers:
            raise MidRankError("ensemble needs at least one ranker")
        self.rankers = tuple(sorted(self.rankers, key=lambda r: r.lam))
        self.fusion = FusionStrategy(self.fusion)
        lams = [r.lam for r in self.rankers]
        if len(set(lams)) != len(lams):
            raise MidRankError(f"duplicate lambda in ensemble: {lams}")
        if len({r.feature_map for r in self.rankers}) != 1 or len({r.d for r in self.rankers}) != 1:
            raise MidRankError("all rankers must share feature map and input dimension")
        if self.best_single_lambda is not None and self.best_single_lambda not in lams:
            raise MidRankError(f"best_single_lambda={self.best_single_lambda} not among {lams}")

    @property
    def feature_map(self) -> FeatureMapKind:
        return self.rankers[0].feature_map

    @property
    def d(self) -> int:
        return self.rankers[0].d

    @property
    def lambdas(self) -> list[int]:
        return [r.lam for r in self.rankers]

    def ranker(self, lam: int) -> LengthRanker:
        for r in self.rankers:
            if r.lam == lam:
                return r
        raise KeyError(lam)

    def pair_ranker(self) -> Optional[LengthRanker]:
        return self.rankers[0] if self.rankers[0].lam == 2 else None

    def fused_rankers(self) -> tuple[LengthRanker, ...]:
        """Rankers that vote; the pairwise ranker only votes when it is alone."""
        longer = tuple(r for r in self.rankers if r.lam >= 3)
        return longer or self.rankers

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": MODEL_VERSION,
            "feature_map": self.feature_map.value,
            "d": self.d,
            "fusion": self.fusion.value,
            "best_single_lambda": self.best_single_lambda,
            "rankers": [r.to_dict() for r in self.rankers],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Ensemble":
        try:
            version = data["version"]
            if version != MODEL_VERSION:
                raise ModelFormatError(f"unsupported model version {version}")
            kind = FeatureMapKind(data["feature_map"])
            d = int(data["d"])
            rankers = tuple(
                LengthRanker(
                    lam=int(r["lambda"]),
                    theta=np.asarray(r["theta"], dtype=np.float64),
                    feature_map=kind,
                    d=d,
                    mu=r.get("mu"),
                )
                for r in data["rankers"]
            )
            return cls(
                rankers=rankers,
                fusion=FusionStrategy(data.get("fusion", FusionStrategy.WEIGHTED_MAJORITY.value)),
                best_single_lambda=data.get("best_single_lambda"),
                config=data.get("config", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MidRankError):
                raise
            raise ModelFormatError(f"malformed model: {exc}") from exc


def dumps_model(ensemble: Ensemble) -> str:
    return json.dumps(ensemble.to_dict(), indent=1) + "\n"


def save_model(ensemble: Ensemble, path) -> None:
    Path(path).write_text(dumps_model(ensemble))


def load_model(path) -> Ensemble:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return Ensemble.from_dict(data)
