"""Ranking quality metrics for total orders."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence as Seq

import numpy as np

from .core import LengthMismatch, Permutation

REPORT_COLUMNS = ("method", "ndcg", "kt", "pair_acc", "n_sequences")


@dataclass(frozen=True)
class RankingReport:
    ndcg: float
    kendall_tau: float
    pair_accuracy: float
    sequence_exact: bool


def _ranks(pred: Permutation, truth: Permutation) -> tuple[np.ndarray, np.ndarray]:
    if len(pred) != len(truth):
        raise LengthMismatch(f"pred has length {len(pred)}, truth {len(truth)}")
    return pred.inverse().as_array(), truth.inverse().as_array()


def concordance_counts(pred: Permutation, truth: Permutation) -> tuple[int, int]:
    """(pairs ordered as in truth, pairs ordered against it)."""
    pr, tr = _ranks(pred, truth)
    iu, ju = np.triu_indices(len(pr), k=1)
    agree = np.sign(pr[iu] - pr[ju]) == np.sign(tr[iu] - tr[ju])
    concordant = int(agree.sum())
    return concordant, len(iu) - concordant


def kendall_tau(pred: Permutation, truth: Permutation) -> float:
    plus, minus = concordance_counts(pred, truth)
    return (plus - minus) / (plus + minus)


def pair_accuracy(pred: Permutation, truth: Permutation) -> float:
    plus, minus = concordance_counts(pred, truth)
    return 100.0 * plus / (plus + minus)


def relevance(truth: Permutation) -> np.ndarray:
    """Grade per item: the item truth ranks r-th (1-based) of n gets n - r."""
    n = len(truth)
    rel = np.empty(n)
    rel[truth.as_array()] = np.arange(n - 1, -1, -1)
    return rel


def dcg(gains: np.ndarray) -> float:
    return float(np.sum((2.0 ** gains - 1.0) / np.log2(np.arange(2, len(gains) + 2))))


def ndcg(pred: Permutation, truth: Permutation) -> float:
    if len(pred) != len(truth):
        raise LengthMismatch(f"pred has length {len(pred)}, truth {len(truth)}")
    rel = relevance(truth)
    return dcg(rel[pred.as_array()]) / dcg(np.sort(rel)[::-1])


def delta_zero_one(pred: Permutation, truth: Permutation) -> int:
    if len(pred) != len(truth):
        raise LengthMismatch(f"pred has length {len(pred)}, truth {len(truth)}")
    return 1 if pred.order == truth.order else -1


def evaluate(pred: Permutation, truth: Permutation) -> RankingReport:
    return RankingReport(
        ndcg=ndcg(pred, truth),
        kendall_tau=kendall_tau(pred, truth),
        pair_accuracy=pair_accuracy(pred, truth),
        sequence_exact=delta_zero_one(pred, truth) == 1,
    )


def aggregate(method: str, reports: Seq[RankingReport]) -> dict:
    """Unweighted means over sequences, one report row."""
    return {
        "method": method,
        "ndcg": float(np.mean([r.ndcg for r in reports])),
        "kt": float(np.mean([r.kendall_tau for r in reports])),
        "pair_acc": float(np.mean([r.pair_accuracy for r in reports])),
        "n_sequences": len(reports),
    }


def rows_to_csv(rows: Iterable[dict], header_comment: str = "") -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def report_to_dict(report: RankingReport) -> dict:
    return asdict(report)


def rows_to_json(rows: Iterable[dict], **extra) -> str:
    return json.dumps({"rows": list(rows), **extra}, indent=1) + "\n"
