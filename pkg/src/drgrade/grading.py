"""ICDRSS grade semantics, ordinal decoding, and agreement metrics.

Grades are plain ints 0..4 (0 = no disease, 4 = proliferative), continuous
severity scores are floats. The quadratic weighted kappa here uses the
count convention: the chance-expected matrix E is the outer product of the
observed marginals scaled so that sum(E) == sum(O).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .util import round_half_away

GRADE_COUNT = 5
GRADE_MIN, GRADE_MAX = 0, 4


class DegenerateAgreementError(ValueError):
    """Both raters are constant and equal: chance agreement is undefined."""


def decode_score(score: float) -> int:
    """Decode a continuous severity score to a grade.

    Clamp to [0, 4] first, then round to the nearest integer with ties
    going away from zero. Monotone non-decreasing in the score.
    """
    score = float(score)
    if not math.isfinite(score):
        raise ValueError(f"score must be finite, got {score}")
    clamped = min(max(score, float(GRADE_MIN)), float(GRADE_MAX))
    return int(round_half_away(clamped))


def confusion(truth: Sequence[int], pred: Sequence[int], k: int) -> np.ndarray:
    """k x k count matrix; rows are true grades, columns predicted grades."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if len(truth) == 0:
        raise ValueError("empty label sequences")
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    for name, arr in (("truth", t), ("prediction", p)):
        bad = (arr < 0) | (arr >= k)
        if bad.any():
            raise ValueError(f"{name} label out of range [0, {k}): {arr[bad][:5].tolist()}")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def quadratic_weights(k: int) -> np.ndarray:
    """W[i, j] = (i - j)^2 / (k - 1)^2; symmetric with a zero diagonal."""
    idx = np.arange(k, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2


@dataclass(frozen=True)
class QwkBreakdown:
    qwk: float
    numerator: float      # sum(W * O)
    denominator: float    # sum(W * E)
    weights: np.ndarray   # k x k
    expected: np.ndarray  # k x k, sums to sum(O)


def qwk(cm: np.ndarray) -> QwkBreakdown:
    """Quadratic weighted kappa of a confusion matrix.

    qwk = 1 - sum(W*O) / sum(W*E) with E the marginal outer product scaled
    to the total count. Raises DegenerateAgreementError when sum(W*E) == 0
    (both raters constant and equal).
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 2:
        raise ValueError(f"confusion matrix must be square with k >= 2, got shape {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")
    n = int(cm.sum())
    if n == 0:
        raise ValueError("empty confusion matrix")
    k = cm.shape[0]
    w = quadratic_weights(k)
    observed = cm.astype(np.float64)
    expected = np.outer(cm.sum(axis=1), cm.sum(axis=0)).astype(np.float64) / n
    numerator = float((w * observed).sum())
    denominator = float((w * expected).sum())
    if denominator == 0.0:
        raise DegenerateAgreementError(
            "both raters are constant and identical; kappa is undefined")
    return QwkBreakdown(
        qwk=1.0 - numerator / denominator,
        numerator=numerator,
        denominator=denominator,
        weights=w,
        expected=expected,
    )


@dataclass(frozen=True)
class EvaluationReport:
    qwk: QwkBreakdown
    confusion: np.ndarray
    accuracy: float
    mse: float
    n: int
    class_counts: list[int]  # true-grade histogram

    def to_json_dict(self) -> dict:
        return {
            "qwk": self.qwk.qwk,
            "accuracy": self.accuracy,
            "mse": self.mse,
            "confusion": self.confusion.tolist(),
            "n": self.n,
            "class_counts": self.class_counts,
        }


def evaluate(truth: Sequence[int], scores: Sequence[float]) -> EvaluationReport:
    """Score continuous predictions against true grades.

    Decodes every score, builds the 5x5 confusion matrix, and reports QWK,
    accuracy (trace / n) and the MSE of the raw (pre-clamp) scores against
    the integer labels.
    """
    if len(truth) != len(scores):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(scores)} scores")
    if len(truth) == 0:
        raise ValueError("nothing to evaluate")
    decoded = [decode_score(s) for s in scores]
    cm = confusion(truth, decoded, GRADE_COUNT)
    t = np.asarray(truth, dtype=np.float64)
    s = np.asarray([float(x) for x in scores], dtype=np.float64)
    return EvaluationReport(
        qwk=qwk(cm),
        confusion=cm,
        accuracy=float(np.trace(cm)) / len(truth),
        mse=float(np.mean((s - t) ** 2)),
        n=len(truth),
        class_counts=cm.sum(axis=1).tolist(),
    )


def evaluate_joined(truth_rows: Sequence[tuple[str, int]],
                    pred_rows: Sequence[tuple[str, float]]) -> EvaluationReport:
    """Join truth (id, grade) and prediction (id, score) rows on id, then evaluate.

    Ids must match exactly; missing and extra prediction ids are reported in
    the error message.
    """
    truth_map = dict(truth_rows)
    pred_map = dict(pred_rows)
    missing = sorted(set(truth_map) - set(pred_map))
    extra = sorted(set(pred_map) - set(truth_map))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"ids missing from predictions: {missing}")
        if extra:
            parts.append(f"ids not in truth: {extra}")
        raise ValueError("; ".join(parts))
    ids = [i for i, _ in truth_rows]
    return evaluate([truth_map[i] for i in ids], [pred_map[i] for i in ids])
