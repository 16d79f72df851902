"""OOD detection metrics. Scores are oriented higher = more ID-like."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyScoreSetError


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyScoreSetError("both score sets must be non-empty")
    return a, b


def auroc(id_scores, ood_scores) -> float:
    """P(ID score > OOD score) with ties counted 1/2 (Mann-Whitney U)."""
    a, b = _pair(id_scores, ood_scores)
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def fpr_at_tpr(id_scores, ood_scores, tpr_target=0.95) -> float:
    """FPR at the largest threshold accepting >= tpr_target of ID (score >= t)."""
    a, b = _pair(id_scores, ood_scores)
    if not 0 < tpr_target <= 1:
        raise ValueError("tpr_target must lie in (0, 1]")
    k = max(1, math.ceil(tpr_target * a.size - 1e-9))
    threshold = np.sort(a)[::-1][k - 1]
    return float(np.mean(b >= threshold))


def aupr(pos_scores, neg_scores) -> float:
    """Step-wise area under precision-recall: sum over thresholds of dRecall * precision."""
    pos, neg = _pair(pos_scores, neg_scores)
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_pos = scores[order], is_pos[order]
    tp = np.cumsum(is_pos)
    seen = np.arange(1, scores.size + 1)
    # last index of every run of equal scores = one threshold each
    last = np.r_[scores[1:] != scores[:-1], True]
    tp, seen = tp[last], seen[last]
    precision = tp / seen
    recall = tp / pos.size
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def id_accuracy(logits, labels) -> float:
    """Argmax accuracy; ties go to the lowest class index."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass(frozen=True)
class EvalReport:
    scorer: str
    ood_set: str
    auroc: float
    fpr95: float
    aupr_in: float
    aupr_out: float
    id_acc: float
    n_id: int
    n_ood: int

    CSV_FIELDS = ("scorer", "ood_set", "auroc", "fpr95", "aupr_in", "aupr_out", "id_acc", "n_id", "n_ood")


def evaluate(scorer, ood_set, id_scores, ood_scores, id_acc) -> EvalReport:
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    return EvalReport(
        scorer,
        ood_set,
        auroc(id_scores, ood_scores),
        fpr_at_tpr(id_scores, ood_scores),
        aupr(id_scores, ood_scores),
        aupr(-ood_scores, -id_scores),
        float(id_acc),
        int(id_scores.size),
        int(ood_scores.size),
    )


def write_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EvalReport.CSV_FIELDS)
        for r in reports:
            row = asdict(r)
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[f] for f in EvalReport.CSV_FIELDS)])
