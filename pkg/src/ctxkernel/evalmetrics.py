"""Annotation quality: sample-level F (MF-S), concept-level F (MF-C) and MAP."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

__all__ = ["EvalReport", "f_score", "average_precision", "evaluate", "write_report_csv", "write_report_json"]

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    mfs: float
    mfc: float
    map_: float
    per_concept: np.ndarray  # (K, 4): precision, recall, F, AP (AP is nan without positives)
    concept_names: list

    def summary(self) -> tuple[float, float, float]:
        return self.mfs, self.mfc, self.map_


def f_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def average_precision(scores, truth) -> float:
    """Mean of precision@rank over the ranks of the positives.

    Samples are ranked by descending score, ties by ascending index.
    Returns nan when there is no positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(truth) > 0
    if not pos.any():
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def evaluate(scores, truth, concept_names=None) -> EvalReport:
    """Score an ``N x K`` matrix against ``N x K`` labels in {-1, +1}.

    A concept is predicted present iff its score is strictly positive.
    A sample with neither predicted nor true concepts gets F = 1.
    Concepts without positives are left out of MAP (with a warning).
    """
    S = np.asarray(scores, dtype=np.float64)
    Y = np.asarray(getattr(truth, "Y", truth))
    if S.ndim != 2 or S.shape != Y.shape:
        raise ShapeMismatchError(f"scores of shape {S.shape} vs truth of shape {Y.shape}")
    if not np.all((Y == 1) | (Y == -1)):
        raise ValueError("truth entries must be -1 or +1")
    N, K = S.shape
    if concept_names is None:
        concept_names = list(getattr(truth, "concept_names", [f"c{k}" for k in range(K)]))
    pred = S > 0
    true = Y > 0
    tp = pred & true

    n_pred, n_true, n_tp = pred.sum(axis=1), true.sum(axis=1), tp.sum(axis=1)
    denom = n_pred + n_true
    sample_f = np.where(denom == 0, 1.0, 2.0 * n_tp / np.maximum(denom, 1))
    mfs = float(sample_f.mean()) if N else 0.0

    per = np.zeros((K, 4))
    for k in range(K):
        tpk, npk, ntk = tp[:, k].sum(), pred[:, k].sum(), true[:, k].sum()
        p = tpk / npk if npk else 0.0
        r = tpk / ntk if ntk else 0.0
        per[k] = (p, r, f_score(p, r), average_precision(S[:, k], Y[:, k]))
    mfc = float(per[:, 2].mean()) if K else 0.0

    has_pos = true.any(axis=0)
    if not has_pos.all():
        missing = [concept_names[k] for k in np.flatnonzero(~has_pos)]
        logger.warning("concepts without positives excluded from MAP: %s", ", ".join(missing))
    map_ = float(per[has_pos, 3].mean()) if has_pos.any() else 0.0
    if not pred.any() and true.any():
        logger.warning("no concept predicted present; MAP reflects the score ranking only")
    return EvalReport(mfs, mfc, map_, per, list(concept_names))


def write_report_csv(path, report: EvalReport):
    """One row per concept plus a final ``summary`` row carrying MF-S, MF-C and MAP."""
    fmt = lambda v: "" if np.isnan(v) else f"{v:.6f}"  # noqa: E731
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "name", "precision", "recall", "f", "ap", "mfs", "mfc", "map"])
        for name, row in zip(report.concept_names, report.per_concept):
            writer.writerow(["concept", name] + [fmt(v) for v in row] + ["", "", ""])
        writer.writerow(["summary", "", "", "", "", "", fmt(report.mfs), fmt(report.mfc), fmt(report.map_)])


def write_report_json(path, report: EvalReport):
    def clean(v):
        return None if np.isnan(v) else float(v)

    doc = {
        "mfs": report.mfs,
        "mfc": report.mfc,
        "map": report.map_,
        "per_concept": [
            {"concept": name, "precision": clean(p), "recall": clean(r), "f": clean(f), "ap": clean(ap)}
            for name, (p, r, f, ap) in zip(report.concept_names, report.per_concept)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
