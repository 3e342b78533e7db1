"""Recall at fixed IoU thresholds, average recall, and domain-gap reporting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .boxes import Box, iou, iou_matrix

__all__ = ["THRESHOLDS", "CSV_FIELDS", "EvalReport", "iou", "match_greedy", "report_from_counts", "evaluate",
           "average_recall", "domain_gap", "rows_to_csv", "read_results"]

THRESHOLDS = (0.2, 0.3, 0.4, 0.5)
CSV_FIELDS = ["strategy", "folds_used", "label_fraction", "seed",
              "recall@20", "recall@30", "recall@40", "recall@50", "AR", "domain"]


def match_greedy(detections: Sequence[Box], ground_truth: Sequence[Box], tau: float) -> int:
    """Number of ground-truth boxes matched under greedy assignment.

    ``detections`` must already be sorted by descending score.  Each detection
    claims the unmatched ground truth with the highest IoU >= ``tau``; ties go
    to the lower ground-truth index.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if len(detections) == 0 or len(ground_truth) == 0:
        return 0
    overlaps = iou_matrix(detections, ground_truth)
    free = np.ones(len(ground_truth), dtype=bool)
    matched = 0
    for row in overlaps:
        cand = np.where(free & (row >= tau), row, -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= 0:
            free[j] = False
            matched += 1
    return matched


@dataclass(frozen=True)
class EvalReport:
    recall_at: Mapping[float, float]
    average_recall: float
    total_gt: int
    matched: Mapping[float, int]
    scope: str = "real"

    def as_row(self, strategy: str, folds_used: int, label_fraction: float, seed: int) -> dict:
        row = {"strategy": strategy, "folds_used": folds_used,
               "label_fraction": f"{label_fraction:.6g}", "seed": seed}
        for t in THRESHOLDS:
            row[f"recall@{round(t * 100)}"] = f"{self.recall_at[t]:.12f}"
        row["AR"] = f"{self.average_recall:.12f}"
        row["domain"] = self.scope
        return row


def report_from_counts(matched: Mapping[float, int], total_gt: int, scope: str = "real") -> EvalReport:
    if total_gt <= 0:
        raise ValueError("no ground-truth boxes to evaluate against")
    recalls = {t: matched[t] / total_gt for t in THRESHOLDS}
    ar = sum(recalls[t] for t in THRESHOLDS) / len(THRESHOLDS)
    return EvalReport(recalls, ar, total_gt, dict(matched), scope)


def evaluate(detections: Sequence[Sequence[Box]], ground_truth: Sequence[Sequence[Box]], scope: str = "real") -> EvalReport:
    """Micro-averaged recall over all images: matched GT summed / total GT."""
    if len(ground_truth) == 0:
        raise ValueError("empty evaluation subset")
    if len(detections) != len(ground_truth):
        raise ValueError("need one detection list per evaluation image")
    matched = {t: 0 for t in THRESHOLDS}
    total = 0
    for dets, gts in zip(detections, ground_truth):
        total += len(gts)
        for t in THRESHOLDS:
            matched[t] += match_greedy(dets, gts, t)
    return report_from_counts(matched, total, scope)


def average_recall(recalls: Sequence[float]) -> float:
    return sum(recalls) / len(recalls)


def domain_gap(report_source: EvalReport, report_target: EvalReport) -> float:
    """Drop in AR from source to target, in percentage points."""
    return 100.0 * (report_source.average_recall - report_target.average_recall)


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_results(text: str) -> list[dict]:
    """Parse a results CSV; raises ValueError on missing columns or bad numbers."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or any(f not in reader.fieldnames for f in CSV_FIELDS):
        raise ValueError("results CSV is missing required columns")
    rows = []
    for r in reader:
        rows.append({
            "strategy": r["strategy"],
            "folds_used": int(r["folds_used"]),
            "label_fraction": float(r["label_fraction"]),
            "seed": int(r["seed"]),
            **{f"recall@{k}": float(r[f"recall@{k}"]) for k in (20, 30, 40, 50)},
            "AR": float(r["AR"]),
            "domain": r["domain"],
        })
    return rows
