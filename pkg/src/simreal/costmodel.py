"""Acquisition and annotation cost of training strategies, comparisons, and Pareto frontiers.

Counts are kept as exact fractions so that label budgets such as "10% of seven
folds" stay rational; reductions are measured in labeled-image counts.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .dataset import StrategyKind, StrategySpec


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**9)


@dataclass(frozen=True)
class CostParams:
    c_acq_real: float = 1.0
    c_ann_real: float = 10.0
    c_syn_marginal: float = 0.0
    c_sim_fixed: float = 0.0
    c_train: float = 0.0
    include_sim_fixed: bool = False

    def __post_init__(self):
        for name in ("c_acq_real", "c_ann_real", "c_syn_marginal", "c_sim_fixed", "c_train"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "CostParams":
        keys = ("c_acq_real", "c_ann_real", "c_syn_marginal", "c_sim_fixed", "c_train", "include_sim_fixed")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(frozen=True)
class ScenarioCost:
    strategy: str
    n_real_acquired: Fraction
    n_real_labeled: Fraction
    n_synthetic: Fraction
    breakdown: dict = field(default_factory=dict)

    @property
    def total(self) -> Fraction:
        return sum(self.breakdown.values(), Fraction(0))


def scenario_cost(spec: StrategySpec, fold_size, params: CostParams, n_synthetic=0) -> ScenarioCost:
    """Cost of one strategy cell; SUPERVISED never pays for synthetic data."""
    acquired = spec.folds_used * _frac(fold_size)
    labeled = acquired * spec.label_fraction
    syn = Fraction(0) if spec.kind is StrategyKind.SUPERVISED else _frac(n_synthetic)
    breakdown = {
        "acquisition": acquired * _frac(params.c_acq_real),
        "annotation": labeled * _frac(params.c_ann_real),
        "synthetic": syn * _frac(params.c_syn_marginal),
        "training": _frac(params.c_train),
        "simulation_fixed": Fraction(0),
    }
    if params.include_sim_fixed and spec.kind is not StrategyKind.SUPERVISED:
        breakdown["simulation_fixed"] = _frac(params.c_sim_fixed)
    name = f"{spec.kind.value}@{spec.folds_used}"
    return ScenarioCost(name, acquired, labeled, syn, breakdown)


@dataclass(frozen=True)
class ComparisonReport:
    base: str
    alt: str
    acquisition_factor: Fraction
    annotation_reduction: Fraction | None  # None when the baseline labels nothing

    def row(self) -> dict:
        red = "undefined" if self.annotation_reduction is None else f"{float(self.annotation_reduction):.6g}"
        return {"base": self.base, "alt": self.alt,
                "acquisition_factor": f"{float(self.acquisition_factor):.6g}", "annotation_reduction": red}


def compare(base: ScenarioCost, alt: ScenarioCost) -> ComparisonReport:
    if base.n_real_acquired <= 0:
        raise ValueError("baseline acquires no real images")
    factor = alt.n_real_acquired / base.n_real_acquired
    if base.n_real_labeled == 0:
        reduction = None
    else:
        reduction = 1 - alt.n_real_labeled / base.n_real_labeled
    return ComparisonReport(base.strategy, alt.strategy, factor, reduction)


def dominates(p, q) -> bool:
    """``p`` is at most as costly and at least as good as ``q``, strictly better in one."""
    return p[0] <= q[0] and p[1] >= q[1] and (p[0] < q[0] or p[1] > q[1])


def frontier(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated ``(cost, AR)`` points, sorted by cost, duplicates removed."""
    if len(points) == 0:
        raise ValueError("frontier of an empty point set")
    # sort by cost asc, then AR desc: a point survives iff its AR beats every cheaper one
    ordered = sorted(set((p[0], p[1]) for p in points), key=lambda p: (p[0], -p[1]))
    kept = []
    best = None
    for cost, ar in ordered:
        if best is None or ar > best:
            kept.append((cost, ar))
            best = ar
    return kept


def frontier_csv(points: Sequence[tuple], labels: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "cost", "AR"])
    lookup = {}
    if labels is not None:
        for p, lab in zip(points, labels):
            lookup.setdefault((p[0], p[1]), lab)
    for cost, ar in frontier(points):
        w.writerow([lookup.get((cost, ar), ""), f"{float(cost):.6g}", f"{float(ar):.6g}"])
    return buf.getvalue()


def comparisons_csv(reports: Sequence[ComparisonReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["base", "alt", "acquisition_factor", "annotation_reduction"],
                       lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
