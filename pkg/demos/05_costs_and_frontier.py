"""
Data cost and the cost/recall frontier
======================================

Price each strategy with exact rational arithmetic, compare against one
fully labeled fold, and find the Pareto frontier of cost against recall.
"""
import sys
import tempfile
from pathlib import Path

from simreal import charts
from simreal.costmodel import CostParams, compare, frontier, scenario_cost
from simreal.dataset import StrategyKind, StrategySpec

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="simreal-demo-"))
out.mkdir(parents=True, exist_ok=True)

params = CostParams(c_acq_real=1, c_ann_real=10)
fold = 40
base = scenario_cost(StrategySpec(StrategyKind.SUPERVISED, 1), fold, params)
for kind, folds in [(StrategyKind.UDA, 5), (StrategyKind.SSDA, 3), (StrategyKind.SSDA, 7)]:
    r = compare(base, scenario_cost(StrategySpec(kind, folds), fold, params, n_synthetic=1400))
    # reductions stay exact fractions: 7/10, not 0.69999
    print(f"{kind.value}@{folds}: acquisition x{r.acquisition_factor}, annotation reduction {r.annotation_reduction}")

# made-up recall values to illustrate the frontier
points = [(float(scenario_cost(StrategySpec(k, f), fold, params).total), ar, k.value)
          for k, f, ar in [(StrategyKind.SUPERVISED, 1, 0.64), (StrategyKind.SUPERVISED, 3, 0.75),
                           (StrategyKind.UDA, 5, 0.63), (StrategyKind.SSDA, 3, 0.65), (StrategyKind.SSDA, 7, 0.73)]]
front = frontier([(c, a) for c, a, _ in points])
print("frontier:", front)
(out / "frontier.svg").write_text(charts.scatter_frontier(points, front, "Cost versus recall", "cost", "AR"))
print("wrote", out / "frontier.svg")
