"""
Corpus, folds and training strategies
=====================================

Generate a small two-domain corpus, deal the real images into folds and
look at what each strategy is allowed to train on.
"""
import sys
import tempfile
from pathlib import Path

from simreal import config
from simreal.dataset import REAL, StrategyKind, StrategySpec, generate_corpus, materialize_strategy, split_folds

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="simreal-demo-"))

cfg = config.default_config()
cfg["corpus"].update({"n_synthetic": 35, "n_real": 100})
manifest = generate_corpus(cfg, seed=0, out_dir=out)

# ten folds; the last three are held out for evaluation only
manifest = split_folds(manifest, k=10, eval_count=3, seed=0)
print("train folds", sorted(manifest.train_folds), "eval folds", sorted(manifest.eval_folds))
manifest.save(out / "manifest.jsonl")

for folds in (1, 3, 7):
    for kind in StrategyKind:
        ts = materialize_strategy(manifest, StrategySpec(kind, folds), seed=0)
        real = [s for s in ts if s.domain == REAL]
        print(f"{kind.value:10s} folds={folds}  synthetic {len(ts) - len(real):3d}  real {len(real):3d}"
              f"  labeled real {sum(s.labeled for s in real):3d}")
