"""Command line driver for the full study.

    simreal [--config FILE] [--set key.path=value ...] [--seed N] [--workers N] [--full-grid] COMMAND

Commands: simulate, split, train, eval, experiment, report.  The output root is
``output_dir`` from the config, overridden by ``$SIMREAL_OUTPUT``.

Exit codes: 2 configuration or I/O failure, 3 missing manifest, 4 training
diverged (non-finite loss), 5 malformed or empty results CSV.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import charts, costmodel, dataset, evaluation
from .config import ConfigError, load_config
from .dataset import DatasetManifest, StrategyKind, StrategySpec
from .detector import DetectorModel, FeatureStore, TrainingConfig, infer_sample, train
from .numerics import NonFiniteError

log = logging.getLogger("simreal")

OUTPUT_ENV = "SIMREAL_OUTPUT"
MANIFEST = "corpus/manifest.jsonl"
HOLDOUT = "corpus/holdout.jsonl"
RESULTS = "results.csv"
DOMAIN_GAP = "domain_gap.csv"


class CliError(Exception):
    exit_code = 2


class MissingManifest(CliError):
    exit_code = 3


class Diverged(CliError):
    exit_code = 4


class BadResults(CliError):
    exit_code = 5


@dataclass(frozen=True)
class Cell:
    kind: str
    folds_used: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.kind}_f{self.folds_used}_s{self.seed}"


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output_dir"])


def grid_cells(cfg: dict, full_grid: bool = False) -> list[Cell]:
    grid = cfg["grid"]
    folds = grid["folds"]
    if full_grid:
        folds = list(range(1, cfg["split"]["k"] - cfg["split"]["eval_count"] + 1))
    return [Cell(kind, f, seed) for seed in grid["seeds"] for kind in grid["strategies"] for f in folds]


def strategy_spec(cfg: dict, kind: str, folds_used: int) -> StrategySpec:
    policy = cfg["grid"]["ssda_label_policy"] if kind == StrategyKind.SSDA.value else None
    return StrategySpec(StrategyKind(kind), folds_used, policy)


def load_manifest(cfg: dict) -> DatasetManifest:
    path = output_root(cfg) / MANIFEST
    if not path.exists():
        raise MissingManifest(f"manifest not found: {path} (run `simreal simulate` first)")
    return DatasetManifest.load(path)


def make_store(cfg: dict, tc: TrainingConfig) -> FeatureStore:
    return FeatureStore(output_root(cfg) / "corpus", tc.patch_size, tc.stride, tc.std_floor)


# -- simulate / split ---------------------------------------------------------


def cmd_simulate(cfg: dict) -> DatasetManifest:
    root = output_root(cfg) / "corpus"
    try:
        manifest = dataset.generate_corpus(cfg, cfg["seed"], root)
        if manifest.real:
            manifest = dataset.split_folds(manifest, cfg["split"]["k"], cfg["split"]["eval_count"], cfg["seed"])
        manifest.save(output_root(cfg) / MANIFEST)
        if cfg["corpus"].get("n_holdout_synthetic", 0):
            dataset.generate_holdout(cfg, cfg["seed"], root).save(output_root(cfg) / HOLDOUT)
    except OSError as exc:
        raise CliError(str(exc)) from exc
    log.info("wrote %d samples to %s", len(manifest.samples), root)
    return manifest


def cmd_split(cfg: dict) -> DatasetManifest:
    manifest = load_manifest(cfg)
    try:
        manifest = dataset.split_folds(manifest, cfg["split"]["k"], cfg["split"]["eval_count"], cfg["seed"])
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    manifest.save(output_root(cfg) / MANIFEST)
    return manifest


# -- train / eval -------------------------------------------------------------


def evaluate_model(model: DetectorModel, samples, store: FeatureStore, tc: TrainingConfig, scope: str):
    dets = [[d.box for d in infer_sample(model, s, store, tc)] for s in samples]
    return evaluation.evaluate(dets, [s.boxes for s in samples], scope)


def run_cell(cfg: dict, cell: Cell, manifest: DatasetManifest, store: FeatureStore) -> dict:
    """Train and evaluate one grid cell; writes checkpoint, log and record under runs/."""
    tc = TrainingConfig.from_dict(cfg["training"])
    spec = strategy_spec(cfg, cell.kind, cell.folds_used)
    train_set = dataset.materialize_strategy(manifest, spec, cell.seed)
    run_dir = output_root(cfg) / "runs" / cell.cell_id
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        model = train(train_set, tc, cell.seed, store, adversarial=True, log_path=run_dir / "train_log.csv")
    except NonFiniteError as exc:
        raise Diverged(f"training diverged in cell {cell.cell_id}: {exc}") from exc
    report = evaluate_model(model, manifest.eval_samples(), store, tc, "real")
    row = report.as_row(cell.kind, cell.folds_used, spec.label_policy, cell.seed)
    model.save(run_dir / "model.json", {"cell": cell.cell_id})
    record = {
        "strategy": cell.kind,
        "folds_used": cell.folds_used,
        "label_fraction": spec.label_policy,
        "seed": cell.seed,
        "checkpoint": str(Path("runs") / cell.cell_id / "model.json"),
        "n_real_used": sum(1 for s in train_set if s.domain == dataset.REAL),
        "n_real_labeled": sum(1 for s in train_set if s.domain == dataset.REAL and s.labeled),
        "n_synthetic": sum(1 for s in train_set if s.domain == dataset.SYNTHETIC),
        "eval": row,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    (run_dir / "record.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    return record


def cmd_train(cfg: dict, kind: str, folds_used: int, seed: int) -> dict:
    manifest = load_manifest(cfg)
    tc = TrainingConfig.from_dict(cfg["training"])
    return run_cell(cfg, Cell(kind, folds_used, seed), manifest, make_store(cfg, tc))


def cmd_eval(cfg: dict, checkpoint, domain: str = "real") -> evaluation.EvalReport:
    manifest = load_manifest(cfg)
    tc = TrainingConfig.from_dict(cfg["training"])
    model = DetectorModel.load(checkpoint)
    store = FeatureStore(output_root(cfg) / "corpus", model.patch_size, model.stride, model.std_floor)
    if domain == "real":
        samples = manifest.eval_samples()
    else:
        holdout = output_root(cfg) / HOLDOUT
        if not holdout.exists():
            raise MissingManifest(f"holdout manifest not found: {holdout}")
        samples = list(DatasetManifest.load(holdout).samples)
    return evaluate_model(model, samples, store, tc, domain)


# -- experiment ---------------------------------------------------------------


def _cell_done(cfg: dict, cell: Cell) -> bool:
    run_dir = output_root(cfg) / "runs" / cell.cell_id
    return (run_dir / "model.json").exists() and (run_dir / "record.json").exists()


def _worker(args):
    cfg, cells = args
    manifest = load_manifest(cfg)
    tc = TrainingConfig.from_dict(cfg["training"])
    store = make_store(cfg, tc)
    return [run_cell(cfg, c, manifest, store) for c in cells]


def source_only_baseline(cfg: dict, seed: int, manifest: DatasetManifest, store: FeatureStore):
    """Synthetic-only model with no domain heads, scored on real eval folds and synthetic holdout."""
    tc = TrainingConfig.from_dict(cfg["training"])
    try:
        model = train(dataset.source_only_set(manifest), tc, seed, store, adversarial=False)
    except NonFiniteError as exc:
        raise Diverged(f"training diverged in cell SOURCE_ONLY_s{seed}: {exc}") from exc
    real = evaluate_model(model, manifest.eval_samples(), store, tc, "real")
    holdout_path = output_root(cfg) / HOLDOUT
    syn = None
    if holdout_path.exists():
        syn = evaluate_model(model, DatasetManifest.load(holdout_path).samples, store, tc, "synthetic")
    return model, syn, real


def cmd_experiment(cfg: dict, workers: int = 1, full_grid: bool = False, baseline: bool = True) -> list[dict]:
    """Run every missing grid cell, then rewrite results.csv from all cell records."""
    manifest = load_manifest(cfg)
    tc = TrainingConfig.from_dict(cfg["training"])
    cells = grid_cells(cfg, full_grid)
    todo = [c for c in cells if not _cell_done(cfg, c)]
    log.info("%d of %d cells to run", len(todo), len(cells))
    if workers > 1 and len(todo) > 1:
        chunks = [todo[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_worker, [(cfg, ch) for ch in chunks if ch]))
    else:
        store = make_store(cfg, tc)
        for c in todo:
            log.info("cell %s", c.cell_id)
            run_cell(cfg, c, manifest, store)
    rows = []
    for c in cells:
        record = json.loads((output_root(cfg) / "runs" / c.cell_id / "record.json").read_text(encoding="utf-8"))
        rows.append(record["eval"])
    (output_root(cfg) / RESULTS).write_text(evaluation.rows_to_csv(rows), encoding="utf-8")
    if baseline:
        gap_path = output_root(cfg) / DOMAIN_GAP
        if not gap_path.exists():
            _write_domain_gap(cfg, manifest, make_store(cfg, tc), gap_path)
    return rows


def _write_domain_gap(cfg, manifest, store, path) -> None:
    rows = []
    for seed in cfg["grid"]["seeds"]:
        _, syn, real = source_only_baseline(cfg, seed, manifest, store)
        for rep in (syn, real):
            if rep is not None:
                rows.append(rep.as_row("SOURCE_ONLY", 0, 0.0, seed))
    path.write_text(evaluation.rows_to_csv(rows), encoding="utf-8")


# -- report -------------------------------------------------------------------


def _budget_label(folds: int, k: int, policy: float) -> str:
    used = 100 * folds / k
    labeled = used * policy
    return f"{used:.0f}% ({labeled:.3g}%)"


def cmd_report(cfg: dict, results_path=None, out_dir=None) -> dict[str, Path]:
    """AR-by-budget bar chart, cost frontier, cost chart and comparison CSV."""
    results_path = Path(results_path or output_root(cfg) / RESULTS)
    out_dir = Path(out_dir or output_root(cfg) / "report")
    try:
        rows = evaluation.read_results(results_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise BadResults(f"results CSV not found: {results_path}") from exc
    except (ValueError, KeyError) as exc:
        raise BadResults(f"malformed results CSV {results_path}: {exc}") from exc
    rows = [r for r in rows if r["domain"] == "real"]
    if not rows:
        raise BadResults(f"results CSV {results_path} has no grid rows")

    k = cfg["split"]["k"]
    policy = cfg["grid"]["ssda_label_policy"]
    by_cell: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        by_cell.setdefault((r["strategy"], r["folds_used"]), []).append(r["AR"])
    mean_ar = {key: sum(v) / len(v) for key, v in by_cell.items()}
    kinds = [s for s in ("SUPERVISED", "UDA", "SSDA") if any(key[0] == s for key in mean_ar)]
    kinds += sorted({key[0] for key in mean_ar} - set(kinds))
    folds = sorted({key[1] for key in mean_ar})
    groups = [_budget_label(f, k, policy) for f in folds]
    series = {s: {_budget_label(f, k, policy): mean_ar[(s, f)] for f in folds if (s, f) in mean_ar} for s in kinds}

    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["ar_by_budget"] = out_dir / "ar_by_budget.svg"
    paths["ar_by_budget"].write_text(
        charts.grouped_bars(groups, series, "Average recall on evaluation folds",
                            "real-world data used for training (SSDA labeled share)", "average recall"),
        encoding="utf-8")

    cost_cfg = cfg["cost"]
    params = costmodel.CostParams.from_dict(cost_cfg)
    fold_size = cost_cfg.get("fold_size") or cfg["corpus"]["n_real"] // k
    n_syn = cfg["corpus"]["n_synthetic"]
    keys = sorted(mean_ar, key=lambda key: (kinds.index(key[0]), key[1]))
    scen = {key: costmodel.scenario_cost(strategy_spec(cfg, *key), fold_size, params, n_syn) for key in keys}
    points = [(float(scen[key].total), mean_ar[key], key[0]) for key in keys]
    front = costmodel.frontier([(p[0], p[1]) for p in points])
    paths["frontier"] = out_dir / "frontier.svg"
    paths["frontier"].write_text(
        charts.scatter_frontier(points, front, "Cost versus average recall", "total data cost", "average recall"),
        encoding="utf-8")
    paths["frontier_csv"] = out_dir / "frontier.csv"
    paths["frontier_csv"].write_text(
        costmodel.frontier_csv([(p[0], p[1]) for p in points], [f"{key[0]}@{key[1]}" for key in keys]),
        encoding="utf-8")

    base_key = ("SUPERVISED", 1)
    base = costmodel.scenario_cost(strategy_spec(cfg, *base_key), fold_size, params, n_syn)
    comparisons = [costmodel.compare(base, scen[key]) for key in keys if key != base_key]
    paths["comparison"] = out_dir / "comparison.csv"
    paths["comparison"].write_text(costmodel.comparisons_csv(comparisons), encoding="utf-8")

    presets = cost_cfg.get("chart_presets", {})
    labels = [f"{key[0]}@{key[1]}" for key in keys]
    cost_series = {}
    for name, override in presets.items():
        p = costmodel.CostParams.from_dict({**cost_cfg, **override})
        cost_series[name] = [float(costmodel.scenario_cost(strategy_spec(cfg, *key), fold_size, p, n_syn).total)
                             for key in keys]
    paths["cost"] = out_dir / "cost.svg"
    paths["cost"].write_text(
        charts.cost_lines(labels, cost_series, "Data cost per strategy", "strategy@folds", "cost"),
        encoding="utf-8")
    return paths


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simreal", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", type=Path, help="JSON config file layered over the desk defaults")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. training.epochs=10 (repeatable)")
    parser.add_argument("--seed", type=int, help="master seed for corpus generation and fold split")
    parser.add_argument("--workers", type=int, default=1, help="grid cells trained in parallel")
    parser.add_argument("--full-grid", action="store_true", help="use every fold budget, not just grid.folds")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="render the two-domain corpus and split it into folds")
    sub.add_parser("split", help="re-split an existing manifest")
    p = sub.add_parser("train", help="train one strategy cell")
    p.add_argument("--strategy", required=True, choices=[k.value for k in StrategyKind])
    p.add_argument("--folds", type=int, required=True)
    p.add_argument("--run-seed", type=int, default=0)
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--domain", choices=["real", "synthetic"], default="real")
    sub.add_parser("experiment", help="run the strategy x budget x seed grid")
    p = sub.add_parser("report", help="charts and cost comparison from a results CSV")
    p.add_argument("--results", type=Path)
    p.add_argument("--out", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "split":
            cmd_split(cfg)
        elif args.command == "train":
            record = cmd_train(cfg, args.strategy, args.folds, args.run_seed)
            print(json.dumps(record["eval"]))
        elif args.command == "eval":
            report = cmd_eval(cfg, args.checkpoint, args.domain)
            sys.stdout.write(evaluation.rows_to_csv([report.as_row("checkpoint", 0, 0.0, 0)]))
        elif args.command == "experiment":
            cmd_experiment(cfg, args.workers, args.full_grid)
        elif args.command == "report":
            for name, path in cmd_report(cfg, args.results, args.out).items():
                log.info("%s: %s", name, path)
    except CliError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (ConfigError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
