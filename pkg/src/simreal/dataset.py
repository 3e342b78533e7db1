"""Two-domain corpus generation, fold planning and strategy materialization.

Manifests are JSON Lines, one sample per line with keys in the order
``image_id, image_path, domain, fold, labeled, boxes``.  Boxes are
``[x_min, y_min, x_max, y_max]`` in pixels, max edges exclusive.  Corpus-level
fields (fold count, evaluation folds, seeds, presets) go to a sidecar
``<name>.meta.json``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfgmod
from .boxes import Box
from .phantom import Defect, GreyImage, ProjectionGeometry, WheelPhantom, render, thickness_at

SYNTHETIC = "synthetic"
REAL = "real"

_DOMAIN_CODES = {SYNTHETIC: 0, REAL: 1, "holdout": 2}


class StrategyKind(str, enum.Enum):
    SUPERVISED = "SUPERVISED"
    UDA = "UDA"
    SSDA = "SSDA"


@dataclass(frozen=True)
class Sample:
    image_id: str
    image_path: str
    domain: str
    boxes: tuple[Box, ...]
    labeled: bool = True
    fold: int | None = None

    @property
    def training_boxes(self) -> tuple[Box, ...] | None:
        """Boxes a training consumer may see; ``None`` for unlabeled samples."""
        return self.boxes if self.labeled else None

    def to_json(self) -> str:
        obj = {
            "image_id": self.image_id,
            "image_path": self.image_path,
            "domain": self.domain,
            "fold": self.fold,
            "labeled": self.labeled,
            "boxes": [[int(v) if float(v).is_integer() else v for v in b] for b in self.boxes],
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Sample":
        obj = json.loads(line)
        if obj["domain"] not in (SYNTHETIC, REAL):
            raise ValueError(f"unknown domain {obj['domain']!r}")
        return cls(
            image_id=obj["image_id"],
            image_path=obj["image_path"],
            domain=obj["domain"],
            boxes=tuple(Box(*b) for b in obj["boxes"]),
            labeled=bool(obj["labeled"]),
            fold=obj["fold"],
        )


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[Sample, ...]
    k_folds: int = 0
    eval_folds: frozenset = frozenset()
    seed: int = 0
    presets: dict = field(default_factory=dict)
    root: Path | None = field(default=None, compare=False)

    @property
    def synthetic(self) -> list[Sample]:
        return [s for s in self.samples if s.domain == SYNTHETIC]

    @property
    def real(self) -> list[Sample]:
        return [s for s in self.samples if s.domain == REAL]

    @property
    def train_folds(self) -> list[int]:
        return [f for f in range(self.k_folds) if f not in self.eval_folds]

    def fold(self, f: int) -> list[Sample]:
        return [s for s in self.samples if s.domain == REAL and s.fold == f]

    def eval_samples(self) -> list[Sample]:
        return [s for s in self.samples if s.domain == REAL and s.fold in self.eval_folds]

    def image_path(self, sample: Sample) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / sample.image_path

    def load_image(self, sample: Sample) -> GreyImage:
        return GreyImage.load(self.image_path(sample))

    # -- serialization --------------------------------------------------------

    def to_jsonl(self) -> str:
        return "".join(s.to_json() + "\n" for s in self.samples)

    def meta(self) -> dict:
        return {
            "k_folds": self.k_folds,
            "eval_folds": sorted(self.eval_folds),
            "seed": self.seed,
            "presets": dict(sorted(self.presets.items())),
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        meta_path(path).write_text(json.dumps(self.meta(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def parse(cls, jsonl: str, meta: dict | None = None, root=None) -> "DatasetManifest":
        meta = meta or {}
        samples = tuple(Sample.from_json(line) for line in jsonl.splitlines() if line.strip())
        return cls(
            samples=samples,
            k_folds=meta.get("k_folds", 0),
            eval_folds=frozenset(meta.get("eval_folds", ())),
            seed=meta.get("seed", 0),
            presets=meta.get("presets", {}),
            root=None if root is None else Path(root),
        )

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        mp = meta_path(path)
        meta = json.loads(mp.read_text(encoding="utf-8")) if mp.exists() else {}
        return cls.parse(path.read_text(encoding="utf-8"), meta, root=path.parent)


def meta_path(manifest_path) -> Path:
    p = Path(manifest_path)
    return p.with_name(p.stem + ".meta.json")


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    folds_used: int
    label_policy: float | None = None

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StrategyKind.SUPERVISED:
            policy = 1.0
        elif kind is StrategyKind.UDA:
            policy = 0.0
        else:
            policy = 0.10 if self.label_policy is None else float(self.label_policy)
        if self.label_policy is not None and float(self.label_policy) != policy:
            raise ValueError(f"{kind.value} fixes the label fraction at {policy}")
        if not 0.0 <= policy <= 1.0:
            raise ValueError("label_policy must lie in [0, 1]")
        object.__setattr__(self, "label_policy", policy)
        if self.folds_used < 1:
            raise ValueError("folds_used must be at least 1")

    @property
    def label_fraction(self) -> Fraction:
        return Fraction(self.label_policy).limit_denominator(10**6)


def _child_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys]).generate_state(1, np.uint64)[0])


def random_defects(
    rng: np.random.Generator,
    phantom: WheelPhantom,
    geometry: ProjectionGeometry,
    count: int,
    semi_axis_mm: Sequence[float],
    depth_semi_axis_mm: Sequence[float],
    density_drop: Sequence[float],
) -> list[Defect]:
    """Draw ``count`` voids centred inside wheel material and inside the field of view."""
    half_w = geometry.width * geometry.pixel_pitch / 2.0
    half_h = geometry.height * geometry.pixel_pitch / 2.0
    reach = min(phantom.outer_radius, half_w, half_h)
    defects = []
    while len(defects) < count:
        x, y = rng.uniform(-reach, reach, size=2)
        if thickness_at(phantom, x, y) <= 0:
            continue
        a, b = rng.uniform(*semi_axis_mm, size=2)
        c = min(rng.uniform(*depth_semi_axis_mm), phantom.base_thickness / 2.0)
        drop = rng.uniform(*density_drop)
        defects.append(Defect((x, y, 0.0), (a, b, c), drop))
    return defects


def render_samples(cfg: dict, domain: str, count: int, seed: int, out_dir, prefix: str, preset: str) -> list[Sample]:
    corpus = cfg["corpus"]
    phantom = cfgmod.phantom(cfg)
    geometry = cfgmod.geometry(cfg)
    profile = cfgmod.profile(cfg, preset)
    lo, hi = corpus["defects_per_image"]
    code = _DOMAIN_CODES[prefix if prefix == "holdout" else domain]
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(_child_seed(seed, code, i, 0)))
        n = int(rng.integers(lo, hi + 1))
        defects = random_defects(
            rng, phantom, geometry, n, corpus["semi_axis_mm"], corpus["depth_semi_axis_mm"], corpus["density_drop"]
        )
        image, boxes = render(phantom, defects, geometry, profile, _child_seed(seed, code, i, 1))
        image_id = f"{prefix}-{i:05d}"
        rel = f"images/{image_id}.pgm"
        image.save(out_dir / rel)
        samples.append(Sample(image_id, rel, domain, tuple(boxes), True, None))
    return samples


def generate_corpus(cfg: dict, seed: int, out_dir) -> DatasetManifest:
    """Render the synthetic and real pools; every sample starts labeled and unassigned."""
    corpus = cfg["corpus"]
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    syn = render_samples(cfg, SYNTHETIC, corpus["n_synthetic"], seed, out_dir, "syn", corpus["synthetic_profile"])
    real = render_samples(cfg, REAL, corpus["n_real"], seed, out_dir, "real", corpus["real_profile"])
    presets = {SYNTHETIC: corpus["synthetic_profile"], REAL: corpus["real_profile"]}
    return DatasetManifest(tuple(syn + real), seed=seed, presets=presets, root=out_dir)


def generate_holdout(cfg: dict, seed: int, out_dir) -> DatasetManifest:
    """Extra synthetic images, never trained on, for measuring in-domain accuracy."""
    corpus = cfg["corpus"]
    samples = render_samples(
        cfg, SYNTHETIC, corpus["n_holdout_synthetic"], seed, out_dir, "holdout", corpus["synthetic_profile"]
    )
    return DatasetManifest(tuple(samples), seed=seed, presets={SYNTHETIC: corpus["synthetic_profile"]}, root=Path(out_dir))


def split_folds(manifest: DatasetManifest, k: int = 10, eval_count: int = 3, seed: int = 0) -> DatasetManifest:
    """Shuffle real samples and deal them round-robin into ``k`` folds.

    The last ``eval_count`` fold ids are reserved for evaluation.
    """
    if k < eval_count + 1:
        raise ValueError("need k >= eval_count + 1")
    real_idx = [i for i, s in enumerate(manifest.samples) if s.domain == REAL]
    if len(real_idx) < k:
        raise ValueError(f"{len(real_idx)} real samples cannot fill {k} folds")
    rng = np.random.Generator(np.random.PCG64(_child_seed(seed, 7)))
    order = rng.permutation(len(real_idx))
    samples = list(manifest.samples)
    for rank, j in enumerate(order):
        i = real_idx[j]
        samples[i] = replace(samples[i], fold=rank % k)
    eval_folds = frozenset(range(k - eval_count, k))
    return replace(manifest, samples=tuple(samples), k_folds=k, eval_folds=eval_folds)


def materialize_strategy(manifest: DatasetManifest, spec: StrategySpec, seed: int = 0) -> list[Sample]:
    """Training samples for one strategy cell, with effective label flags."""
    usable = manifest.train_folds
    if not 1 <= spec.folds_used <= len(usable):
        raise ValueError(f"folds_used={spec.folds_used} outside [1, {len(usable)}]")
    real = [s for f in usable[: spec.folds_used] for s in manifest.fold(f)]
    if spec.kind is StrategyKind.SUPERVISED:
        return [replace(s, labeled=True) for s in real]
    syn = [replace(s, labeled=True) for s in manifest.synthetic]
    if spec.kind is StrategyKind.UDA:
        return syn + [replace(s, labeled=False) for s in real]
    n_keep = labeled_count(len(real), spec.label_policy)
    rng = np.random.Generator(np.random.PCG64(_child_seed(seed, 11, spec.folds_used)))
    keep = set(rng.choice(len(real), size=n_keep, replace=False).tolist()) if n_keep else set()
    return syn + [replace(s, labeled=i in keep) for i, s in enumerate(real)]


def labeled_count(n_used: int, policy: float) -> int:
    """``round(policy * n_used)`` with halves rounded up."""
    return math.floor(Fraction(policy).limit_denominator(10**6) * n_used + Fraction(1, 2))


def source_only_set(manifest: DatasetManifest) -> list[Sample]:
    return [replace(s, labeled=True) for s in manifest.synthetic]
