"""Patch-classifier defect detector with adversarial image- and instance-level domain heads.

Each image is cut into overlapping square patches.  A patch is block-averaged
to 16x16 and standardized, giving a 256-value feature vector.  A shared tanh
trunk feeds a detection head (patch is/isn't a defect) and two domain
discriminators, each sitting behind a gradient reversal layer, so minimizing
the summed loss trains the discriminators while pushing the trunk towards
domain-indistinguishable features.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .boxes import Box, iou_matrix
from .dataset import REAL, SYNTHETIC, Sample
from .numerics import GRL, Activation, Dense, Network, NonFiniteError, backward, forward, load_checkpoint
from .numerics import make_optimizer, make_rng, save_checkpoint, sigmoid

FEATURE_SIDE = 16
POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass
class TrainingConfig:
    epochs: int = 20
    steps_per_epoch: int = 25
    batch: dict = field(default_factory=lambda: {"n_syn": 8, "n_real_unlabeled": 8, "n_real_labeled": 8})
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 0.002})
    domain_optimizer: dict | None = None  # settings for the domain heads; None shares ``optimizer``
    lam: float = 0.1
    lam_schedule: str = "constant"
    hidden: int = 64
    domain_hidden: int = 32
    patch_size: int = 32
    stride: int = 16
    std_floor: float = 0.0
    iou_pos: float = 0.3
    iou_neg: float = 0.1
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    max_detections: int = 100
    instance_top_k: int = 8
    consistency_weight: float = 0.0

    def __post_init__(self):
        if not 0 <= self.iou_neg < self.iou_pos <= 1:
            raise ValueError("need 0 <= iou_neg < iou_pos <= 1")
        if self.patch_size % FEATURE_SIDE:
            raise ValueError(f"patch_size must be a multiple of {FEATURE_SIDE}")
        if self.lam_schedule not in ("constant", "ramp"):
            raise ValueError("lam_schedule must be 'constant' or 'ramp'")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def lam_at(self, step: int, total: int) -> float:
        if self.lam_schedule == "constant" or total <= 1:
            return self.lam
        return self.lam * min(1.0, step / (0.5 * total))


# -- patches ------------------------------------------------------------------


def patch_boxes(width: int, height: int, patch_size: int = 32, stride: int = 16) -> list[Box]:
    return [
        Box(x, y, x + patch_size, y + patch_size)
        for y in range(0, height - patch_size + 1, stride)
        for x in range(0, width - patch_size + 1, stride)
    ]


def patch_features(image: np.ndarray, patch_size: int = 32, stride: int = 16, std_floor: float = 0.0) -> np.ndarray:
    """Per-patch 16x16 block means, standardized to zero mean and unit variance.

    The divisor is ``max(std, std_floor)`` (in counts), so patches whose spread
    is below the floor keep their small amplitude instead of being stretched to
    unit variance; constant patches map to the zero vector.  Rows follow
    ``patch_boxes`` order.
    """
    img = np.asarray(image, dtype=np.float64)
    win = np.lib.stride_tricks.sliding_window_view(img, (patch_size, patch_size))[::stride, ::stride]
    f = patch_size // FEATURE_SIDE
    ny, nx = win.shape[:2]
    small = win.reshape(ny, nx, FEATURE_SIDE, f, FEATURE_SIDE, f).mean(axis=(3, 5))
    feats = small.reshape(ny * nx, FEATURE_SIDE * FEATURE_SIDE)
    feats = feats - feats.mean(axis=1, keepdims=True)
    std = feats.std(axis=1, keepdims=True)
    std = np.maximum(std, std_floor)
    return feats / np.where(std > 0, std, 1.0)


def label_patches(patches: Sequence[Box], gt: Sequence[Box], iou_pos: float, iou_neg: float) -> np.ndarray:
    """Per-patch class: POSITIVE, NEGATIVE, or IGNORE (excluded from the detection loss)."""
    if not 0 <= iou_neg < iou_pos <= 1:
        raise ValueError("need 0 <= iou_neg < iou_pos <= 1")
    labels = np.full(len(patches), IGNORE, dtype=np.int8)
    if len(gt) == 0:
        labels[:] = NEGATIVE
        return labels
    best = iou_matrix(patches, gt).max(axis=1)
    labels[best >= iou_pos] = POSITIVE
    labels[best <= iou_neg] = NEGATIVE
    return labels


class FeatureStore:
    """Memoized patch features keyed by image id; images load from ``root``."""

    def __init__(self, root=None, patch_size: int = 32, stride: int = 16, std_floor: float = 0.0,
                 loader: Callable[[Sample], np.ndarray] | None = None):
        self.root = None if root is None else Path(root)
        self.patch_size = patch_size
        self.stride = stride
        self.std_floor = std_floor
        self._loader = loader
        self._cache: dict[str, np.ndarray] = {}
        self._shape: tuple[int, int] | None = None

    def add(self, image_id: str, image: np.ndarray) -> None:
        image = np.asarray(image)
        self._shape = image.shape
        self._cache[image_id] = patch_features(image, self.patch_size, self.stride, self.std_floor)

    def _load(self, sample: Sample) -> np.ndarray:
        if self._loader is not None:
            return self._loader(sample)
        from .phantom import GreyImage

        return GreyImage.load(self.root / sample.image_path).values

    def features(self, sample: Sample) -> np.ndarray:
        feats = self._cache.get(sample.image_id)
        if feats is None:
            self.add(sample.image_id, self._load(sample))
            feats = self._cache[sample.image_id]
        return feats

    def boxes(self) -> list[Box]:
        if self._shape is None:
            raise RuntimeError("no image has been loaded yet")
        h, w = self._shape
        return patch_boxes(w, h, self.patch_size, self.stride)


# -- model --------------------------------------------------------------------


@dataclass
class DetectorModel:
    trunk: Network
    det_head: Network
    img_dom_head: Network
    inst_dom_head: Network
    patch_size: int = 32
    stride: int = 16
    std_floor: float = 0.0

    @classmethod
    def init(cls, seed: int, hidden: int = 64, domain_hidden: int = 32, lam: float = 0.1,
             patch_size: int = 32, stride: int = 16, std_floor: float = 0.0) -> "DetectorModel":
        rng = make_rng(seed)
        n_in = FEATURE_SIDE * FEATURE_SIDE
        # init order is fixed: trunk and det head draw first, so they do not depend on the domain heads
        trunk = Network.mlp([n_in, hidden], None, rng, final_activation="tanh")
        det = Network.mlp([hidden, 1], None, rng)
        img = Network.mlp([hidden, domain_hidden, 1], "tanh", rng, grl=lam)
        inst = Network.mlp([hidden, domain_hidden, 1], "tanh", rng, grl=lam)
        return cls(trunk, det, img, inst, patch_size, stride, std_floor)

    @property
    def networks(self) -> dict[str, Network]:
        return {"trunk": self.trunk, "det_head": self.det_head,
                "img_dom_head": self.img_dom_head, "inst_dom_head": self.inst_dom_head}

    def params(self) -> list[np.ndarray]:
        return [p for net in self.networks.values() for p in net.params()]

    def set_lambda(self, lam: float) -> None:
        for net in (self.img_dom_head, self.inst_dom_head):
            grl = net.layers[0]
            assert isinstance(grl, GRL)
            grl.lam = float(lam)

    @property
    def lam(self) -> float:
        return self.img_dom_head.layers[0].lam

    def touch(self) -> None:
        for net in self.networks.values():
            net.touch()

    def scores(self, feats: np.ndarray) -> np.ndarray:
        h = self.trunk(feats)
        return sigmoid(self.det_head(h)[:, 0])

    def domain_probability(self, feats: np.ndarray) -> float:
        """img_dom_head's probability that an image is real, from its patch features."""
        h = self.trunk(feats).mean(axis=0, keepdims=True)
        return float(sigmoid(self.img_dom_head(h)[:, 0])[0])

    def save(self, path, meta: dict | None = None) -> None:
        info = {"patch_size": self.patch_size, "stride": self.stride, "std_floor": self.std_floor}
        info.update(meta or {})
        save_checkpoint(path, self.networks, info)

    @classmethod
    def load(cls, path) -> "DetectorModel":
        nets, meta = load_checkpoint(path)
        return cls(nets["trunk"], nets["det_head"], nets["img_dom_head"], nets["inst_dom_head"],
                   meta.get("patch_size", 32), meta.get("stride", 16), meta.get("std_floor", 0.0))


# -- losses -------------------------------------------------------------------


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient wrt the logits."""
    n = z.size
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.sum() / n), (sigmoid(z) - y) / n


@dataclass
class BatchItem:
    feats: np.ndarray
    labels: np.ndarray | None  # None for unlabeled samples
    domain: int  # 0 synthetic, 1 real


@dataclass
class LossBreakdown:
    det: float
    img: float
    inst: float
    cst: float = 0.0
    domain_correct: int = 0
    domain_total: int = 0

    @property
    def total(self) -> float:
        return self.det + self.img + self.inst + self.cst


def batch_loss(model: DetectorModel, batch: Sequence[BatchItem], adversarial: bool = True,
               top_k: int = 8, consistency_weight: float = 0.0, instance_rows: np.ndarray | None = None):
    """Total loss over one batch and gradients for ``model.params()``.

    Domain terms are skipped when ``adversarial`` is off or the batch holds a
    single domain.  ``instance_rows`` pins the instance-level patch selection
    (used by gradient checks so finite differences cannot flip it).
    """
    sizes = [len(b.feats) for b in batch]
    X = np.concatenate([b.feats for b in batch])
    H, t_trunk = forward(model.trunk, X)
    Z, t_det = forward(model.det_head, H)
    z = Z[:, 0]
    dH = np.zeros_like(H)
    dZ = np.zeros_like(Z)
    grads = {name: [np.zeros_like(p) for p in net.params()] for name, net in model.networks.items()}

    # detection: labeled, non-ignored patches
    y_all = np.full(len(z), IGNORE, dtype=np.int8)
    start = 0
    for b, n in zip(batch, sizes):
        if b.labels is not None:
            y_all[start:start + n] = b.labels
        start += n
    det_rows = np.flatnonzero(y_all != IGNORE)
    det_loss = 0.0
    if det_rows.size:
        det_loss, dz = bce_with_logits(z[det_rows], y_all[det_rows].astype(np.float64))
        dZ[det_rows, 0] = dz
    dH_det, grads["det_head"] = backward(model.det_head, t_det, dZ)
    dH += dH_det

    result = LossBreakdown(det_loss, 0.0, 0.0)
    domains = np.array([b.domain for b in batch], dtype=np.float64)
    if adversarial and 0 < domains.sum() < len(domains):
        offsets = np.cumsum([0] + sizes)
        # image level: mean-pooled trunk features
        pooled = np.stack([H[offsets[i]:offsets[i + 1]].mean(axis=0) for i in range(len(batch))])
        Zi, t_img = forward(model.img_dom_head, pooled)
        result.img, dzi = bce_with_logits(Zi[:, 0], domains)
        result.domain_correct = int(((Zi[:, 0] > 0) == (domains > 0.5)).sum())
        result.domain_total = len(batch)
        # instance level: confident patches, else the top-k
        if instance_rows is None:
            instance_rows = select_instances(sigmoid(z), offsets, top_k)
        inst_dom = domains[np.searchsorted(offsets, instance_rows, side="right") - 1]
        Zs, t_inst = forward(model.inst_dom_head, H[instance_rows])
        result.inst, dzs = bce_with_logits(Zs[:, 0], inst_dom)
        if consistency_weight > 0:
            owner = np.searchsorted(offsets, instance_rows, side="right") - 1
            p_img = sigmoid(Zi[:, 0])[owner]
            p_inst = sigmoid(Zs[:, 0])
            diff = p_img - p_inst
            result.cst = consistency_weight * float(np.mean(diff**2))
            g = consistency_weight * 2.0 * diff / diff.size
            dzs = dzs - g * p_inst * (1 - p_inst)
            dzi = dzi + np.bincount(owner, weights=g * p_img * (1 - p_img), minlength=len(batch))
        dpooled, grads["img_dom_head"] = backward(model.img_dom_head, t_img, dzi[:, None])
        for i in range(len(batch)):
            dH[offsets[i]:offsets[i + 1]] += dpooled[i] / sizes[i]
        dHs, grads["inst_dom_head"] = backward(model.inst_dom_head, t_inst, dzs[:, None])
        np.add.at(dH, instance_rows, dHs)

    _, grads["trunk"] = backward(model.trunk, t_trunk, dH)
    flat = [g for name in model.networks for g in grads[name]]
    if not math.isfinite(result.total):
        raise NonFiniteError("training loss is not finite")
    return result, flat


def batch_objective(model: DetectorModel, batch: Sequence[BatchItem], instance_rows: np.ndarray,
                    adversarial: bool = True, consistency_weight: float = 0.0) -> LossBreakdown:
    """Forward-only loss terms with a fixed instance selection."""
    sizes = [len(b.feats) for b in batch]
    offsets = np.cumsum([0] + sizes)
    H = model.trunk(np.concatenate([b.feats for b in batch]))
    z = model.det_head(H)[:, 0]
    y = np.concatenate([b.labels if b.labels is not None else np.full(n, IGNORE, np.int8)
                        for b, n in zip(batch, sizes)])
    rows = np.flatnonzero(y != IGNORE)
    out = LossBreakdown(bce_with_logits(z[rows], y[rows].astype(np.float64))[0] if rows.size else 0.0, 0.0, 0.0)
    domains = np.array([b.domain for b in batch], dtype=np.float64)
    if adversarial and 0 < domains.sum() < len(domains):
        pooled = np.stack([H[offsets[i]:offsets[i + 1]].mean(axis=0) for i in range(len(batch))])
        zi = model.img_dom_head(pooled)[:, 0]
        owner = np.searchsorted(offsets, instance_rows, side="right") - 1
        zs = model.inst_dom_head(H[instance_rows])[:, 0]
        out.img = bce_with_logits(zi, domains)[0]
        out.inst = bce_with_logits(zs, domains[owner])[0]
        if consistency_weight > 0:
            out.cst = consistency_weight * float(np.mean((sigmoid(zi)[owner] - sigmoid(zs)) ** 2))
    return out


def gradient_check_model(model: DetectorModel, batch: Sequence[BatchItem], eps: float = 1e-6,
                         adversarial: bool = True, consistency_weight: float = 0.0,
                         instance_rows: np.ndarray | None = None) -> float:
    """Worst relative error of ``batch_loss`` gradients against central differences.

    Heads are compared with the total loss.  The trunk sits upstream of both
    reversal layers, so its reference objective is ``L_det - lam * (domain terms)``.
    The finite differences run in extended precision (``np.longdouble``):
    in float64 the rounding of an O(1) loss swamps coordinates below ~1e-6.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    if instance_rows is None:
        offsets = np.cumsum([0] + [len(b.feats) for b in batch])
        instance_rows = select_instances(model.scores(np.concatenate([b.feats for b in batch])), offsets, 8)
    _, grads = batch_loss(model, batch, adversarial, consistency_weight=consistency_weight,
                          instance_rows=instance_rows)
    oracle = _ExtendedOracle(model, batch, instance_rows, adversarial, consistency_weight)
    worst = 0.0
    for (name, k, i), g in zip(oracle.coordinates(), (v for g in grads for v in g.reshape(-1))):
        numeric = oracle.derivative(name, k, i, eps)
        worst = max(worst, abs(g - numeric) / max(abs(g), abs(numeric), 1e-12))
    return worst


class _ExtendedOracle:
    """Loss terms of a detector evaluated in ``np.longdouble``.

    Trunk perturbations only touch one hidden unit, so just that column of the
    trunk activations is recomputed.
    """

    def __init__(self, model: DetectorModel, batch, instance_rows, adversarial, consistency_weight):
        ld = np.longdouble
        trunk = model.trunk.layers
        if len(trunk) != 2 or not isinstance(trunk[1], Activation) or trunk[1].name != "tanh":
            raise ValueError("oracle expects a single dense tanh trunk")
        self.lam = ld(model.lam)
        if model.inst_dom_head.layers[0].lam != model.lam:
            raise ValueError("domain heads disagree on the reversal strength")
        self.nets = model.networks
        self.params = {n: [p.astype(ld) for p in net.params()] for n, net in self.nets.items()}
        self.X = np.concatenate([b.feats for b in batch]).astype(ld)
        W, b = self.params["trunk"]
        self.A = self.X @ W.T + b
        self.H = np.tanh(self.A)
        sizes = [len(x.feats) for x in batch]
        self.offsets = np.cumsum([0] + sizes)
        y = np.concatenate([x.labels if x.labels is not None else np.full(n, IGNORE, np.int8)
                            for x, n in zip(batch, sizes)])
        self.det_rows = np.flatnonzero(y != IGNORE)
        self.y = y[self.det_rows].astype(ld)
        self.domains = np.array([x.domain for x in batch], dtype=ld)
        self.rows = np.asarray(instance_rows)
        self.owner = np.searchsorted(self.offsets, self.rows, side="right") - 1
        self.adversarial = adversarial and 0 < self.domains.sum() < len(self.domains)
        self.cw = ld(consistency_weight)

    def coordinates(self):
        for name, plist in self.params.items():
            for k, p in enumerate(plist):
                for i in range(p.size):
                    yield name, k, i

    def _head(self, name, x, params):
        it = iter(params)
        for layer in self.nets[name].layers:
            if isinstance(layer, Dense):
                x = x @ next(it).T + next(it)
            elif isinstance(layer, Activation):
                x = np.tanh(x) if layer.name == "tanh" else (np.maximum(x, 0) if layer.name == "relu"
                                                            else 1 / (1 + np.exp(-x)))
        return x[:, 0]

    @staticmethod
    def _bce(z, y):
        return np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))

    def _terms(self, H, params):
        z = self._head("det_head", H, params["det_head"])
        det = self._bce(z[self.det_rows], self.y) if self.det_rows.size else np.longdouble(0)
        if not self.adversarial:
            return det, np.longdouble(0)
        pooled = np.stack([H[self.offsets[i]:self.offsets[i + 1]].mean(axis=0) for i in range(len(self.domains))])
        zi = self._head("img_dom_head", pooled, params["img_dom_head"])
        zs = self._head("inst_dom_head", H[self.rows], params["inst_dom_head"])
        dom = self._bce(zi, self.domains) + self._bce(zs, self.domains[self.owner])
        if self.cw > 0:
            pi = 1 / (1 + np.exp(-zi))
            ps = 1 / (1 + np.exp(-zs))
            dom = dom + self.cw * np.mean((pi[self.owner] - ps) ** 2)
        return det, dom

    def _objective(self, name, k, i, delta):
        params = dict(self.params)
        H = self.H
        if name == "trunk":
            H = H.copy()
            if k == 0:
                j, col = divmod(i, self.X.shape[1])
                H[:, j] = np.tanh(self.A[:, j] + delta * self.X[:, col])
            else:
                H[:, i] = np.tanh(self.A[:, i] + delta)
            det, dom = self._terms(H, params)
            return det - self.lam * dom
        plist = [p.copy() for p in params[name]]
        plist[k].reshape(-1)[i] += delta
        params[name] = plist
        det, dom = self._terms(H, params)
        return det + dom

    def derivative(self, name, k, i, eps):
        eps = np.longdouble(eps)
        return float((self._objective(name, k, i, eps) - self._objective(name, k, i, -eps)) / (2 * eps))


def select_instances(scores: np.ndarray, offsets: np.ndarray, top_k: int) -> np.ndarray:
    rows = []
    for i in range(len(offsets) - 1):
        s = scores[offsets[i]:offsets[i + 1]]
        picked = np.flatnonzero(s >= 0.5)
        if picked.size == 0:
            picked = np.sort(np.argsort(-s, kind="stable")[:top_k])
        rows.append(picked + offsets[i])
    return np.concatenate(rows)


# -- training -----------------------------------------------------------------


class _Cycler:
    """Endless shuffled pass over a pool, reshuffling at every wrap."""

    def __init__(self, items: list, rng: np.random.Generator):
        self.items = items
        self.rng = rng
        self.order: list[int] = []

    def take(self, n: int) -> list:
        n = min(n, len(self.items))
        out = []
        while len(out) < n:
            if not self.order:
                self.order = self.rng.permutation(len(self.items)).tolist()
            out.append(self.items[self.order.pop()])
        return out


def _domain_code(sample: Sample) -> int:
    return 1 if sample.domain == REAL else 0


def train(train_set: Sequence[Sample], config: TrainingConfig, seed: int, store: FeatureStore,
          adversarial: bool = True, log_path=None, history: list | None = None,
          on_epoch: Callable[[int, DetectorModel], None] | None = None) -> DetectorModel:
    """Fit a detector on one strategy's training set.

    Per step the batch mixes up to ``n_syn`` synthetic, ``n_real_unlabeled``
    unlabeled real and ``n_real_labeled`` labeled real images.  Writes a CSV
    log (epoch, L_det, L_img, L_inst, domain accuracy) when ``log_path`` is set.
    """
    if not train_set:
        raise ValueError("empty training set")
    if not any(s.labeled for s in train_set):
        raise ValueError("training set has no labeled samples")
    pools = {
        "n_syn": [s for s in train_set if s.domain == SYNTHETIC],
        "n_real_unlabeled": [s for s in train_set if s.domain == REAL and not s.labeled],
        "n_real_labeled": [s for s in train_set if s.domain == REAL and s.labeled],
    }
    model = DetectorModel.init(seed, config.hidden, config.domain_hidden, config.lam,
                               config.patch_size, config.stride, config.std_floor)
    rng = make_rng(int(np.random.SeedSequence([seed, 1]).generate_state(1, np.uint64)[0]))
    cyclers = {k: _Cycler(v, rng) for k, v in pools.items()}
    shared = model.trunk.params() + model.det_head.params()
    n_shared = len(shared)
    if config.domain_optimizer is None:
        optimizers = [(make_optimizer(config.optimizer), slice(0, None))]
    else:
        optimizers = [(make_optimizer(config.optimizer), slice(0, n_shared)),
                      (make_optimizer({**config.optimizer, **config.domain_optimizer}), slice(n_shared, None))]
    params = model.params()
    labels_cache: dict[str, np.ndarray] = {}

    def item(sample: Sample) -> BatchItem:
        feats = store.features(sample)
        labels = None
        if sample.training_boxes is not None:
            labels = labels_cache.get(sample.image_id)
            if labels is None:
                labels = label_patches(store.boxes(), sample.training_boxes, config.iou_pos, config.iou_neg)
                labels_cache[sample.image_id] = labels
        return BatchItem(feats, labels, _domain_code(sample))

    total_steps = config.epochs * config.steps_per_epoch
    rows = []
    step_no = 0
    for epoch in range(config.epochs):
        sums = np.zeros(3)
        correct = seen = 0
        for _ in range(config.steps_per_epoch):
            model.set_lambda(config.lam_at(step_no, total_steps))
            batch = [item(s) for key in ("n_syn", "n_real_unlabeled", "n_real_labeled")
                     for s in cyclers[key].take(int(config.batch.get(key, 0)))]
            if not batch:
                raise ValueError("batch composition yields no samples")
            losses, grads = batch_loss(model, batch, adversarial, config.instance_top_k, config.consistency_weight)
            for opt, part in optimizers:
                opt.step(params[part], grads[part])
            model.touch()
            sums += (losses.det, losses.img, losses.inst)
            correct += losses.domain_correct
            seen += losses.domain_total
            step_no += 1
        means = sums / config.steps_per_epoch
        acc = correct / seen if seen else float("nan")
        rows.append((epoch, *means.tolist(), acc))
        if on_epoch is not None:
            on_epoch(epoch, model)
    model.set_lambda(config.lam)
    if history is not None:
        history.extend(rows)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "L_det", "L_img", "L_inst", "domain_accuracy"])
            for r in rows:
                w.writerow([r[0], *(f"{v:.10g}" for v in r[1:])])
    return model


def domain_accuracy(model: DetectorModel, samples: Iterable[Sample], store: FeatureStore) -> float:
    """Share of images whose domain the image-level head gets right."""
    hits = total = 0
    for s in samples:
        p = model.domain_probability(store.features(s))
        hits += (p >= 0.5) == (s.domain == REAL)
        total += 1
    return hits / total if total else float("nan")


# -- inference ----------------------------------------------------------------


def nms(boxes: Sequence[Box], scores: Sequence[float], iou_threshold: float) -> list[int]:
    """Greedy suppression; equal scores resolve to the lower index."""
    if len(boxes) == 0:
        return []
    scores = np.asarray(scores, dtype=np.float64)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    overlaps = iou_matrix(boxes, boxes)
    alive = np.ones(len(scores), dtype=bool)
    kept = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(i)
        alive &= overlaps[i] <= iou_threshold
        alive[i] = False
    return kept


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float


def detect_from_scores(boxes: Sequence[Box], scores: np.ndarray, score_threshold: float = 0.5,
                       nms_iou: float = 0.5, max_detections: int = 100) -> list[Detection]:
    idx = np.flatnonzero(scores >= score_threshold)
    if idx.size == 0:
        return []
    kept = nms([boxes[i] for i in idx], scores[idx], nms_iou)[:max_detections]
    return [Detection(boxes[idx[k]], float(scores[idx[k]])) for k in kept]


def infer(model: DetectorModel, image: np.ndarray, config: TrainingConfig) -> list[Detection]:
    """Detections for one image, sorted by descending score."""
    image = np.asarray(image)
    h, w = image.shape
    boxes = patch_boxes(w, h, model.patch_size, model.stride)
    scores = model.scores(patch_features(image, model.patch_size, model.stride, model.std_floor))
    return detect_from_scores(boxes, scores, config.score_threshold, config.nms_iou, config.max_detections)


def infer_sample(model: DetectorModel, sample: Sample, store: FeatureStore, config: TrainingConfig) -> list[Detection]:
    scores = model.scores(store.features(sample))
    return detect_from_scores(store.boxes(), scores, config.score_threshold, config.nms_iou, config.max_detections)
