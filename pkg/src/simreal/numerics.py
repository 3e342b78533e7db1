"""Small dense networks with hand-written backprop and a gradient reversal layer.

Inputs are batched row-major ``float64`` arrays of shape ``(n, features)``.
Random streams are numpy ``PCG64`` generators seeded with a 64-bit integer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "simreal-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or infinity turns up in a forward or backward pass."""


class StaleTapeError(RuntimeError):
    """Raised when backward is given a tape recorded before the last parameter update."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


class Dense:
    kind = "dense"

    def __init__(self, W, b):
        self.W = np.array(W, dtype=np.float64, ndmin=2)
        self.b = np.array(b, dtype=np.float64, ndmin=1)
        if self.b.shape != (self.W.shape[0],):
            raise ValueError("bias length must equal output width")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "Dense":
        """Glorot-uniform weights, zero bias."""
        limit = math.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out))

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        return x @ self.W.T + self.b, x

    def backward(self, saved, g):
        x = saved
        return g @ self.W, [g.T @ x, g.sum(axis=0)]

    def spec(self):
        return {"kind": "dense", "in": self.n_in, "out": self.n_out}


class Activation:
    kind = "activation"
    FUNCS = ("tanh", "relu", "sigmoid")

    def __init__(self, name: str):
        if name not in self.FUNCS:
            raise ValueError(f"unknown activation {name!r}")
        self.name = name

    def params(self):
        return []

    def forward(self, x):
        if self.name == "tanh":
            y = np.tanh(x)
        elif self.name == "relu":
            y = np.maximum(x, 0.0)
        else:
            y = sigmoid(x)
        return y, (x, y)

    def backward(self, saved, g):
        x, y = saved
        if self.name == "tanh":
            return g * (1.0 - y * y), []
        if self.name == "relu":
            return g * (x > 0), []
        return g * y * (1.0 - y), []

    def spec(self):
        return {"kind": "activation", "name": self.name}


class GRL:
    """Identity forward; multiplies the backward gradient by ``-lam``."""

    kind = "grl"

    def __init__(self, lam: float = 1.0):
        if lam < 0:
            raise ValueError("reversal strength must be non-negative")
        self.lam = float(lam)

    def params(self):
        return []

    def forward(self, x):
        return x, None

    def backward(self, saved, g):
        return -self.lam * g, []

    def spec(self):
        return {"kind": "grl", "lambda": self.lam}


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Tape:
    saved: list
    version: int
    owner: int


class Network:
    """Ordered stack of Dense / Activation / GRL layers."""

    def __init__(self, layers: Sequence):
        self.layers = list(layers)
        self.version = 0
        width = None
        for layer in self.layers:
            if isinstance(layer, Dense):
                if width is not None and layer.n_in != width:
                    raise ValueError(f"layer expects {layer.n_in} inputs, previous layer gives {width}")
                width = layer.n_out

    @classmethod
    def mlp(cls, sizes: Sequence[int], activation: str | None, rng, final_activation: str | None = None, grl: float | None = None):
        """Dense stack ``sizes[0] -> ... -> sizes[-1]``, optionally behind a GRL."""
        layers = [] if grl is None else [GRL(grl)]
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(Dense.init(n_in, n_out, rng))
            last = i == len(sizes) - 2
            act = final_activation if last else activation
            if act is not None:
                layers.append(Activation(act))
        return cls(layers)

    @property
    def n_in(self):
        for layer in self.layers:
            if isinstance(layer, Dense):
                return layer.n_in
        return None

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params())

    def touch(self):
        self.version += 1

    def copy(self) -> "Network":
        return network_from_dict(network_to_dict(self))

    def __call__(self, x):
        return forward(self, x)[0]


def forward(network: Network, x) -> tuple[np.ndarray, Tape]:
    x = np.array(x, dtype=np.float64, ndmin=2)
    n_in = network.n_in
    if n_in is not None and x.shape[-1] != n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {n_in}")
    saved = []
    for layer in network.layers:
        x, s = layer.forward(x)
        saved.append(s)
    _check_finite(x, "forward output")
    return x, Tape(saved, network.version, id(network))


def backward(network: Network, tape: Tape, upstream) -> tuple[np.ndarray, list[np.ndarray]]:
    """Reverse-mode pass; returns ``(input_gradient, parameter_gradients)``.

    Parameter gradients come back in the same order as ``network.params()``.
    """
    if tape.owner != id(network) or tape.version != network.version:
        raise StaleTapeError("tape does not belong to the current network state")
    g = np.array(upstream, dtype=np.float64, ndmin=2)
    grads: list[list[np.ndarray]] = []
    for layer, s in zip(reversed(network.layers), reversed(tape.saved)):
        g, pg = layer.backward(s, g)
        grads.append(pg)
    flat = [p for pg in reversed(grads) for p in pg]
    _check_finite(g, "input gradient")
    for p in flat:
        _check_finite(p, "parameter gradient")
    return g, flat


def gradient_check(
    network: Network,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    eps: float = 1e-5,
) -> float:
    """Worst relative error between analytic and central-difference parameter gradients.

    ``loss_fn`` maps the network output to ``(loss, d loss / d output)``.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    params = network.params()
    if not params:
        return 0.0
    out, tape = forward(network, x)
    loss, dout = loss_fn(out)
    if not math.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    _, analytic = backward(network, tape, dout)

    def loss_at() -> float:
        value = loss_fn(forward(network, x)[0])[0]
        if not math.isfinite(value):
            raise NonFiniteError("loss is not finite")
        return value

    return _max_rel_error(params, analytic, loss_at, eps)


def _max_rel_error(params, analytic, loss_at, eps) -> float:
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_at()
            flat[i] = orig - eps
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(gflat[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


class SGD:
    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        _check_shapes(params, grads)
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v
        return params


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        _check_shapes(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")


def make_optimizer(settings: dict):
    settings = dict(settings)
    kind = settings.pop("kind", "adam").lower()
    if kind == "sgd":
        return SGD(**settings)
    if kind == "adam":
        return Adam(**settings)
    raise ValueError(f"unknown optimizer {kind!r}")


def step(optimizer, params, grads):
    return optimizer.step(params, grads)


# -- checkpoints --------------------------------------------------------------


def network_to_dict(network: Network) -> dict:
    layers = []
    for layer in network.layers:
        entry = layer.spec()
        if isinstance(layer, Dense):
            entry["W"] = layer.W.tolist()
            entry["b"] = layer.b.tolist()
        layers.append(entry)
    return {"layers": layers}


def network_from_dict(data: dict) -> Network:
    layers = []
    for entry in data["layers"]:
        kind = entry["kind"]
        if kind == "dense":
            layers.append(Dense(entry["W"], entry["b"]))
        elif kind == "activation":
            layers.append(Activation(entry["name"]))
        elif kind == "grl":
            layers.append(GRL(entry["lambda"]))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return Network(layers)


def save_checkpoint(path, networks: dict[str, Network], meta: dict | None = None) -> None:
    """Write named networks as JSON; floats use shortest round-trip repr."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "networks": {name: network_to_dict(net) for name, net in networks.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, Network], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return {name: network_from_dict(d) for name, d in doc["networks"].items()}, doc["meta"]
