"""JSON experiment configuration: packaged desk defaults plus user overrides."""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from .phantom import ProjectionGeometry, RenderProfile, WheelPhantom


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    text = resources.files("simreal").joinpath("data/desk.json").read_text(encoding="utf-8")
    return json.loads(text)


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> dict:
    """Turn ``"training.epochs=5"`` into ``{"training": {"epochs": 5}}``.

    The value is parsed as JSON when possible and kept as a string otherwise.
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    path, raw = text.split("=", 1)
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    for key in reversed(keys):
        value = {key: value}
    return value


def load_config(path=None, overrides: Iterable[str] = ()) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = deep_merge(cfg, user)
    for item in overrides:
        cfg = deep_merge(cfg, parse_override(item))
    validate(cfg)
    return cfg


def profile(cfg: dict, name: str) -> RenderProfile:
    try:
        return RenderProfile(**cfg["profiles"][name])
    except KeyError:
        raise ConfigError(f"unknown profile preset {name!r}") from None


def geometry(cfg: dict) -> ProjectionGeometry:
    return ProjectionGeometry(**cfg["corpus"]["geometry"])


def phantom(cfg: dict) -> WheelPhantom:
    return WheelPhantom(**cfg["corpus"]["phantom"])


def validate(cfg: dict) -> None:
    corpus = cfg["corpus"]
    for key in ("synthetic_profile", "real_profile"):
        profile(cfg, corpus[key])
    split = cfg["split"]
    if split["k"] < split["eval_count"] + 1:
        raise ConfigError("split.k must exceed split.eval_count")
    usable = split["k"] - split["eval_count"]
    for f in cfg["grid"]["folds"]:
        if not 1 <= f <= usable:
            raise ConfigError(f"grid level {f} outside [1, {usable}]")
    if not cfg["grid"]["seeds"]:
        raise ConfigError("grid needs at least one seed")
    for kind in cfg["grid"]["strategies"]:
        if kind not in ("SUPERVISED", "UDA", "SSDA"):
            raise ConfigError(f"unknown strategy {kind!r}")
