"""Analytic wheel phantom and parallel-beam X-ray projection.

Coordinates are in millimetres with the origin at the detector centre; ``x``
grows to the right (columns) and ``y`` grows downwards (rows).  Pixel ``(i, j)``
covers ``[j, j + 1) x [i, i + 1)`` in detector units, so its centre sits at
``x = (j + 0.5 - width / 2) * pixel_pitch``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxes import Box

MAX_COUNTS = 65535


@dataclass(frozen=True)
class WheelPhantom:
    outer_radius: float
    hub_radius: float
    rim_width: float
    spoke_count: int
    spoke_half_width: float
    base_thickness: float
    mu: float
    spoke_phase: float = 0.0

    def __post_init__(self):
        if not 0 < self.hub_radius < self.outer_radius:
            raise ValueError("need 0 < hub_radius < outer_radius")
        if self.rim_width <= 0:
            raise ValueError("rim_width must be positive")
        if self.spoke_count < 3:
            raise ValueError("spoke_count must be at least 3")
        if self.mu <= 0 or self.base_thickness <= 0:
            raise ValueError("mu and base_thickness must be positive")

    def material_mask(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        r = np.hypot(x, y)
        rim_inner = self.outer_radius - self.rim_width
        rim = (r >= rim_inner) & (r <= self.outer_radius)
        hub = r <= self.hub_radius
        # angular distance to the nearest spoke centreline
        pitch = 2.0 * math.pi / self.spoke_count
        rel = np.mod(np.arctan2(y, x) - self.spoke_phase + 0.5 * pitch, pitch) - 0.5 * pitch
        spoke = (r > self.hub_radius) & (r < rim_inner) & (np.abs(rel) <= self.spoke_half_width)
        return rim | hub | spoke


def thickness_at(phantom: WheelPhantom, x, y):
    """Material depth (mm) along the beam through the in-plane point ``(x, y)``."""
    depth = np.where(phantom.material_mask(x, y), phantom.base_thickness, 0.0)
    return float(depth) if depth.ndim == 0 else depth


@dataclass(frozen=True)
class Defect:
    """Axis-aligned ellipsoidal void; lowers the local attenuation by ``density_drop``."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    density_drop: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(v) for v in self.semi_axes))
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValueError("center and semi_axes must be 3-vectors")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")
        if not 0.0 <= self.density_drop < 1.0:
            raise ValueError("density_drop must be in [0, 1)")

    def chord(self, x, y):
        """Length of the beam path inside the ellipsoid for rays through ``(x, y)``."""
        cx, cy, _ = self.center
        a, b, c = self.semi_axes
        q = 1.0 - ((np.asarray(x) - cx) / a) ** 2 - ((np.asarray(y) - cy) / b) ** 2
        return 2.0 * c * np.sqrt(np.maximum(q, 0.0))


@dataclass(frozen=True)
class RenderProfile:
    flux_i0: float
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    gain: float = 1.0
    offset: float = 0.0
    fog: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if self.flux_i0 <= 0:
            raise ValueError("flux_i0 must be positive")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        for name in ("noise_sigma", "blur_sigma", "fog", "jitter_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ProjectionGeometry:
    width: int
    height: int
    pixel_pitch: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("geometry must have at least one pixel")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, y)`` grids of pixel centres in mm, shape ``(height, width)``."""
        cols = (np.arange(self.width) + 0.5 - self.width / 2.0) * self.pixel_pitch
        rows = (np.arange(self.height) + 0.5 - self.height / 2.0) * self.pixel_pitch
        return np.meshgrid(cols, rows)

    def to_pixels(self, x: float, y: float) -> tuple[float, float]:
        return self.width / 2.0 + x / self.pixel_pitch, self.height / 2.0 + y / self.pixel_pitch

    def to_mm(self, u: float, v: float) -> tuple[float, float]:
        return (u - self.width / 2.0) * self.pixel_pitch, (v - self.height / 2.0) * self.pixel_pitch


@dataclass(frozen=True)
class GreyImage:
    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.uint16)
        if values.shape != (self.height, self.width):
            raise ValueError("value count must equal width * height")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, GreyImage):
            return NotImplemented
        return self.values.shape == other.values.shape and np.array_equal(self.values, other.values)

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n{MAX_COUNTS}\n".encode("ascii")
        return header + self.values.astype(">u2").tobytes()

    @classmethod
    def from_pgm(cls, data: bytes) -> "GreyImage":
        tokens = []
        pos = 0
        while len(tokens) < 4:
            while data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                pos = data.index(b"\n", pos) + 1
                continue
            start = pos
            while not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
        if tokens[0] != b"P5":
            raise ValueError("not a binary PGM (P5) file")
        width, height, maxval = (int(t) for t in tokens[1:])
        if maxval != MAX_COUNTS:
            raise ValueError(f"expected maxval {MAX_COUNTS}, got {maxval}")
        pos += 1  # single whitespace byte after maxval
        raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
        return cls(width, height, raw.reshape(height, width).astype(np.uint16))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_pgm())

    @classmethod
    def load(cls, path) -> "GreyImage":
        return cls.from_pgm(Path(path).read_bytes())


def attenuation_line_integral(phantom: WheelPhantom, defects: Sequence[Defect], x, y):
    """Optical depth of parallel rays through ``(x, y)``, clamped below at zero."""
    depth = phantom.mu * thickness_at(phantom, x, y)
    for d in defects:
        depth = depth - phantom.mu * d.density_drop * d.chord(x, y)
    depth = np.maximum(depth, 0.0)
    return float(depth) if np.ndim(depth) == 0 else depth


def optical_depth_map(phantom: WheelPhantom, defects: Sequence[Defect], geometry: ProjectionGeometry) -> np.ndarray:
    x, y = geometry.pixel_centers()
    return attenuation_line_integral(phantom, defects, x, y)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected (edge-duplicating) boundaries."""
    if sigma == 0:
        return np.array(image, dtype=np.float64)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            acc += w * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def pre_noise_intensity(optical_depth: np.ndarray, profile: RenderProfile) -> np.ndarray:
    """Detector signal before noise and quantization."""
    raw = profile.flux_i0 * np.exp(-optical_depth) + profile.fog
    return profile.gain * gaussian_blur(raw, profile.blur_sigma) + profile.offset


def quantize(intensity: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(intensity), 0, MAX_COUNTS).astype(np.uint16)


def defect_box(defect: Defect, geometry: ProjectionGeometry) -> Box | None:
    """Tight pixel box of the defect footprint clipped to the image, or None if empty."""
    cx, cy, _ = defect.center
    a, b, _ = defect.semi_axes
    u0, v0 = geometry.to_pixels(cx - a, cy - b)
    u1, v1 = geometry.to_pixels(cx + a, cy + b)
    x0 = max(math.floor(u0), 0)
    y0 = max(math.floor(v0), 0)
    x1 = min(math.ceil(u1), geometry.width)
    y1 = min(math.ceil(v1), geometry.height)
    if x0 >= x1 or y0 >= y1:
        return None
    return Box(x0, y0, x1, y1)


def footprint_in_view(defect: Defect, geometry: ProjectionGeometry) -> bool:
    return defect_box(defect, geometry) is not None


def render(
    phantom: WheelPhantom,
    defects: Sequence[Defect],
    geometry: ProjectionGeometry,
    profile: RenderProfile,
    seed: int,
) -> tuple[GreyImage, list[Box]]:
    """Project the phantom and return the quantized image plus ground-truth boxes.

    The spoke phase is perturbed by ``Normal(0, jitter_sigma)`` before ray
    casting; the same generator then supplies the additive detector noise.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    jitter = rng.normal(0.0, profile.jitter_sigma)
    scene = replace(phantom, spoke_phase=phantom.spoke_phase + jitter)
    signal = pre_noise_intensity(optical_depth_map(scene, defects, geometry), profile)
    if profile.noise_sigma > 0:
        signal = signal + rng.normal(0.0, profile.noise_sigma, size=signal.shape)
    image = GreyImage(geometry.width, geometry.height, quantize(signal))
    boxes = [b for b in (defect_box(d, geometry) for d in defects) if b is not None]
    return image, boxes
