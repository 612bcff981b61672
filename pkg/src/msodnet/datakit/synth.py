"""Synthetic multi-object scenes: saturated shapes over a muted textured background."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .components import count_components

SHAPES = ("disc", "rect", "triangle")
MAX_ATTEMPTS = 1000
MAX_OBJECTS = 19


class SceneError(RuntimeError):
    """The requested objects could not be placed."""


@dataclass
class SceneSpec:
    size: tuple = (64, 64)
    n_objects: int = 3
    shapes: tuple = SHAPES
    radius: Optional[tuple] = None  # (min, max) in pixels; derived from size and n when None
    margin: int = 2
    min_area: int = 10
    texture_seed: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.n_objects <= MAX_OBJECTS:
            raise ValueError(f"n_objects must lie in [0, {MAX_OBJECTS}], got {self.n_objects}")
        bad = set(self.shapes) - set(SHAPES)
        if bad:
            raise ValueError(f"unknown shapes {sorted(bad)}")

    def radius_range(self) -> tuple:
        if self.radius is not None:
            return tuple(self.radius)
        side = min(self.size)
        # keep total object area near a quarter of the canvas
        hi = min(0.16 * side, side * math.sqrt(0.25 / (math.pi * max(self.n_objects, 1))))
        lo = max(2.5, 0.6 * hi)
        return lo, max(lo, hi)


@dataclass
class SceneObject:
    shape: str
    center: tuple
    radius: float
    angle: float
    aspect: float
    color: tuple
    mask: np.ndarray = field(repr=False)


def _raster(shape: str, cy: float, cx: float, r: float, angle: float, aspect: float, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if shape == "disc":
        return dy * dy + dx * dx <= r * r
    c, s = math.cos(angle), math.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    if shape == "rect":
        return (np.abs(u) <= r) & (np.abs(v) <= r * aspect)
    # triangle: vertices on the circle of radius r
    verts = [(r * math.cos(angle + k * 2 * math.pi / 3), r * math.sin(angle + k * 2 * math.pi / 3)) for k in range(3)]
    inside = np.ones((H, W), dtype=bool)
    for k in range(3):
        (x0, y0), (x1, y1) = verts[k], verts[(k + 1) % 3]
        # vertices run counter-clockwise, so the interior is on the left of each edge
        inside &= (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0) >= 0
    return inside


def _grow(mask: np.ndarray, r: int) -> np.ndarray:
    if r <= 0:
        return mask
    H, W = mask.shape
    p = np.pad(mask, r)
    out = np.zeros_like(mask)
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            out |= p[dy : dy + H, dx : dx + W]
    return out


def _vivid(rng: np.random.Generator) -> tuple:
    hue = rng.uniform(0, 6)
    sat = rng.uniform(0.75, 1.0)
    val = rng.uniform(0.8, 1.0)
    i = int(hue) % 6
    f = hue - int(hue)
    p, q, t = val * (1 - sat), val * (1 - sat * f), val * (1 - sat * (1 - f))
    return [(val, t, p), (q, val, p), (p, val, t), (p, q, val), (t, p, val), (val, p, q)][i]


def place_objects(spec: SceneSpec, rng: np.random.Generator) -> list:
    H, W = spec.size
    lo, hi = spec.radius_range()
    occupied = np.zeros((H, W), dtype=bool)
    objects = []
    for k in range(spec.n_objects):
        for _ in range(MAX_ATTEMPTS):
            shape = spec.shapes[rng.integers(len(spec.shapes))]
            r = rng.uniform(lo, hi)
            cy, cx = rng.uniform(r, H - 1 - r), rng.uniform(r, W - 1 - r)
            angle = rng.uniform(0, 2 * math.pi)
            aspect = rng.uniform(0.6, 1.0)
            m = _raster(shape, cy, cx, r, angle, aspect, H, W)
            if m.sum() < spec.min_area or (m & _grow(occupied, spec.margin)).any():
                continue
            if count_components(m, 8, 1).count != 1:
                continue
            occupied |= m
            objects.append(SceneObject(shape, (cy, cx), r, angle, aspect, _vivid(rng), m))
            break
        else:
            raise SceneError(
                f"could not place object {k + 1} of {spec.n_objects} on a {H}x{W} canvas "
                f"after {MAX_ATTEMPTS} attempts"
            )
    return objects


def _texture(H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.25, 0.55) + rng.uniform(-0.05, 0.05, size=3)
    coarse = rng.normal(0.0, 0.08, size=(3, 5, 5))
    ys = np.linspace(0, 4, H)
    xs = np.linspace(0, 4, W)
    y0 = np.minimum(ys.astype(int), 3)
    x0 = np.minimum(xs.astype(int), 3)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    smooth = (
        coarse[:, y0][:, :, x0] * (1 - fy) * (1 - fx)
        + coarse[:, y0 + 1][:, :, x0] * fy * (1 - fx)
        + coarse[:, y0][:, :, x0 + 1] * (1 - fy) * fx
        + coarse[:, y0 + 1][:, :, x0 + 1] * fy * fx
    )
    grain = rng.normal(0.0, 0.03, size=(3, H, W))
    return (base[:, None, None] + smooth + grain).transpose(1, 2, 0)


def synth_scene(spec: SceneSpec, seed: int) -> tuple:
    """Render a scene. Returns (H×W×3 uint8 image, H×W uint8 mask in {0,1})."""
    H, W = spec.size
    rng = np.random.default_rng(seed)
    objects = place_objects(spec, rng)
    tex_seed = spec.texture_seed if spec.texture_seed is not None else int(rng.integers(2**31))
    img = _texture(H, W, np.random.default_rng(tex_seed))
    mask = np.zeros((H, W), dtype=bool)
    for obj in objects:
        shade = rng.normal(0.0, 0.02, size=(H, W, 1))
        img = np.where(obj.mask[..., None], np.asarray(obj.color) + shade, img)
        mask |= obj.mask
    img8 = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return img8, mask.astype(np.uint8)
