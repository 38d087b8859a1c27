"""Procedural RGB-D scenes: a sloped background plane with occluding objects.

Depth is recoverable from the image through several cues at once: shading
falls off with distance, object footprints shrink with distance, and the
background plane recedes toward the top of the frame.  Surface albedo is
randomised so no single cue is sufficient on its own.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Tuple

import numpy as np

from ..core.rng import Rng
from ..errors import ConfigError


@dataclass
class SceneSpec:
    seed: int = 0
    height: int = 96
    width: int = 96
    objects: Tuple[int, int] = (2, 6)
    d_min: float = 0.25
    d_max: float = 10.0
    noise: float = 0.02
    n_train: int = 400
    n_val: int = 64

    def __post_init__(self):
        self.objects = tuple(int(v) for v in self.objects)

    def validate(self) -> "SceneSpec":
        if self.height < 32 or self.width < 32 or self.height % 32 or self.width % 32:
            raise ConfigError(f"image size {self.height}x{self.width} must be a positive multiple of 32")
        if not 0 < self.d_min < self.d_max:
            raise ConfigError("need 0 < d_min < d_max")
        lo, hi = self.objects
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad object count range {self.objects}")
        if self.noise < 0:
            raise ConfigError("noise sigma must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = list(self.objects)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class DepthSample(NamedTuple):
    image: np.ndarray   # 3 x H x W float32 in [0, 1]
    depth: np.ndarray   # 1 x H x W float32 metres
    mask: np.ndarray    # 1 x H x W bool
    meta: dict


def shade(depth: np.ndarray, d_max: float) -> np.ndarray:
    """Brightness falloff, strictly decreasing in depth."""
    return 1.0 / (1.0 + 2.5 * depth / d_max)


def generate_scene(spec: SceneSpec, index: int) -> DepthSample:
    if index < 0:
        raise ConfigError("scene index must be non-negative")
    spec.validate()
    g = Rng(spec.seed).stream("scene", index)
    h, w = spec.height, spec.width
    span = spec.d_max - spec.d_min
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yn, xn = yy / (h - 1), xx / (w - 1) - 0.5

    # background plane: far at the top row, near at the bottom row
    d_top = spec.d_min + span * g.uniform(0.6, 0.95)
    d_bottom = spec.d_min + span * g.uniform(0.08, 0.3)
    tilt = g.uniform(-0.15, 0.15) * (d_top - d_bottom)
    depth = d_top + (d_bottom - d_top) * yn + tilt * xn
    depth = np.clip(depth, spec.d_min, spec.d_max)
    surface = np.zeros((h, w), dtype=np.int32)

    k = int(g.integers(spec.objects[0], spec.objects[1] + 1))
    objects = []
    for _ in range(k):
        kind = "rect" if g.random() < 0.5 else "ellipse"
        cy, cx = g.uniform(0.1, 0.9) * h, g.uniform(0.1, 0.9) * w
        size = g.uniform(0.5, 1.4, size=2)
        rel = g.uniform(0.1, 0.85)
        objects.append((kind, cy, cx, size, rel))
    # depth is resolved after footprints are known so objects sit in front of the plane
    placed = []
    for kind, cy, cx, size, rel in objects:
        focal = 0.3 * h
        d_guess = spec.d_min + rel * span * 0.6
        hy = np.clip(size[0] * focal / d_guess, 3, h / 2)
        hx = np.clip(size[1] * focal / d_guess, 3, w / 2)
        if kind == "rect":
            inside = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        else:
            inside = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
        if not inside.any():
            continue
        behind = depth[inside].min()
        d_obj = float(np.clip(d_guess, spec.d_min, max(spec.d_min, behind - 0.05 * span)))
        placed.append((d_obj, kind, inside))
    placed.sort(key=lambda t: -t[0])  # painter's order: far to near
    albedo = [g.uniform(0.55, 1.0, size=3)]
    for sid, (d_obj, kind, inside) in enumerate(placed, start=1):
        depth = np.where(inside, d_obj, depth)
        surface = np.where(inside, sid, surface)
        albedo.append(g.uniform(0.55, 1.0, size=3))

    albedo = np.stack(albedo)                                  # (k+1) x 3
    colour = albedo[surface].transpose(2, 0, 1)               # 3 x H x W
    image = colour * shade(depth, spec.d_max)[None]
    if spec.noise > 0:
        image = image + g.normal(0.0, spec.noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    depth = np.clip(depth, spec.d_min, spec.d_max)
    meta = {"index": int(index), "n_objects": len(placed),
            "object_depths": [round(float(p[0]), 6) for p in placed]}
    return DepthSample(image.astype(np.float32), depth[None].astype(np.float32),
                       np.ones((1, h, w), dtype=bool), meta)
