"""Procedural labeled shape images: the desk-scale stand-in for a real dataset.

Eight shape classes rendered onto a 16x16 grayscale canvas in [-1, 1], with
per-sample jitter in position, scale, and intensity. Every sample is a pure
function of (seed, index), so regeneration is bit-exact and generation could
be sharded by index without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ndgrad import Array, Rng

CLASS_NAMES = ("disk", "square", "cross", "h_stripes", "v_stripes", "ring", "triangle", "checker")


@dataclass(frozen=True)
class ShapeSample:
    image: Array  # [H, W, 1] in [-1, 1]
    label: int


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 16
    classes: int = 8

    def __post_init__(self):
        if not 1 <= self.classes <= len(CLASS_NAMES):
            raise ConfigError(f"classes must be in 1..{len(CLASS_NAMES)}")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")


def _render(label: int, size: int, rng: Rng) -> np.ndarray:
    """Rasterize one jittered shape on a [-1, 1] canvas."""
    h = size
    cx = float(rng.uniform((), 0.35, 0.65)) * h
    cy = float(rng.uniform((), 0.35, 0.65)) * h
    r = float(rng.uniform((), 0.22, 0.34)) * h
    fg = float(rng.uniform((), 0.55, 1.0))
    bg = -1.0

    yy, xx = np.mgrid[0:h, 0:h].astype(np.float32) + 0.5
    dx, dy = xx - cx, yy - cy
    name = CLASS_NAMES[label]

    if name == "disk":
        mask = dx * dx + dy * dy <= r * r
    elif name == "square":
        mask = (np.abs(dx) <= r * 0.9) & (np.abs(dy) <= r * 0.9)
    elif name == "cross":
        w = max(1.0, r * 0.35)
        mask = ((np.abs(dx) <= w) | (np.abs(dy) <= w)) & (np.abs(dx) <= r) & (np.abs(dy) <= r)
    elif name == "h_stripes":
        period = int(rng.integers((), 2, 4))
        phase = int(rng.integers((), 0, period))
        mask = ((yy.astype(np.int32) + phase) // period) % 2 == 0
    elif name == "v_stripes":
        period = int(rng.integers((), 2, 4))
        phase = int(rng.integers((), 0, period))
        mask = ((xx.astype(np.int32) + phase) // period) % 2 == 0
    elif name == "ring":
        rad2 = dx * dx + dy * dy
        mask = (rad2 <= r * r) & (rad2 >= (r * 0.55) ** 2)
    elif name == "triangle":
        # upright triangle: inside if below the apex lines and above the base
        mask = (dy >= -r) & (dy <= r * 0.8) & (np.abs(dx) <= (dy + r) * 0.6)
    elif name == "checker":
        cell = int(rng.integers((), 2, 4))
        mask = ((xx.astype(np.int32) // cell) + (yy.astype(np.int32) // cell)) % 2 == 0
    else:  # pragma: no cover
        raise ConfigError(f"unknown class {label}")

    img = np.full((h, h), bg, np.float32)
    img[mask] = fg
    noise = rng.normal((h, h)) * np.float32(0.03)
    img = np.clip(img + noise, -1.0, 1.0)
    return img[..., None].astype(np.float32)


def gen(seed: int, n: int, cfg: DataConfig = DataConfig()) -> list[ShapeSample]:
    """Generate n samples, class-balanced within rounding, deterministic per index."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    root = Rng(seed).split("synthdata")
    out = []
    for i in range(n):
        label = i % cfg.classes
        out.append(ShapeSample(_render(label, cfg.image_size, root.split(i)), label))
    return out


def split(samples: list[ShapeSample], holdout_fraction: float, seed: int = 0) -> tuple[list[ShapeSample], list[ShapeSample]]:
    """Deterministic disjoint train/holdout split by index hash.

    Indices are ranked by a seeded hash and the top round(n*fraction) go to
    the holdout, so the sizes are exact and the union preserves the multiset.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigError("holdout_fraction must be in (0, 1)")
    n = len(samples)
    k = int(round(n * holdout_fraction))
    rng = Rng(seed).split("split")
    keys = [(rng.split(i).uniform(()).item(), i) for i in range(n)]
    keys.sort()
    holdout_idx = {i for _, i in keys[:k]}
    train = [s for i, s in enumerate(samples) if i not in holdout_idx]
    holdout = [s for i, s in enumerate(samples) if i in holdout_idx]
    return train, holdout


def as_arrays(samples: list[ShapeSample]) -> tuple[Array, np.ndarray]:
    """Stack into (images [N, H, W, 1] float32, labels [N] int64)."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    labels = np.array([s.label for s in samples], np.int64)
    return images, labels
