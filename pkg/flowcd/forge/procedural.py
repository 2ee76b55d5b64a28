"""Procedural backgrounds and cutouts.

Stand-ins for local FlyingChairs / VOC copies: textured frames whose motion is
a global translation plus one independently moving ellipse, with the exact
flow known by construction, and random blobs tagged with VOC class names.
"""

import math
from typing import Iterable, Tuple

import numpy as np
import scipy.ndimage

from flowcd import core
from flowcd.forge.base import SPLITS, ObjectCutout, extract_cutouts
from flowcd.forge.sources import BackgroundPair, BackgroundSource, CutoutPool

# Spawn keys kept apart from the per-sample compositing streams.
_BACKGROUND_STREAM = 10
_CUTOUT_STREAM = 20


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def smooth_texture(
    rng: np.random.Generator,
    height: int,
    width: int,
    channels: int = 3,
    sigmas: Tuple[float, ...] = (1.0, 3.0, 8.0),
) -> np.ndarray:
    """Multi scale smoothed noise in [0.1, 0.9]."""
    tex = np.zeros((height, width, channels))
    for sigma in sigmas:
        noise = rng.standard_normal((height, width, channels))
        tex += sigma * scipy.ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return 0.1 + 0.8 * tex


def _sample(tex: np.ndarray, rows: np.ndarray, cols: np.ndarray, mode: str = "nearest") -> np.ndarray:
    return np.stack(
        [
            scipy.ndimage.map_coordinates(tex[..., c], [rows, cols], order=1, mode=mode)
            for c in range(tex.shape[-1])
        ],
        axis=-1,
    )


class ProceduralBackgrounds(BackgroundSource):
    """``count`` synthetic pairs of size ``size`` (W, H).

    ``t1`` is a texture with an elliptical object on top. ``t0`` sees the
    texture shifted by a global translation and the object displaced on its
    own, so ``t0(x) = t1(x + flow(x))`` wherever ``x + flow(x)`` is visible
    in ``t1``.
    """

    def __init__(self, count: int, size: Tuple[int, int] = (512, 384), seed: int = 0, split: str = "train"):
        self.count = count
        self.width, self.height = size
        self.seed = seed
        self.split_key = SPLITS.index(split)
        self.max_shift = max(2.0, min(self.height, self.width) / 16)

    def __len__(self):
        return self.count

    def __getitem__(self, index: int) -> BackgroundPair:
        if not 0 <= index < self.count:
            raise IndexError(index)
        rng = _stream(self.seed, _BACKGROUND_STREAM + self.split_key, index)
        height, width, shift = self.height, self.width, self.max_shift
        margin = int(math.ceil(shift)) + 2
        canvas = smooth_texture(rng, height + 2 * margin, width + 2 * margin)
        obj_tex = smooth_texture(rng, height, width, sigmas=(1.0, 2.0))
        obj_tex = np.clip(obj_tex * rng.uniform(0.5, 1.5, size=3), 0.0, 1.0)

        # (dy, dx) of the background and of the object.
        g = rng.uniform(-shift, shift, size=2)
        d = rng.uniform(-2 * shift, 2 * shift, size=2)
        base = min(height, width)
        radii = rng.uniform(base / 10, base / 5, size=2)
        center = np.array(
            [rng.uniform(radii[0], height - radii[0]), rng.uniform(radii[1], width - radii[1])]
        )

        rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        rows, cols = rows.astype(np.float64), cols.astype(np.float64)

        def in_object(r, c):
            return ((r - center[0]) / radii[0]) ** 2 + ((c - center[1]) / radii[1]) ** 2 <= 1.0

        def object_color(r, c):
            return _sample(obj_tex, r - center[0] + height / 2, c - center[1] + width / 2, mode="wrap")

        t1 = canvas[margin : margin + height, margin : margin + width].copy()
        mask1 = in_object(rows, cols)
        t1[mask1] = object_color(rows, cols)[mask1]

        # Object pixels of t0 are those landing on the object in t1.
        mask0 = in_object(rows + d[0], cols + d[1])
        t0 = _sample(canvas, rows + g[0] + margin, cols + g[1] + margin)
        t0[mask0] = object_color(rows + d[0], cols + d[1])[mask0]

        flow = np.empty((height, width, 2), dtype=np.float32)
        flow[..., 0] = np.where(mask0, d[1], g[1])
        flow[..., 1] = np.where(mask0, d[0], g[0])
        return BackgroundPair(
            id=f"procedural_{index:05d}",
            t0=core.quantize(t0),
            t1=core.quantize(t1),
            flow=flow,
        )


class ProceduralCutoutPool(CutoutPool):
    """``count`` random blobs, each tagged with one of ``classes``."""

    def __init__(
        self,
        size: Tuple[int, int] = (512, 384),
        classes: Iterable[int] = (15,),
        seed: int = 0,
        count: int = 16,
    ):
        classes = sorted(set(int(c) for c in classes))
        base = min(size) / 8
        self.cutouts = []
        for i in range(count):
            rng = _stream(seed, _CUTOUT_STREAM, i)
            label = classes[int(rng.integers(0, len(classes)))]
            radii = rng.uniform(0.6 * base, 1.4 * base, size=2)
            side = 2 * int(math.ceil(radii.max())) + 5
            rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
            mid = (side - 1) / 2
            dist = ((rows - mid) / radii[0]) ** 2 + ((cols - mid) / radii[1]) ** 2
            wobble = scipy.ndimage.gaussian_filter(rng.standard_normal((side, side)), 2.0)
            wobble *= 0.3 / max(np.abs(wobble).max(), 1e-12)
            seg = np.where(dist + wobble <= 1.0, label, 0)
            image = smooth_texture(rng, side, side, sigmas=(1.0, 2.0))
            image = np.clip(image * rng.uniform(0.3, 1.7, size=3), 0.0, 1.0)
            found = extract_cutouts(image, seg, [label])
            self.cutouts.append(max(found, key=lambda c: float(c.alpha.sum())))

    def __len__(self):
        return len(self.cutouts)

    def __getitem__(self, index: int) -> ObjectCutout:
        return self.cutouts[index]
