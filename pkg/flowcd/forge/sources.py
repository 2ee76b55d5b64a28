"""Where backgrounds and cutouts come from.

Manifest backed sources read local copies of a flow dataset (FlyingChairs
style ``t0``/``t1``/``flow`` triples) and a segmentation dataset (VOC style
``image``/``segmentation`` pairs) from JSON manifests::

    {"pairs": [{"id": "00001", "t0": "00001_img1.ppm", "t1": "00001_img2.ppm",
                "flow": "00001_flow.flo"}]}
    {"images": [{"id": "2007_000032", "image": "JPEGImages/2007_000032.jpg",
                 "segmentation": "SegmentationClass/2007_000032.png"}]}

Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from abc import ABCMeta, abstractmethod
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from flowcd import files
from flowcd.config import ForgeConfig
from flowcd.exceptions import FormatError, ValidationError
from flowcd.forge.base import ObjectCutout, extract_cutouts


@dataclasses.dataclass(frozen=True, eq=False)
class BackgroundPair:
    """Two frames and the flow taking ``t0`` pixels to their ``t1`` positions."""

    id: str
    t0: np.ndarray
    t1: np.ndarray
    flow: np.ndarray


class BackgroundSource(metaclass=ABCMeta):
    """Indexable sequence of background pairs, read in order."""

    @abstractmethod
    def __len__(self) -> int:
        """Number of pairs."""

    @abstractmethod
    def __getitem__(self, index: int) -> BackgroundPair:
        """Load pair ``index``."""


class CutoutPool(metaclass=ABCMeta):
    """Indexable collection of object cutouts to paste."""

    @abstractmethod
    def __len__(self) -> int:
        """Number of cutouts."""

    @abstractmethod
    def __getitem__(self, index: int) -> ObjectCutout:
        """Return cutout ``index``."""


def _read_source_manifest(path: str, key: str, fields: Tuple[str, ...]) -> List[Dict[str, str]]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Source manifest {path} does not exist")
    try:
        with open(path) as f:
            items = json.load(f)[key]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: expected a JSON object with a {key!r} list: {e}")
    root = os.path.dirname(os.path.abspath(path))
    resolved = []
    for i, item in enumerate(items):
        missing = [f for f in fields if f not in item]
        if missing:
            raise FormatError(f"{path}: {key}[{i}] lacks {', '.join(missing)}")
        entry = {"id": str(item.get("id", i))}
        for f in fields:
            entry[f] = os.path.join(root, item[f])
            if not os.path.exists(entry[f]):
                raise FileNotFoundError(f"{path}: source file {entry[f]} does not exist")
        resolved.append(entry)
    return resolved


class ManifestBackgrounds(BackgroundSource):
    def __init__(self, manifest_path: str, size: Optional[Tuple[int, int]] = None):
        self.path = manifest_path
        self.pairs = _read_source_manifest(manifest_path, "pairs", ("t0", "t1", "flow"))
        # (W, H) every pair must have.
        self.size = size

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, index: int) -> BackgroundPair:
        entry = self.pairs[index]
        t0 = files.read_image(entry["t0"])
        t1 = files.read_image(entry["t1"])
        flow = files.read_flo(entry["flow"]).data
        if self.size is not None and t0.shape[:2] != (self.size[1], self.size[0]):
            raise ValidationError(
                f"Background {entry['t0']} is {t0.shape[1]}x{t0.shape[0]}, "
                f"expected {self.size[0]}x{self.size[1]}"
            )
        return BackgroundPair(entry["id"], t0, t1, flow)


class ManifestCutoutPool(CutoutPool):
    """Every region of the requested classes across a segmentation dataset.

    Regions smaller than ``min_pixels`` (slivers, occluded fragments) are dropped.
    """

    def __init__(self, manifest_path: str, classes: Iterable[int], min_pixels: int = 0):
        logger = logging.getLogger("flowcd")
        self.path = manifest_path
        self.classes = tuple(classes)
        self.cutouts: List[ObjectCutout] = []
        images = _read_source_manifest(manifest_path, "images", ("image", "segmentation"))
        for entry in images:
            image = files.read_image(entry["image"])
            seg = files.read_segmentation(entry["segmentation"])
            found = extract_cutouts(image, seg, self.classes)
            kept = [c for c in found if c.alpha.sum() >= min_pixels]
            logger.debug(f"{entry['id']}: kept {len(kept)} of {len(found)} regions")
            self.cutouts.extend(kept)
        logger.info(f"Loaded {len(self.cutouts)} cutouts from {len(images)} images")

    def __len__(self):
        return len(self.cutouts)

    def __getitem__(self, index: int) -> ObjectCutout:
        return self.cutouts[index]


def get_sources(cfg: ForgeConfig, split: str = "train") -> Tuple[BackgroundSource, CutoutPool]:
    """Manifest backed sources where configured, procedural ones otherwise."""
    from flowcd.forge import procedural

    for path in (cfg.backgrounds, cfg.cutouts):
        if path and not os.path.isfile(path):
            raise ValidationError(f"Configured source manifest {path} does not exist")
    count = cfg.samples if split == "train" else cfg.test_samples
    if cfg.backgrounds:
        backgrounds = ManifestBackgrounds(cfg.backgrounds, size=cfg.output_size)
    else:
        backgrounds = procedural.ProceduralBackgrounds(
            count, size=cfg.output_size, seed=cfg.seed, split=split
        )
    if cfg.cutouts:
        cutouts = ManifestCutoutPool(cfg.cutouts, cfg.classes, cfg.min_cutout_pixels)
    else:
        cutouts = procedural.ProceduralCutoutPool(
            size=cfg.output_size, classes=cfg.classes, seed=cfg.seed
        )
    return backgrounds, cutouts
