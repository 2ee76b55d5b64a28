"""On-disk layout of forged datasets.

A split directory holds four files per sample plus ``manifest.json``::

    <id>_t0.png  <id>_t1.png  <id>_flow.flo  <id>_change.png

The manifest lists every entry with paths relative to its own directory and
the `ForgeConfig` that generated the split, so the directory can be moved.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from typing import Any, Dict, List, Optional

from flowcd import async_utils, core, files
from flowcd.config import ForgeConfig
from flowcd.exceptions import FormatError, ValidationError
from flowcd.forge.base import SPLITS, composite_sample, sample_rng
from flowcd.forge.sources import BackgroundSource, CutoutPool
from flowcd.utils import EnvVarConstants

MANIFEST_NAME = "manifest.json"
SAMPLE_FILES = {
    "t0": "{}_t0.png",
    "t1": "{}_t1.png",
    "flow": "{}_flow.flo",
    "change": "{}_change.png",
}


def sample_paths(sample_id: str) -> Dict[str, str]:
    return {k: v.format(sample_id) for k, v in SAMPLE_FILES.items()}


def write_sample(directory: str, sample: core.BitemporalSample) -> Dict[str, str]:
    """Write the four files of ``sample`` and return their names relative to ``directory``."""
    os.makedirs(directory, exist_ok=True)
    names = sample_paths(sample.id)
    files.write_image(os.path.join(directory, names["t0"]), sample.t0.data)
    files.write_image(os.path.join(directory, names["t1"]), sample.t1.data)
    files.write_flo(os.path.join(directory, names["flow"]), sample.flow_label)
    files.write_mask(os.path.join(directory, names["change"]), sample.change_label.data)
    return names


def read_sample(
    directory: str, sample_id: str, paths: Optional[Dict[str, str]] = None
) -> core.BitemporalSample:
    paths = paths or sample_paths(sample_id)
    full = {k: os.path.join(directory, v) for k, v in paths.items()}
    change = files.read_mask(full["change"])
    if not core.is_binary(change):
        raise FormatError(f"{full['change']}: change mask is not binary")
    return core.BitemporalSample(
        t0=core.Image(files.read_image(full["t0"])),
        t1=core.Image(files.read_image(full["t1"])),
        flow_label=files.read_flo(full["flow"]),
        change_label=core.ChangeMask(change),
        id=sample_id,
    )


@dataclasses.dataclass
class ManifestEntry:
    id: str
    t0: str
    t1: str
    flow: str
    change: str
    paste_count: int = 0

    @property
    def paths(self) -> Dict[str, str]:
        return {k: getattr(self, k) for k in SAMPLE_FILES}


@dataclasses.dataclass
class DatasetManifest:
    """Index of one forged split."""

    split: str
    entries: List[ManifestEntry]
    config: Dict[str, Any] = dataclasses.field(default_factory=dict)
    root: str = "."

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise FormatError(f"Manifest has duplicate ids: {', '.join(dupes)}")

    def __len__(self):
        return len(self.entries)

    @property
    def counts(self) -> Dict[str, int]:
        return {
            "samples": len(self.entries),
            "pastes": sum(e.paste_count for e in self.entries),
        }

    @property
    def ids(self) -> List[str]:
        return [e.id for e in self.entries]

    def read(self, index: int) -> core.BitemporalSample:
        entry = self.entries[index]
        return read_sample(self.root, entry.id, entry.paths)

    def serialize(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "counts": self.counts,
            "config": self.config,
            "entries": [dataclasses.asdict(e) for e in self.entries],
        }

    def save(self, path: Optional[str] = None) -> str:
        path = path or os.path.join(self.root, MANIFEST_NAME)
        with open(path, "w") as f:
            json.dump(self.serialize(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    @classmethod
    def load(cls, path: str) -> DatasetManifest:
        """Read a manifest, every referenced file must exist."""
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST_NAME)
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: manifest is not valid JSON: {e}")
        try:
            entries = [ManifestEntry(**e) for e in d["entries"]]
            manifest = cls(
                split=d["split"],
                entries=entries,
                config=d.get("config", {}),
                root=os.path.dirname(os.path.abspath(path)),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"{path}: malformed manifest: {e}")
        for entry in manifest.entries:
            for p in entry.paths.values():
                full = os.path.join(manifest.root, p)
                if not os.path.exists(full):
                    raise FileNotFoundError(f"{path}: referenced file {full} does not exist")
        return manifest


def forge_sample(
    backgrounds: BackgroundSource,
    cutouts: CutoutPool,
    cfg: ForgeConfig,
    index: int,
    split: str = "train",
) -> core.BitemporalSample:
    """Build sample ``index`` of a split from its own random stream."""
    rng = sample_rng(cfg.seed, index, split)
    pair = backgrounds[index]
    lo, hi = cfg.paste_count_range
    count = int(rng.integers(lo, hi + 1))
    if count and not len(cutouts):
        raise ValidationError("The cutout pool is empty")
    chosen = [cutouts[int(rng.integers(0, len(cutouts)))] for _ in range(count)]
    return composite_sample(
        core.Image(pair.t0),
        core.Image(pair.t1),
        core.FlowField(pair.flow),
        chosen,
        cfg,
        rng,
        sample_id=f"{split}_{index:05d}",
    )


def paste_count(cfg: ForgeConfig, index: int, split: str = "train") -> int:
    """The number of pastes sample ``index`` receives, replayed from its stream."""
    lo, hi = cfg.paste_count_range
    return int(sample_rng(cfg.seed, index, split).integers(lo, hi + 1))


def forge_dataset(
    backgrounds: BackgroundSource,
    cutouts: CutoutPool,
    cfg: ForgeConfig,
    out_dir: str,
    split: str = "train",
    max_concurrency: Optional[int] = None,
) -> DatasetManifest:
    """Generate one sample per background pair, in order, and write the split.

    Samples are generated and written concurrently; each has its own random
    stream so the bytes on disk do not depend on scheduling.
    """
    logger = logging.getLogger("flowcd")
    if not len(backgrounds):
        raise ValidationError("The background source is empty")
    if cfg.paste_count_range[1] > 0 and not len(cutouts):
        raise ValidationError("The cutout pool is empty")
    if max_concurrency is None:
        max_concurrency = EnvVarConstants.MAX_CONCURRENCY
    os.makedirs(out_dir, exist_ok=True)
    logger.info(f"Forging {len(backgrounds)} {split} samples into {out_dir}")

    def _build(index: int) -> ManifestEntry:
        sample = forge_sample(backgrounds, cutouts, cfg, index, split)
        names = write_sample(out_dir, sample)
        logger.debug(f"Wrote {sample.id}")
        return ManifestEntry(
            id=sample.id, paste_count=paste_count(cfg, index, split), **names
        )

    entries = async_utils.map_indexed(_build, len(backgrounds), max_concurrency)
    manifest = DatasetManifest(
        split=split,
        entries=entries,
        config=cfg.serialize(),
        root=out_dir,
    )
    manifest.save()
    changed = sum(1 for e in manifest.entries if e.paste_count)
    logger.info(f"Forged {len(manifest)} samples, {changed} with pasted objects")
    return manifest
