"""Synthetic change dataset generation."""

from flowcd.forge.base import (
    ObjectCutout,
    composite_sample,
    extract_cutouts,
    sample_rng,
    transform_cutout,
)
from flowcd.forge.dataset import (
    DatasetManifest,
    ManifestEntry,
    forge_dataset,
    read_sample,
    write_sample,
)
from flowcd.forge.sources import (
    BackgroundPair,
    BackgroundSource,
    CutoutPool,
    ManifestBackgrounds,
    ManifestCutoutPool,
    get_sources,
)
