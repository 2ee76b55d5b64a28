"""Torch views of forged datasets."""

import random
from typing import Dict, Optional, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from flowcd import core
from flowcd.config import RunConfig
from flowcd.exceptions import ValidationError
from flowcd.forge.dataset import DatasetManifest


def image_tensor(data: np.ndarray) -> torch.Tensor:
    """(H, W, C) array to a (C, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(data, -1, 0), dtype=np.float32))


def sample_tensors(sample: core.BitemporalSample) -> Dict[str, Union[str, torch.Tensor]]:
    return {
        "id": sample.id,
        "t0": image_tensor(sample.t0.data),
        "t1": image_tensor(sample.t1.data),
        "flow": image_tensor(sample.flow_label.data),
        "change": torch.from_numpy(sample.change_label.data.astype(np.float32))[None],
    }


def pair_batch(t0: np.ndarray, t1: np.ndarray, device: Union[str, torch.device] = "cpu"):
    """A batch of one image pair for inference."""
    return image_tensor(t0)[None].to(device), image_tensor(t1)[None].to(device)


def flow_array(flow: torch.Tensor) -> np.ndarray:
    """(2, H, W) tensor to an (H, W, 2) array."""
    return np.ascontiguousarray(np.moveaxis(flow.detach().cpu().numpy(), 0, -1), dtype=np.float32)


class ManifestDataset(Dataset):
    """Samples of a `DatasetManifest`, read from disk on access."""

    def __init__(self, manifest: DatasetManifest):
        if not len(manifest):
            raise ValidationError(f"Manifest for split {manifest.split!r} has no samples")
        self.manifest = manifest

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, index: int):
        return sample_tensors(self.manifest.read(index))


def _seed_worker(worker_id: int):
    seed = torch.initial_seed() % 2**32
    np.random.seed(seed)
    random.seed(seed)


def make_loader(
    manifest: DatasetManifest,
    cfg: RunConfig,
    shuffle: bool = True,
    batch_size: Optional[int] = None,
) -> DataLoader:
    """Loader with a generator seeded from ``cfg.seed`` so batch order is reproducible."""
    generator = torch.Generator()
    generator.manual_seed(cfg.seed)
    return DataLoader(
        ManifestDataset(manifest),
        batch_size=batch_size or cfg.batch_size,
        shuffle=shuffle,
        num_workers=cfg.num_workers,
        worker_init_fn=_seed_worker,
        generator=generator,
    )
