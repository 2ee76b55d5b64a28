"""Inference timing."""

import dataclasses
import json
import logging
import time
from typing import List, Optional, Tuple

import numpy as np
import torch

from flowcd.exceptions import ValidationError
from flowcd.models import FlowCDNet


@dataclasses.dataclass
class BenchReport:
    mean_seconds: float
    fps: float
    pairs: int
    warmup: int
    device: str
    size: Tuple[int, int]
    times: List[float] = dataclasses.field(default_factory=list)

    def to_dict(self):
        return dataclasses.asdict(self)

    def write_json(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def _sync(device: torch.device):
    if device.type == "cuda":
        torch.cuda.synchronize(device)


def bench_model(
    model: FlowCDNet,
    n_pairs: int = 10,
    warmup: int = 2,
    size: Tuple[int, int] = (64, 64),
    device="cpu",
    seed: int = 0,
) -> BenchReport:
    """Time ``n_pairs`` forward passes of one (H, W) pair after ``warmup`` untimed ones."""
    if n_pairs < 1:
        raise ValidationError(f"n_pairs must be >= 1, got {n_pairs}")
    if warmup < 0:
        raise ValidationError(f"warmup must be >= 0, got {warmup}")
    device = torch.device(device)
    generator = torch.Generator().manual_seed(seed)
    t0 = torch.rand(1, 3, *size, generator=generator).to(device)
    t1 = torch.rand(1, 3, *size, generator=generator).to(device)
    model = model.to(device).eval()
    times = []
    with torch.no_grad():
        for _ in range(warmup):
            model(t0, t1)
        _sync(device)
        for _ in range(n_pairs):
            start = time.perf_counter()
            model(t0, t1)
            _sync(device)
            times.append(time.perf_counter() - start)
    mean = float(np.mean(times))
    report = BenchReport(mean, 1.0 / mean, n_pairs, warmup, str(device), tuple(size), times)
    logging.getLogger("flowcd").info(
        f"{n_pairs} pairs of {size[0]}x{size[1]} on {device}: {mean:.4f} s/pair, {report.fps:.2f} FPS"
    )
    return report


def bench(
    ckpt,
    n_pairs: int = 10,
    warmup: int = 2,
    size: Optional[Tuple[int, int]] = None,
    device: Optional[str] = None,
) -> BenchReport:
    """Benchmark a checkpoint, pairs default to the forge output size (H, W)."""
    from flowcd.harness.train import model_from_checkpoint

    model, cfg = model_from_checkpoint(ckpt, device=device)
    size = size or (cfg.forge.height, cfg.forge.width)
    return bench_model(model, n_pairs, warmup, size, device or cfg.resolved_device, cfg.seed)
