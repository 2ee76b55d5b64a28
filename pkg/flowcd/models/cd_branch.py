"""Change detection branch.

``t1`` is warped into ``t0``'s frame along the estimated flow, compared with
``t0`` by absolute difference, and pixels that moved more than ``tau`` are
suppressed before a backbone and a pyramid pooling head turn the difference
into a change probability map ``output2``.
"""

from __future__ import annotations

import dataclasses
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from flowcd.config import CdConfig
from flowcd.exceptions import ValidationError
from flowcd.models import backbones, layers


def warp(img: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward warp: ``out(x, y) = img(x + u, y + v)``, clamped to the border."""
    if img.shape[0] != flow.shape[0] or img.shape[-2:] != flow.shape[-2:]:
        raise ValidationError(
            f"Image {tuple(img.shape)} and flow {tuple(flow.shape)} do not match"
        )
    batch, _, height, width = flow.shape
    coords = layers.coords_grid(batch, height, width, flow) + flow
    return layers.bilinear_sample(img, coords[:, 0], coords[:, 1])


def abs_difference(t0: torch.Tensor, warped: torch.Tensor) -> torch.Tensor:
    if t0.shape != warped.shape:
        raise ValidationError(f"Shapes differ: {tuple(t0.shape)} vs {tuple(warped.shape)}")
    return (t0 - warped).abs()


def slow_change_mask(
    flow: torch.Tensor, tau: float, mode: str = "hard", temperature: float = 0.25
) -> torch.Tensor:
    """(B, 1, H, W) multiplier suppressing pixels whose flow is longer than ``tau``.

    The hard mask is 1 where ``|flow| <= tau`` and 0 elsewhere and carries no
    gradient. The soft mask is ``sigmoid((tau - |flow|) / temperature)``.
    """
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    if mode == "hard":
        with torch.no_grad():
            magnitude = torch.linalg.vector_norm(flow, dim=1, keepdim=True)
            return (magnitude <= tau).to(flow.dtype)
    if mode == "soft":
        magnitude = torch.sqrt((flow**2).sum(dim=1, keepdim=True) + 1e-12)
        return torch.sigmoid((tau - magnitude) / temperature)
    raise ValidationError(f"Unknown mask mode {mode!r}")


class PyramidPoolingHead(nn.Module):
    """Pool F0 at four bin sizes, fuse with F0 and predict one change logit per pixel."""

    def __init__(self, in_channels: int, bins: Sequence[int] = (1, 2, 3, 6), fusion_channels: int = 512):
        super().__init__()
        self.bins = tuple(bins)
        reduced = max(in_channels // len(self.bins), 1)
        self.reduce = nn.ModuleList(
            [nn.Sequential(nn.Conv2d(in_channels, reduced, 1), nn.ReLU()) for _ in self.bins]
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(in_channels + reduced * len(self.bins), fusion_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(fusion_channels),
            nn.ReLU(),
        )
        self.classify = nn.Conv2d(fusion_channels, 1, 3, padding=1)
        layers.init_weights(self)

    def pool(self, f0: torch.Tensor) -> List[torch.Tensor]:
        """The raw pooled maps F1..F4."""
        return [F.adaptive_avg_pool2d(f0, b) for b in self.bins]

    def forward(self, f0: torch.Tensor, out_size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        """Change logits, upsampled to ``out_size`` (defaults to 8x F0)."""
        size = f0.shape[-2:]
        branches = [
            F.interpolate(reduce(p), size=size, mode="bilinear", align_corners=False)
            for reduce, p in zip(self.reduce, self.pool(f0))
        ]
        f5 = self.fuse(torch.cat([f0, *branches], dim=1))
        logits = self.classify(f5)
        out_size = out_size or (size[0] * 8, size[1] * 8)
        return F.interpolate(logits, size=out_size, mode="bilinear", align_corners=False)


@dataclasses.dataclass
class CdOutput:
    """``probability`` is output2; the rest are intermediate maps."""

    probability: torch.Tensor
    logits: torch.Tensor
    warped: torch.Tensor
    diff: torch.Tensor
    mask: torch.Tensor


class ChangeDetectionBranch(nn.Module):
    def __init__(self, cfg: Optional[CdConfig] = None):
        super().__init__()
        self.cfg = cfg = cfg or CdConfig()
        self.backbone = backbones.build_backbone(cfg)
        self.head = PyramidPoolingHead(self.backbone.out_channels, cfg.pool_bins, cfg.fusion_channels)

    def masked_difference(self, t0, t1, flow) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        warped = warp(t1, flow)
        diff = abs_difference(t0, warped)
        mask = slow_change_mask(
            flow, self.cfg.mask_threshold, self.cfg.mask_mode, self.cfg.mask_temperature
        )
        return warped, diff, mask

    def forward(self, t0: torch.Tensor, t1: torch.Tensor, flow: torch.Tensor) -> CdOutput:
        warped, diff, mask = self.masked_difference(t0, t1, flow)
        logits = self.head(self.backbone(diff * mask), out_size=tuple(t0.shape[-2:]))
        return CdOutput(torch.sigmoid(logits), logits, warped, diff, mask)
