"""Optical flow branch.

Features of both frames are matched by an all-pairs correlation volume,
pooled into a 4 level pyramid. Starting from zero flow, a convolutional GRU
reads correlation features around the current estimate and predicts a
residual update; the final stride 8 estimate is convex-upsampled to full
resolution.
"""

from __future__ import annotations

import dataclasses
import math
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from flowcd.config import OfConfig
from flowcd.exceptions import ValidationError
from flowcd.models import layers

POOL_KERNELS = (1, 2, 4, 8)


def correlation_volume(f0: torch.Tensor, f1: torch.Tensor) -> torch.Tensor:
    """All-pairs inner products of two (B, C, h, w) feature maps.

    Returns a (B, h, w, h, w) volume scaled by ``1 / sqrt(C)``.
    """
    if f0.shape != f1.shape:
        raise ValidationError(f"Feature maps differ in shape: {tuple(f0.shape)} vs {tuple(f1.shape)}")
    channels = f0.shape[1]
    corr = torch.einsum("bchw,bckl->bhwkl", f0, f1)
    return corr / math.sqrt(channels)


@dataclasses.dataclass
class CorrelationPyramid:
    """Levels of shape (B, h, w, h / k, w / k) for k in 1, 2, 4, 8."""

    levels: List[torch.Tensor]

    def __len__(self):
        return len(self.levels)


def build_pyramid(corr: torch.Tensor) -> CorrelationPyramid:
    batch, height, width, h2, w2 = corr.shape
    if h2 < POOL_KERNELS[-1] or w2 < POOL_KERNELS[-1]:
        raise ValidationError(
            f"Correlation volume target dims {h2}x{w2} are smaller than {POOL_KERNELS[-1]}, "
            f"inputs must be at least {POOL_KERNELS[-1] * 8} pixels on each side"
        )
    flat = corr.reshape(batch * height * width, 1, h2, w2)
    levels = [corr]
    for k in POOL_KERNELS[1:]:
        pooled = F.avg_pool2d(flat, k, stride=k)
        levels.append(pooled.view(batch, height, width, *pooled.shape[-2:]))
    return CorrelationPyramid(levels)


def lookup(pyramid: CorrelationPyramid, flow: torch.Tensor, radius: int) -> torch.Tensor:
    """Sample every level on a (2r+1)^2 grid around each flow-displaced pixel.

    Parameters
    ----------
    pyramid:
        Correlation pyramid of the pair.
    flow:
        (B, 2, h, w) current stride 8 flow.
    radius:
        Grid radius r.

    Returns
    -------
    torch.Tensor
        (B, 4 * (2r+1)^2, h, w); channels run over levels, then grid rows
        (dy), then grid columns (dx). Samples outside a level clamp to its border.
    """
    batch, _, height, width = flow.shape
    coords = layers.coords_grid(batch, height, width, flow) + flow
    offsets = torch.arange(-radius, radius + 1, device=flow.device, dtype=flow.dtype)
    dy, dx = torch.meshgrid(offsets, offsets, indexing="ij")
    dx, dy = dx.reshape(1, -1), dy.reshape(1, -1)
    # One row per source pixel: (B*h*w, 1) centres.
    cx = coords[:, 0].reshape(-1, 1)
    cy = coords[:, 1].reshape(-1, 1)

    out = []
    for k, level in zip(POOL_KERNELS, pyramid.levels):
        maps = level.reshape(batch * height * width, 1, *level.shape[-2:])
        samples = layers.bilinear_sample(maps, cx / k + dx, cy / k + dy)
        out.append(samples.view(batch, height, width, -1))
    return torch.cat(out, dim=-1).permute(0, 3, 1, 2).contiguous()


@dataclasses.dataclass
class GruState:
    hidden: torch.Tensor
    context: torch.Tensor


@dataclasses.dataclass
class IterationTrace:
    """Everything the refinement loop produced, one entry per iteration."""

    flows: List[torch.Tensor]
    deltas: List[torch.Tensor]
    weights: List[torch.Tensor]
    hidden: List[torch.Tensor]


class OpticalFlowBranch(nn.Module):
    def __init__(self, cfg: Optional[OfConfig] = None):
        super().__init__()
        self.cfg = cfg = cfg or OfConfig()
        self.fnet = layers.Encoder(cfg.encoder_dims, cfg.feature_channels, norm="instance")
        self.cnet = layers.Encoder(
            cfg.encoder_dims, cfg.hidden_channels + cfg.context_channels, norm="batch"
        )
        corr_planes = cfg.corr_levels * (2 * cfg.lookup_radius + 1) ** 2
        self.corr_encoder = nn.Sequential(
            nn.Conv2d(corr_planes, cfg.corr_channels[0], 1),
            nn.ReLU(),
            nn.Conv2d(cfg.corr_channels[0], cfg.corr_channels[1], 3, padding=1),
            nn.ReLU(),
        )
        self.flow_encoder = nn.Sequential(
            nn.Conv2d(2, cfg.flow_channels[0], 7, padding=3),
            nn.ReLU(),
            nn.Conv2d(cfg.flow_channels[0], cfg.flow_channels[1], 3, padding=1),
            nn.ReLU(),
        )
        gru_input = cfg.corr_channels[1] + cfg.flow_channels[1] + cfg.context_channels
        self.gru = layers.ConvGRU(cfg.hidden_channels, gru_input)
        self.flow_head = layers.ConvHead(cfg.hidden_channels, cfg.flow_head_channels, 2)
        self.mask_head = layers.ConvHead(
            cfg.hidden_channels, cfg.flow_head_channels, layers.UPSAMPLE_CHANNELS, last_kernel=1
        )

    def encode_features(self, img: torch.Tensor) -> torch.Tensor:
        return self.fnet(img)

    def encode_context(self, img: torch.Tensor) -> GruState:
        out = self.cnet(img)
        hidden, context = torch.split(
            out, [self.cfg.hidden_channels, self.cfg.context_channels], dim=1
        )
        return GruState(torch.tanh(hidden), torch.relu(context))

    def gru_update(
        self, state: GruState, corr_feats: torch.Tensor, flow_feats: torch.Tensor
    ) -> Tuple[GruState, torch.Tensor, torch.Tensor]:
        """One refinement step.

        Parameters
        ----------
        state:
            Hidden state and the fixed context features.
        corr_feats:
            (B, 4*(2r+1)^2, h, w) lookup result.
        flow_feats:
            (B, 2, h, w) current flow.

        Returns
        -------
        (GruState, torch.Tensor, torch.Tensor)
            Updated state, the flow delta and the convex upsampling weights.
        """
        x = torch.cat(
            [self.corr_encoder(corr_feats), self.flow_encoder(flow_feats), state.context], dim=1
        )
        hidden = self.gru(state.hidden, x)
        delta = self.flow_head(hidden)
        weights = layers.convex_weights(0.25 * self.mask_head(hidden))
        return GruState(hidden, state.context), delta, weights

    def iterate(
        self, t0: torch.Tensor, t1: torch.Tensor, iterations: Optional[int] = None
    ) -> IterationTrace:
        """Refine the flow from zero for ``iterations`` steps (default ``cfg.iterations``)."""
        if iterations is None:
            iterations = self.cfg.iterations
        if iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {iterations}")
        if t0.shape != t1.shape:
            raise ValidationError(f"Frames differ in shape: {tuple(t0.shape)} vs {tuple(t1.shape)}")
        f0, f1 = self.encode_features(torch.cat([t0, t1], dim=0)).chunk(2, dim=0)
        pyramid = build_pyramid(correlation_volume(f0, f1))
        state = self.encode_context(t0)

        batch, _, height, width = f0.shape
        flow = f0.new_zeros(batch, 2, height, width)
        trace = IterationTrace([], [], [], [])
        for _ in range(iterations):
            current = flow.detach()
            corr_feats = lookup(pyramid, current, self.cfg.lookup_radius)
            state, delta, weights = self.gru_update(state, corr_feats, current)
            flow = flow + delta
            trace.flows.append(flow)
            trace.deltas.append(delta)
            trace.weights.append(weights)
            trace.hidden.append(state.hidden)
        return trace

    def iterate_flow(self, t0: torch.Tensor, t1: torch.Tensor, iterations: Optional[int] = None) -> List[torch.Tensor]:
        """The stride 8 estimate after each iteration."""
        return self.iterate(t0, t1, iterations).flows

    def forward(self, t0: torch.Tensor, t1: torch.Tensor, return_sequence: bool = False):
        """Full resolution flow ``output1`` of the pair, (B, 2, H, W).

        With ``return_sequence`` every iterate is upsampled and returned as a list.
        """
        trace = self.iterate(t0, t1)
        if return_sequence:
            return [layers.upsample_convex(f, w) for f, w in zip(trace.flows, trace.weights)]
        return layers.upsample_convex(trace.flows[-1], trace.weights[-1])
