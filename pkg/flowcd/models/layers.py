"""Building blocks shared by the two branches.

Tensors are NCHW. Flow tensors have 2 channels, horizontal displacement first.
"""

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from flowcd import core
from flowcd.exceptions import ValidationError

# 3x3 neighbourhood times an 8x8 block of fine pixels.
UPSAMPLE_CHANNELS = 9 * core.STRIDE * core.STRIDE


def check_divisible(x: torch.Tensor, what: str = "input"):
    height, width = x.shape[-2:]
    if height % core.STRIDE or width % core.STRIDE:
        raise ValidationError(
            f"{what} dimensions must be divisible by {core.STRIDE}, got {height}x{width}"
        )


def bilinear_sample(img: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sample ``img`` at pixel coordinates with bilinear interpolation.

    Coordinates outside the image are clamped to the border. Integer
    coordinates return the stored values exactly.

    Parameters
    ----------
    img:
        (B, C, H, W) values to sample.
    x, y:
        (B, ...) column and row coordinates, in pixels.

    Returns
    -------
    torch.Tensor
        (B, C, ...) samples.
    """
    batch, channels, height, width = img.shape
    out_shape = x.shape[1:]
    x = x.reshape(batch, -1).clamp(0, width - 1)
    y = y.reshape(batch, -1).clamp(0, height - 1)
    x0 = x.detach().floor()
    y0 = y.detach().floor()
    wx = (x - x0)[:, None]
    wy = (y - y0)[:, None]
    x0, y0 = x0.long(), y0.long()
    x1 = (x0 + 1).clamp(max=width - 1)
    y1 = (y0 + 1).clamp(max=height - 1)

    flat = img.reshape(batch, channels, height * width)

    def gather(yy, xx):
        index = (yy * width + xx)[:, None].expand(batch, channels, -1)
        return flat.gather(2, index)

    top = gather(y0, x0) * (1 - wx) + gather(y0, x1) * wx
    bottom = gather(y1, x0) * (1 - wx) + gather(y1, x1) * wx
    out = top * (1 - wy) + bottom * wy
    return out.reshape(batch, channels, *out_shape)


def coords_grid(batch: int, height: int, width: int, like: torch.Tensor) -> torch.Tensor:
    """(B, 2, H, W) pixel coordinates, x first."""
    ys, xs = torch.meshgrid(
        torch.arange(height, device=like.device, dtype=like.dtype),
        torch.arange(width, device=like.device, dtype=like.dtype),
        indexing="ij",
    )
    return torch.stack([xs, ys])[None].expand(batch, -1, -1, -1)


def make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "none":
        return nn.Identity()
    raise ValidationError(f"Unknown normalization {kind!r}")


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, norm: str, stride: int = 1, dilation: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(
            in_channels, out_channels, 3, stride=stride, padding=dilation, dilation=dilation
        )
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=dilation, dilation=dilation)
        self.norm1 = make_norm(norm, out_channels)
        self.norm2 = make_norm(norm, out_channels)
        if stride == 1 and in_channels == out_channels:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride),
                make_norm(norm, out_channels),
            )

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = F.relu(self.norm2(self.conv2(y)))
        return F.relu(self.shortcut(x) + y)


def init_weights(module: nn.Module):
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d, nn.GroupNorm)):
            if m.weight is not None:
                nn.init.ones_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Encoder(nn.Module):
    """Residual encoder with a total stride of 8.

    A 7x7 stride 2 stem (``dims[0]`` channels) is followed by three stages of
    two residual blocks (``dims[1:]`` channels, strides 1, 2, 2) and a 1x1
    projection to ``out_channels``. Inputs in [0, 1] are mapped to [-1, 1].
    """

    def __init__(self, dims: Sequence[int], out_channels: int, norm: str = "instance"):
        super().__init__()
        stem, *stages = dims
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem, 7, stride=2, padding=3), make_norm(norm, stem), nn.ReLU()
        )
        layers, in_channels = [], stem
        for channels, stride in zip(stages, (1, 2, 2)):
            layers.append(ResidualBlock(in_channels, channels, norm, stride=stride))
            layers.append(ResidualBlock(channels, channels, norm))
            in_channels = channels
        self.stages = nn.Sequential(*layers)
        self.project = nn.Conv2d(in_channels, out_channels, 1)
        self.out_channels = out_channels
        init_weights(self)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        check_divisible(img, "Encoder input")
        x = 2 * img - 1
        return self.project(self.stages(self.stem(x)))


class ConvGRU(nn.Module):
    """Convolutional GRU cell with 3x3 gates.

    z = sigmoid(conv_z([h, x])), r = sigmoid(conv_r([h, x])),
    q = tanh(conv_q([r * h, x])), h' = (1 - z) * h + z * q.
    """

    def __init__(self, hidden_channels: int, input_channels: int):
        super().__init__()
        total = hidden_channels + input_channels
        self.conv_z = nn.Conv2d(total, hidden_channels, 3, padding=1)
        self.conv_r = nn.Conv2d(total, hidden_channels, 3, padding=1)
        self.conv_q = nn.Conv2d(total, hidden_channels, 3, padding=1)

    def gates(self, h: torch.Tensor, x: torch.Tensor):
        hx = torch.cat([h, x], dim=1)
        z = torch.sigmoid(self.conv_z(hx))
        r = torch.sigmoid(self.conv_r(hx))
        q = torch.tanh(self.conv_q(torch.cat([r * h, x], dim=1)))
        return z, r, q

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        z, _, q = self.gates(h, x)
        return (1 - z) * h + z * q


class ConvHead(nn.Module):
    """3x3 conv, ReLU, then a ``last_kernel`` conv to ``out_channels``."""

    def __init__(self, in_channels: int, mid_channels: int, out_channels: int, last_kernel: int = 3):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, mid_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(mid_channels, out_channels, last_kernel, padding=last_kernel // 2)

    def forward(self, x):
        return self.conv2(F.relu(self.conv1(x)))


def convex_weights(logits: torch.Tensor) -> torch.Tensor:
    """Softmax the (B, 9*64, h, w) mask logits over the 9 neighbours."""
    batch, _, height, width = logits.shape
    w = logits.view(batch, 9, UPSAMPLE_CHANNELS // 9, height, width)
    return torch.softmax(w, dim=1).view(batch, UPSAMPLE_CHANNELS, height, width)


def upsample_convex(flow: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Upsample a stride 8 flow by convex combinations of 3x3 neighbourhoods.

    Parameters
    ----------
    flow:
        (B, 2, h, w) coarse flow in coarse pixels.
    weights:
        (B, 9*64, h, w) convex weights, channel ``k*64 + i*8 + j`` weighting
        neighbour ``k`` (row-major 3x3) for fine pixel ``(i, j)`` of a cell.

    Returns
    -------
    torch.Tensor
        (B, 2, 8h, 8w) flow in fine pixels. Borders replicate the edge cells
        so constant fields stay constant.
    """
    batch, _, height, width = flow.shape
    s = core.STRIDE
    w = weights.view(batch, 1, 9, s, s, height, width)
    padded = F.pad(s * flow, (1, 1, 1, 1), mode="replicate")
    neighbours = F.unfold(padded, [3, 3]).view(batch, 2, 9, 1, 1, height, width)
    up = torch.sum(w * neighbours, dim=2)
    up = up.permute(0, 1, 4, 2, 5, 3)
    return up.reshape(batch, 2, s * height, s * width)
