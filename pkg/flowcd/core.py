"""Domain types and flow/mask math shared by every other module.

Images, flows and masks are numpy arrays in height-major (H, W, C) layout and
real valued; 8-bit values only appear at the file boundary (`flowcd.files`).
"""

from __future__ import annotations

import dataclasses
import enum
from typing import Union

import numba as nb
import numpy as np

from flowcd.exceptions import ValidationError

# Encoders downsample by 8, so every model input must be divisible by it.
STRIDE = 8
MIN_SIDE = 16


class MaskKind(enum.Enum):
    GROUND_TRUTH = "ground-truth"
    PREDICTION = "prediction"


def _check_spatial(height: int, width: int, what: str):
    if height < MIN_SIDE or width < MIN_SIDE:
        raise ValidationError(
            f"{what} must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
        )
    if height % STRIDE or width % STRIDE:
        raise ValidationError(
            f"{what} dimensions must be divisible by {STRIDE}, got {height}x{width}"
        )


@dataclasses.dataclass(frozen=True, eq=False)
class Image:
    """An RGB image with real values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[-1] != 3:
            raise ValidationError(f"Image must be HxWx3, got shape {data.shape}")
        _check_spatial(data.shape[0], data.shape[1], "Image")
        if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
            raise ValidationError("Image values must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.data, other.data)


@dataclasses.dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement field, ``data[..., 0]`` horizontal and ``data[..., 1]`` vertical, in pixels."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[-1] != 2:
            raise ValidationError(f"FlowField must be HxWx2, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("FlowField contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_uv(cls, u: np.ndarray, v: np.ndarray) -> FlowField:
        return cls(np.stack([u, v], axis=-1))

    @classmethod
    def zeros(cls, height: int, width: int) -> FlowField:
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    @property
    def u(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[..., 1]

    @property
    def shape(self):
        return self.data.shape[:2]

    def __eq__(self, other):
        return isinstance(other, FlowField) and np.array_equal(self.data, other.data)


@dataclasses.dataclass(frozen=True, eq=False)
class ChangeMask:
    """Single channel change map; ground truth holds {0, 1}, predictions [0, 1]."""

    data: np.ndarray
    kind: MaskKind = MaskKind.GROUND_TRUTH

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 3 and data.shape[-1] == 1:
            data = data[..., 0]
        if data.ndim != 2:
            raise ValidationError(f"ChangeMask must be HxW, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0) < 0 or data.max(initial=0) > 1:
            raise ValidationError("ChangeMask values must lie in [0, 1]")
        kind = MaskKind(self.kind)
        if kind is MaskKind.GROUND_TRUTH and not is_binary(data):
            raise ValidationError("Ground-truth ChangeMask must only contain 0 and 1")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", kind)

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        return (
            isinstance(other, ChangeMask)
            and self.kind == other.kind
            and np.array_equal(self.data, other.data)
        )


@dataclasses.dataclass(frozen=True, eq=False)
class BitemporalSample:
    t0: Image
    t1: Image
    flow_label: FlowField
    change_label: ChangeMask
    id: str

    def __post_init__(self):
        shapes = {
            "t0": self.t0.data.shape[:2],
            "t1": self.t1.data.shape[:2],
            "flow_label": self.flow_label.shape,
            "change_label": self.change_label.shape,
        }
        if len(set(shapes.values())) != 1:
            raise ValidationError(
                f"Sample {self.id} has mismatched spatial shapes: {shapes}"
            )

    @property
    def shape(self):
        return self.t0.data.shape[:2]

    def __eq__(self, other):
        return (
            isinstance(other, BitemporalSample)
            and self.id == other.id
            and self.t0 == other.t0
            and self.t1 == other.t1
            and self.flow_label == other.flow_label
            and self.change_label == other.change_label
        )


@dataclasses.dataclass(frozen=True, eq=False)
class FlowColorCode:
    """Color wheel rendering of a flow field, direction as hue and magnitude as saturation."""

    data: np.ndarray


FlowLike = Union[FlowField, np.ndarray]
MaskLike = Union[ChangeMask, np.ndarray]


def is_binary(x: np.ndarray) -> bool:
    return bool(np.all((x == 0) | (x == 1)))


def as_flow_array(f: FlowLike) -> np.ndarray:
    if isinstance(f, FlowField):
        return f.data
    f = np.asarray(f, dtype=np.float32)
    if f.ndim != 3 or f.shape[-1] != 2:
        raise ValidationError(f"Flow must be HxWx2, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValidationError("Flow contains non-finite values")
    return f


def flow_magnitude(f: FlowLike) -> np.ndarray:
    """Per-pixel Euclidean length of the displacement, in pixels."""
    f = as_flow_array(f)
    return np.sqrt(f[..., 0] ** 2 + f[..., 1] ** 2)


def make_colorwheel() -> np.ndarray:
    """The 55 entry Middlebury color wheel, values in [0, 1]."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col : col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col : col + YG, 1] = 255
    col += YG
    wheel[col : col + GC, 1] = 255
    wheel[col : col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col : col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col : col + CB, 2] = 255
    col += CB
    wheel[col : col + BM, 2] = 255
    wheel[col : col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col : col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col : col + MR, 0] = 255
    return wheel / 255.0


COLORWHEEL = make_colorwheel()


@nb.jit(nopython=True, parallel=True)
def _nb_flow_colors(u: np.ndarray, v: np.ndarray, wheel: np.ndarray) -> np.ndarray:
    height, width = u.shape
    ncols = wheel.shape[0]
    out = np.empty((height, width, 3))
    for i in nb.prange(height):
        for j in range(width):
            rad = np.sqrt(u[i, j] ** 2 + v[i, j] ** 2)
            angle = np.arctan2(-v[i, j], -u[i, j]) / np.pi
            fk = (angle + 1.0) / 2.0 * (ncols - 1)
            k0 = int(np.floor(fk))
            k1 = k0 + 1
            if k1 >= ncols:
                k1 = 0
            f = fk - k0
            # Saturate instead of dimming past the normalisation radius.
            rad = min(rad, 1.0)
            for c in range(3):
                col = (1.0 - f) * wheel[k0, c] + f * wheel[k1, c]
                out[i, j, c] = 1.0 - rad * (1.0 - col)
    return out


def flow_to_color(f: FlowLike, max_magnitude: Union[float, str] = "auto") -> FlowColorCode:
    """Render a flow field with the Middlebury color wheel.

    Parameters
    ----------
    f:
        The flow to render.
    max_magnitude:
        Magnitude mapped to full saturation, larger magnitudes saturate. With
        ``"auto"`` the largest magnitude in ``f`` is used, which makes the
        rendering invariant to scaling the field.

    Returns
    -------
    FlowColorCode
        Colors in [0, 1], zero flow renders white.
    """
    data = as_flow_array(f).astype(np.float64)
    if isinstance(max_magnitude, str):
        if max_magnitude != "auto":
            raise ValidationError(f"Unknown max_magnitude mode {max_magnitude!r}")
        max_magnitude = float(np.sqrt((data**2).sum(axis=-1)).max(initial=0.0))
        if max_magnitude == 0:
            max_magnitude = 1.0
    elif max_magnitude <= 0:
        raise ValidationError(f"max_magnitude must be positive, got {max_magnitude}")
    u = np.ascontiguousarray(data[..., 0] / max_magnitude)
    v = np.ascontiguousarray(data[..., 1] / max_magnitude)
    colors = _nb_flow_colors(u, v, COLORWHEEL)
    return FlowColorCode(np.clip(colors, 0.0, 1.0).astype(np.float32))


def binarize(m: MaskLike, threshold: float = 0.5) -> ChangeMask:
    """Threshold a change map, values equal to ``threshold`` become 1."""
    if not 0 < threshold < 1:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    data = m.data if isinstance(m, ChangeMask) else np.asarray(m, dtype=np.float32)
    return ChangeMask((data >= threshold).astype(np.float32), MaskKind.GROUND_TRUTH)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32) / 255.0


def quantize(x: np.ndarray) -> np.ndarray:
    """Snap real values to the 8-bit grid so they survive a PNG round trip exactly."""
    return from_uint8(to_uint8(x))


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs"):
    if np.shape(a) != np.shape(b):
        raise ValidationError(f"Shape mismatch for {what}: {np.shape(a)} vs {np.shape(b)}")
