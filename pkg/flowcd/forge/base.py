"""Compose bitemporal change samples from a flow pair and object cutouts.

Every random quantity of a sample is drawn from one `numpy.random.Generator`
in a fixed order, so a sample can be replayed from ``(seed, split, index)``:

1. paste count, then one cutout index per paste (`forge_dataset`);
2. per paste: scale, rotation, shuffle flag, channel permutation
   (`transform_cutout`), then row and column of the paste (`composite_sample`);
3. brightness and contrast factors (`composite_sample`).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.ndimage

from flowcd import core
from flowcd.config import ForgeConfig
from flowcd.exceptions import ValidationError

VOC_CLASS_NAMES = (
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
)

SPLITS = ("train", "test")
# Alpha below this after resampling is treated as empty when cropping.
SUPPORT_EPS = 1e-6


def class_name(label: int) -> str:
    if 0 <= label < len(VOC_CLASS_NAMES):
        return VOC_CLASS_NAMES[label]
    return f"class-{label}"


def sample_rng(seed: int, index: int, split: str = "train") -> np.random.Generator:
    """Independent random stream for one sample, identical whatever the generation order."""
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    seq = np.random.SeedSequence(seed, spawn_key=(SPLITS.index(split), index))
    return np.random.default_rng(seq)


@dataclasses.dataclass(frozen=True, eq=False)
class ObjectCutout:
    """An RGBA patch, the alpha channel is the object's segmentation."""

    rgba: np.ndarray
    class_tag: str

    def __post_init__(self):
        rgba = np.asarray(self.rgba, dtype=np.float32)
        if rgba.ndim != 3 or rgba.shape[-1] != 4:
            raise ValidationError(f"Cutout must be hxwx4, got shape {rgba.shape}")
        if not np.all(np.isfinite(rgba)) or rgba.min() < 0 or rgba.max() > 1:
            raise ValidationError("Cutout values must lie in [0, 1]")
        if not np.any(rgba[..., 3] > 0):
            raise ValidationError(f"Cutout of class {self.class_tag} has an empty alpha support")
        object.__setattr__(self, "rgba", rgba)

    @property
    def rgb(self) -> np.ndarray:
        return self.rgba[..., :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.rgba[..., 3]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rgba.shape[:2]


def extract_cutouts(
    image: np.ndarray, seg_mask: np.ndarray, classes: Iterable[int]
) -> List[ObjectCutout]:
    """Cut every connected region of the requested classes out of ``image``.

    Parameters
    ----------
    image:
        HxWx3 image in [0, 1].
    seg_mask:
        HxW integer label map aligned with ``image``.
    classes:
        Label values to extract.

    Returns
    -------
    List[ObjectCutout]
        One cutout per 4-connected region with a tight bounding box, ordered
        by class and then by scan order of the region.
    """
    image = image.data if isinstance(image, core.Image) else np.asarray(image, dtype=np.float32)
    seg_mask = np.asarray(seg_mask)
    core.check_same_shape(image.shape[:2], seg_mask.shape, "image and segmentation")
    cutouts = []
    for label in sorted(set(int(c) for c in classes)):
        regions, count = scipy.ndimage.label(seg_mask == label)
        if not count:
            continue
        for i, sl in enumerate(scipy.ndimage.find_objects(regions), start=1):
            alpha = (regions[sl] == i).astype(np.float32)
            rgba = np.concatenate([image[sl], alpha[..., None]], axis=-1)
            cutouts.append(ObjectCutout(rgba, class_name(label)))
    return cutouts


def _rotated_size(height: int, width: int, scale: float, theta: float) -> Tuple[int, int]:
    cos, sin = abs(math.cos(theta)), abs(math.sin(theta))
    out_h = math.ceil(scale * (height * cos + width * sin) - 1e-6)
    out_w = math.ceil(scale * (width * cos + height * sin) - 1e-6)
    return max(out_h, 1), max(out_w, 1)


def _crop_to_support(rgba: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(np.any(rgba[..., 3] > SUPPORT_EPS, axis=1))
    cols = np.flatnonzero(np.any(rgba[..., 3] > SUPPORT_EPS, axis=0))
    if not rows.size:
        return rgba[:0, :0]
    return rgba[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def transform_cutout(
    obj: ObjectCutout,
    cfg: ForgeConfig,
    rng: np.random.Generator,
    frame_size: Optional[Tuple[int, int]] = None,
) -> ObjectCutout:
    """Randomly scale, rotate and channel shuffle a cutout.

    Parameters
    ----------
    obj:
        The cutout to transform.
    cfg:
        Supplies the scale range, rotation range (degrees) and shuffle probability.
    rng:
        Random stream, four draws are consumed: scale, rotation, shuffle flag
        and permutation.
    frame_size:
        (H, W) of the frame the result is pasted into, defaults to
        ``cfg.output_size``. Results that would not fit are scaled down to fit.
    """
    logger = logging.getLogger("flowcd")
    frame_h, frame_w = frame_size if frame_size is not None else (cfg.height, cfg.width)
    scale = float(rng.uniform(*cfg.scale_range))
    theta = math.radians(float(rng.uniform(*cfg.rotation_range)))
    shuffle = bool(rng.random() < cfg.channel_shuffle_prob)
    permutation = rng.permutation(3)

    height, width = obj.shape
    out_h, out_w = _rotated_size(height, width, scale, theta)
    if out_h > frame_h or out_w > frame_w:
        shrink = min(frame_h / out_h, frame_w / out_w)
        logger.warning(
            f"{obj.class_tag} cutout of {out_h}x{out_w} does not fit the "
            f"{frame_h}x{frame_w} frame, rescaling by {shrink:.3f}"
        )
        scale *= shrink
        out_h, out_w = _rotated_size(height, width, scale, theta)
        # The box must hold the whole rotated cutout, so shrink past rounding instead of clipping.
        while out_h > frame_h or out_w > frame_w:
            scale *= 1 - 1e-3
            out_h, out_w = _rotated_size(height, width, scale, theta)

    # Maps (row, col) of the output onto the input around both centers.
    cos, sin = math.cos(theta), math.sin(theta)
    matrix = np.array([[cos, -sin], [sin, cos]]) / scale
    out_center = np.array([(out_h - 1) / 2, (out_w - 1) / 2])
    in_center = np.array([(height - 1) / 2, (width - 1) / 2])
    offset = in_center - matrix @ out_center
    channels = [
        scipy.ndimage.affine_transform(
            obj.rgba[..., c],
            matrix,
            offset=offset,
            output_shape=(out_h, out_w),
            order=1,
            mode="constant",
            cval=0.0,
        )
        for c in range(4)
    ]
    rgba = np.clip(np.stack(channels, axis=-1), 0.0, 1.0)
    if shuffle:
        rgba[..., :3] = rgba[..., permutation]
    rgba = _crop_to_support(rgba)
    if not rgba.size:
        raise ValidationError(
            f"{obj.class_tag} cutout vanished after scaling by {scale:.3f}"
        )
    return ObjectCutout(rgba.astype(np.float32), obj.class_tag)


def adjust_brightness_contrast(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """Scale intensities by ``brightness`` then stretch around mid gray by ``contrast``."""
    return np.clip((image * brightness - 0.5) * contrast + 0.5, 0.0, 1.0)


def composite_sample(
    background_t0: core.Image,
    background_t1: core.Image,
    flow_gt: core.FlowField,
    cutouts: Sequence[ObjectCutout],
    cfg: ForgeConfig,
    rng: np.random.Generator,
    sample_id: str = "",
) -> core.BitemporalSample:
    """Paste cutouts into one frame of a background pair.

    The cutouts land in ``t1`` (or ``t0`` with ``cfg.paste_into == "t0"``)
    fully inside the frame. The change label is the union of the pasted alpha
    supports binarized at ``cfg.alpha_threshold``, the flow label is
    ``flow_gt`` untouched, and one brightness/contrast draw is applied to both
    frames before snapping them to the 8-bit grid.
    """
    t0, t1 = background_t0.data, background_t1.data
    core.check_same_shape(t0.shape, t1.shape, "background frames")
    core.check_same_shape(t0.shape[:2], flow_gt.shape, "background frames and flow")
    height, width = t0.shape[:2]

    frames = {"t0": t0.copy(), "t1": t1.copy()}
    target = frames[cfg.paste_into]
    change = np.zeros((height, width), dtype=bool)
    for cutout in cutouts:
        pasted = transform_cutout(cutout, cfg, rng, frame_size=(height, width))
        h, w = pasted.shape
        row = int(rng.integers(0, height - h + 1))
        col = int(rng.integers(0, width - w + 1))
        alpha = pasted.alpha[..., None]
        region = target[row : row + h, col : col + w]
        target[row : row + h, col : col + w] = alpha * pasted.rgb + (1.0 - alpha) * region
        change[row : row + h, col : col + w] |= pasted.alpha >= cfg.alpha_threshold

    brightness = float(rng.uniform(*cfg.brightness_range))
    contrast = float(rng.uniform(*cfg.contrast_range))
    t0, t1 = (
        core.quantize(adjust_brightness_contrast(frames[k], brightness, contrast))
        for k in ("t0", "t1")
    )
    return core.BitemporalSample(
        t0=core.Image(t0),
        t1=core.Image(t1),
        flow_label=flow_gt,
        change_label=core.ChangeMask(change.astype(np.float32)),
        id=sample_id,
    )
