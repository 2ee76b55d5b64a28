"""Readers and writers for the files flowcd produces and consumes.

* ``.flo`` flow files (Middlebury convention): the 4 byte tag ``PIEH``
  (float32 202021.25), int32 width, int32 height, then interleaved
  little-endian float32 (u, v) pairs in row-major order.
* 8-bit RGB PNG images, 8-bit single channel PNG masks (0 / 255) and
  palette/label PNG segmentation maps.
"""

import logging
import os
from typing import BinaryIO, Tuple

import numpy as np
from file_or_name import file_or_name
from PIL import Image as PILImage

from flowcd import core
from flowcd.exceptions import FormatError

FLO_MAGIC = b"PIEH"
FLO_TAG_FLOAT = 202021.25
_HEADER_SIZE = 12


def _name(f) -> str:
    if isinstance(f, (str, os.PathLike)):
        return os.fspath(f)
    return getattr(f, "name", "<stream>")


@file_or_name(path="rb")
def read_flo(path: BinaryIO) -> core.FlowField:
    """Read a ``.flo`` file.

    Raises
    ------
    FormatError
        If the tag is wrong or the payload is shorter or longer than the
        header announces. The message names the file.
    """
    name = _name(path)
    header = path.read(_HEADER_SIZE)
    if len(header) < _HEADER_SIZE:
        raise FormatError(f"{name}: truncated .flo header ({len(header)} bytes)")
    if header[:4] != FLO_MAGIC:
        raise FormatError(f"{name}: bad .flo magic {header[:4]!r}, expected {FLO_MAGIC!r}")
    width, height = (int(x) for x in np.frombuffer(header[4:], dtype="<i4"))
    if width <= 0 or height <= 0:
        raise FormatError(f"{name}: invalid .flo size {width}x{height}")
    expected = width * height * 2 * 4
    payload = path.read()
    if len(payload) != expected:
        raise FormatError(
            f"{name}: .flo payload has {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    return core.FlowField(data.astype(np.float32))


@file_or_name(path="wb")
def write_flo(path: BinaryIO, flow: core.FlowLike):
    data = flow.data if isinstance(flow, core.FlowField) else np.asarray(flow)
    height, width = data.shape[:2]
    path.write(FLO_MAGIC)
    path.write(np.array([width, height], dtype="<i4").tobytes())
    path.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _open(path) -> PILImage.Image:
    try:
        img = PILImage.open(path)
        img.load()
    except OSError as e:
        raise OSError(f"Unable to read image {_name(path)}: {e}") from e
    return img


def read_image(path) -> np.ndarray:
    """Read an image as an HxWx3 float32 array in [0, 1]."""
    return core.from_uint8(np.asarray(_open(path).convert("RGB")))


def write_image(path, data: np.ndarray):
    PILImage.fromarray(core.to_uint8(data)).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Read a single channel mask as an HxW float32 array in [0, 1]."""
    return core.from_uint8(np.asarray(_open(path).convert("L")))


def write_mask(path, data: np.ndarray):
    PILImage.fromarray(core.to_uint8(data)).save(path, format="PNG")


def read_segmentation(path) -> np.ndarray:
    """Read an integer label map, e.g. a VOC ``SegmentationClass`` palette PNG."""
    img = _open(path)
    if img.mode not in ("P", "L", "I"):
        logging.getLogger("flowcd").warning(
            f"Segmentation {path} has mode {img.mode}, reading its first channel as labels"
        )
        img = img.getchannel(0)
    return np.asarray(img).astype(np.int64)


def center_crop_to_multiple(data: np.ndarray, multiple: int = core.STRIDE) -> Tuple[np.ndarray, bool]:
    """Center crop the two leading axes down to a multiple of ``multiple``.

    Returns the cropped array and whether anything was removed.
    """
    height, width = data.shape[:2]
    new_h, new_w = height - height % multiple, width - width % multiple
    if (new_h, new_w) == (height, width):
        return data, False
    if new_h == 0 or new_w == 0:
        raise FormatError(f"Image of size {height}x{width} is smaller than {multiple} pixels")
    top, left = (height - new_h) // 2, (width - new_w) // 2
    return data[top : top + new_h, left : left + new_w], True
