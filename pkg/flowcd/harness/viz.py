"""Side by side panels of a sample or a prediction."""

from typing import Optional

import numpy as np

from flowcd import core, files
from flowcd.exceptions import ValidationError


def render_panel(
    t0: np.ndarray,
    t1: np.ndarray,
    flow: core.FlowLike,
    mask: np.ndarray,
    max_magnitude="auto",
) -> np.ndarray:
    """(H, 4W, 3) panel of t0, t1, the color coded flow and the change mask in white."""
    height, width = t0.shape[:2]
    mask = np.asarray(mask, dtype=np.float32)
    if mask.ndim == 3:
        mask = mask[..., 0]
    parts = [
        np.asarray(t0, dtype=np.float32),
        np.asarray(t1, dtype=np.float32),
        core.flow_to_color(flow, max_magnitude).data,
        np.repeat(mask[..., None], 3, axis=-1),
    ]
    for part in parts:
        if part.shape != (height, width, 3):
            raise ValidationError(
                f"Panel parts must all be {height}x{width}, got {part.shape[0]}x{part.shape[1]}"
            )
    return np.concatenate(parts, axis=1)


def write_panel(
    path,
    sample: core.BitemporalSample,
    flow: Optional[core.FlowLike] = None,
    mask: Optional[np.ndarray] = None,
):
    """Write the panel of ``sample``, predicted ``flow``/``mask`` replace the labels."""
    panel = render_panel(
        sample.t0.data,
        sample.t1.data,
        sample.flow_label if flow is None else flow,
        sample.change_label.data if mask is None else mask,
    )
    files.write_image(path, panel)
    return panel
