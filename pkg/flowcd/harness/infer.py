"""Run a trained model on one image pair from disk."""

import logging
import os
from typing import Dict, Optional

import torch

from flowcd import core, files
from flowcd.exceptions import ValidationError
from flowcd.harness import data

OUTPUT_FILES = {
    "flow": "{stem}_flow.flo",
    "flow_color": "{stem}_flow.png",
    "change": "{stem}_change.png",
}


def read_pair(t0_path: str, t1_path: str):
    """Read both frames, center cropped to multiples of the encoder stride."""
    logger = logging.getLogger("flowcd")
    frames = []
    for path in (t0_path, t1_path):
        img = files.read_image(path)
        cropped, changed = files.center_crop_to_multiple(img, core.STRIDE)
        if changed:
            logger.warning(
                f"{path}: {img.shape[0]}x{img.shape[1]} is not divisible by {core.STRIDE}, "
                f"center cropped to {cropped.shape[0]}x{cropped.shape[1]}"
            )
        frames.append(cropped)
    if frames[0].shape != frames[1].shape:
        raise ValidationError(
            f"{t0_path} and {t1_path} differ in size: {frames[0].shape[:2]} vs {frames[1].shape[:2]}"
        )
    return frames[0], frames[1]


def infer_pair(
    ckpt,
    t0_path: str,
    t1_path: str,
    out_dir: str,
    stem: str = "pair",
    threshold: Optional[float] = None,
    device: Optional[str] = None,
) -> Dict[str, str]:
    """Write the flow (raw and color coded) and the thresholded change mask of a pair.

    Returns
    -------
    Dict[str, str]
        Paths of the written files keyed by ``flow``, ``flow_color`` and
        ``change``; a branch the checkpoint does not run writes nothing.
    """
    from flowcd.harness.train import model_from_checkpoint

    model, cfg = model_from_checkpoint(ckpt, device=device)
    device = device or cfg.resolved_device
    threshold = cfg.cd.sigmoid_threshold if threshold is None else threshold
    t0, t1 = read_pair(t0_path, t1_path)
    model.eval()
    with torch.no_grad():
        output = model(*data.pair_batch(t0, t1, device))
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v.format(stem=stem)) for k, v in OUTPUT_FILES.items()}
    written = {}
    if output.flow is not None:
        flow = data.flow_array(output.flow[0])
        files.write_flo(paths["flow"], flow)
        files.write_image(paths["flow_color"], core.flow_to_color(flow).data)
        written["flow"], written["flow_color"] = paths["flow"], paths["flow_color"]
    if output.change is not None:
        prob = output.change.probability[0, 0].cpu().numpy()
        files.write_mask(paths["change"], core.binarize(prob, threshold).data)
        written["change"] = paths["change"]
    logging.getLogger("flowcd").info(f"Wrote {', '.join(sorted(written.values()))}")
    return written
