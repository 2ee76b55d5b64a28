"""Training losses and evaluation metrics.

Losses operate on torch tensors (NCHW) so they can be minimised; metrics
operate on numpy arrays of single samples and are aggregated into a
`MetricReport`.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from flowcd import core
from flowcd.config import LossWeights
from flowcd.exceptions import ValidationError

UNDEFINED_MOTION = "undefined-motion"
PERFECT_FLOW = "perfect-flow"


def _change_weight(label2: torch.Tensor) -> torch.Tensor:
    if label2.dim() == 3:
        label2 = label2[:, None]
    return 1.0 - label2


def l2_flow_loss(
    output1: torch.Tensor,
    label1: torch.Tensor,
    label2: torch.Tensor,
    reduction: str = "mean",
) -> torch.Tensor:
    """Euclidean flow error over the pixels that did not change.

    Parameters
    ----------
    output1, label1:
        (B, 2, H, W) predicted and true flow.
    label2:
        (B, 1, H, W) or (B, H, W) binary change label, changed pixels are ignored.
    reduction:
        ``"mean"`` divides by the number of pixels (changed ones included),
        ``"sum"`` does not.
    """
    if output1.shape != label1.shape:
        raise ValidationError(f"Flow shapes differ: {tuple(output1.shape)} vs {tuple(label1.shape)}")
    keep = _change_weight(label2)
    if not torch.any(keep > 0):
        logging.getLogger("flowcd").debug("Every pixel is labelled as changed, flow loss is 0")
    err = torch.linalg.vector_norm(output1 - label1, dim=1, keepdim=True) * keep
    if reduction == "mean":
        return err.mean()
    if reduction == "sum":
        return err.sum()
    raise ValidationError(f"Unknown reduction {reduction!r}")


def sequence_flow_loss(
    outputs: Sequence[torch.Tensor],
    label1: torch.Tensor,
    label2: torch.Tensor,
    gamma: float = 0.8,
    reduction: str = "mean",
) -> torch.Tensor:
    """Flow loss of every iterate, iterate k of N weighted by ``gamma ** (N - k)``."""
    n = len(outputs)
    return sum(
        gamma ** (n - k) * l2_flow_loss(out, label1, label2, reduction)
        for k, out in enumerate(outputs, start=1)
    )


def tversky_loss(
    output2: torch.Tensor,
    label2: torch.Tensor,
    alpha: float = 0.7,
    beta: float = 0.3,
    smoothing: float = 1e-6,
) -> torch.Tensor:
    """One minus the Tversky index of the whole batch.

    ``alpha`` weights missed changes (false negatives) and ``beta`` false
    alarms. ``alpha = beta = 0.5`` gives the Dice loss.
    """
    if output2.dim() == 4 and label2.dim() == 3:
        label2 = label2[:, None]
    if output2.shape != label2.shape:
        raise ValidationError(f"Mask shapes differ: {tuple(output2.shape)} vs {tuple(label2.shape)}")
    tp = (output2 * label2).sum()
    fp = (output2 * (1 - label2)).sum()
    fn = ((1 - output2) * label2).sum()
    return 1 - (tp + smoothing) / (tp + alpha * fn + beta * fp + smoothing)


def total_loss(l2, tversky, psi: float = 10.0):
    if psi <= 0:
        raise ValidationError(f"psi must be positive, got {psi}")
    return l2 + psi * tversky


def compute_losses(
    output,
    flow_label: torch.Tensor,
    change_label: torch.Tensor,
    weights: Optional[LossWeights] = None,
    gamma: Optional[float] = None,
) -> Dict[str, torch.Tensor]:
    """Loss terms of a `FlowCDOutput`, missing branches contribute nothing.

    Returns a dict with ``total`` and whichever of ``l2`` and ``tversky`` apply.
    With ``gamma`` set and a flow sequence present, ``l2`` is the sequence loss.
    """
    weights = weights or LossWeights()
    losses = {}
    if output.flow is not None:
        if gamma is not None and output.flow_sequence:
            losses["l2"] = sequence_flow_loss(
                output.flow_sequence, flow_label, change_label, gamma, weights.l2_reduction
            )
        else:
            losses["l2"] = l2_flow_loss(output.flow, flow_label, change_label, weights.l2_reduction)
    if output.change is not None:
        losses["tversky"] = tversky_loss(
            output.change.probability, change_label, weights.alpha, weights.beta, weights.smoothing
        )
    if "l2" in losses and "tversky" in losses:
        losses["total"] = total_loss(losses["l2"], losses["tversky"], weights.psi)
    elif "l2" in losses:
        losses["total"] = losses["l2"]
    else:
        losses["total"] = losses["tversky"]
    return losses


def _binary(x: core.MaskLike, what: str) -> np.ndarray:
    data = x.data if isinstance(x, core.ChangeMask) else np.asarray(x)
    if not core.is_binary(data):
        raise ValidationError(f"{what} must be a binary mask")
    return data.astype(bool)


def _ratio(num: float, den: float, name: str) -> float:
    if den == 0:
        logging.getLogger("flowcd").debug(f"{name} has a zero denominator, reporting 0")
        return 0.0
    return num / den


def precision_recall_f1(pred: core.MaskLike, gt: core.MaskLike) -> Tuple[float, float, float, Dict[str, int]]:
    """Pixelwise precision, recall and F1 of binary masks.

    Returns
    -------
    (float, float, float, Dict[str, int])
        Precision, recall, F1 and the ``tp``/``fp``/``fn`` counts. Metrics
        with a zero denominator are 0.
    """
    pred, gt = _binary(pred, "Prediction"), _binary(gt, "Ground truth")
    core.check_same_shape(pred, gt, "masks")
    counts = {
        "tp": int(np.sum(pred & gt)),
        "fp": int(np.sum(pred & ~gt)),
        "fn": int(np.sum(~pred & gt)),
    }
    return (*scores_from_counts(counts), counts)


def scores_from_counts(counts: Dict[str, int]) -> Tuple[float, float, float]:
    tp, fp, fn = counts["tp"], counts["fp"], counts["fn"]
    precision = _ratio(tp, tp + fp, "precision")
    recall = _ratio(tp, tp + fn, "recall")
    if precision > 0 and recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return precision, recall, f1


def epe_map(flow: core.FlowLike, flow_gt: core.FlowLike) -> np.ndarray:
    """Per-pixel end point error."""
    a, b = core.as_flow_array(flow), core.as_flow_array(flow_gt)
    core.check_same_shape(a, b, "flows")
    return core.flow_magnitude(a - b)


def motion_union(flow: core.FlowLike, flow_gt: core.FlowLike, delta: float = 0.5) -> np.ndarray:
    """Pixels moving more than ``delta`` in either field."""
    if delta < 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    return (core.flow_magnitude(flow_gt) > delta) | (core.flow_magnitude(flow) > delta)


def mepe(flow: core.FlowLike, flow_gt: core.FlowLike, delta: float = 0.5) -> float:
    """Mean end point error over `motion_union`, 0 when the union is empty."""
    union = motion_union(flow, flow_gt, delta)
    if not union.any():
        logging.getLogger("flowcd").debug("No pixel moves more than delta, mEPE is 0")
        return 0.0
    return float(epe_map(flow, flow_gt)[union].mean())


def fepe(f1: float, mepe: float, epsilon: float = 1e-6) -> float:
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if mepe < 0 or not 0 <= f1 <= 1:
        raise ValidationError(f"Expected f1 in [0, 1] and mepe >= 0, got {f1}, {mepe}")
    return f1 / (mepe + epsilon)


@dataclasses.dataclass
class SampleMetrics:
    """Metrics of one sample (or the aggregate row), ``None`` where a branch is absent."""

    id: str
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    tp: Optional[int] = None
    fp: Optional[int] = None
    fn: Optional[int] = None
    mepe: Optional[float] = None
    union_pixels: Optional[int] = None
    fepe: Optional[float] = None
    flags: List[str] = dataclasses.field(default_factory=list)

    CSV_FIELDS = ("id", "precision", "recall", "f1", "tp", "fp", "fn", "mepe", "union_pixels", "fepe", "flags")

    def csv_row(self) -> Dict[str, Any]:
        row = {k: getattr(self, k) for k in self.CSV_FIELDS}
        row["flags"] = ";".join(self.flags)
        return {k: "" if v is None else v for k, v in row.items()}


def sample_metrics(
    sample_id: str,
    flow: Optional[np.ndarray] = None,
    flow_gt: Optional[np.ndarray] = None,
    pred_mask: Optional[np.ndarray] = None,
    gt_mask: Optional[np.ndarray] = None,
    delta: float = 0.5,
    epsilon: float = 1e-6,
) -> SampleMetrics:
    """Metrics of one sample from a binary predicted mask and/or a predicted flow."""
    row = SampleMetrics(sample_id)
    if pred_mask is not None:
        row.precision, row.recall, row.f1, counts = precision_recall_f1(pred_mask, gt_mask)
        row.tp, row.fp, row.fn = counts["tp"], counts["fp"], counts["fn"]
    if flow is not None:
        union = motion_union(flow, flow_gt, delta)
        row.union_pixels = int(union.sum())
        row.mepe = mepe(flow, flow_gt, delta)
        if not row.union_pixels:
            row.flags.append(UNDEFINED_MOTION)
    _finish(row, epsilon)
    return row


def _finish(row: SampleMetrics, epsilon: float):
    if row.f1 is not None and row.mepe is not None:
        row.fepe = fepe(row.f1, row.mepe, epsilon)
        if row.mepe == 0 and UNDEFINED_MOTION not in row.flags:
            row.flags.append(PERFECT_FLOW)


def aggregate(rows: Iterable[SampleMetrics], epsilon: float = 1e-6) -> SampleMetrics:
    """Aggregate row: F1 from summed counts, mEPE averaged over samples that move."""
    rows = list(rows)
    agg = SampleMetrics("aggregate")
    with_mask = [r for r in rows if r.tp is not None]
    if with_mask:
        counts = {k: sum(getattr(r, k) for r in with_mask) for k in ("tp", "fp", "fn")}
        agg.tp, agg.fp, agg.fn = counts["tp"], counts["fp"], counts["fn"]
        agg.precision, agg.recall, agg.f1 = scores_from_counts(counts)
    with_flow = [r for r in rows if r.mepe is not None]
    if with_flow:
        moving = [r for r in with_flow if r.union_pixels]
        agg.union_pixels = sum(r.union_pixels for r in with_flow)
        if moving:
            agg.mepe = float(np.mean([r.mepe for r in moving]))
        else:
            agg.mepe = 0.0
            agg.flags.append(UNDEFINED_MOTION)
    _finish(agg, epsilon)
    return agg


@dataclasses.dataclass
class MetricReport:
    rows: List[SampleMetrics]
    aggregate: SampleMetrics
    delta: float = 0.5
    epsilon: float = 1e-6
    threshold: float = 0.5
    errors: Dict[str, str] = dataclasses.field(default_factory=dict)

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[SampleMetrics],
        delta: float = 0.5,
        epsilon: float = 1e-6,
        threshold: float = 0.5,
        errors: Optional[Dict[str, str]] = None,
    ) -> MetricReport:
        return cls(list(rows), aggregate(rows, epsilon), delta, epsilon, threshold, dict(errors or {}))

    @property
    def f1(self) -> Optional[float]:
        return self.aggregate.f1

    @property
    def mepe(self) -> Optional[float]:
        return self.aggregate.mepe

    @property
    def fepe(self) -> Optional[float]:
        return self.aggregate.fepe

    @property
    def flags(self) -> List[str]:
        return self.aggregate.flags

    def to_dict(self) -> Dict[str, Any]:
        def _row(r: SampleMetrics):
            return {k: getattr(r, k) for k in SampleMetrics.CSV_FIELDS}

        return {
            "delta": self.delta,
            "epsilon": self.epsilon,
            "threshold": self.threshold,
            "aggregate": _row(self.aggregate),
            "samples": [_row(r) for r in self.rows],
            "errors": self.errors,
        }

    def write_json(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_csv(self, path: str):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=SampleMetrics.CSV_FIELDS)
            writer.writeheader()
            for r in [*self.rows, self.aggregate]:
                writer.writerow(r.csv_row())


def format_cell(value: Optional[float], digits: int = 3) -> str:
    """Table cell for a metric, ``-`` when the metric does not apply."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"
