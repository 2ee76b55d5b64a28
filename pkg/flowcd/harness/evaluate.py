"""Evaluation of a model (or any predictor) on a forged split."""

import logging
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from flowcd import core, objectives
from flowcd.config import EvalConfig
from flowcd.exceptions import FlowCDError, ValidationError
from flowcd.forge.dataset import DatasetManifest
from flowcd.harness import data
from flowcd.models import FlowCDNet, FlowCDOutput

# A predictor maps a sample to (flow HxWx2, change probability HxW), None for
# a branch it does not have.
Predictor = Callable[[core.BitemporalSample], Tuple[Optional[np.ndarray], Optional[np.ndarray]]]


def prediction_row(
    sample_id: str,
    flow: Optional[np.ndarray],
    probability: Optional[np.ndarray],
    flow_gt: np.ndarray,
    change_gt: np.ndarray,
    cfg: EvalConfig,
) -> objectives.SampleMetrics:
    pred_mask = None if probability is None else core.binarize(probability, cfg.threshold).data
    return objectives.sample_metrics(
        sample_id,
        flow=flow,
        flow_gt=flow_gt if flow is not None else None,
        pred_mask=pred_mask,
        gt_mask=change_gt if pred_mask is not None else None,
        delta=cfg.delta,
        epsilon=cfg.epsilon,
    )


def batch_rows(
    output: FlowCDOutput, batch, cfg: EvalConfig
) -> List[objectives.SampleMetrics]:
    """Per-sample metrics of a batched model output."""
    rows = []
    with torch.no_grad():
        for i, sample_id in enumerate(batch["id"]):
            flow = None if output.flow is None else data.flow_array(output.flow[i])
            prob = None
            if output.change is not None:
                prob = output.change.probability[i, 0].detach().cpu().numpy()
            rows.append(
                prediction_row(
                    sample_id,
                    flow,
                    prob,
                    data.flow_array(batch["flow"][i]),
                    batch["change"][i, 0].cpu().numpy(),
                    cfg,
                )
            )
    return rows


def model_predictor(model: FlowCDNet, device="cpu") -> Predictor:
    def predict(sample: core.BitemporalSample):
        t0, t1 = data.pair_batch(sample.t0.data, sample.t1.data, device)
        output = model(t0, t1)
        flow = None if output.flow is None else data.flow_array(output.flow[0])
        prob = None
        if output.change is not None:
            prob = output.change.probability[0, 0].cpu().numpy()
        return flow, prob

    return predict


def evaluate_predictor(
    predict: Predictor, manifest: DatasetManifest, cfg: Optional[EvalConfig] = None
) -> objectives.MetricReport:
    """Score ``predict`` on every sample, samples that fail are recorded and skipped."""
    logger = logging.getLogger("flowcd")
    cfg = cfg or EvalConfig()
    if not len(manifest):
        raise ValidationError(f"Manifest for split {manifest.split!r} has no samples")
    rows, errors = [], {}
    for index, entry in enumerate(manifest.entries):
        try:
            sample = manifest.read(index)
            flow, prob = predict(sample)
            rows.append(
                prediction_row(
                    sample.id, flow, prob, sample.flow_label.data, sample.change_label.data, cfg
                )
            )
        except (FlowCDError, OSError) as e:
            logger.warning(f"Skipping sample {entry.id}: {e}")
            errors[entry.id] = str(e)
    report = objectives.MetricReport.from_rows(
        rows, cfg.delta, cfg.epsilon, cfg.threshold, errors
    )
    logger.info(
        f"Evaluated {len(rows)} samples ({len(errors)} errors): "
        f"F1 {objectives.format_cell(report.f1)} mEPE {objectives.format_cell(report.mepe)} "
        f"FEPE {objectives.format_cell(report.fepe)}"
    )
    return report


def evaluate_model(
    model: FlowCDNet,
    manifest: DatasetManifest,
    cfg: Optional[EvalConfig] = None,
    device="cpu",
) -> objectives.MetricReport:
    """Evaluate in eval mode without gradients, the model is left as it was found."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return evaluate_predictor(model_predictor(model, device), manifest, cfg)
    finally:
        model.train(was_training)


def evaluate(
    ckpt,
    manifest: DatasetManifest,
    delta: Optional[float] = None,
    epsilon: Optional[float] = None,
    threshold: Optional[float] = None,
    device: Optional[str] = None,
    eval_overrides: Optional[Dict[str, Any]] = None,
) -> objectives.MetricReport:
    """Evaluate a checkpoint (or a path to one) on ``manifest``.

    The eval settings saved with the checkpoint apply unless replaced, first by
    the keys of ``eval_overrides`` and then by ``delta``, ``epsilon`` and
    ``threshold`` when given.
    """
    from flowcd.harness.train import model_from_checkpoint

    model, cfg = model_from_checkpoint(ckpt, device=device)
    overrides = dict(eval_overrides or {})
    overrides.update(
        (k, v) for k, v in (("delta", delta), ("epsilon", epsilon), ("threshold", threshold)) if v is not None
    )
    eval_cfg = EvalConfig.from_dict(overrides, base=cfg.eval)
    return evaluate_model(model, manifest, eval_cfg, device or cfg.resolved_device)
