"""Joint training of both branches."""

import csv
import dataclasses
import logging
import math
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from flowcd import checkpoints, objectives
from flowcd.config import RunConfig
from flowcd.exceptions import NumericalError
from flowcd.forge.dataset import DatasetManifest
from flowcd.harness import data
from flowcd.harness.evaluate import batch_rows, evaluate_model
from flowcd.models import FlowCDNet, build_model

HISTORY_FIELDS = ("epoch", "loss", "l2", "tversky", "f1", "mepe", "fepe")
CHECKPOINT_NAME = "checkpoint.ckpt"
HISTORY_NAME = "history.csv"


def make_optimizer(model: FlowCDNet, cfg: RunConfig) -> torch.optim.AdamW:
    """AdamW with one parameter group per branch, each with its own learning rate."""
    return torch.optim.AdamW(
        [
            {"params": list(model.of_parameters()), "lr": cfg.of_lr},
            {"params": list(model.cd_parameters()), "lr": cfg.cd_lr},
        ],
        betas=tuple(cfg.optimizer.betas),
        eps=cfg.optimizer.eps,
        weight_decay=cfg.optimizer.weight_decay,
    )


@dataclasses.dataclass
class TrainingResult:
    model: FlowCDNet
    optimizer: torch.optim.Optimizer
    history: List[Dict[str, Any]]
    checkpoint: checkpoints.Checkpoint
    report: objectives.MetricReport

    @property
    def final(self) -> Dict[str, Any]:
        return self.history[-1] if self.history else {}


def write_history(path: str, history: List[Dict[str, Any]]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({k: "" if row.get(k) is None else row[k] for k in HISTORY_FIELDS})


class Trainer:
    """Minimises the joint loss of the enabled branches over a forged split."""

    def __init__(
        self,
        cfg: RunConfig,
        manifest: DatasetManifest,
        model: Optional[FlowCDNet] = None,
        device: Optional[str] = None,
    ):
        self.cfg = cfg
        self.manifest = manifest
        self.device = torch.device(device or cfg.resolved_device)
        self.model = (model or build_model(cfg)).to(self.device)
        self.optimizer = make_optimizer(self.model, cfg)
        self.loader = data.make_loader(manifest, cfg, shuffle=True)
        self.history: List[Dict[str, Any]] = []
        self.gamma = cfg.of.iteration_gamma if cfg.of.per_iteration_supervision else None

    def _to_device(self, batch):
        return {k: v.to(self.device) if torch.is_tensor(v) else v for k, v in batch.items()}

    def train_step(self, batch) -> Tuple[Dict[str, float], List[objectives.SampleMetrics]]:
        batch = self._to_device(batch)
        self.optimizer.zero_grad()
        output = self.model(batch["t0"], batch["t1"], return_sequence=self.gamma is not None)
        losses = objectives.compute_losses(
            output, batch["flow"], batch["change"], self.cfg.loss, self.gamma
        )
        components = {k: float(v.detach()) for k, v in losses.items()}
        if not all(math.isfinite(v) for v in components.values()):
            logging.getLogger("flowcd").error(
                f"Non-finite loss on batch {list(batch['id'])}: {components}"
            )
            raise NumericalError("Non-finite loss", batch_ids=batch["id"], components=components)
        losses["total"].backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        return components, batch_rows(output, batch, self.cfg.eval)

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        self.model.train()
        totals: Dict[str, List[float]] = {}
        rows: List[objectives.SampleMetrics] = []
        for batch in self.loader:
            components, batch_metrics = self.train_step(batch)
            for k, v in components.items():
                totals.setdefault(k, []).append(v)
            rows.extend(batch_metrics)
        agg = objectives.aggregate(rows, self.cfg.eval.epsilon)
        entry = {
            "epoch": epoch,
            "loss": float(np.mean(totals["total"])),
            "l2": float(np.mean(totals["l2"])) if "l2" in totals else None,
            "tversky": float(np.mean(totals["tversky"])) if "tversky" in totals else None,
            "f1": agg.f1,
            "mepe": agg.mepe,
            "fepe": agg.fepe,
        }
        logging.getLogger("flowcd").info(
            f"epoch {epoch}: loss {entry['loss']:.5f} F1 {objectives.format_cell(entry['f1'])} "
            f"mEPE {objectives.format_cell(entry['mepe'])}"
        )
        return entry

    def checkpoint(self) -> checkpoints.Checkpoint:
        handler = checkpoints.get_checkpoint_handler()
        return handler.from_model(
            self.model,
            self.optimizer,
            config=json_safe(self.cfg.serialize()),
            epoch=len(self.history),
            history=self.history,
        )

    def run(self, out_dir: Optional[str] = None) -> TrainingResult:
        logger = logging.getLogger("flowcd")
        logger.info(
            f"Training {self.cfg.branch_selector} on {len(self.manifest)} samples for "
            f"{self.cfg.epochs} epochs (OF lr {self.cfg.of_lr}, CD lr {self.cfg.cd_lr}, "
            f"batch {self.cfg.batch_size}, device {self.device})"
        )
        logger.info(f"Gradients are clipped to a global norm of {self.cfg.grad_clip}")
        for epoch in tqdm(range(1, self.cfg.epochs + 1), desc="train", unit="epoch", leave=False):
            self.history.append(self.train_epoch(epoch))
        report = evaluate_model(self.model, self.manifest, self.cfg.eval, self.device)
        ckpt = self.checkpoint()
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            ckpt.save(os.path.join(out_dir, CHECKPOINT_NAME))
            write_history(os.path.join(out_dir, HISTORY_NAME), self.history)
            report.write_json(os.path.join(out_dir, "metrics.json"))
            report.write_csv(os.path.join(out_dir, "metrics.csv"))
            logger.info(f"Wrote checkpoint and reports to {out_dir}")
        return TrainingResult(self.model, self.optimizer, self.history, ckpt, report)


def json_safe(d: Dict[str, Any]) -> Dict[str, Any]:
    """Config dict with tuples as lists, as it reads back from JSON."""

    def _convert(v):
        if isinstance(v, dict):
            return {k: _convert(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [_convert(x) for x in v]
        return v

    return _convert(d)


def train(
    cfg: RunConfig, manifest: DatasetManifest, out_dir: Optional[str] = None
) -> TrainingResult:
    return Trainer(cfg, manifest).run(out_dir)


def load_checkpoint(path) -> checkpoints.Checkpoint:
    return checkpoints.get_checkpoint_handler().from_file(path)


def model_from_checkpoint(
    ckpt, device: Optional[str] = None, branch_selector: Optional[str] = None
) -> Tuple[FlowCDNet, RunConfig]:
    """Rebuild the model a checkpoint (or a path to one) was saved from."""
    if not isinstance(ckpt, checkpoints.Checkpoint):
        ckpt = load_checkpoint(ckpt)
    cfg = RunConfig.from_dict(ckpt.config)
    model = build_model(cfg, branch_selector)
    ckpt.load_into(model)
    return model.to(device or cfg.resolved_device), cfg
