"""Training, evaluation, ablation, timing and inference on top of the models."""

from flowcd.harness.ablate import AblationRow, AblationTable, ablate
from flowcd.harness.bench import BenchReport, bench, bench_model
from flowcd.harness.evaluate import evaluate, evaluate_model, evaluate_predictor
from flowcd.harness.infer import infer_pair
from flowcd.harness.train import (
    Trainer,
    TrainingResult,
    load_checkpoint,
    model_from_checkpoint,
    train,
)
from flowcd.harness.viz import render_panel, write_panel
