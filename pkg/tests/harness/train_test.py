"""Tests for harness/train.py"""

import importlib
import csv
import dataclasses
import json
import math

import pytest

torch = pytest.importorskip("torch")

from flowcd import config, objectives
from flowcd.exceptions import NumericalError
data = importlib.import_module("flowcd.harness.data")
train = importlib.import_module("flowcd.harness.train")


def test_zero_epochs_writes_initial_state(tmp_path, tiny_config, tiny_dataset):
    cfg = dataclasses.replace(tiny_config, epochs=0)
    result = train.train(cfg, tiny_dataset, str(tmp_path))
    assert result.history == []
    assert result.final == {}
    assert result.checkpoint.epoch == 0
    assert len(result.report.rows) == len(tiny_dataset)
    for name in (train.CHECKPOINT_NAME, train.HISTORY_NAME, "metrics.json", "metrics.csv"):
        assert (tmp_path / name).exists()
    with open(tmp_path / train.HISTORY_NAME) as f:
        assert next(csv.reader(f)) == list(train.HISTORY_FIELDS)


def test_one_epoch(tmp_path, tiny_config, tiny_dataset):
    result = train.train(tiny_config, tiny_dataset, str(tmp_path))
    assert len(result.history) == 1
    entry = result.final
    assert entry["epoch"] == 1
    assert math.isfinite(entry["loss"])
    assert entry["l2"] is not None and entry["tversky"] is not None
    assert entry["loss"] == pytest.approx(entry["l2"] + tiny_config.loss.psi * entry["tversky"], rel=1e-4)

    loaded = train.load_checkpoint(str(tmp_path / train.CHECKPOINT_NAME))
    assert loaded.epoch == 1
    assert loaded.history[0]["loss"] == pytest.approx(entry["loss"])
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["aggregate"]["f1"] == pytest.approx(result.report.f1)


def test_optimizer_groups_have_branch_learning_rates(tiny_config):
    model = train.build_model(tiny_config)
    optimizer = train.make_optimizer(model, tiny_config)
    assert [g["lr"] for g in optimizer.param_groups] == [tiny_config.of_lr, tiny_config.cd_lr]
    assert tiny_config.cd_lr / tiny_config.of_lr == pytest.approx(10)


def _max_update(before, params):
    return max(float((p.detach() - b).abs().max()) for b, p in zip(before, params))


def test_first_step_moves_each_branch_by_its_learning_rate(tiny_config, tiny_dataset):
    trainer = train.Trainer(tiny_config, tiny_dataset)
    of_params = list(trainer.model.of_parameters())
    cd_params = list(trainer.model.cd_parameters())
    of_before = [p.detach().clone() for p in of_params]
    cd_before = [p.detach().clone() for p in cd_params]
    trainer.model.train()
    trainer.train_step(next(iter(trainer.loader)))
    # The first AdamW step moves a parameter by at most about lr.
    of_step = _max_update(of_before, of_params)
    cd_step = _max_update(cd_before, cd_params)
    assert 0.5 * tiny_config.of_lr < of_step < 1.1 * tiny_config.of_lr
    assert 0.5 * tiny_config.cd_lr < cd_step < 1.1 * tiny_config.cd_lr
    assert cd_step / of_step == pytest.approx(10, rel=0.5)


def test_non_finite_loss_raises(monkeypatch, tiny_config, tiny_dataset):
    def bad_losses(*args, **kwargs):
        nan = torch.tensor(float("nan"), requires_grad=True)
        return {"l2": nan, "tversky": torch.tensor(0.1), "total": nan}

    monkeypatch.setattr(objectives, "compute_losses", bad_losses)
    trainer = train.Trainer(tiny_config, tiny_dataset)
    batch = next(iter(trainer.loader))
    with pytest.raises(NumericalError) as e:
        trainer.train_step(batch)
    assert e.value.batch_ids == list(batch["id"])
    assert math.isnan(e.value.components["total"])
    assert e.value.exit_code == 3


def test_per_iteration_supervision(tiny_config, tiny_dataset):
    cfg = config.RunConfig.from_dict(
        {"of": {"per_iteration_supervision": True, "iterations": 2}}, base=tiny_config
    )
    trainer = train.Trainer(cfg, tiny_dataset)
    assert trainer.gamma == cfg.of.iteration_gamma
    trainer.model.train()
    components, rows = trainer.train_step(next(iter(trainer.loader)))
    assert math.isfinite(components["total"])
    assert len(rows) == cfg.batch_size


@pytest.mark.parametrize("selector,missing", [("of_only", "tversky"), ("cd_only", "l2")])
def test_single_branch_history(tiny_config, tiny_dataset, selector, missing):
    cfg = dataclasses.replace(tiny_config, branch_selector=selector)
    result = train.Trainer(cfg, tiny_dataset).run()
    assert result.final[missing] is None
    if selector == "of_only":
        assert result.report.f1 is None and result.report.mepe is not None
    else:
        assert result.report.mepe is None and result.report.f1 is not None
        assert result.final["loss"] == pytest.approx(result.final["tversky"])


def test_loader_order_is_seeded(tiny_config, tiny_dataset):
    a = [list(b["id"]) for b in data.make_loader(tiny_dataset, tiny_config)]
    b = [list(b["id"]) for b in data.make_loader(tiny_dataset, tiny_config)]
    assert a == b
    assert sorted(sum(a, [])) == tiny_dataset.ids


def test_model_from_checkpoint_can_switch_branches(tiny_config, tiny_dataset):
    result = train.Trainer(dataclasses.replace(tiny_config, epochs=0), tiny_dataset).run()
    model, cfg = train.model_from_checkpoint(result.checkpoint, branch_selector="cd_only")
    assert model.branch_selector == "cd_only"
    assert cfg == dataclasses.replace(tiny_config, epochs=0)


@pytest.mark.slow
def test_toy_training_converges(tmp_path):
    """The desk scale recipe separates pasted objects and recovers the flow."""
    from flowcd.forge import forge_dataset, get_sources

    cfg = config.load_config("tiny")
    backgrounds, cutouts = get_sources(cfg.forge, "train")
    manifest = forge_dataset(backgrounds, cutouts, cfg.forge, str(tmp_path / "train"))
    result = train.train(cfg, manifest, str(tmp_path / "run"))
    assert result.report.f1 > 0.95
    assert result.report.mepe < 1.0
