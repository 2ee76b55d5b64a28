"""Tests for harness/infer.py"""

import importlib
import logging
import os

import numpy as np
import pytest

torch = pytest.importorskip("torch")

from flowcd import core, files
from flowcd.exceptions import ValidationError
infer = importlib.import_module("flowcd.harness.infer")
train = importlib.import_module("flowcd.harness.train")


@pytest.fixture(scope="module")
def checkpoint_path(tmp_path_factory, tiny_dataset):
    from flowcd import config

    cfg = config.load_config("tiny", ["epochs=0", "of.iterations=2"])
    out = tmp_path_factory.mktemp("ckpt")
    train.train(cfg, tiny_dataset, str(out))
    return str(out / train.CHECKPOINT_NAME)


def _pair(manifest):
    entry = manifest.entries[0]
    return (os.path.join(manifest.root, entry.t0), os.path.join(manifest.root, entry.t1))


def test_infer_writes_outputs(tmp_path, checkpoint_path, tiny_dataset):
    written = infer.infer_pair(checkpoint_path, *_pair(tiny_dataset), str(tmp_path), stem="x")
    assert set(written) == {"flow", "flow_color", "change"}
    assert os.path.basename(written["flow"]) == "x_flow.flo"
    flow = files.read_flo(written["flow"])
    assert flow.shape == (64, 64)
    assert files.read_image(written["flow_color"]).shape == (64, 64, 3)
    assert core.is_binary(files.read_mask(written["change"]))


def test_infer_is_deterministic(tmp_path, checkpoint_path, tiny_dataset):
    a = infer.infer_pair(checkpoint_path, *_pair(tiny_dataset), str(tmp_path / "a"))
    b = infer.infer_pair(checkpoint_path, *_pair(tiny_dataset), str(tmp_path / "b"))
    for key in a:
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read()


def test_thresholds_bound_the_mask(tmp_path, checkpoint_path, tiny_dataset):
    low = infer.infer_pair(checkpoint_path, *_pair(tiny_dataset), str(tmp_path / "lo"), threshold=1e-6)
    high = infer.infer_pair(
        checkpoint_path, *_pair(tiny_dataset), str(tmp_path / "hi"), threshold=1 - 1e-6
    )
    assert files.read_mask(low["change"]).sum() >= files.read_mask(high["change"]).sum()


def test_uneven_frames_are_center_cropped(tmp_path, caplog, checkpoint_path, data_generator):
    sample = data_generator.random_sample(72, 80)
    t0 = np.pad(sample.t0.data, ((1, 2), (0, 3), (0, 0)))
    t1 = np.pad(sample.t1.data, ((1, 2), (0, 3), (0, 0)))
    files.write_image(str(tmp_path / "t0.png"), t0)
    files.write_image(str(tmp_path / "t1.png"), t1)
    with caplog.at_level(logging.WARNING, logger="flowcd"):
        written = infer.infer_pair(
            checkpoint_path, str(tmp_path / "t0.png"), str(tmp_path / "t1.png"), str(tmp_path / "out")
        )
    assert "center cropped" in caplog.text
    assert files.read_flo(written["flow"]).shape == (72, 80)


def test_frames_must_match(tmp_path, checkpoint_path, data_generator):
    files.write_image(str(tmp_path / "t0.png"), data_generator.random_image(64, 64))
    files.write_image(str(tmp_path / "t1.png"), data_generator.random_image(72, 64))
    with pytest.raises(ValidationError, match="differ in size"):
        infer.read_pair(str(tmp_path / "t0.png"), str(tmp_path / "t1.png"))
