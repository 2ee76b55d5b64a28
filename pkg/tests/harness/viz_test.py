"""Tests for harness/viz.py"""

import numpy as np
import pytest

from flowcd import core, files
from flowcd.exceptions import ValidationError
from flowcd.harness import viz


def test_panel_layout(data_generator):
    sample = data_generator.random_sample(16, 24)
    panel = viz.render_panel(
        sample.t0.data, sample.t1.data, sample.flow_label, sample.change_label.data
    )
    assert panel.shape == (16, 96, 3)
    np.testing.assert_array_equal(panel[:, :24], sample.t0.data)
    np.testing.assert_array_equal(panel[:, 24:48], sample.t1.data)
    np.testing.assert_array_equal(panel[:, 72:, 0], sample.change_label.data)


def test_zero_flow_panel_is_white(data_generator):
    sample = data_generator.random_sample(16, 16)
    panel = viz.render_panel(
        sample.t0.data, sample.t1.data, np.zeros((16, 16, 2)), np.zeros((16, 16))
    )
    assert np.all(panel[:, 32:48] == 1.0)
    assert np.all(panel[:, 48:] == 0.0)


def test_panel_shape_mismatch(data_generator):
    sample = data_generator.random_sample(16, 16)
    with pytest.raises(ValidationError):
        viz.render_panel(sample.t0.data, sample.t1.data, np.zeros((16, 16, 2)), np.zeros((16, 24)))


def test_write_panel_with_prediction(tmp_path, data_generator):
    sample = data_generator.random_sample(16, 16)
    mask = np.ones((16, 16), dtype=np.float32)
    path = tmp_path / "panel.png"
    panel = viz.write_panel(str(path), sample, mask=mask)
    read = files.read_image(str(path))
    assert read.shape == (16, 64, 3)
    np.testing.assert_array_equal(read[:, 48:], 1.0)
    np.testing.assert_allclose(read, core.quantize(panel), atol=1e-6)
