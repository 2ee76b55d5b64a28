"""Tests for checkpoints/base.py"""

import os

import numpy as np
import pytest

from flowcd import checkpoints
from flowcd.exceptions import ValidationError

ENV_CHECKPOINT_TYPE = "FLOWCD_CHECKPOINT_TYPE"

torch = pytest.importorskip("torch")


@pytest.fixture
def env_var():
    current_env = dict(os.environ)
    os.environ[ENV_CHECKPOINT_TYPE] = "env_variable_handler"

    yield
    os.environ.clear()
    os.environ.update(current_env)


@pytest.fixture
def no_env_var():
    current_env = dict(os.environ)
    os.environ.pop(ENV_CHECKPOINT_TYPE, None)

    yield
    os.environ.clear()
    os.environ.update(current_env)


@pytest.fixture
def empty_env_var():
    current_env = dict(os.environ)
    os.environ[ENV_CHECKPOINT_TYPE] = ""

    yield
    os.environ.clear()
    os.environ.update(current_env)


def test_get_checkpoint_handler_name_user_input(env_var):
    """Check that function prefers user input to environment variable"""

    user_input = "user_input_handler"
    name = checkpoints.get_checkpoint_handler_name(user_input)
    assert name == user_input


def test_get_checkpoint_handler_name_env_variable(env_var):
    """Check that function uses environment variable no user input specified"""

    name = checkpoints.get_checkpoint_handler_name()
    assert name == "env_variable_handler"


def test_get_checkpoint_handler_name_default1(no_env_var):
    name = checkpoints.get_checkpoint_handler_name()
    assert name == "archive"


def test_get_checkpoint_handler_name_default2(empty_env_var):
    """An empty environment variable falls back to the default."""
    name = checkpoints.get_checkpoint_handler_name()
    assert name == "archive"


def test_get_checkpoint_handler_archive(no_env_var):
    out = checkpoints.get_checkpoint_handler()
    assert out is checkpoints.archive_checkpoint.ArchiveCheckpoint


def test_get_checkpoint_handler_unknown(env_var):
    with pytest.raises(ValidationError, match="env_variable_handler"):
        checkpoints.get_checkpoint_handler()


def _linear_state(seed):
    torch.manual_seed(seed)
    return torch.nn.Sequential(torch.nn.Linear(3, 2), torch.nn.BatchNorm1d(2)).state_dict()


def test_from_framework_nests_names():
    ckpt = checkpoints.get_checkpoint_handler("archive").from_framework(_linear_state(0))
    assert set(ckpt) == {"0", "1"}
    assert ckpt["0"]["weight"].shape == (2, 3)
    assert ckpt["1"]["num_batches_tracked"].shape == ()
    assert ("1", "running_mean") in ckpt.flatten()


def test_framework_round_trip():
    state = _linear_state(0)
    handler = checkpoints.get_checkpoint_handler("archive")
    back = handler.from_framework(state).to_framework()
    assert back.keys() == state.keys()
    for k in state:
        assert torch.equal(back[k], state[k])


def test_load_into_rejects_other_models():
    handler = checkpoints.get_checkpoint_handler("archive")
    ckpt = handler.from_framework(_linear_state(0))
    with pytest.raises(ValidationError):
        ckpt.load_into(torch.nn.Linear(3, 2))


def test_diff():
    handler = checkpoints.get_checkpoint_handler("archive")
    old = handler.from_framework(_linear_state(0))
    new = handler.from_framework(_linear_state(1))
    new["2"] = {"weight": np.ones(2, dtype=np.float32)}
    del new["1"]
    added, removed, modified = handler.diff(new, old)
    assert set(added) == {"2"}
    assert set(removed) == {"1"}
    assert set(modified["0"]) == {"weight", "bias"}
