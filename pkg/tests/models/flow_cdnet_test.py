"""Tests for models/flow_cdnet.py"""

import pytest

torch = pytest.importorskip("torch")

from flowcd import config
from flowcd.exceptions import ValidationError
from flowcd.models import flow_cdnet


@pytest.fixture(scope="module")
def cfg():
    return config.load_config("tiny", ["of.iterations=3"])


@pytest.fixture(scope="module")
def frames():
    torch.manual_seed(0)
    return torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64)


@pytest.mark.parametrize(
    "selector,has_flow,has_change",
    [("both", True, True), ("of_only", True, False), ("cd_only", False, True)],
)
def test_branch_selection(cfg, frames, selector, has_flow, has_change):
    model = flow_cdnet.build_model(cfg, selector).eval()
    with torch.no_grad():
        out = model(*frames)
    assert (out.flow is not None) == has_flow
    assert (out.change is not None) == has_change
    assert (out.change_probability is not None) == has_change
    if has_flow:
        assert out.flow.shape == (1, 2, 64, 64)
    if has_change:
        assert out.change.probability.shape == (1, 1, 64, 64)


def test_cd_only_warps_with_zero_flow(cfg, frames):
    model = flow_cdnet.build_model(cfg, "cd_only").eval()
    with torch.no_grad():
        out = model(*frames)
    assert torch.equal(out.change.warped, frames[1])


def test_unknown_selector(cfg):
    with pytest.raises(ValidationError):
        flow_cdnet.FlowCDNet(cfg.of, cfg.cd, "neither")


def test_build_model_is_deterministic(cfg):
    a = flow_cdnet.build_model(cfg).state_dict()
    b = flow_cdnet.build_model(cfg).state_dict()
    c = flow_cdnet.build_model(config.load_config("tiny", ["seed=1"])).state_dict()
    assert a.keys() == b.keys()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_parameter_groups_partition_the_model(cfg):
    model = flow_cdnet.build_model(cfg)
    of_ids = {id(p) for p in model.of_parameters()}
    cd_ids = {id(p) for p in model.cd_parameters()}
    assert of_ids and cd_ids
    assert not of_ids & cd_ids
    assert of_ids | cd_ids == {id(p) for p in model.parameters()}


def test_return_sequence(cfg, frames):
    model = flow_cdnet.build_model(cfg).eval()
    with torch.no_grad():
        out = model(*frames, return_sequence=True)
    assert len(out.flow_sequence) == 3
    assert out.flow_sequence[-1] is out.flow


def test_change_loss_reaches_the_flow_branch(cfg, frames):
    """The change branch warps with the estimated flow, so it trains the flow branch too."""
    model = flow_cdnet.build_model(cfg)
    out = model(*frames)
    out.change.probability.mean().backward()
    of_grads = [p.grad for p in model.of_parameters() if p.grad is not None]
    assert of_grads
    assert any(torch.count_nonzero(g) for g in of_grads)
