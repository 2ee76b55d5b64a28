"""Shared fixtures for running tests"""

import random
import string

import numpy as np
import pytest

from flowcd import config, core


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow training tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class DataGenerator:
    @staticmethod
    def random_image(height=16, width=16, rng=np.random):
        return rng.rand(height, width, 3).astype(np.float32)

    @staticmethod
    def random_flow(height=16, width=16, scale=3.0, rng=np.random):
        return (rng.randn(height, width, 2) * scale).astype(np.float32)

    @staticmethod
    def random_mask(height=16, width=16, p=0.3, rng=np.random):
        return (rng.rand(height, width) < p).astype(np.float32)

    @staticmethod
    def random_sample(height=16, width=16, sample_id=None):
        return core.BitemporalSample(
            t0=core.Image(core.quantize(DataGenerator.random_image(height, width))),
            t1=core.Image(core.quantize(DataGenerator.random_image(height, width))),
            flow_label=core.FlowField(DataGenerator.random_flow(height, width)),
            change_label=core.ChangeMask(DataGenerator.random_mask(height, width)),
            id=sample_id or "".join(random.choices(string.ascii_lowercase, k=8)),
        )

    @staticmethod
    def random_nested_dict(
        allowed_keys=list(string.ascii_letters), allowed_values=list(range(100))
    ):
        """Generate random nested dicts for testing."""
        result = {}
        prev = [result]
        curr = result
        for _ in range(random.randint(20, 50)):
            key = random.choice(allowed_keys)
            if random.choice([True, False]):
                curr[key] = {}
                prev.append(curr)
                curr = curr[key]
                continue
            curr[key] = random.choice(allowed_values)
            if random.choice([True, False]):
                curr = prev.pop()
            if not prev:
                break
        return result


@pytest.fixture
def data_generator():
    return DataGenerator


@pytest.fixture
def tiny_config():
    """The desk scale preset, trimmed to a handful of samples."""
    return config.load_config("tiny", ["forge.samples=4", "forge.test_samples=2", "epochs=1"])


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A forged 64x64 train split of four samples, shared by the harness tests."""
    from flowcd.forge import forge_dataset, get_sources

    cfg = config.load_config("tiny", ["forge.samples=4"])
    backgrounds, cutouts = get_sources(cfg.forge, "train")
    out_dir = tmp_path_factory.mktemp("forged") / "train"
    return forge_dataset(backgrounds, cutouts, cfg.forge, str(out_dir), "train")
