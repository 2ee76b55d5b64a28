"""Feature extractors for the change detection branch.

A backbone maps a (B, 3, H, W) masked difference image to a stride 8 feature
map. Backbones are plugins registered under the ``flowcd.plugins.backbones``
entry point group; the two shipped ones are also available without
installation.
"""

import logging
import sys
from abc import ABCMeta, abstractmethod
from typing import Sequence, Type

import torch
import torch.nn as nn

if sys.version_info < (3, 10):
    from importlib_metadata import entry_points
else:
    from importlib.metadata import entry_points

from flowcd import utils
from flowcd.config import CdConfig
from flowcd.exceptions import ValidationError
from flowcd.models import layers


@utils.abstract_classattributes("name")
class Backbone(nn.Module, metaclass=ABCMeta):
    """Stride 8 feature extractor, ``out_channels`` is set by the instance."""

    name: str = NotImplemented
    out_channels: int

    @classmethod
    @abstractmethod
    def from_config(cls, cfg: CdConfig) -> "Backbone":
        """Build the backbone described by ``cfg``."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        layers.check_divisible(x, f"{self.name} backbone input")
        return self.features(x)

    @abstractmethod
    def features(self, x: torch.Tensor) -> torch.Tensor:
        """The stride 8 feature map of ``x``."""


class ToyBackbone(Backbone):
    """Four residual stages (strides 2, 2, 2 then a dilated stage at stride 8)."""

    name: str = "toy"

    def __init__(self, stage_channels: Sequence[int] = (16, 32, 64, 64)):
        super().__init__()
        c1, c2, c3, c4 = stage_channels
        self.stages = nn.Sequential(
            layers.ResidualBlock(3, c1, "batch", stride=2),
            layers.ResidualBlock(c1, c2, "batch", stride=2),
            layers.ResidualBlock(c2, c3, "batch", stride=2),
            layers.ResidualBlock(c3, c4, "batch", dilation=2),
        )
        self.out_channels = c4
        layers.init_weights(self)

    @classmethod
    def from_config(cls, cfg: CdConfig) -> "ToyBackbone":
        return cls(cfg.backbone_channels)

    def features(self, x):
        return self.stages(x)


class ResNet50Backbone(Backbone):
    """torchvision ResNet50 with dilated stages 3 and 4, output stride 8."""

    name: str = "resnet50"

    def __init__(self):
        super().__init__()
        import torchvision

        net = torchvision.models.resnet50(
            weights=None, replace_stride_with_dilation=[False, True, True]
        )
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.Sequential(net.layer1, net.layer2, net.layer3, net.layer4)
        self.out_channels = 2048

    @classmethod
    def from_config(cls, cfg: CdConfig) -> "ResNet50Backbone":
        return cls()

    def features(self, x):
        return self.stages(self.stem(x))


BUILTIN_BACKBONES = {b.name: b for b in (ToyBackbone, ResNet50Backbone)}


def get_backbone(name: str) -> Type[Backbone]:
    """Look a backbone class up by plugin name."""
    discovered = entry_points(group="flowcd.plugins.backbones")
    if name in discovered.names:
        return discovered[name].load()
    if name in BUILTIN_BACKBONES:
        logging.getLogger("flowcd").debug(f"Backbone {name} is not installed as a plugin, using the builtin")
        return BUILTIN_BACKBONES[name]
    known = sorted(set(discovered.names) | set(BUILTIN_BACKBONES))
    raise ValidationError(f"Unknown backbone {name!r}, expected one of {', '.join(known)}")


def build_backbone(cfg: CdConfig) -> Backbone:
    return get_backbone(cfg.backbone).from_config(cfg)
