"""Neural network models."""

from flowcd.models.flow_cdnet import FlowCDNet, FlowCDOutput, build_model
