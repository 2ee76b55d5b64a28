"""The dual branch model."""

from __future__ import annotations

import dataclasses
from typing import Iterator, List, Optional

import torch
import torch.nn as nn

from flowcd.config import BRANCH_SELECTORS, CdConfig, OfConfig, RunConfig
from flowcd.exceptions import ValidationError
from flowcd.models.cd_branch import CdOutput, ChangeDetectionBranch
from flowcd.models.of_branch import OpticalFlowBranch


@dataclasses.dataclass
class FlowCDOutput:
    """``flow`` is output1 and ``change.probability`` output2, absent for a disabled branch."""

    flow: Optional[torch.Tensor]
    change: Optional[CdOutput]
    flow_sequence: Optional[List[torch.Tensor]] = None

    @property
    def change_probability(self) -> Optional[torch.Tensor]:
        return None if self.change is None else self.change.probability


class FlowCDNet(nn.Module):
    """Optical flow and change detection trained jointly.

    The change branch warps ``t1`` with the flow branch's estimate, so its
    loss also trains the flow branch. With ``branch_selector="cd_only"`` the
    change branch warps with a zero flow and the flow branch is not run; with
    ``"of_only"`` the change branch is not run.
    """

    def __init__(
        self,
        of_cfg: Optional[OfConfig] = None,
        cd_cfg: Optional[CdConfig] = None,
        branch_selector: str = "both",
    ):
        super().__init__()
        if branch_selector not in BRANCH_SELECTORS:
            raise ValidationError(
                f"branch_selector must be one of {BRANCH_SELECTORS}, got {branch_selector!r}"
            )
        self.branch_selector = branch_selector
        self.of = OpticalFlowBranch(of_cfg)
        self.cd = ChangeDetectionBranch(cd_cfg)

    @property
    def uses_flow(self) -> bool:
        return self.branch_selector != "cd_only"

    @property
    def uses_change(self) -> bool:
        return self.branch_selector != "of_only"

    def of_parameters(self) -> Iterator[nn.Parameter]:
        return self.of.parameters()

    def cd_parameters(self) -> Iterator[nn.Parameter]:
        return self.cd.parameters()

    def forward(self, t0: torch.Tensor, t1: torch.Tensor, return_sequence: bool = False) -> FlowCDOutput:
        """Run the enabled branches on (B, 3, H, W) frames in [0, 1]."""
        flow, sequence = None, None
        if self.uses_flow:
            if return_sequence:
                sequence = self.of(t0, t1, return_sequence=True)
                flow = sequence[-1]
            else:
                flow = self.of(t0, t1)
        change = None
        if self.uses_change:
            warp_flow = flow if flow is not None else t0.new_zeros(t0.shape[0], 2, *t0.shape[-2:])
            change = self.cd(t0, t1, warp_flow)
        return FlowCDOutput(flow=flow, change=change, flow_sequence=sequence)


def build_model(cfg: RunConfig, branch_selector: Optional[str] = None) -> FlowCDNet:
    """A freshly initialised model, weights depend only on ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    return FlowCDNet(cfg.of, cfg.cd, branch_selector or cfg.branch_selector)
