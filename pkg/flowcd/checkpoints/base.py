"""The checkpoint interface and lookup of checkpoint format plugins."""

from __future__ import annotations

import sys
from abc import ABCMeta, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch

if sys.version_info < (3, 10):
    from importlib_metadata import entry_points
else:
    from importlib.metadata import entry_points

from flowcd import utils
from flowcd.exceptions import ValidationError

PLUGIN_GROUP = "flowcd.plugins.checkpoints"


@utils.abstract_classattributes("name")
class Checkpoint(dict, metaclass=ABCMeta):
    """The weights of a dual-branch model plus what is needed to resume or rebuild it.

    The dict holds the model parameters as numpy arrays nested by the parts of
    their torch ``state_dict`` name, ``of.fnet.project.weight`` lives at
    ``ckpt["of"]["fnet"]["project"]["weight"]``. ``config`` is the serialized
    ``RunConfig`` the model was built from, ``history`` holds one metric row
    per finished epoch and ``optimizer`` an optional optimizer ``state_dict``.
    """

    name: str = NotImplemented

    def __init__(
        self,
        params: Optional[Dict[str, Any]] = None,
        *,
        config: Optional[Dict[str, Any]] = None,
        epoch: int = 0,
        history: Optional[List[Dict[str, Any]]] = None,
        optimizer: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(params or {})
        self.config = dict(config or {})
        self.epoch = epoch
        self.history = list(history or [])
        self.optimizer = optimizer

    @classmethod
    def from_file(cls, checkpoint_path) -> Checkpoint:
        return cls.load(checkpoint_path)

    @classmethod
    @abstractmethod
    def load(cls, checkpoint_path) -> Checkpoint:
        """Read a checkpoint and its metadata.

        Parameters
        ----------
        checkpoint_path : str or file-like object
            Where the checkpoint was saved.

        Raises
        ------
        FormatError
            The file is not a checkpoint of this format or version.
        """

    @abstractmethod
    def save(self, checkpoint_path):
        """Write the checkpoint and its metadata to ``checkpoint_path`` (path or binary file)."""

    @classmethod
    def from_framework(cls, state_dict: Dict[str, torch.Tensor], **metadata) -> Checkpoint:
        params = utils.unflatten(
            {tuple(k.split(".")): t.detach().cpu().numpy().copy() for k, t in state_dict.items()}
        )
        return cls(params, **metadata)

    def to_framework(self) -> Dict[str, torch.Tensor]:
        return {".".join(path): torch.from_numpy(np.array(a)) for path, a in self.flatten().items()}

    @classmethod
    def from_model(
        cls,
        model: torch.nn.Module,
        optimizer: Optional[torch.optim.Optimizer] = None,
        **metadata,
    ) -> Checkpoint:
        """Snapshot a live model (and optimizer) into a new checkpoint."""
        optimizer_state = None if optimizer is None else optimizer.state_dict()
        return cls.from_framework(model.state_dict(), optimizer=optimizer_state, **metadata)

    def load_into(
        self, model: torch.nn.Module, optimizer: Optional[torch.optim.Optimizer] = None
    ):
        """Copy the weights into ``model``, and the optimizer state when both sides have one.

        Raises
        ------
        ValidationError
            The parameter names differ from the model's, i.e. the checkpoint
            was saved from another architecture or branch selection.
        """
        missing, unexpected = model.load_state_dict(self.to_framework(), strict=False)
        if missing or unexpected:
            raise ValidationError(
                f"Checkpoint does not match the model: missing {missing[:5]}, "
                f"unexpected {unexpected[:5]}"
            )
        if optimizer is not None and self.optimizer is not None:
            optimizer.load_state_dict(self.optimizer)

    def flatten(self) -> Dict[Tuple[str, ...], np.ndarray]:
        return utils.flatten(self, is_leaf=lambda v: isinstance(v, np.ndarray))

    @classmethod
    def diff(cls, new: Checkpoint, old: Checkpoint) -> Tuple[dict, dict, dict]:
        """Parameters only in ``new``, only in ``old``, and in both with different values.

        Each part comes back as a nested dict like the checkpoint itself.
        """
        new_flat, old_flat = new.flatten(), old.flatten()
        added = {k: v for k, v in new_flat.items() if k not in old_flat}
        removed = {k: v for k, v in old_flat.items() if k not in new_flat}
        modified = {
            k: v
            for k, v in new_flat.items()
            if k in old_flat and not np.array_equal(v, old_flat[k])
        }
        return tuple(utils.unflatten(part) for part in (added, removed, modified))


def get_checkpoint_handler_name(checkpoint_type: Optional[str] = None) -> str:
    """An explicit ``checkpoint_type`` wins over ``$FLOWCD_CHECKPOINT_TYPE``, which wins over ``archive``."""
    return checkpoint_type or utils.EnvVarConstants.CHECKPOINT_TYPE


def get_checkpoint_handler(checkpoint_type: Optional[str] = None) -> type:
    """Resolve a checkpoint class from the ``flowcd.plugins.checkpoints`` entry points.

    The bundled ``archive`` format resolves even when the package metadata is
    not installed, e.g. when running from a source checkout.
    """
    from flowcd.checkpoints.archive_checkpoint import ArchiveCheckpoint

    checkpoint_type = get_checkpoint_handler_name(checkpoint_type)
    plugins = entry_points(group=PLUGIN_GROUP)
    if checkpoint_type in plugins.names:
        return plugins[checkpoint_type].load()
    if checkpoint_type == ArchiveCheckpoint.name:
        return ArchiveCheckpoint
    raise ValidationError(
        f"Unknown checkpoint type {checkpoint_type!r}, known: {sorted(set(plugins.names) | {'archive'})}"
    )
