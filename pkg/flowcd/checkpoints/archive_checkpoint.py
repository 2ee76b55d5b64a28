"""Single file checkpoint archive.

A msgpack envelope with a format tag and version, the run config and metric
history as JSON, the epoch, the model parameters as a safetensors blob, and
the optimizer state split into a safetensors blob of its tensors and a JSON
description of everything else.
"""

import json
from typing import Any, Dict, Optional, Tuple

import msgpack
import numpy as np
import safetensors.numpy
import torch
from file_or_name import file_or_name

from flowcd import utils
from flowcd.checkpoints.base import Checkpoint
from flowcd.exceptions import FormatError

FORMAT_TAG = "flowcd-checkpoint"
FORMAT_VERSION = 1


def pack_arrays(arrays: Dict[str, np.ndarray]) -> Tuple[bytes, Dict[str, list]]:
    """safetensors bytes of ``arrays`` and their shapes (0-d arrays are stored as 1-d)."""
    shapes = {k: list(v.shape) for k, v in arrays.items()}
    blob = safetensors.numpy.save(
        {k: np.ascontiguousarray(np.atleast_1d(v)) for k, v in arrays.items()}
    )
    return blob, shapes


def unpack_arrays(blob: bytes, shapes: Dict[str, list]) -> Dict[str, np.ndarray]:
    arrays = safetensors.numpy.load(blob)
    return {k: v.reshape(shapes[k]) for k, v in arrays.items()}


def split_optimizer_state(state_dict: Dict[str, Any]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Separate the tensors of a torch optimizer ``state_dict`` from its structure."""
    tensors, scalars = {}, {}
    for index, state in state_dict["state"].items():
        for key, value in state.items():
            name = utils.join_name((str(index), key))
            if isinstance(value, torch.Tensor):
                tensors[name] = value.detach().cpu().numpy()
            else:
                scalars[name] = value
    structure = {"param_groups": state_dict["param_groups"], "scalars": scalars}
    return tensors, structure


def merge_optimizer_state(tensors: Dict[str, np.ndarray], structure: Dict[str, Any]) -> Dict[str, Any]:
    state: Dict[int, Dict[str, Any]] = {}
    items = [(k, torch.from_numpy(v.copy())) for k, v in tensors.items()]
    items += list(structure["scalars"].items())
    for name, value in items:
        index, key = utils.split_name(name)
        state.setdefault(int(index), {})[key] = value
    return {"state": state, "param_groups": structure["param_groups"]}


class ArchiveCheckpoint(Checkpoint):
    """Versioned msgpack + safetensors archive of a whole training state."""

    name: str = "archive"

    @classmethod
    @file_or_name(checkpoint_path="rb")
    def load(cls, checkpoint_path) -> "ArchiveCheckpoint":
        where = getattr(checkpoint_path, "name", "<stream>")
        try:
            envelope = msgpack.unpackb(checkpoint_path.read(), raw=False)
        except (msgpack.exceptions.UnpackException, ValueError) as e:
            raise FormatError(f"{where}: not a checkpoint archive: {e}")
        if not isinstance(envelope, dict) or envelope.get("format") != FORMAT_TAG:
            raise FormatError(f"{where}: not a checkpoint archive")
        if envelope.get("version") != FORMAT_VERSION:
            raise FormatError(
                f"{where}: unsupported archive version {envelope.get('version')}, "
                f"expected {FORMAT_VERSION}"
            )
        flat = unpack_arrays(envelope["parameters"], envelope["shapes"])
        params = utils.unflatten({utils.split_name(k): v for k, v in flat.items()})
        optimizer: Optional[Dict[str, Any]] = None
        if envelope.get("optimizer_structure") is not None:
            structure = json.loads(envelope["optimizer_structure"])
            tensors = unpack_arrays(envelope["optimizer_tensors"], structure.pop("shapes"))
            optimizer = merge_optimizer_state(tensors, structure)
        return cls(
            params,
            config=json.loads(envelope["config"]),
            epoch=envelope["epoch"],
            history=json.loads(envelope["history"]),
            optimizer=optimizer,
        )

    @file_or_name(checkpoint_path="wb")
    def save(self, checkpoint_path):
        flat = {utils.join_name(k): v for k, v in self.flatten().items()}
        parameters, shapes = pack_arrays(flat)
        envelope = {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "config": json.dumps(self.config, sort_keys=True),
            "epoch": int(self.epoch),
            "history": json.dumps(self.history),
            "parameters": parameters,
            "shapes": shapes,
            "optimizer_tensors": None,
            "optimizer_structure": None,
        }
        if self.optimizer is not None:
            tensors, structure = split_optimizer_state(self.optimizer)
            envelope["optimizer_tensors"], structure["shapes"] = pack_arrays(tensors)
            envelope["optimizer_structure"] = json.dumps(structure)
        checkpoint_path.write(msgpack.packb(envelope, use_bin_type=True))
