"""Checkpoint formats for trained dual-branch models."""

from flowcd.checkpoints import archive_checkpoint
from flowcd.checkpoints.base import (
    PLUGIN_GROUP,
    Checkpoint,
    get_checkpoint_handler,
    get_checkpoint_handler_name,
)
