__version__ = "0.1.0"

from flowcd import (
    async_utils,
    checkpoints,
    config,
    core,
    exceptions,
    files,
    forge,
    models,
    objectives,
    scripts,
    utils,
)
