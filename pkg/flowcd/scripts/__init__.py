"""Logging setup for the command line.

Kept out of ``flowcd/__init__.py`` so that importing flowcd as a library
leaves the host application's logging alone.
"""

import logging
import os
import tempfile
from typing import Optional

import flowcd

LOG_FORMAT = "{exe}: [%(asctime)s] [%(task)s] [%(package)s:%(funcName)s] %(levelname)s - %(message)s"


class PackageFilter(logging.Filter):
    """Adds ``record.package``, the dotted module path of the emitting file below ``root``."""

    def __init__(self, root: str):
        super().__init__()
        self.root = root

    def filter(self, record: logging.LogRecord) -> bool:
        relative = os.path.relpath(record.pathname, self.root)
        record.package = os.path.splitext(relative)[0].replace(os.sep, ".")
        return True


def configure_logging(
    exe_name: str,
    logger_name: str = "flowcd",
    level: Optional[str] = None,
    log_file: Optional[str] = None,
) -> logging.Logger:
    """Send ``logger_name`` records to stderr and to ``log_file`` (``$TMPDIR/flowcd.log`` by default).

    ``level`` defaults to ``$FLOWCD_LOG_LEVEL``. Calling this again, e.g. when
    tests run ``main`` repeatedly in one process, replaces the handlers it
    installed earlier.
    """
    logger = logging.getLogger(logger_name)
    log_level = getattr(logging, (level or flowcd.utils.EnvVarConstants.LOG_LEVEL).upper(), logging.INFO)
    logger.setLevel(log_level)

    for handler in [h for h in logger.handlers if isinstance(h, flowcd.async_utils.AsyncTaskMixin)]:
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(fmt=LOG_FORMAT.format(exe=exe_name))
    package_filter = PackageFilter(os.path.dirname(os.path.dirname(flowcd.__file__)))
    log_file = log_file or os.path.join(tempfile.gettempdir(), "flowcd.log")
    for handler in (
        flowcd.async_utils.AsyncTaskStreamHandler(),
        flowcd.async_utils.AsyncTaskFileHandler(filename=log_file),
    ):
        handler.setLevel(log_level)
        handler.setFormatter(formatter)
        handler.addFilter(package_filter)
        logger.addHandler(handler)
    return logger
