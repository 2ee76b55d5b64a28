"""Error types shared by the library and the command line.

Each error carries the process exit code the ``flowcd`` executable uses when
the error escapes a subcommand.
"""

from typing import Any, Dict, Optional, Sequence

from flowcd import utils


@utils.abstract_classattributes("exit_code", "kind")
class FlowCDError(Exception):
    """Base class for errors raised by flowcd."""

    exit_code: int = NotImplemented
    kind: str = NotImplemented


class FormatError(FlowCDError, ValueError):
    """A file on disk does not follow the expected format."""

    exit_code: int = 1
    kind: str = "format"


class ValidationError(FlowCDError, ValueError):
    """An argument, config value or precondition is invalid."""

    exit_code: int = 2
    kind: str = "validation"


class NumericalError(FlowCDError, ArithmeticError):
    """Training produced a non-finite loss."""

    exit_code: int = 3
    kind: str = "numerical"

    def __init__(
        self,
        message: str,
        batch_ids: Optional[Sequence[str]] = None,
        components: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.batch_ids = list(batch_ids or [])
        self.components = dict(components or {})

    def __str__(self):
        msg = super().__str__()
        if self.batch_ids:
            msg += f" (batch: {', '.join(self.batch_ids)})"
        if self.components:
            parts = ", ".join(f"{k}={v}" for k, v in self.components.items())
            msg += f" [{parts}]"
        return msg
