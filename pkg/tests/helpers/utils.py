"""Helpers shared by the tests."""

import contextlib
import os
import tempfile


def tree_bytes(root):
    """Every file below ``root`` keyed by its relative path, for byte-level comparisons."""
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as f:
                out[os.path.relpath(path, root)] = f.read()
    return out


@contextlib.contextmanager
def named_temporary_file(suffix=""):
    """A closed-on-demand temp file that outlives ``close()`` until the block exits.

    Binary mode. Callers may close it before reopening it by name, which
    Windows requires.
    """
    with tempfile.NamedTemporaryFile(mode="wb", suffix=suffix, delete=False) as f:
        try:
            yield f
        finally:
            f.close()
            os.unlink(f.name)
