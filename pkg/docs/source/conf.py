"""Sphinx settings for the flowcd API reference."""

import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join("..", "..")))

import flowcd  # noqa: E402

project = "flow-cdnet"
author = "flowcd developers"
copyright = f"2026, {author}"
release = flowcd.__version__

extensions = ["sphinx.ext.autodoc", "numpydoc"]
numpydoc_show_class_members = False
autodoc_member_order = "bysource"

root_doc = "modules"
html_theme = "alabaster"
