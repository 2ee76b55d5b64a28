"""Install the flow-cdnet package."""

import ast
from pathlib import Path

from setuptools import find_packages, setup


def get_version(file_name: str, version_variable: str = "__version__") -> str:
    """Find the version by walking the AST to avoid importing the package.

    Parameters
    ----------
    file_name : str
        The file we are parsing to get the version string from.
    version_variable : str
        The variable name that holds the version string.

    Raises
    ------
    ValueError
        If there was no assignment to version_variable in file_name.

    Returns
    -------
    version_string : str
        The version string parsed from file_name.
    """
    with open(file_name) as f:
        tree = ast.parse(f.read())
        for node in ast.walk(tree):
            if isinstance(node, ast.Assign):
                if getattr(node.targets[0], "id", None) == version_variable:
                    return node.value.value
    raise ValueError(
        f"Could not find an assignment to {version_variable} within '{file_name}'"
    )


with open(Path(__file__).parent / "README.md", encoding="utf-8") as f:
    LONG_DESCRIPTION = f.read()


setup(
    name="flow-cdnet",
    version=get_version("flowcd/__init__.py"),
    description="Joint optical flow and change detection for bitemporal images.",
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests", "tests.*")),
    include_package_data=True,
    package_data={"flowcd": ["presets/*.toml"]},
    python_requires=">=3.8",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python",
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Programming Language :: Python :: 3 :: Only",
        "Natural Language :: English",
        "Operating System :: OS Independent",
    ],
    keywords="change-detection optical-flow remote-sensing pytorch",
    license="MIT",
    install_requires=[
        "numpy",
        "scipy",
        "numba",
        "torch",
        "torchvision",
        "safetensors",
        "msgpack",
        "file-or-name",
        "Pillow",
        "tqdm",
        "colorama",
        'tomli; python_version < "3.11.0"',
        'importlib_resources; python_version < "3.9.0"',
        'importlib_metadata; python_version < "3.10.0"',
    ],
    extras_require={
        "test": ["pytest"],
        "docs": ["sphinx", "numpydoc"],
    },
    entry_points={
        "console_scripts": [
            "flowcd = flowcd.scripts.flowcd_cli:main",
        ],
        "flowcd.plugins.checkpoints": [
            "archive = flowcd.checkpoints.archive_checkpoint:ArchiveCheckpoint",
        ],
        "flowcd.plugins.backbones": [
            "toy = flowcd.models.backbones:ToyBackbone",
            "resnet50 = flowcd.models.backbones:ResNet50Backbone",
        ],
    },
)
