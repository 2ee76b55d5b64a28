"""Utilities for flowcd."""

import inspect
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, Tuple, Union


@dataclass
class EnvVar:
    name: str
    default: Any

    def __get__(self, obj, objtype=None):
        value = os.environ.get(self.name)
        return type(self.default)(value) if value else self.default


class EnvVarConstants:
    OUT_ROOT = EnvVar(name="FLOWCD_OUT", default="runs")
    LOG_LEVEL = EnvVar(name="FLOWCD_LOG_LEVEL", default="INFO")
    MAX_CONCURRENCY = EnvVar(name="FLOWCD_MAX_CONCURRENCY", default=-1)
    CHECKPOINT_TYPE = EnvVar(name="FLOWCD_CHECKPOINT_TYPE", default="archive")
    DEVICE = EnvVar(name="FLOWCD_DEVICE", default="cpu")


def flatten(
    d: Dict[str, Any],
    is_leaf: Callable[[Any], bool] = lambda v: not isinstance(v, dict),
) -> Dict[Tuple[str, ...], Any]:
    """Map every leaf of a nested dict to the tuple of keys leading to it.

    Empty sub-dicts hold no leaves and disappear. ``is_leaf`` lets a caller
    stop the descent early, e.g. at a dict that is itself a value.
    """
    flat = {}
    stack = [((), d)]
    while stack:
        prefix, node = stack.pop()
        for k, v in node.items():
            if is_leaf(v):
                flat[prefix + (k,)] = v
            else:
                stack.append((prefix + (k,), v))
    return flat


def unflatten(d: Dict[Tuple[str, ...], Any]) -> Dict[str, Union[Dict[str, Any], Any]]:
    """Inverse of :func:`flatten`."""
    nested: Dict[str, Any] = {}
    for *path, last in d:
        node = nested
        for k in path:
            node = node.setdefault(k, {})
        node[last] = d[tuple(path) + (last,)]
    return nested


def join_name(keys: Tuple[str, ...]) -> str:
    """Hierarchical parameter name as stored on disk, e.g. ``of/fnet/conv1/weight``."""
    return "/".join(keys)


def split_name(name: str) -> Tuple[str, ...]:
    return tuple(name.split("/"))


def abstract_classattributes(*attributes):
    """Class decorator requiring concrete subclasses to set ``attributes``.

    A subclass that is still abstract (it has unimplemented abstract methods)
    may leave them unset. Any other subclass missing one raises
    ``NotImplementedError`` at class creation.
    """

    def decorate(base_cls):
        for attribute in attributes:
            setattr(base_cls, attribute, NotImplemented)
        parent_hook = base_cls.__init_subclass__

        def check_attributes(cls, **kwargs):
            bound = getattr(parent_hook, "__func__", None)
            if bound is not None:
                bound(cls, **kwargs)
            else:
                parent_hook(**kwargs)
            if inspect.isabstract(cls):
                return
            missing = [a for a in attributes if getattr(cls, a) is NotImplemented]
            if missing:
                raise NotImplementedError(
                    f"{cls.__name__} must define class attribute(s) {', '.join(missing)}"
                )

        base_cls.__init_subclass__ = classmethod(check_attributes)
        return base_cls

    return decorate
