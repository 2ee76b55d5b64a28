"""Run blocking per-sample work on a bounded pool of asyncio tasks."""

import asyncio
import functools
import itertools
import logging
import weakref
from typing import Callable, List, Optional, TypeVar

T = TypeVar("T")


class AsyncTaskMixin(logging.Handler):
    """Tag each log record with the asyncio task that emitted it."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._next_id = itertools.count().__next__
        # Keyed weakly so finished tasks can be collected.
        self._task_ids = weakref.WeakKeyDictionary()

    def task_label(self) -> str:
        try:
            task = asyncio.current_task()
        except RuntimeError:
            return "main"
        if task is None:
            return "main"
        if task not in self._task_ids:
            self._task_ids[task] = self._next_id()
        return f"task-{self._task_ids[task]}"

    def emit(self, record):
        record.task = self.task_label()
        super().emit(record)


class AsyncTaskStreamHandler(AsyncTaskMixin, logging.StreamHandler):
    pass


class AsyncTaskFileHandler(AsyncTaskMixin, logging.FileHandler):
    pass


async def _bounded(sem: Optional[asyncio.Semaphore], func: Callable[[int], T], index: int) -> T:
    loop = asyncio.get_running_loop()
    call = functools.partial(func, index)
    if sem is None:
        return await loop.run_in_executor(None, call)
    async with sem:
        return await loop.run_in_executor(None, call)


async def gather_indexed(
    func: Callable[[int], T], count: int, max_concurrency: int = -1
) -> List[T]:
    """Call ``func(i)`` for ``i in range(count)`` on worker threads.

    Parameters
    ----------
    func
        A blocking callable of one integer index.
    count
        How many indices to run.
    max_concurrency
        Upper bound on calls in flight at once, values <= 0 mean no bound.

    Returns
    -------
    List
        The results in index order, whatever order the calls finished in.
    """
    sem = asyncio.Semaphore(max_concurrency) if max_concurrency > 0 else None
    return list(await asyncio.gather(*(_bounded(sem, func, i) for i in range(count))))


def map_indexed(func: Callable[[int], T], count: int, max_concurrency: int = -1) -> List[T]:
    """Blocking wrapper around :func:`gather_indexed`."""
    return asyncio.run(gather_indexed(func, count, max_concurrency))
