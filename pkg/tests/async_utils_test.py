"""Tests for async_utils.py"""

import io
import logging
import threading
import time

from flowcd import async_utils


def test_map_indexed_keeps_index_order():
    def slow_for_small(i):
        time.sleep(0.01 * (5 - i))
        return i * i

    assert async_utils.map_indexed(slow_for_small, 5) == [0, 1, 4, 9, 16]


def test_map_indexed_empty():
    assert async_utils.map_indexed(lambda i: i, 0) == []


def test_map_indexed_bounds_concurrency():
    lock = threading.Lock()
    running = [0]
    peak = [0]

    def work(i):
        with lock:
            running[0] += 1
            peak[0] = max(peak[0], running[0])
        time.sleep(0.02)
        with lock:
            running[0] -= 1
        return i

    assert async_utils.map_indexed(work, 6, max_concurrency=2) == list(range(6))
    assert peak[0] <= 2


def test_handler_labels_records_outside_tasks():
    stream = io.StringIO()
    handler = async_utils.AsyncTaskStreamHandler(stream)
    record = logging.LogRecord("flowcd", logging.INFO, __file__, 1, "msg", None, None)
    handler.emit(record)
    assert record.task == "main"
    assert stream.getvalue() == "msg\n"
