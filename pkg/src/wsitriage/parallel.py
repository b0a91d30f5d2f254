"""Deterministic ordered parallel map over a worker pool.

Work is distributed across processes (fork) but results are returned in
input order, so any function whose per-item output is a pure function of
the item produces identical results at every worker count.  Falls back to
in-process execution when workers == 1 or process pools are unavailable.
"""

from __future__ import annotations

import multiprocessing as mp
import os


_WORKER_FN = None


def _init_worker(fn):
    global _WORKER_FN
    _WORKER_FN = fn


def _call_worker(item):
    return _WORKER_FN(item)


def pmap(fn, items, workers: int = 1):
    """Map fn over items, preserving order; fn and items must be picklable
    when workers > 1."""
    items = list(items)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    try:
        ctx = mp.get_context("fork")
    except ValueError:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (workers * 4))
    try:
        with ctx.Pool(processes=workers, initializer=_init_worker, initargs=(fn,)) as pool:
            return pool.map(_call_worker, items, chunksize=chunk)
    except OSError:
        # Restricted environments may forbid semaphores; degrade gracefully.
        return [fn(item) for item in items]


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
