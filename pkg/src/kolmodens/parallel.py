"""Deterministic thread-pool helpers.

Work is always partitioned into chunks that depend only on the workload (never
on the worker count), results are collected by chunk index, and reductions run
in fixed chunk order with numpy's pairwise summation.  Consequently the thread
count changes wall time but never a single output bit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_DEFAULT = max(1, os.cpu_count() or 1)
_max_threads = _DEFAULT


def set_max_threads(n: int | None) -> None:
    """Cap the worker count used by parallel_map (None restores the default)."""
    global _max_threads
    _max_threads = _DEFAULT if n is None else max(1, int(n))


def get_max_threads() -> int:
    return _max_threads


def parallel_map(fn, items):
    """Map fn over items, preserving order; runs serially when beneficial."""
    items = list(items)
    workers = min(_max_threads, len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ordered_sum(chunks):
    """Sum a list of equally-shaped arrays in fixed index order."""
    stacked = np.stack(chunks, axis=0)
    return np.sum(stacked, axis=0)
