"""Ordered parallel map with a deterministic reduction.

Cells derive all randomness from their own substream labels, so results are
identical for any worker count; only wall time changes.
"""

from __future__ import annotations

import multiprocessing as mp
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = mp.get_context("spawn")
    chunksize = max(1, len(items) // (workers * 4))
    with ctx.Pool(processes=min(workers, len(items))) as pool:
        return pool.map(fn, items, chunksize=chunksize)
