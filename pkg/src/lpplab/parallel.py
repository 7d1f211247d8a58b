"""Deterministic replica-level parallelism.

The numba kernels release the GIL, so a thread pool gives real concurrency
without pickling environments.  Results always come back ordered by replica id,
whatever the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def replica_map(fn: Callable[[int], T], replica_ids: Iterable[int], threads: int = 1) -> list[T]:
    """``[fn(r) for r in sorted(replica_ids)]``, evaluated on ``threads`` workers."""
    ids = sorted(int(r) for r in replica_ids)
    if threads <= 1 or len(ids) <= 1:
        return [fn(r) for r in ids]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ids))
