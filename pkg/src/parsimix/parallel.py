"""Process-level fan-out for grid cells and bootstrap replicates."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional

THREADS_ENV = "PARSIMIX_THREADS"


def worker_count(requested: Optional[int] = None) -> int:
    """Workers to use: ``requested``, else ``$PARSIMIX_THREADS``, else the CPU count.

    The environment variable is a cap and applies to explicit requests too.
    """
    cpus = os.cpu_count() or 1
    n = cpus if requested is None else int(requested)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if cap < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        n = min(n, cap)
    return max(1, n)


def pmap(func: Callable, items: Iterable, workers: Optional[int] = None, chunksize: int = 1) -> List:
    """Ordered map; runs in-process when only one worker is available."""
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items, chunksize=chunksize))
