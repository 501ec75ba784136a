"""Deterministic work-sharing helpers.

Tile workers are pure functions: they read shared inputs, compute, and return
results.  The main thread merges results in a fixed order, so the numbers that
come out are identical whether the pool has one thread or eight.  Thread count
comes from the ``GS4D_THREADS`` environment variable (default 1).
"""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    raw = os.environ.get("GS4D_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"GS4D_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"GS4D_THREADS must be >= 1, got {n}")
    return n


def ordered_map(fn, items):
    """Apply ``fn`` to each item, returning results in input order.

    Workers must not mutate shared state; all merging belongs to the caller.
    """
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
