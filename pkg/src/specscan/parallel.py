"""Worker-thread plumbing for embarrassingly parallel per-row work.

Thread count resolution order: explicit argument, SPECSCAN_THREADS
environment variable, then 1 (single-threaded keeps outputs bitwise
reproducible regardless of scheduling).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "SPECSCAN_THREADS"


def default_threads() -> int:
    raw = os.environ.get(ENV_THREADS, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        return default_threads()
    return max(1, int(threads))


def map_row_chunks(fn, height: int, chunk: int, threads: int | None = None) -> None:
    """Call fn(y0, y1) for consecutive row chunks, optionally on a thread pool.

    Chunks write to disjoint output regions, so results do not depend on
    scheduling order.
    """
    spans = [(y0, min(height, y0 + chunk)) for y0 in range(0, height, chunk)]
    n = resolve_threads(threads)
    if n <= 1 or len(spans) <= 1:
        for y0, y1 in spans:
            fn(y0, y1)
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        list(pool.map(lambda s: fn(*s), spans))
