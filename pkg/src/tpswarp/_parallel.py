import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def thread_count() -> int:
    """Worker cap from ``WARP_THREADS`` (default 1)."""
    raw = os.environ.get("WARP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"WARP_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_chunks(fn, n: int, min_chunk: int = 4096) -> np.ndarray:
    """Apply ``fn(start, stop)`` over ``range(n)`` in contiguous chunks and concatenate.

    ``fn`` must compute every element independently of the chunk boundaries;
    that is what keeps results bitwise identical for any thread count.
    """
    workers = thread_count()
    if workers == 1 or n <= min_chunk:
        return fn(0, n)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda ab: fn(*ab), spans))
    return np.concatenate(parts, axis=0)
