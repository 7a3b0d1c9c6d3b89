"""Deterministic chunked parallelism for per-row maps.

Workers compute disjoint index chunks with a pure function and results are
reassembled in chunk order, so output is identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

__all__ = ["chunk_bounds", "run_chunked"]


def chunk_bounds(n, threads):
    """Split range(n) into at most 4*threads contiguous chunks."""
    if n <= 0:
        return []
    pieces = max(1, min(n, threads * 4))
    step = -(-n // pieces)
    return [(s, min(s + step, n)) for s in range(0, n, step)]


def run_chunked(fn, n, threads):
    """Apply ``fn(start, stop)`` over a partition of range(n).

    Returns the list of per-chunk results in index order regardless of the
    number of worker threads; ``fn`` must be pure.
    """
    bounds = chunk_bounds(n, threads)
    if threads <= 1 or len(bounds) <= 1:
        return [fn(s, t) for s, t in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, s, t) for s, t in bounds]
        return [f.result() for f in futures]
