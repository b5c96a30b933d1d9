"""Reproducibility helpers: BLAS thread pinning and seeded RNG streams.

Multi-threaded BLAS kernels may change floating-point summation order with
the thread count, which breaks bit-identical reruns. All numerically
critical entry points call :func:`ensure_single_thread_blas` once; the
``--threads`` CLI flag then only controls order-independent work
distribution (e.g. metric evaluation over frame pairs), never the numeric
reduction order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_blas_controller = None


def ensure_single_thread_blas():
    """Pin BLAS pools to one thread for the remainder of the process."""
    global _blas_controller
    if _blas_controller is not None:
        return
    try:
        from threadpoolctl import threadpool_limits

        _blas_controller = threadpool_limits(limits=1, user_api="blas")
    except Exception:
        # Best effort: without threadpoolctl results may still be
        # reproducible if the workload stays below BLAS threading cutoffs.
        _blas_controller = "unavailable"


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a (seed, path...) key.

    Streams derived from distinct paths are statistically independent, so
    per-pixel or per-scene work can be parallelized without changing
    results.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def map_indexed(fn, items, threads: int = 1):
    """Apply ``fn`` to each item, preserving order; thread count never
    affects the result, only wall time."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
