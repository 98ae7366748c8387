"""Small shared utilities."""

from __future__ import annotations

import multiprocessing as mp

_STATE = None


def shared_state():
    """State published to fork workers by parallel_map."""
    return _STATE


def parallel_map(fn, items, workers=1, state=None):
    """Order-preserving map, optionally over fork workers.

    fn must be a module-level function; it may read shared_state(), which the
    children inherit through fork.  Results are returned in input order, so
    the outcome is independent of the worker count.
    """
    global _STATE
    items = list(items)
    prev = _STATE
    _STATE = state
    try:
        if workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        ctx = mp.get_context("fork")
        chunk = max(1, len(items) // (workers * 4))
        with ctx.Pool(processes=workers) as pool:
            return pool.map(fn, items, chunksize=chunk)
    finally:
        _STATE = prev
