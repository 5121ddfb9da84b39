"""Deterministic worker-pool helpers.

Results are always assembled in submission order, so the worker count
(env var KINSLAB_WORKERS, default 1) can never change any output byte.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


def worker_count() -> int:
    raw = os.environ.get("KINSLAB_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"KINSLAB_WORKERS must be an integer, got {raw!r}"])
    if n < 1:
        raise ConfigError([f"KINSLAB_WORKERS must be >= 1, got {n}"])
    return n


def map_ordered(fn, items, workers: int | None = None) -> list:
    """map(fn, items) preserving item order regardless of completion order."""
    items = list(items)
    n = worker_count() if workers is None else workers
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
