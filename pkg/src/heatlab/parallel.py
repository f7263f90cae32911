"""Bounded worker pool shared by the modules that map over independent solves."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_threads = None


def set_threads(n):
    global _threads
    _threads = None if n is None else max(1, int(n))


def get_threads():
    if _threads is not None:
        return _threads
    env = os.environ.get("HEATLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"HEATLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def pmap(fn, items):
    """Ordered map; results come back in input order regardless of scheduling."""
    items = list(items)
    n = get_threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
