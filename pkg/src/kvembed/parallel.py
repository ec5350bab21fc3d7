"""Order-preserving thread fan-out, capped by ``KVEMBED_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count(threads: int | None = None) -> int:
    """Resolve a worker count; ``None`` reads ``KVEMBED_THREADS`` (0 = auto)."""
    if threads is None:
        raw = os.environ.get("KVEMBED_THREADS", "0")
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"KVEMBED_THREADS must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValueError("thread count must be >= 0")
    if threads == 0:
        threads = os.cpu_count() or 1
    return threads


def thread_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    n = min(worker_count(threads), max(len(items), 1))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
