"""Deterministic thread-pool mapping.

Tasks are pure, results are collected in submission order, and no
cross-task reduction depends on completion order, so the output is
identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def ordered_thread_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
