"""Chunked Monte Carlo driver: fixed chunk -> stream mapping, ordered reduction."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .gaussian import RngStream

CHUNK = 1 << 20


def worker_count() -> int:
    raw = os.environ.get("NS_LAB_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def chunk_sizes(samples: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(int(samples), chunk)
    return [chunk] * full + ([rest] if rest else [])


def run_chunks(fn, samples: int, rng: RngStream, chunk: int = CHUNK) -> list:
    """Call ``fn(size, generator)`` once per chunk and return results in chunk order.

    Chunk ``j`` always draws from ``rng.generator(j)``, so the output is identical
    for any worker count.
    """
    sizes = chunk_sizes(samples, chunk)
    jobs = [(size, j) for j, size in enumerate(sizes)]
    workers = min(worker_count(), len(jobs)) or 1
    if workers == 1:
        return [fn(size, rng.generator(j)) for size, j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(job[0], rng.generator(job[1])), jobs))
