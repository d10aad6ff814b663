"""Reproducible random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, *key)``.  Work split into batches derives one stream per batch
index, so results do not depend on how batches are scheduled.
"""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

BATCH = 1 << 14


def _key_part(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed: int, *key) -> np.random.Generator:
    """Philox generator for ``seed`` and a spawn key (ints or short tags)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def batches(count: int, size: int = BATCH) -> list[tuple[int, int]]:
    """Split ``range(count)`` into ``(index, length)`` pieces."""
    out = []
    start, i = 0, 0
    while start < count:
        ln = min(size, count - start)
        out.append((i, ln))
        start += ln
        i += 1
    return out


def pmap(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map, optionally on a thread pool. Output order is input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def tree_sum(values: Iterable[float]) -> float:
    """Pairwise sum in a fixed order."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def tree_sum_arrays(arrays: Sequence[np.ndarray]) -> np.ndarray:
    arrs = list(arrays)
    while len(arrs) > 1:
        nxt = [arrs[i] + arrs[i + 1] for i in range(0, len(arrs) - 1, 2)]
        if len(arrs) % 2:
            nxt.append(arrs[-1])
        arrs = nxt
    return arrs[0]


def log_n(n: int) -> float:
    # log 1 is taken to be 1 so that dimension factors stay positive
    return 1.0 if n == 1 else math.log(n)
