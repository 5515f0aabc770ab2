"""Seeded random substreams and an order-preserving thread map.

Every random draw in the package comes from a generator keyed by
``(seed, purpose, ...)`` so results do not depend on evaluation order or on
how work is split across threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

DATA = 0
Z_DRAW = 1
Y_DRAW = 2
BOOTSTRAP = 3
REPLICATE = 4

T = TypeVar("T")
R = TypeVar("R")


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed that is a deterministic function of ``(seed, key)``."""
    words = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(2, np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool; output order is input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
