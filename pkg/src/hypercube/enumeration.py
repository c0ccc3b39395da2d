"""Reduced Latin squares and loops: exhaustive enumeration and random sampling.

Cells are filled in row-major order over the ``(n-1) x (n-1)`` free block;
the fixed first row and column make that order prune earliest.

Random sampler: the same backtracker, but at every cell the admissible
symbols are tried in an order drawn from a seeded ``numpy`` generator. The
first completed square is kept. Nothing here attempts uniformity over
squares or over isomorphism classes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .algebra import CayleyTable, _trusted, canonical_loop_form

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE_ORDER = 6


class EnumerationError(ValueError):
    pass


@dataclass(frozen=True)
class EnumConfig:
    order: int
    mode: str = "exhaustive"  # or "sample"
    sample_count: int = 100
    seed: int = 0
    dedup: str = "isomorphism"  # or "none"

    def __post_init__(self):
        if not 2 <= self.order <= 12:
            raise EnumerationError(f"order must be in [2, 12], got {self.order}")
        if self.mode not in ("exhaustive", "sample"):
            raise EnumerationError(f"unknown mode {self.mode!r}")
        if self.dedup not in ("none", "isomorphism"):
            raise EnumerationError(f"unknown dedup {self.dedup!r}")
        if self.mode == "exhaustive" and self.order > MAX_EXHAUSTIVE_ORDER:
            raise EnumerationError(
                f"exhaustive enumeration refused for order {self.order} > {MAX_EXHAUSTIVE_ORDER}"
            )
        if self.sample_count < 1:
            raise EnumerationError("sample_count must be positive")

    @classmethod
    def default_for(cls, order: int, seed: int = 0, sample_count: int = 100) -> "EnumConfig":
        if order <= MAX_EXHAUSTIVE_ORDER:
            return cls(order=order, mode="exhaustive", seed=seed, sample_count=sample_count)
        return cls(order=order, mode="sample", seed=seed, sample_count=sample_count)


def _backtrack(n: int, rng: np.random.Generator | None) -> Iterator[np.ndarray]:
    grid = np.zeros((n, n), dtype=np.int64)
    grid[0] = np.arange(n)
    grid[:, 0] = np.arange(n)
    full = (1 << n) - 1
    row_used = [1 << i for i in range(n)]
    col_used = [1 << j for j in range(n)]
    for j in range(n):
        col_used[j] |= 1 << j
    row_used[0] = full
    cells = [(i, j) for i in range(1, n) for j in range(1, n)]
    m = len(cells)
    symbols = list(range(n))

    def rec(k: int) -> Iterator[np.ndarray]:
        if k == m:
            yield grid.copy()
            return
        i, j = cells[k]
        free = full & ~(row_used[i] | col_used[j])
        if not free:
            return
        order = symbols if rng is None else rng.permutation(n).tolist()
        for v in order:
            bit = 1 << v
            if free & bit:
                grid[i, j] = v
                row_used[i] |= bit
                col_used[j] |= bit
                yield from rec(k + 1)
                row_used[i] &= ~bit
                col_used[j] &= ~bit

    yield from rec(0)


def enumerate_reduced_latin(order: int) -> Iterator[CayleyTable]:
    """Yield every reduced Latin square of ``order`` once, lexicographically."""
    if not 1 <= order <= MAX_EXHAUSTIVE_ORDER:
        raise EnumerationError(f"exhaustive enumeration supports orders 1..{MAX_EXHAUSTIVE_ORDER}")
    if order == 1:
        yield _trusted(np.zeros((1, 1), dtype=np.int64))
        return
    for k, cells in enumerate(_backtrack(order, None)):
        yield _trusted(cells, f"L{order}.{k}")


def enumerate_loops_upto_iso(order: int) -> list[CayleyTable]:
    """One canonical representative per loop isomorphism class, sorted by hash."""
    if not 2 <= order <= MAX_EXHAUSTIVE_ORDER:
        raise EnumerationError(f"order must be in [2, {MAX_EXHAUSTIVE_ORDER}]")
    reps: dict[int, CayleyTable] = {}
    for t in enumerate_reduced_latin(order):
        canon, h = canonical_loop_form(t)
        reps.setdefault(h, canon)
    return [_trusted(reps[h].cells, f"loop{order}:{h:016x}") for h in sorted(reps)]


def random_loop(order: int, rng: np.random.Generator) -> CayleyTable:
    if order < 2:
        raise EnumerationError("order must be at least 2")
    cells = next(_backtrack(order, rng))
    return _trusted(cells)


def sample_random_loops(
    order: int,
    count: int,
    seed: int,
    dedup: str = "isomorphism",
    max_stale: int | None = None,
) -> list[CayleyTable]:
    """Draw ``count`` loops by randomized backtracking.

    With ``dedup="isomorphism"`` a draw whose canonical hash was already seen
    is discarded and redrawn; the returned tables are canonical forms. If
    ``max_stale`` consecutive draws (default ``max(1000, 20 * count)``)
    bring nothing new, the class space is taken as exhausted and the
    distinct loops found so far are returned.
    """
    if dedup not in ("none", "isomorphism"):
        raise EnumerationError(f"unknown dedup {dedup!r}")
    rng = np.random.default_rng(seed)
    if dedup == "none":
        return [
            _trusted(random_loop(order, rng).cells, f"sample{order}.{seed}.{i}") for i in range(count)
        ]
    max_stale = max(1000, 20 * count) if max_stale is None else max_stale
    seen: set[int] = set()
    out: list[CayleyTable] = []
    stale = 0
    while len(out) < count:
        canon, h = canonical_loop_form(random_loop(order, rng))
        if h in seen:
            stale += 1
            if stale >= max_stale:
                log.warning(
                    "sampler exhausted after %d stale draws: %d distinct loops of order %d",
                    stale, len(out), order,
                )
                break
            continue
        stale = 0
        seen.add(h)
        out.append(_trusted(canon.cells, f"loop{order}:{h:016x}"))
    return out


def loops_for(cfg: EnumConfig) -> list[CayleyTable]:
    """Materialize the loop population described by ``cfg``."""
    if cfg.mode == "exhaustive":
        if cfg.dedup == "isomorphism":
            return enumerate_loops_upto_iso(cfg.order)
        return list(enumerate_reduced_latin(cfg.order))
    return sample_random_loops(cfg.order, cfg.sample_count, cfg.seed, cfg.dedup)
