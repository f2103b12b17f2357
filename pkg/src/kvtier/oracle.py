"""Reference replacement policies for one head's access trace.

* :func:`lru_reference` is exact step-granular LRU with unbounded recency.
* :func:`belady` evicts the partition whose next use is farthest away.
* :func:`exhaustive_min` searches every eviction choice on tiny instances.

Residency is tracked per partition, pages per partition come from the trace.
"""
from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Optional, Sequence

from .errors import InstanceTooLarge

EXHAUSTIVE_MAX_CAPACITY = 4
EXHAUSTIVE_MAX_ACCESSES = 12


@dataclass(frozen=True)
class AccessTrace:
    """Per-step selected partition ids of one head.

    ``page_counts[i]`` is the page count of partition ``i``; when omitted
    every partition is a single page.
    """

    steps: tuple
    num_partitions: int
    page_counts: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(tuple(sorted(set(int(i) for i in s))) for s in self.steps))
        if self.page_counts is not None:
            object.__setattr__(self, "page_counts", tuple(int(c) for c in self.page_counts))
        for s in self.steps:
            if s and (s[0] < 0 or s[-1] >= self.num_partitions):
                raise ValueError(f"partition id outside [0, {self.num_partitions})")

    def pages(self, pid: int) -> int:
        return 1 if self.page_counts is None else self.page_counts[pid]

    def all_page_counts(self) -> tuple:
        return self.page_counts if self.page_counts is not None else (1,) * self.num_partitions

    def step_demand(self, t: int) -> int:
        return sum(self.pages(p) for p in self.steps[t])

    def max_demand(self) -> int:
        return max((self.step_demand(t) for t in range(len(self.steps))), default=0)

    @property
    def num_accesses(self) -> int:
        return sum(len(s) for s in self.steps)


@dataclass
class LRUResult:
    misses: int
    per_step: list = field(default_factory=list)
    evictions: list = field(default_factory=list)  # per step, evicted partition ids


def _check_capacity(trace: AccessTrace, capacity: int) -> None:
    if capacity < trace.max_demand():
        raise ValueError(f"capacity {capacity} below the largest step demand {trace.max_demand()}")


def lru_reference(trace: AccessTrace, capacity: int) -> LRUResult:
    """Step-granular LRU on device page slots.

    Ids touched in one step share recency. Misses take the lowest free slots
    in ascending id order; victims are chosen by (last use, lowest slot) and
    evicted whole until the page demand is met.
    """
    _check_capacity(trace, capacity)
    free = list(range(capacity))  # min-heap of free slots
    where: dict[int, list[int]] = {}
    last: dict[int, int] = {}
    out = LRUResult(0)
    for t, sel in enumerate(trace.steps):
        misses = [p for p in sel if p not in where]
        for p in sel:
            if p in where:
                last[p] = t
        need = sum(trace.pages(p) for p in misses) - len(free)
        victims = []
        if need > 0:
            requested = set(sel)
            cand = sorted((last[p], where[p][0], p) for p in where if p not in requested)
            for _, _, p in cand:
                if need <= 0:
                    break
                victims.append(p)
                need -= len(where[p])
                for s in where.pop(p):
                    heapq.heappush(free, s)
                del last[p]
        for p in misses:
            where[p] = [heapq.heappop(free) for _ in range(trace.pages(p))]
            last[p] = t
        out.misses += len(misses)
        out.per_step.append(len(misses))
        out.evictions.append(victims)
    return out


def _next_uses(trace: AccessTrace) -> dict[int, list[int]]:
    uses: dict[int, list[int]] = {}
    for t, sel in enumerate(trace.steps):
        for p in sel:
            uses.setdefault(p, []).append(t)
    return uses


def belady(trace: AccessTrace, capacity: int) -> int:
    """Miss count under farthest-next-use eviction (never-again first, ties by id)."""
    _check_capacity(trace, capacity)
    uses = _next_uses(trace)
    never = len(trace.steps)
    resident: dict[int, int] = {}  # id -> pages
    used = 0
    misses = 0
    for t, sel in enumerate(trace.steps):
        miss = [p for p in sel if p not in resident]
        need = used + sum(trace.pages(p) for p in miss) - capacity
        if need > 0:
            requested = set(sel)

            def next_use(p):
                u = uses[p]
                i = bisect.bisect_right(u, t)
                return u[i] if i < len(u) else never

            cand = sorted(((-next_use(p), p) for p in resident if p not in requested))
            for _, p in cand:
                if need <= 0:
                    break
                need -= resident[p]
                used -= resident.pop(p)
        for p in miss:
            resident[p] = trace.pages(p)
            used += resident[p]
        misses += len(miss)
    return misses


def exhaustive_min(trace: AccessTrace, capacity: int) -> int:
    """Minimum miss count over every sequence of eviction choices."""
    if capacity > EXHAUSTIVE_MAX_CAPACITY or trace.num_accesses > EXHAUSTIVE_MAX_ACCESSES:
        raise InstanceTooLarge(
            f"capacity {capacity} > {EXHAUSTIVE_MAX_CAPACITY} or "
            f"{trace.num_accesses} accesses > {EXHAUSTIVE_MAX_ACCESSES}"
        )
    _check_capacity(trace, capacity)
    steps = trace.steps

    @lru_cache(maxsize=None)
    def best(t: int, resident: frozenset) -> int:
        if t == len(steps):
            return 0
        sel = steps[t]
        miss = [p for p in sel if p not in resident]
        used = sum(trace.pages(p) for p in resident)
        need = used + sum(trace.pages(p) for p in miss) - capacity
        others = sorted(p for p in resident if p not in sel)
        result = None
        for k in range(len(others) + 1):
            for drop in combinations(others, k):
                if sum(trace.pages(p) for p in drop) < need:
                    continue
                nxt = (resident - frozenset(drop)) | frozenset(miss)
                cost = best(t + 1, nxt)
                if result is None or cost < result:
                    result = cost
        return len(miss) + result

    return best(0, frozenset())


def miss_counts(trace: AccessTrace, capacity: int) -> dict:
    """Belady and LRU miss counts side by side."""
    return {"belady": belady(trace, capacity), "lru": lru_reference(trace, capacity).misses}


def from_steps(steps: Sequence[Sequence[int]], num_partitions: Optional[int] = None,
               page_counts: Optional[Sequence[int]] = None) -> AccessTrace:
    if num_partitions is None:
        num_partitions = 1 + max((max(s) for s in steps if len(s)), default=-1)
    return AccessTrace(tuple(steps), num_partitions, None if page_counts is None else tuple(page_counts))
