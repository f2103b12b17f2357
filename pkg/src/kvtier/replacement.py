"""Bucketed-LRU replacement over a head's device page table.

Recency is a small bounded timestamp per device page. Each call to
:meth:`BucketedLRU.replace` promotes the pages of hit partitions, demotes the
rest once per decoding step, histograms the evictable pages by timestamp in a
single scan, and evicts from the lowest buckets until the page demand of the
misses is covered. The scan itself lives in :mod:`kvtier.kernels`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Optional

from . import kernels
from .core import Config, HeadKey, ModelShape, SparseConfig, TierParams, VARIABLE
from .errors import InsufficientBuffer
from .metadata import RESIDENT, MetadataStore, PartitionSpec


class EvictionMode(str, Enum):
    EXACT = "exact"  # buckets below the threshold plus only what is needed from it
    WHOLE = "whole"  # every page at or below the threshold bucket


@dataclass(frozen=True)
class ReplacementParams:
    n_buckets: int = 64
    eviction_mode: EvictionMode = EvictionMode.EXACT

    def __post_init__(self):
        if not 2 <= self.n_buckets <= 65536:
            raise ValueError(f"n_buckets must be in [2, 65536], got {self.n_buckets}")
        object.__setattr__(self, "eviction_mode", EvictionMode(self.eviction_mode))


@dataclass
class ClassifyResult:
    hits: list
    misses: list
    page_demand: int


@dataclass
class ReplacementOutcome:
    step: int
    hits: list
    misses: list
    page_demand: int
    evicted_pages: list
    evicted_partitions: list
    admissions: dict = field(default_factory=dict)  # missed partition -> device pages
    resident_pages: list = field(default_factory=list)


def _dedupe(ids: Iterable[int]) -> list[int]:
    return list(dict.fromkeys(int(i) for i in ids))


class BucketedLRU:
    """Replacement engine bound to one :class:`MetadataStore`.

    ``backend`` picks a kernel module (``"cython"`` or ``"python"``); the
    default is whatever :mod:`kvtier.kernels` selected at import.
    """

    def __init__(self, store: MetadataStore, params: ReplacementParams = ReplacementParams(),
                 backend: Optional[str] = None, log: Optional[IO[str]] = None):
        self.store = store
        self.params = params
        self._kernel = kernels.load_backend(backend).replace_step if backend else kernels.replace_step
        self.log = log

    def classify(self, key: HeadKey, requested: Iterable[int]) -> ClassifyResult:
        ids = _dedupe(requested)
        st = self.store.heads.get(key)
        arr = self.store._check_ids(key, st, ids)
        if arr.size == 0:
            return ClassifyResult([], [], 0)
        hit = (st.meta.get_many("flags", arr) & RESIDENT) != 0
        pages = self.store.page_counts(key, arr)
        return ClassifyResult(arr[hit].tolist(), arr[~hit].tolist(), int(pages[~hit].sum()))

    def replace(self, key: HeadKey, requested: Iterable[int], step: int) -> ReplacementOutcome:
        ids = _dedupe(requested)
        st = self.store.heads.get(key)
        req = self.store._check_ids(key, st, ids)
        if req.size == 0:
            return ReplacementOutcome(step, [], [], 0, [], [])
        n = self.params.n_buckets
        # several layers may call in the same step; demote only on the first
        demote = step >= n and st.last_demote_step != step
        dpt, meta = self.store.dpt_pool.data, self.store.meta_pool.data
        res = self._kernel(
            st.dpt.directory, dpt["part"], dpt["ts"], dpt["flags"], st.capacity,
            st.meta.directory, meta["tok"], meta["flags"], self.store.eps, self.store.page_size,
            req, int(step), n, demote, self.params.eviction_mode is EvictionMode.EXACT,
        )
        status, hits, misses, demand, hit_slots, evicted, victims, admit, evictable = res
        if demote:
            st.last_demote_step = step
        if status != kernels.OK:
            raise InsufficientBuffer(
                f"{key} step {step}: demand {demand} pages, "
                f"{evictable} evictable of capacity {st.capacity}"
            )
        admissions, i = {}, 0
        if len(misses):
            for pid, pc in zip(misses.tolist(), self.store.page_counts(key, misses).tolist()):
                admissions[pid] = admit[i : i + pc].tolist()
                i += pc
        out = ReplacementOutcome(
            step, hits.tolist(), misses.tolist(), int(demand), evicted.tolist(), victims.tolist(),
            admissions, sorted(hit_slots.tolist() + admit.tolist()),
        )
        if self.log is not None:
            self._write_log(key, out)
        return out

    def _write_log(self, key: HeadKey, out: ReplacementOutcome) -> None:
        rec = {
            "step": out.step,
            "key": [key.request_id if isinstance(key.request_id, (int, str)) else str(key.request_id),
                    key.layer, key.head],
            "evicted": out.evicted_partitions,
            "admitted": out.misses,
        }
        self.log.write(json.dumps(rec, separators=(",", ":")) + "\n")


def single_head_store(page_counts, capacity: int, n_buckets: int = 64,
                      entries_per_segment: int = 256) -> tuple[MetadataStore, HeadKey]:
    """A store holding one head whose partitions span ``page_counts`` pages.

    Used to replay access traces outside the full pipeline. Page size is one
    token so a partition's token count equals its page count.
    """
    counts = [int(c) for c in page_counts]
    total = max(1, sum(counts))
    model = ModelShape(1, 1, 1, 1, total)
    sparse = SparseConfig(1, VARIABLE, 1)
    page_bytes = model.token_bytes()
    tiers = TierParams(max(1, capacity) * page_bytes, total * page_bytes, 2.0, 1.0)
    store = MetadataStore(Config(model, sparse, tiers), entries_per_segment=entries_per_segment,
                          n_buckets=n_buckets)
    key = HeadKey(0, 0, 0)
    if counts:
        store.register_partitions(key, PartitionSpec(tuple(counts)))
        store.resize_device(key, min(capacity, total))  # slots past every page would stay empty
    return store, key


def replay_misses(steps, page_counts, capacity: int, params: ReplacementParams = ReplacementParams(),
                  backend: Optional[str] = None) -> list[int]:
    """Per-step count of missed partitions when bucketed LRU serves ``steps``."""
    store, key = single_head_store(page_counts, capacity, params.n_buckets)
    lru = BucketedLRU(store, params, backend)
    return [len(lru.replace(key, sel, t).misses) for t, sel in enumerate(steps)]


__all__ = [
    "BucketedLRU",
    "ClassifyResult",
    "EvictionMode",
    "ReplacementOutcome",
    "ReplacementParams",
    "replay_misses",
    "single_head_store",
]
