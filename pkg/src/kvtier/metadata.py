"""Tier-split partition/page mapping tables with two-level indexing.

Every table is a :class:`TwoLevelTable`: a small per-head directory whose
slots point at fixed-length segments drawn from a pool shared by all heads.
Segments are mapped only when entries are actually assigned, so physical
bytes follow the working set while the directory is sized for the worst case.

Four tables are kept per :class:`~kvtier.core.HeadKey`:

=====================  ======  ===========================================
table                  tier    indexed by / contents
=====================  ======  ===========================================
``meta_partition``     device  partition id -> token count, residency bits
``device_page_table``  device  device page slot -> partition id, timestamp
``partition_offset``   host    partition id -> (start, page count)
``host_page_array``    host    flat host page ids, one slice per partition
=====================  ======  ===========================================
"""
from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Config, HeadKey
from .errors import (
    DeviceCapacityExceeded,
    DoubleFree,
    HostCapacityExceeded,
    NotOffloaded,
    OverlappingSpec,
    PoolExhausted,
    UnknownPartition,
)

# entry widths in bytes, used only for footprint accounting
META_ENTRY_BYTES = 8
DPT_ENTRY_BYTES = 8
DPT_WIDE_ENTRY_BYTES = 12  # timestamp no longer fits one byte
OFFSET_ENTRY_BYTES = 8
HOST_PAGE_BYTES = 4
DIRECTORY_SLOT_BYTES = 4

# meta_partition flag bits
RESIDENT = 1
PINNED = 2
MARK = 4  # requested in the current replacement call
VICTIM = 8  # chosen for eviction in the current replacement call

# device_page_table flag bits
VALID = 1
DPT_PINNED = 2

NO_OFFSET = np.iinfo(np.uint32).max

META_FIELDS = {"tok": (np.uint32, 0), "flags": (np.uint8, 0)}
DPT_FIELDS = {"part": (np.int32, -1), "ts": (np.uint16, 0), "flags": (np.uint8, 0)}
OFFSET_FIELDS = {"start": (np.uint32, NO_OFFSET), "count": (np.uint32, 0)}
HOST_FIELDS = {"page": (np.uint32, 0)}


class Residency(Enum):
    DeviceResident = "DeviceResident"
    HostOnly = "HostOnly"


class SegmentPool:
    """Fixed-bound pool of equal-length segments managed by a bitmap.

    ``alloc`` always hands out the lowest clear bit. Backing storage grows
    lazily up to ``n_segments`` rows so a generously bounded pool costs
    nothing until it is used.
    """

    def __init__(self, n_segments: int, entries_per_segment: int, fields: dict):
        if n_segments < 1 or entries_per_segment < 1:
            raise ValueError("pool needs at least one segment of at least one entry")
        self.n_segments = int(n_segments)
        self.entries_per_segment = int(entries_per_segment)
        self.bitmap = np.zeros(self.n_segments, dtype=bool)
        self.fields = dict(fields)
        self._rows = 0
        self.data: dict[str, np.ndarray] = {}
        self._grow(min(self.n_segments, 16))
        self._high_water = 0
        self._freed: list[int] = []
        self.mapped = 0

    def _grow(self, rows: int) -> None:
        for name, (dtype, fill) in self.fields.items():
            new = np.full((rows, self.entries_per_segment), fill, dtype=dtype)
            if self._rows:
                new[: self._rows] = self.data[name]
            self.data[name] = new
        self._rows = rows

    def alloc(self) -> int:
        if self._freed:
            idx = heapq.heappop(self._freed)
        elif self._high_water < self.n_segments:
            idx = self._high_water
            self._high_water += 1
            if idx >= self._rows:
                self._grow(min(self.n_segments, max(2 * self._rows, idx + 1)))
        else:
            raise PoolExhausted(f"all {self.n_segments} segments in use")
        self.bitmap[idx] = True
        self.mapped += 1
        for name, (_, fill) in self.fields.items():
            self.data[name][idx] = fill
        return idx

    def free(self, idx: int) -> None:
        if not 0 <= idx < self.n_segments or not self.bitmap[idx]:
            raise DoubleFree(f"segment {idx} is not allocated")
        self.bitmap[idx] = False
        self.mapped -= 1
        heapq.heappush(self._freed, idx)

    def used_bits(self) -> int:
        return int(self.bitmap.sum())


def segment_alloc(table: "TwoLevelTable") -> int:
    return table.pool.alloc()


def segment_free(table: "TwoLevelTable", index: int) -> None:
    """Release pool segment ``index`` and unmap the directory slot using it."""
    table.pool.free(index)
    table.directory[table.directory == index] = -1


class TwoLevelTable:
    """Logical array of ``max_entries`` entries backed by pool segments."""

    def __init__(self, pool: SegmentPool, max_entries: int):
        self.pool = pool
        self.eps = pool.entries_per_segment
        self.max_entries = int(max_entries)
        self.directory = np.full(max(1, -(-self.max_entries // self.eps)), -1, dtype=np.int32)

    @property
    def mapped_segments(self) -> int:
        return int((self.directory >= 0).sum())

    def is_mapped(self, index: int) -> bool:
        slot = index // self.eps
        return 0 <= index < self.max_entries and self.directory[slot] >= 0

    def ensure(self, upto: int) -> None:
        """Map every segment covering logical entries ``[0, upto)``."""
        if upto > self.max_entries:
            raise IndexError(f"entry {upto - 1} beyond table bound {self.max_entries}")
        for slot in range(-(-upto // self.eps)):
            if self.directory[slot] < 0:
                self.directory[slot] = self.pool.alloc()

    def unmap_from(self, start: int) -> None:
        """Unmap every segment lying wholly at or beyond entry ``start``."""
        for slot in range(-(-start // self.eps), len(self.directory)):
            seg = self.directory[slot]
            if seg >= 0:
                self.pool.free(int(seg))
                self.directory[slot] = -1

    def release(self) -> None:
        self.unmap_from(0)

    def _locate(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if idx.size and (idx.min() < 0 or idx.max() >= self.max_entries):
            raise IndexError("logical index out of range")
        seg = self.directory[idx // self.eps]
        if idx.size and seg.min() < 0:
            raise IndexError("read of an unmapped logical entry")
        return seg, idx % self.eps

    def get(self, name: str, index: int):
        seg, off = self._locate(np.asarray([index]))
        return self.pool.data[name][seg[0], off[0]]

    def set(self, name: str, index: int, value) -> None:
        seg, off = self._locate(np.asarray([index]))
        self.pool.data[name][seg[0], off[0]] = value

    def get_many(self, name: str, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        seg, off = self._locate(idx)
        return self.pool.data[name][seg, off]

    def set_many(self, name: str, idx, values) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        seg, off = self._locate(idx)
        self.pool.data[name][seg, off] = values

    def gather(self, name: str, n: int) -> np.ndarray:
        """Copy of logical entries ``[0, n)`` as a flat array."""
        if n == 0:
            return np.empty(0, dtype=self.pool.data[name].dtype)
        return self.get_many(name, np.arange(n))


@dataclass(frozen=True)
class PartitionSpec:
    """Token grouping of one head's context, starting at token ``start``.

    Partition ``i`` of the spec covers ``token_counts[i]`` consecutive tokens.
    ``pinned_ids`` are spec-relative indices kept device-resident.
    """

    token_counts: tuple
    pinned_ids: frozenset = frozenset()
    start: int = 0

    def __post_init__(self):
        if any(c < 1 for c in self.token_counts):
            raise OverlappingSpec("every partition must hold at least one token")
        if any(not 0 <= p < len(self.token_counts) for p in self.pinned_ids):
            raise OverlappingSpec("pinned id outside the spec")

    @classmethod
    def uniform(cls, context_len: int, granularity: int, pinned: Iterable[int] = (), start: int = 0):
        full, rest = divmod(context_len, granularity)
        counts = (granularity,) * full + ((rest,) if rest else ())
        return cls(counts, frozenset(pinned), start)

    @classmethod
    def variable(cls, ranges: Sequence[tuple[int, int]], pinned: Iterable[int] = (), start: Optional[int] = None):
        """Build from explicit ``[lo, hi)`` token ranges that must tile contiguously."""
        if not ranges:
            return cls((), frozenset(pinned), start or 0)
        first = ranges[0][0] if start is None else start
        cursor = first
        counts = []
        for lo, hi in ranges:
            if lo != cursor or hi <= lo:
                raise OverlappingSpec(f"range [{lo},{hi}) does not continue at token {cursor}")
            counts.append(hi - lo)
            cursor = hi
        return cls(tuple(counts), frozenset(pinned), first)

    @property
    def num_partitions(self) -> int:
        return len(self.token_counts)

    @property
    def num_tokens(self) -> int:
        return sum(self.token_counts)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.token_counts[:-1])) <= 1


@dataclass
class HeadState:
    key: HeadKey
    meta: TwoLevelTable
    dpt: TwoLevelTable
    offsets: TwoLevelTable
    host: TwoLevelTable
    num_partitions: int = 0
    context_tokens: int = 0
    host_pages: int = 0  # next free id in this head's host arena == host array length
    capacity: int = 0  # device page slots reserved for this head
    pinned_pages: int = 0
    last_demote_step: int = -1
    pinned_ids: set = field(default_factory=set)

    def tables(self):
        return (self.meta, self.dpt, self.offsets, self.host)


@dataclass(frozen=True)
class FootprintRow:
    table: str
    tier: str
    logical_bytes: int
    physical_bytes: int


@dataclass(frozen=True)
class FootprintReport:
    rows: tuple

    def bytes(self, tier: str, physical: bool = True, include_directory: bool = True) -> int:
        total = 0
        for r in self.rows:
            if r.tier != tier or (r.table == "directory" and not include_directory):
                continue
            total += r.physical_bytes if physical else r.logical_bytes
        return total

    def flat_bytes(self, tier: str) -> int:
        """Worst-case bytes of a flat layout (no directories) on ``tier``."""
        return self.bytes(tier, physical=False, include_directory=False)

    def totals(self) -> tuple[int, int]:
        return (sum(r.logical_bytes for r in self.rows), sum(r.physical_bytes for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "tier", "logical_bytes", "physical_bytes"])
        for r in self.rows:
            w.writerow([r.table, r.tier, r.logical_bytes, r.physical_bytes])
        w.writerow(["total", "all", *self.totals()])
        return buf.getvalue()

    def to_dict(self) -> dict:
        logical, physical = self.totals()
        return {
            "rows": [r.__dict__.copy() for r in self.rows],
            "total": {"logical_bytes": logical, "physical_bytes": physical},
        }


class MetadataStore:
    """Per-head tier-split mapping tables sharing four segment pools.

    ``max_batch`` bounds the worst-case (flat) footprint and sizes the pools'
    per-head rounding slack. ``tier_split=False`` places the host-side tables
    on the device tier for ablation accounting only.
    """

    def __init__(
        self,
        config: Config,
        max_batch: int = 1,
        entries_per_segment: int = 256,
        n_buckets: int = 64,
        tier_split: bool = True,
        pool_segments: Optional[dict] = None,
    ):
        self.config = config
        self.model = config.model
        self.sparse = config.sparse
        self.page_size = config.sparse.page_size
        self.max_batch = int(max_batch)
        self.eps = int(entries_per_segment)
        self.n_buckets = int(n_buckets)
        self.tier_split = tier_split
        self.page_bytes = config.page_bytes()
        self.device_page_capacity = config.tiers.device_capacity // self.page_bytes
        self.host_page_capacity = config.tiers.host_capacity // self.page_bytes
        self.device_pages_used = 0
        self.host_pages_used = 0
        self.heads: dict[HeadKey, HeadState] = {}

        n_max = self.model.max_context
        self.max_dpt_entries = -(-n_max // self.page_size)
        if self.sparse.is_variable:
            self.max_partitions = n_max
            self.max_host_entries = self.max_dpt_entries + n_max
        else:
            g = int(self.sparse.partition_granularity)
            self.max_partitions = -(-n_max // g)
            self.max_host_entries = self.max_partitions * -(-g // self.page_size)

        slack = self.max_batch * self.model.heads_per_request
        dev_pages = self.device_page_capacity
        host_pages = self.host_page_capacity
        sizes = {
            "meta": -(-(host_pages + dev_pages) // self.eps) + slack,
            "dpt": -(-dev_pages // self.eps) + slack,
            "offsets": -(-(host_pages + dev_pages) // self.eps) + slack,
            "host": -(-host_pages // self.eps) + slack,
        }
        sizes.update(pool_segments or {})
        self.meta_pool = SegmentPool(sizes["meta"], self.eps, META_FIELDS)
        self.dpt_pool = SegmentPool(sizes["dpt"], self.eps, DPT_FIELDS)
        self.offset_pool = SegmentPool(sizes["offsets"], self.eps, OFFSET_FIELDS)
        self.host_pool = SegmentPool(sizes["host"], self.eps, HOST_FIELDS)

    # -- head lifecycle -------------------------------------------------

    def head(self, key: HeadKey) -> HeadState:
        try:
            return self.heads[key]
        except KeyError:
            raise KeyError(f"head {key} has no registered partitions") from None

    def _new_head(self, key: HeadKey) -> HeadState:
        st = HeadState(
            key,
            TwoLevelTable(self.meta_pool, self.max_partitions),
            TwoLevelTable(self.dpt_pool, self.max_dpt_entries),
            TwoLevelTable(self.offset_pool, self.max_partitions),
            TwoLevelTable(self.host_pool, self.max_host_entries),
        )
        self.heads[key] = st
        return st

    def release(self, key: HeadKey) -> None:
        st = self.heads.pop(key, None)
        if st is None:
            return
        for t in st.tables():
            t.release()
        self.device_pages_used -= st.capacity
        self.host_pages_used -= st.host_pages

    # -- registration ----------------------------------------------------

    def register_partitions(self, key: HeadKey, spec: PartitionSpec) -> list[int]:
        """Create table entries for a spec's partitions; returns their ids.

        Pinned partitions take the lowest free device slots (the head's
        capacity grows if needed); the rest get consecutive host pages.
        """
        st = self.heads.get(key)
        if st is None:
            st = self._new_head(key)  # directories only; no segment is mapped yet
        if spec.num_partitions == 0:
            return []
        if spec.start != st.context_tokens:
            raise OverlappingSpec(
                f"spec starts at token {spec.start} but {key} already covers [0, {st.context_tokens})"
            )
        counts = np.asarray(spec.token_counts, dtype=np.int64)
        n0, n = st.num_partitions, len(counts)
        if n0 + n > st.meta.max_entries:
            raise OverlappingSpec(f"{key} would exceed {st.meta.max_entries} partitions")
        pages = -(-counts // self.page_size)
        pinned = np.zeros(n, dtype=bool)
        if spec.pinned_ids:
            pinned[sorted(spec.pinned_ids)] = True
        host_need = int(pages[~pinned].sum())
        pin_need = int(pages[pinned].sum())

        if self.host_pages_used + host_need > self.host_page_capacity:
            raise HostCapacityExceeded(
                f"{key}: {host_need} host pages requested, "
                f"{self.host_page_capacity - self.host_pages_used} free"
            )
        free_slots = self._free_slots(st)
        grow = max(0, pin_need - len(free_slots))
        if grow and self.device_pages_used + grow > self.device_page_capacity:
            raise DeviceCapacityExceeded(f"{key}: {pin_need} pinned pages do not fit on device")
        if st.host_pages + host_need > st.host.max_entries:
            raise HostCapacityExceeded(f"{key}: host page array bound {st.host.max_entries} exceeded")

        ids = np.arange(n0, n0 + n)
        st.meta.ensure(n0 + n)
        st.offsets.ensure(n0 + n)
        st.meta.set_many("tok", ids, counts)
        st.meta.set_many("flags", ids, np.where(pinned, RESIDENT | PINNED, 0))

        # host side: contiguous page-id slices in registration order
        off_pages = np.where(pinned, 0, pages)
        starts = st.host_pages + np.concatenate(([0], np.cumsum(off_pages)[:-1]))
        st.offsets.set_many("start", ids, np.where(pinned, NO_OFFSET, starts))
        st.offsets.set_many("count", ids, off_pages)
        if host_need:
            st.host.ensure(st.host_pages + host_need)
            pos = np.arange(st.host_pages, st.host_pages + host_need)
            st.host.set_many("page", pos, pos)  # arena ids are handed out lowest-first
            st.host_pages += host_need
            self.host_pages_used += host_need

        if pin_need:
            if grow:
                self.resize_device(key, st.capacity + grow)
                free_slots = self._free_slots(st)
            slots = free_slots[:pin_need]
            owners = np.repeat(ids[pinned], pages[pinned])
            st.dpt.set_many("part", slots, owners)
            st.dpt.set_many("ts", slots, 0)
            st.dpt.set_many("flags", slots, VALID | DPT_PINNED)
            st.pinned_pages += pin_need
            st.pinned_ids.update(int(i) for i in ids[pinned])

        st.num_partitions += n
        st.context_tokens += int(counts.sum())
        return ids.tolist()

    def _free_slots(self, st: HeadState) -> np.ndarray:
        if st.capacity == 0:
            return np.empty(0, dtype=np.int64)
        flags = st.dpt.gather("flags", st.capacity)
        return np.nonzero((flags & VALID) == 0)[0]

    # -- lookups -----------------------------------------------------------

    def _check_ids(self, key: HeadKey, st: Optional[HeadState], ids) -> np.ndarray:
        arr = np.asarray(list(ids), dtype=np.int64)
        limit = st.num_partitions if st else 0
        bad = arr[(arr < 0) | (arr >= limit)]
        if bad.size:
            raise UnknownPartition(int(bad[0]), key)
        return arr

    def lookup_meta(self, key: HeadKey, ids: Iterable[int]) -> list[tuple[int, Residency, int]]:
        st = self.heads.get(key)
        arr = self._check_ids(key, st, ids)
        if arr.size == 0:
            return []
        tok = st.meta.get_many("tok", arr)
        flags = st.meta.get_many("flags", arr)
        out = []
        for t, f in zip(tok.tolist(), flags.tolist()):
            res = Residency.DeviceResident if f & RESIDENT else Residency.HostOnly
            out.append((t, res, -(-t // self.page_size)))
        return out

    def page_counts(self, key: HeadKey, ids) -> np.ndarray:
        st = self.heads[key]
        tok = st.meta.get_many("tok", np.asarray(ids, dtype=np.int64)).astype(np.int64)
        return -(-tok // self.page_size)

    def cpu_pages_of(self, key: HeadKey, pid: int) -> list[int]:
        st = self.heads.get(key)
        self._check_ids(key, st, [pid])
        start = int(st.offsets.get("start", pid))
        if start == NO_OFFSET:
            raise NotOffloaded(pid, key)
        count = int(st.offsets.get("count", pid))
        return st.host.get_many("page", np.arange(start, start + count)).tolist()

    def cpu_pages_many(self, key: HeadKey, ids: Sequence[int]) -> list[list[int]]:
        """Batched :meth:`cpu_pages_of`."""
        if len(ids) == 0:
            return []
        st = self.heads[key]
        arr = np.asarray(ids, dtype=np.int64)
        starts = st.offsets.get_many("start", arr).astype(np.int64)
        counts = st.offsets.get_many("count", arr).astype(np.int64)
        if (starts == NO_OFFSET).any():
            raise NotOffloaded(int(arr[starts == NO_OFFSET][0]), key)
        pos = np.concatenate([np.arange(s, s + c) for s, c in zip(starts, counts)])
        flat = st.host.get_many("page", pos).tolist()
        out, i = [], 0
        for c in counts.tolist():
            out.append(flat[i : i + c])
            i += c
        return out

    def device_pages_of(self, key: HeadKey, pid: int) -> list[int]:
        st = self.head(key)
        part = st.dpt.gather("part", st.capacity)
        flags = st.dpt.gather("flags", st.capacity)
        return np.nonzero((part == pid) & ((flags & VALID) != 0))[0].tolist()

    def is_resident(self, key: HeadKey, pid: int) -> bool:
        return bool(self.head(key).meta.get("flags", pid) & RESIDENT)

    def resident_ids(self, key: HeadKey) -> list[int]:
        st = self.head(key)
        flags = st.meta.gather("flags", st.num_partitions)
        return np.nonzero(flags & RESIDENT)[0].tolist()

    # -- device buffer sizing ---------------------------------------------

    def resize_device(self, key: HeadKey, new_capacity: int) -> list[int]:
        """Grow or shrink a head's device page table; returns evicted partitions.

        Shrinking reclaims from the tail: pinned pages in the tail move to
        free slots below the new bound, any other partition touching the tail
        is evicted whole and flips to HostOnly.
        """
        st = self.head(key)
        new_capacity = int(new_capacity)
        if new_capacity < st.pinned_pages:
            raise DeviceCapacityExceeded(f"{key}: capacity {new_capacity} below {st.pinned_pages} pinned pages")
        delta = new_capacity - st.capacity
        if delta > 0:
            if self.device_pages_used + delta > self.device_page_capacity:
                raise DeviceCapacityExceeded(
                    f"{key}: +{delta} pages, {self.device_page_capacity - self.device_pages_used} free"
                )
            st.dpt.ensure(new_capacity)
            self.device_pages_used += delta
            st.capacity = new_capacity
            return []
        if delta == 0:
            return []

        cap = st.capacity
        part = st.dpt.gather("part", cap)
        ts = st.dpt.gather("ts", cap)
        flags = st.dpt.gather("flags", cap)
        valid = (flags & VALID) != 0
        pinned = (flags & DPT_PINNED) != 0
        tail = np.arange(cap) >= new_capacity
        victims = set(np.unique(part[tail & valid & ~pinned]).tolist())
        evict = valid & ~pinned & np.isin(part, list(victims))
        movers = np.nonzero(tail & pinned)[0]
        if movers.size:
            holes = np.nonzero(~tail & (~valid | evict))[0]
            if holes.size < movers.size:
                # make room by evicting the oldest unpinned partitions in the head region
                cand = np.nonzero(~tail & valid & ~pinned & ~evict)[0]
                order = cand[np.lexsort((cand, ts[cand]))]
                for s in order:
                    victims.add(int(part[s]))
                    evict = valid & ~pinned & np.isin(part, list(victims))
                    holes = np.nonzero(~tail & (~valid | evict))[0]
                    if holes.size >= movers.size:
                        break
            dest = holes[: movers.size]
        part[evict] = -1
        ts[evict] = 0
        flags[evict] = 0
        if movers.size:
            part[dest], ts[dest], flags[dest] = part[movers], ts[movers], flags[movers]
            part[movers], ts[movers], flags[movers] = -1, 0, 0
        st.dpt.set_many("part", np.arange(cap), part)
        st.dpt.set_many("ts", np.arange(cap), ts)
        st.dpt.set_many("flags", np.arange(cap), flags)
        if victims:
            vic = np.asarray(sorted(victims), dtype=np.int64)
            st.meta.set_many("flags", vic, st.meta.get_many("flags", vic) & np.uint8(0xFF ^ RESIDENT))
        st.dpt.unmap_from(new_capacity)
        st.capacity = new_capacity
        self.device_pages_used += delta
        return sorted(victims)

    def flush_device(self, key: HeadKey) -> list[int]:
        """Evict every non-pinned partition of a head (no-caching baseline)."""
        st = self.head(key)
        cap = st.capacity
        if cap == 0:
            return []
        part = st.dpt.gather("part", cap)
        flags = st.dpt.gather("flags", cap)
        evict = ((flags & VALID) != 0) & ((flags & DPT_PINNED) == 0)
        if not evict.any():
            return []
        victims = np.unique(part[evict])
        slots = np.nonzero(evict)[0]
        st.dpt.set_many("part", slots, -1)
        st.dpt.set_many("ts", slots, 0)
        st.dpt.set_many("flags", slots, 0)
        st.meta.set_many("flags", victims, st.meta.get_many("flags", victims) & np.uint8(0xFF ^ RESIDENT))
        return victims.tolist()

    # -- accounting --------------------------------------------------------

    @property
    def dpt_entry_bytes(self) -> int:
        return DPT_ENTRY_BYTES if self.n_buckets <= 256 else DPT_WIDE_ENTRY_BYTES

    def footprint(self, scale: int = 1) -> FootprintReport:
        """Flat worst-case versus physically mapped bytes per table and tier.

        The flat size of every table is
        ``max_batch * ceil(max_context / page_size) * layers * heads`` entries.
        ``scale`` multiplies mapped bytes, for stores holding one
        representative of many identical heads.
        """
        worst = self.max_batch * self.max_dpt_entries * self.model.heads_per_request
        host_tier = "host" if self.tier_split else "device"
        eps = self.eps * scale
        rows = [
            FootprintRow("meta_partition", "device", worst * META_ENTRY_BYTES,
                         self.meta_pool.mapped * eps * META_ENTRY_BYTES),
            FootprintRow("device_page_table", "device", worst * self.dpt_entry_bytes,
                         self.dpt_pool.mapped * eps * self.dpt_entry_bytes),
            FootprintRow("partition_offset", host_tier, worst * OFFSET_ENTRY_BYTES,
                         self.offset_pool.mapped * eps * OFFSET_ENTRY_BYTES),
            FootprintRow("host_page_array", host_tier, worst * HOST_PAGE_BYTES,
                         self.host_pool.mapped * eps * HOST_PAGE_BYTES),
        ]
        heads = self.max_batch * self.model.heads_per_request
        dev_dir = heads * (self._dir_slots(self.max_partitions) + self._dir_slots(self.max_dpt_entries))
        host_dir = heads * (self._dir_slots(self.max_partitions) + self._dir_slots(self.max_host_entries))
        rows.append(FootprintRow("directory", "device", dev_dir * DIRECTORY_SLOT_BYTES, dev_dir * DIRECTORY_SLOT_BYTES))
        rows.append(FootprintRow("directory", host_tier, host_dir * DIRECTORY_SLOT_BYTES, host_dir * DIRECTORY_SLOT_BYTES))
        return FootprintReport(tuple(rows))

    def _dir_slots(self, entries: int) -> int:
        return max(1, -(-entries // self.eps))
