"""Buffer-elastic admission control and proportional page reclamation.

Every active request holds a grant of device pages: mandatory pages (the
current selection plus pinned partitions), buffering pages that retain
earlier selections, and the recent window of not yet partitioned tokens.
The window is reserved outside the buffer-ratio arithmetic.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Sequence, Union

from .errors import InsufficientBuffer, NothingReclaimable


@dataclass(frozen=True)
class SchedulerConfig:
    device_page_budget: int
    min_buffer_ratio: float = 5.0

    def __post_init__(self):
        if self.min_buffer_ratio < 1:
            raise ValueError("min_buffer_ratio must be at least 1")
        if self.device_page_budget < 0:
            raise ValueError("device_page_budget must be non-negative")


@dataclass
class BufferGrant:
    request_id: Any
    mandatory_pages: int
    buffering_pages: int
    seq_len: int
    window_pages: int = 0

    @property
    def total(self) -> int:
        return self.mandatory_pages + self.buffering_pages + self.window_pages

    @property
    def buffer_ratio(self) -> float:
        return self.buffering_pages / self.mandatory_pages if self.mandatory_pages else math.inf


@dataclass(frozen=True)
class Admitted:
    grant: BufferGrant
    reclaimed: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Queued:
    request_id: Any
    short_pages: int


def scaled(pages: int, ratio: Union[float, Fraction]) -> int:
    """ceil(pages * ratio) without float rounding surprises."""
    r = Fraction(repr(ratio)) if isinstance(ratio, float) else Fraction(ratio)
    return math.ceil(pages * r)


def _order_key(rid):
    return (0, rid, "") if isinstance(rid, (int, float)) else (1, 0, str(rid))


def proportional_split(total: int, weights: Sequence[int], ids: Optional[Sequence] = None,
                       caps: Optional[Sequence[int]] = None) -> list[int]:
    """Split ``total`` in proportion to ``weights`` by largest remainder.

    Ties on the remainder go to the smaller id. With ``caps`` no share
    exceeds its cap; the excess is re-split among the uncapped entries.
    """
    n = len(weights)
    ids = list(range(n)) if ids is None else list(ids)
    caps = [None] * n if caps is None else list(caps)
    out = [0] * n
    open_ = [i for i in range(n) if weights[i] > 0 and (caps[i] is None or caps[i] > 0)]
    left = total
    while left > 0 and open_:
        wsum = sum(weights[i] for i in open_)
        shares = {i: Fraction(left * weights[i], wsum) for i in open_}
        base = {i: math.floor(s) for i, s in shares.items()}
        rest = left - sum(base.values())
        order = sorted(open_, key=lambda i: (-(shares[i] - base[i]), _order_key(ids[i])))
        for i in order[:rest]:
            base[i] += 1
        capped = False
        for i in open_:
            room = None if caps[i] is None else caps[i] - out[i]
            take = base[i] if room is None else min(base[i], room)
            if room is not None and base[i] > room:
                capped = True
            out[i] += take
            left -= take
        open_ = [i for i in open_ if caps[i] is None or out[i] < caps[i]]
        if not capped:
            break
    return out


class Scheduler:
    """Grant bookkeeping for all active requests; one decision point per step.

    ``buffer_ratio`` overrides the configured minimum, e.g. 0 for baselines
    that keep only mandatory pages on the device.
    """

    def __init__(self, config: SchedulerConfig, buffer_ratio: Optional[float] = None):
        self.config = config
        self.ratio = config.min_buffer_ratio if buffer_ratio is None else buffer_ratio
        self.grants: "OrderedDict[Any, BufferGrant]" = OrderedDict()  # admission order
        self.events: list[dict] = []

    @property
    def used_pages(self) -> int:
        return sum(g.total for g in self.grants.values())

    @property
    def free_pages(self) -> int:
        return self.config.device_page_budget - self.used_pages

    def requirement(self, mandatory_pages: int) -> int:
        """Pages needed to admit a request: mandatory plus the minimum buffer."""
        return mandatory_pages + scaled(mandatory_pages, self.ratio)

    def min_buffer(self, g: BufferGrant) -> int:
        return scaled(g.mandatory_pages, self.ratio)

    def surplus(self, g: BufferGrant) -> int:
        return max(0, g.buffering_pages - self.min_buffer(g))

    def reclaimable(self, exclude=()) -> int:
        return sum(self.surplus(g) for rid, g in self.grants.items() if rid not in exclude)

    def try_admit(self, request_id, mandatory_pages: int, seq_len: int) -> Union[Admitted, Queued]:
        need = self.requirement(mandatory_pages)
        short = need - self.free_pages
        reclaimed = {}
        if short > 0:
            if self.reclaimable() < short:
                self.events.append({"event": "queue", "request": request_id, "pages": need})
                return Queued(request_id, short)
            reclaimed = self.reclaim(short)
        g = BufferGrant(request_id, mandatory_pages, need - mandatory_pages, seq_len)
        self.grants[request_id] = g
        self.events.append({"event": "admit", "request": request_id, "pages": need})
        return Admitted(g, reclaimed)

    def reclaim(self, pages_needed: int, exclude=()) -> dict:
        """Take surplus buffering pages in proportion to sequence length.

        Returns the pages taken per request; may be less than requested when
        the total surplus is smaller.
        """
        rids = [rid for rid, g in self.grants.items() if rid not in exclude and self.surplus(g) > 0]
        if not rids:
            raise NothingReclaimable("no request holds buffering above the minimum ratio")
        gs = [self.grants[r] for r in rids]
        take = proportional_split(pages_needed, [g.seq_len for g in gs], rids, [self.surplus(g) for g in gs])
        out = {}
        for rid, g, k in zip(rids, gs, take):
            if k:
                g.buffering_pages -= k
                out[rid] = k
        self.events.append({"event": "reclaim", "pages": dict(sorted(out.items(), key=lambda kv: _order_key(kv[0])))})
        return out

    def buffer_target(self, request_id, mandatory_pages: int, seq_len: int, window_pages: int = 0,
                      ratio: Optional[float] = None) -> tuple[BufferGrant, dict]:
        """Re-size a grant for the current step's mandatory pages.

        Buffering is raised toward ``ratio * mandatory`` as far as free pages
        and other requests' surplus allow; it is never shrunk here, so a
        smaller selection leaves reclaimable surplus behind. Raises
        InsufficientBuffer when even the mandatory and window pages cannot be
        met after reclaiming every surplus.
        """
        g = self.grants[request_id]
        ratio = self.ratio if ratio is None else ratio
        exclude = (request_id,)
        pool = g.total + self.free_pages  # usable without touching other grants
        base = mandatory_pages + window_pages
        reclaimed: dict = {}
        if base > pool:
            short = base - pool
            if self.reclaimable(exclude) < short:
                raise InsufficientBuffer(
                    f"request {request_id}: {base} mandatory pages, "
                    f"{pool + self.reclaimable(exclude)} available after reclaim"
                )
            reclaimed = self.reclaim(short, exclude)
            pool += sum(reclaimed.values())
        want = scaled(mandatory_pages, ratio)
        extra = min(base + want - pool, self.reclaimable(exclude))
        if extra > 0:
            more = self.reclaim(extra, exclude)
            for rid, k in more.items():
                reclaimed[rid] = reclaimed.get(rid, 0) + k
            pool += sum(more.values())
        g.seq_len = seq_len
        g.mandatory_pages = mandatory_pages
        g.window_pages = window_pages
        g.buffering_pages = min(max(want, g.buffering_pages), pool - base)
        return g, reclaimed

    def youngest(self):
        return next(reversed(self.grants)) if self.grants else None

    def preempt(self, request_id) -> BufferGrant:
        g = self.grants.pop(request_id)
        self.events.append({"event": "preempt", "request": request_id, "pages": g.total})
        return g

    def release(self, request_id) -> None:
        g = self.grants.pop(request_id, None)
        if g is not None:
            self.events.append({"event": "finish", "request": request_id, "pages": g.total})

    def drain_events(self) -> list[dict]:
        ev, self.events = self.events, []
        return ev
