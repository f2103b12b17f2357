"""The five-stage sparse-attention pipeline over the simulated tiers.

Index groups a request's tokens into partitions per head, Offload registers
them with the metadata store, Select picks the critical partitions for a
step, Retrieve brings missing ones to the device, and attention is charged
only as HBM bytes read. Each decode step yields :class:`StepMetrics`.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import IO, Optional, Sequence

import numpy as np

from .core import Config, HeadKey
from .errors import InvalidSpecParams
from .metadata import MetadataStore, PartitionSpec
from .replacement import BucketedLRU, ReplacementOutcome, ReplacementParams
from .scheduler import proportional_split
from .workload import LocalityModel, LocalitySelector, Trace, sub_rng


class CachingMode(str, Enum):
    NONE = "none"  # every selected partition is fetched every step
    MANDATORY = "mandatory"  # only the current selection stays on device
    ELASTIC = "elastic"  # mandatory plus buffering pages


@dataclass(frozen=True)
class SpecParams:
    """How Index builds pinned sets and, for variable granularity, ranges."""

    window_partitions: int = 0
    outlier_partitions: int = 0
    ranges: Optional[tuple] = None  # explicit [lo, hi) ranges for variable granularity

    def __post_init__(self):
        if self.window_partitions < 0 or self.outlier_partitions < 0:
            raise InvalidSpecParams("window and outlier counts must be non-negative")


def prefill_index(keys: Sequence[HeadKey], context_len: int, config: Config,
                  params: SpecParams = SpecParams()) -> dict:
    """Partition spec per head for a prompt of ``context_len`` tokens.

    Pinned ids are the first ``outlier_partitions`` (stand-ins for outliers
    picked by score) and the last ``window_partitions`` partitions.
    """
    if not 0 <= context_len <= config.model.max_context:
        raise InvalidSpecParams(f"context {context_len} outside [0, {config.model.max_context}]")
    sparse = config.sparse
    if params.ranges is not None:
        try:
            spec = PartitionSpec.variable(params.ranges, start=0)
        except Exception as exc:
            raise InvalidSpecParams(str(exc)) from None
        if spec.start != 0 or spec.num_tokens != context_len:
            raise InvalidSpecParams(f"ranges cover {spec.num_tokens} tokens, context has {context_len}")
        counts = spec.token_counts
    elif sparse.is_variable:
        raise InvalidSpecParams("variable granularity needs explicit ranges")
    else:
        counts = PartitionSpec.uniform(context_len, int(sparse.partition_granularity)).token_counts
    n = len(counts)
    pinned = set(range(min(params.outlier_partitions, n)))
    pinned.update(range(max(0, n - params.window_partitions), n))
    spec = PartitionSpec(tuple(counts), frozenset(pinned))
    return {k: spec for k in keys}


@dataclass
class TransferPlan:
    copies: list = field(default_factory=list)  # (host page, device page)
    bytes: int = 0


@dataclass
class RequestState:
    request_id: object
    input_tokens: int
    output_tokens: int
    keys: list
    arrival_s: float = 0.0
    generated: int = 0
    residual: int = 0  # recent tokens not yet partitioned, kept on device
    step: int = 0  # decode steps taken
    first_step_s: Optional[float] = None
    hits: int = 0
    misses: int = 0

    @property
    def seq_len(self) -> int:
        return self.input_tokens + self.generated

    @property
    def done(self) -> bool:
        return self.generated >= self.output_tokens


@dataclass
class RequestStep:
    request_id: object
    selected: int
    hits: int
    misses: int
    transferred_bytes: int
    hbm_bytes: float
    selected_kv_bytes: int


@dataclass
class StepMetrics:
    step: int
    requests: list
    hbm_bytes: Fraction
    transferred_bytes: int
    selected_kv_bytes: int
    plans_with_copies: int
    hbm_s: float
    pcie_s: float
    latency_s: float
    mlp_s: float
    time_s: float
    events: list = field(default_factory=list)

    @property
    def rho(self) -> float:
        return self.transferred_bytes / self.selected_kv_bytes if self.selected_kv_bytes else 0.0

    @property
    def hits(self) -> int:
        return sum(r.hits for r in self.requests)

    @property
    def misses(self) -> int:
        return sum(r.misses for r in self.requests)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "time_s": self.time_s,
            "hbm_bytes": float(self.hbm_bytes),
            "transferred_bytes": self.transferred_bytes,
            "selected_kv_bytes": self.selected_kv_bytes,
            "rho": self.rho,
            "requests": [
                {"id": r.request_id, "selected": r.selected, "hits": r.hits, "misses": r.misses,
                 "transferred_bytes": r.transferred_bytes, "hbm_bytes": r.hbm_bytes}
                for r in self.requests
            ],
            "events": self.events,
        }


# -- selectors -----------------------------------------------------------------

class TracePlayback:
    """Selections read from a trace file, keyed by (decode step, layer, head)."""

    def __init__(self, trace: Trace):
        self.trace = trace

    def select(self, key: HeadKey, step: int, token_counts: np.ndarray, budget) -> list[int]:
        return list(self.trace.selection(step, key.layer, key.head))


def _rid_int(rid) -> int:
    return rid if isinstance(rid, int) and rid >= 0 else zlib.crc32(str(rid).encode())


class SyntheticLocality:
    """Sliding-working-set selections, independently seeded per head.

    ``budget`` is a partition count, or a token budget (Fraction) when the
    partition sizes vary.
    """

    def __init__(self, reuse_fraction: float, zipf_s: float, seed: int = 0):
        self.reuse_fraction = reuse_fraction
        self.zipf_s = zipf_s
        self.seed = seed
        self._sel: dict = {}

    def select(self, key: HeadKey, step: int, token_counts: np.ndarray, budget) -> list[int]:
        n = len(token_counts)
        s = self._sel.get(key)
        if s is None:
            k = budget if isinstance(budget, int) else 0
            model = LocalityModel(self.reuse_fraction, self.zipf_s, min(k, n), self.seed)
            s = LocalitySelector(model, n, sub_rng(self.seed, _rid_int(key.request_id), key.layer, key.head))
            self._sel[key] = s
        s.resize(n)
        if isinstance(budget, int):
            return s.next(budget).tolist()
        return s.next_tokens(token_counts, budget).tolist()

    def forget(self, key: HeadKey) -> None:
        self._sel.pop(key, None)


# -- pipeline ------------------------------------------------------------------

class Pipeline:
    def __init__(self, config: Config, store: MetadataStore, selector, mode: CachingMode = CachingMode.ELASTIC,
                 params: ReplacementParams = ReplacementParams(), spec_params: SpecParams = SpecParams(),
                 log: Optional[IO[str]] = None, backend: Optional[str] = None):
        self.config = config
        self.store = store
        self.selector = selector
        self.mode = CachingMode(mode)
        self.spec_params = spec_params
        self.lru = BucketedLRU(store, params, backend=backend, log=log)
        m = config.model
        self.d_e = m.head_dim * m.bytes_per_element
        self.page_bytes = config.page_bytes()
        self._sel_cache: dict = {}
        self._tokens: dict = {}  # key -> token counts array

    # Index + Offload

    def make_request(self, request_id, input_tokens: int, output_tokens: int, arrival_s: float = 0.0) -> RequestState:
        m = self.config.model
        keys = [HeadKey(request_id, l, h) for l in range(m.num_layers) for h in range(m.num_kv_heads)]
        return RequestState(request_id, int(input_tokens), int(output_tokens), keys, float(arrival_s))

    def index(self, req: RequestState) -> dict:
        # after a preemption the generated tokens are re-indexed with the prompt
        return prefill_index(req.keys, req.seq_len, self.config, self.spec_params)

    def offload(self, req: RequestState, specs: Optional[dict] = None) -> dict:
        """Register every head's partitions; returns pages placed per tier."""
        specs = self.index(req) if specs is None else specs
        host = device = 0
        try:
            for key in req.keys:
                spec = specs[key]
                self.store.register_partitions(key, spec)
                pages = -(-np.asarray(spec.token_counts, dtype=np.int64) // self.store.page_size)
                pin = np.zeros(len(pages), dtype=bool)
                pin[list(spec.pinned_ids)] = True
                host += int(pages[~pin].sum())
                device += int(pages[pin].sum())
                self._tokens[key] = np.asarray(spec.token_counts, dtype=np.int64)
        except Exception:
            self.release(req)
            raise
        return {"heads": len(req.keys) if specs and next(iter(specs.values())).num_partitions else 0,
                "host_pages": host, "device_pages": device}

    def admission_mandatory(self, specs: dict) -> int:
        """Pages the first step is expected to need, summed over heads."""
        total = 0
        for spec in specs.values():
            counts = np.asarray(spec.token_counts, dtype=np.int64)
            pinned = list(spec.pinned_ids)
            total += int((-(-counts[pinned] // self.store.page_size)).sum()) if pinned else 0
            total += self._budget_pages(counts)
        return total

    def _budget_pages(self, counts: np.ndarray) -> int:
        ctx = int(counts.sum())
        if not ctx:
            return 0
        sp = self.config.sparse
        if sp.is_variable:
            return math.ceil(sp.budget_tokens(ctx) / sp.page_size)
        g = int(sp.partition_granularity)
        return min(sp.budget_partitions(ctx), len(counts)) * -(-g // sp.page_size)

    # Select

    def budget(self, key: HeadKey):
        counts = self._tokens[key]
        sp = self.config.sparse
        ctx = int(counts.sum())
        if sp.is_variable:
            return sp.budget_tokens(ctx)
        return min(sp.budget_partitions(ctx), len(counts))

    def select(self, key: HeadKey, step: int) -> list[int]:
        ck = (key, step)
        if ck not in self._sel_cache:
            self._sel_cache[ck] = self.selector.select(key, step, self._tokens[key], self.budget(key))
        return self._sel_cache[ck]

    def head_mandatory(self, key: HeadKey, step: int) -> int:
        st = self.store.head(key)
        sel = [p for p in self.select(key, step) if p not in st.pinned_ids]
        return st.pinned_pages + (int(self.store.page_counts(key, sel).sum()) if sel else 0)

    def window_pages(self, req: RequestState) -> int:
        return -(-req.residual // self.store.page_size) * len(req.keys)

    def head_capacities(self, req: RequestState, mandatory: dict, buffering: int) -> dict:
        """Split a request's buffering pages over its heads by head mandatory."""
        keys = list(mandatory)
        bufs = proportional_split(buffering, [mandatory[k] for k in keys], list(range(len(keys))))
        limit = self.store.max_dpt_entries
        return {k: min(mandatory[k] + b, limit) for k, b in zip(keys, bufs)}

    # Retrieve

    def retrieve(self, key: HeadKey, ids: Sequence[int], step: int) -> tuple[ReplacementOutcome, TransferPlan]:
        if self.mode is CachingMode.NONE:
            self.store.flush_device(key)
        out = self.lru.replace(key, ids, step)
        plan = TransferPlan()
        if out.misses:
            for pid, src in zip(out.misses, self.store.cpu_pages_many(key, out.misses)):
                dst = out.admissions[pid]
                assert len(src) == len(dst), "host and device page counts disagree"
                plan.copies.extend(zip(src, dst))
            plan.bytes = len(plan.copies) * self.page_bytes
        return out, plan

    # Attention as cost

    def decode_step(self, batch: Sequence[RequestState], step: int) -> StepMetrics:
        tiers = self.config.tiers
        alpha = Fraction(repr(self.config.sparse.summary_ratio))
        two_de = 2 * self.d_e
        per_req = []
        hbm_total = Fraction(0)
        moved = sel_bytes = plans = 0
        for req in batch:
            r_hbm = Fraction(0)
            r_moved = r_sel = r_hits = r_miss = n_sel = 0
            for key in req.keys:
                counts = self._tokens[key]
                ctx = int(counts.sum()) + req.residual
                ids = self.select(key, req.step)
                out, plan = self.retrieve(key, ids, req.step)
                st = self.store.head(key)
                sel_tok = int(counts[ids].sum()) if len(ids) else 0
                extra = sorted(st.pinned_ids.difference(ids))
                pin_tok = int(counts[extra].sum()) if extra else 0
                r_hbm += self.d_e * alpha * ctx + two_de * (sel_tok + pin_tok + req.residual)
                r_sel += two_de * sel_tok
                r_moved += plan.bytes
                plans += bool(plan.copies)
                r_hits += len(out.hits)
                r_miss += len(out.misses)
                n_sel += len(out.hits) + len(out.misses)
                self._sel_cache.pop((key, req.step), None)
            req.hits += r_hits
            req.misses += r_miss
            per_req.append(RequestStep(req.request_id, n_sel, r_hits, r_miss, r_moved, float(r_hbm), r_sel))
            hbm_total += r_hbm
            moved += r_moved
            sel_bytes += r_sel
        hbm_s = float(hbm_total) / tiers.bw_hbm
        pcie_s = moved / tiers.bw_pcie
        lat_s = tiers.per_transfer_latency * plans
        time_s = hbm_s + pcie_s + lat_s + tiers.t_mlp
        return StepMetrics(step, per_req, hbm_total, moved, sel_bytes, plans, hbm_s, pcie_s, lat_s,
                           tiers.t_mlp, time_s)

    # Index during decode

    def append_tokens(self, req: RequestState, new_tokens: int) -> Optional[PartitionSpec]:
        """Account generated tokens; at an update boundary fold them into partitions.

        Whole partitions are formed from the recent tokens and offloaded to
        the host; a remainder smaller than one partition stays on device.
        """
        req.generated += new_tokens
        req.residual += new_tokens
        req.step += 1
        interval = self.config.sparse.update_interval
        boundary = (interval > 0 and req.generated % interval == 0) or req.done
        if not boundary or not req.keys:
            return None
        sp = self.config.sparse
        take = req.residual if sp.is_variable else req.residual - req.residual % int(sp.partition_granularity)
        if take == 0:
            return None
        for key in req.keys:
            st = self.store.head(key)
            if sp.is_variable:
                spec = PartitionSpec((take,), start=st.context_tokens)
            else:
                spec = PartitionSpec.uniform(take, int(sp.partition_granularity), start=st.context_tokens)
            self.store.register_partitions(key, spec)
            self._tokens[key] = np.concatenate((self._tokens[key], np.asarray(spec.token_counts, dtype=np.int64)))
        req.residual -= take
        return spec

    def release(self, req: RequestState) -> None:
        for key in req.keys:
            self.store.release(key)
            self._tokens.pop(key, None)
            if hasattr(self.selector, "forget"):
                self.selector.forget(key)
        for ck in [ck for ck in self._sel_cache if ck[0].request_id == req.request_id]:
            del self._sel_cache[ck]
