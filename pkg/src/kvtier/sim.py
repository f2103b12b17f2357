"""Experiment driver: arrivals -> scheduler -> per-step pipeline -> report."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import IO, Optional, Sequence

from .core import Config
from .envelope import EnvelopeParams, tpot
from .errors import HostCapacityExceeded, InsufficientBuffer, InvalidConfig
from .metadata import MetadataStore, PartitionSpec
from .oracle import AccessTrace, belady, lru_reference
from .pipeline import CachingMode, Pipeline, SpecParams, SyntheticLocality, TracePlayback
from .replacement import ReplacementParams
from .scheduler import Admitted, Scheduler, SchedulerConfig
from .workload import Arrival, ArrivalProcess, LocalityModel, Trace, generate_trace_file, poisson_arrivals


@dataclass(frozen=True)
class SimParams:
    """Knobs of a simulated run that are not part of the model/tier config."""

    mode: str = "elastic"
    min_buffer_ratio: float = 5.0
    n_buckets: int = 64
    eviction_mode: str = "exact"
    window_partitions: int = 0
    outlier_partitions: int = 0
    reuse_fraction: float = 0.7
    zipf_s: float = 0.8
    max_batch: int = 32
    entries_per_segment: int = 256
    # arrivals when no schedule file is given
    arrival_rate: float = 1.0
    arrival_count: int = 0
    dataset: str = "longbench-v2"
    length_scale: float = 1.0
    requests: tuple = ()  # explicit (arrival_s, input_tokens, output_tokens)

    @classmethod
    def from_dict(cls, doc: Optional[dict]) -> "SimParams":
        doc = dict(doc or {})
        if "requests" in doc:
            doc["requests"] = tuple(tuple(r) for r in doc["requests"])
        try:
            p = cls(**doc)
        except TypeError as exc:
            raise InvalidConfig([f"sim: {exc}"]) from None
        bad = []
        if p.mode not in {m.value for m in CachingMode}:
            bad.append("sim.mode")
        if p.eviction_mode not in ("exact", "whole"):
            bad.append("sim.eviction_mode")
        if p.min_buffer_ratio < 1:
            bad.append("sim.min_buffer_ratio")
        if not 2 <= p.n_buckets <= 65536:
            bad.append("sim.n_buckets")
        if not 0 <= p.reuse_fraction <= 1 or p.zipf_s < 0:
            bad.append("sim.locality")
        if p.max_batch < 1 or p.entries_per_segment < 1:
            bad.append("sim.max_batch/entries_per_segment")
        if bad:
            raise InvalidConfig(bad)
        return p

    def arrivals(self, seed: int) -> list[Arrival]:
        if self.requests:
            return [Arrival(float(a), int(i), int(o)) for a, i, o in self.requests]
        if self.arrival_count == 0:
            return []
        proc = ArrivalProcess.preset(self.dataset, self.arrival_rate, self.arrival_count, seed, self.length_scale)
        return poisson_arrivals(proc)


@dataclass
class RunReport:
    config: dict
    output_tokens: int = 0
    simulated_s: float = 0.0
    throughput_tok_s: float = 0.0
    ttft_proxy_s: float = 0.0  # queueing delay plus the first step; prefill not modelled
    mean_tpot_s: float = 0.0
    mean_batch: float = 0.0
    hit_ratio: float = 0.0
    rho: float = 0.0
    transferred_bytes: int = 0
    steps: int = 0
    requests_done: int = 0
    requests_rejected: int = 0
    requests_clipped: int = 0
    preemptions: int = 0
    max_head_capacity: int = 0
    footprint: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def _apply_capacities(store: MetadataStore, caps: dict) -> None:
    # shrink before grow so the store never exceeds its device pages
    for key, cap in sorted(caps.items(), key=lambda kv: kv[1] - store.head(kv[0]).capacity):
        if cap != store.head(key).capacity:
            store.resize_device(key, cap)


def run_sim(config: Config, sim: SimParams, arrivals: Sequence[Arrival], seed: int = 0,
            trace: Optional[Trace] = None, emit_steps: Optional[IO[str]] = None,
            eviction_log: Optional[IO[str]] = None, backend: Optional[str] = None) -> RunReport:
    mode = CachingMode(sim.mode)
    store = MetadataStore(config, max_batch=sim.max_batch, entries_per_segment=sim.entries_per_segment,
                          n_buckets=sim.n_buckets)
    sched = Scheduler(SchedulerConfig(store.device_page_capacity, sim.min_buffer_ratio),
                      buffer_ratio=None if mode is CachingMode.ELASTIC else 0)
    selector = TracePlayback(trace) if trace is not None else SyntheticLocality(sim.reuse_fraction, sim.zipf_s, seed)
    pipe = Pipeline(config, store, selector, mode, ReplacementParams(sim.n_buckets, sim.eviction_mode),
                    SpecParams(sim.window_partitions, sim.outlier_partitions), log=eviction_log, backend=backend)

    report = RunReport(config={**config.to_dict(), "sim": _sim_echo(sim), "seed": seed})
    n_max = config.model.max_context
    pending = deque()
    for i, a in enumerate(sorted(arrivals, key=lambda a: a.arrival_s)):
        inp = min(a.input_tokens, n_max)
        out = max(0, min(a.output_tokens, n_max - inp))
        if (inp, out) != (a.input_tokens, a.output_tokens):
            report.requests_clipped += 1
        pending.append(pipe.make_request(i, inp, out, a.arrival_s))
    queue: deque = deque()
    active: list = []
    t = 0.0
    step = 0
    batch_sum = 0
    token_time = 0.0
    ttft_sum = 0.0
    first_seen = 0
    hits = misses = 0
    sel_bytes = 0
    peak_dev = -1
    first_key = None

    def finish(req):
        pipe.release(req)
        sched.release(req.request_id)

    while pending or queue or active:
        while pending and pending[0].arrival_s <= t:
            queue.append(pending.popleft())
        if not active and not queue:
            t = pending[0].arrival_s
            continue

        # admission, FIFO with head-of-line blocking
        events = []
        while queue:
            req = queue[0]
            if req.done:
                queue.popleft()
                report.requests_done += 1
                continue
            specs = pipe.index(req)
            res = sched.try_admit(req.request_id, pipe.admission_mandatory(specs), req.seq_len)
            if not isinstance(res, Admitted):
                if not active:  # can never fit: nothing else will free pages
                    queue.popleft()
                    report.requests_rejected += 1
                    events.append({"event": "reject", "request": req.request_id})
                    continue
                break
            try:
                pipe.offload(req, specs)
            except HostCapacityExceeded:
                sched.release(req.request_id)
                if not active:
                    queue.popleft()
                    report.requests_rejected += 1
                    events.append({"event": "reject", "request": req.request_id})
                    continue
                break
            req.residual = 0
            queue.popleft()
            active.append(req)
            if first_key is None:
                first_key = req.keys[0] if req.keys else None
        if not active:
            continue

        # per-step buffer targets; preempt the youngest when mandatory cannot fit
        i = 0
        while i < len(active):
            req = active[i]
            mand = {k: pipe.head_mandatory(k, req.step) for k in req.keys}
            try:
                sched.buffer_target(req.request_id, sum(mand.values()), req.seq_len, pipe.window_pages(req))
            except InsufficientBuffer:
                victim = active.pop()
                sched.preempt(victim.request_id)
                pipe.release(victim)
                victim.residual = 0
                queue.appendleft(victim)
                report.preemptions += 1
                continue  # retry the same index (victim may have been this request)
            i += 1
        caps = {}
        for req in active:
            g = sched.grants[req.request_id]
            mand = {k: pipe.head_mandatory(k, req.step) for k in req.keys}
            caps.update(pipe.head_capacities(req, mand, g.buffering_pages))
        _apply_capacities(store, caps)
        if first_key is not None and first_key in caps:
            report.max_head_capacity = max(report.max_head_capacity, caps[first_key])

        dev = store.meta_pool.mapped + store.dpt_pool.mapped
        if dev > peak_dev:
            peak_dev = dev
            report.footprint = store.footprint().to_dict()

        m = pipe.decode_step(active, step)
        m.events = events + sched.drain_events()
        t_start = t
        t += m.time_s
        batch_sum += len(active)
        token_time += m.time_s * len(active)
        hits += m.hits
        misses += m.misses
        sel_bytes += m.selected_kv_bytes
        report.transferred_bytes += m.transferred_bytes
        if emit_steps is not None:
            emit_steps.write(json.dumps(m.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

        still = []
        for req in active:
            if req.first_step_s is None:
                req.first_step_s = t_start
                ttft_sum += t_start - req.arrival_s + m.time_s
                first_seen += 1
            pipe.append_tokens(req, 1)
            report.output_tokens += 1
            if req.done:
                finish(req)
                report.requests_done += 1
            else:
                still.append(req)
        active = still
        step += 1

    report.simulated_s = t
    report.steps = step
    report.throughput_tok_s = report.output_tokens / t if t > 0 else 0.0
    report.mean_batch = batch_sum / step if step else 0.0
    report.mean_tpot_s = token_time / report.output_tokens if report.output_tokens else 0.0
    report.ttft_proxy_s = ttft_sum / first_seen if first_seen else 0.0
    report.hit_ratio = hits / (hits + misses) if hits + misses else 0.0
    report.rho = report.transferred_bytes / sel_bytes if sel_bytes else 0.0
    if not report.footprint:
        report.footprint = store.footprint().to_dict()
    return report


def _sim_echo(sim: SimParams) -> dict:
    d = asdict(sim)
    d["requests"] = [list(r) for r in sim.requests]
    return d


# -- sweeps ------------------------------------------------------------------------

COMPARE_HEADER = ["buffer_ratio", "mode", "capacity_pages", "hit_ratio", "rho_realized", "rho_lru",
                  "rho_belady", "tpot_realized_s", "tpot_envelope_s", "throughput_tok_s"]


def compare(config: Config, sim: SimParams, ratios: Sequence[float], seed: int = 0,
            trace: Optional[Trace] = None, backend: Optional[str] = None) -> list[list]:
    """Sweep buffer ratios on one request and bound each point by the oracles.

    The request is the first of ``sim.arrivals(seed)``. Selections come from
    ``trace`` or from a trace generated up front with the configured
    locality, so the oracles see exactly what the simulator served. Oracle
    miss ratios are measured on head (0, 0) at the largest device capacity
    that head held during the run.
    """
    arrivals = sim.arrivals(seed)[:1]
    if not arrivals:
        return [COMPARE_HEADER]
    a = arrivals[0]
    n_max = config.model.max_context
    inp = min(a.input_tokens, n_max)
    out = max(0, min(a.output_tokens, n_max - inp))
    one = [Arrival(0.0, inp, out)]
    sp = config.sparse
    if trace is None and not sp.is_variable:
        g = int(sp.partition_granularity)
        n_parts = -(-inp // g)
        budget = min(sp.budget_partitions(inp), n_parts)
        model = LocalityModel(sim.reuse_fraction, sim.zipf_s, budget, seed)
        trace = generate_trace_file(model, n_parts, out, config.model.num_layers, config.model.num_kv_heads)
    if sp.is_variable:
        raise InvalidConfig(["compare needs fixed partition granularity"])
    head = trace.for_head(0, 0)
    head = AccessTrace(head.steps[:out], head.num_partitions)
    counts = PartitionSpec.uniform(inp, int(sp.partition_granularity)).token_counts
    sel_tokens = sum(counts[i] for s in head.steps for i in s if i < len(counts))
    beta = min(Fraction(sel_tokens, max(1, len(head.steps) * inp)), Fraction(1))

    rows = [COMPARE_HEADER]
    for r in ratios:
        mode = "mandatory" if r == 0 else "elastic"
        p = replace(sim, min_buffer_ratio=max(1.0, float(r)), mode=mode)
        rep = run_sim(config, p, one, seed, trace=trace, backend=backend)
        cap = max(rep.max_head_capacity, head.max_demand())
        acc = head.num_accesses or 1
        rho_b = belady(head, cap) / acc
        rho_l = lru_reference(head, cap).misses / acc
        env = EnvelopeParams.from_shape(
            config.model, inp, 1, alpha=Fraction(repr(float(sp.summary_ratio))), beta=beta,
            rho=rho_b, bw_hbm=config.tiers.bw_hbm, bw_pcie=config.tiers.bw_pcie, t_mlp=config.tiers.t_mlp,
        )
        rows.append([r, mode, cap, rep.hit_ratio, rep.rho, rho_l, rho_b, rep.mean_tpot_s, tpot(env).total,
                     rep.throughput_tok_s])
    return rows


def footprint_scenario(config: Config, batch: int, context: Optional[int] = None, ratio: float = 5.0,
                       tier_split: bool = True, entries_per_segment: int = 256):
    """Metadata footprint with ``batch`` requests of ``context`` tokens each
    holding mandatory plus ``ratio`` times mandatory pages on the device.

    All heads are identical, so one head is built and its mapped segments
    are scaled by the number of heads.
    """
    from dataclasses import replace as dc_replace

    from .core import HeadKey
    from .replacement import BucketedLRU
    from .scheduler import scaled

    context = config.model.max_context if context is None else context
    sp = config.sparse
    g = sp.page_size if sp.is_variable else int(sp.partition_granularity)
    pages_per_part = -(-g // sp.page_size)
    n_parts = -(-context // g)
    budget = min(n_parts, -(-sp.budget_tokens(context) // g))
    mandatory = budget * pages_per_part
    cap = min(mandatory + scaled(mandatory, ratio), n_parts * pages_per_part)
    page_bytes = config.page_bytes()
    # room for exactly one head in each tier; the scenario scales it afterwards
    tiers = dc_replace(config.tiers, device_capacity=max(1, cap) * page_bytes,
                       host_capacity=max(1, n_parts * pages_per_part) * page_bytes)
    one = Config(config.model, config.sparse, tiers)
    store = MetadataStore(one, max_batch=batch, entries_per_segment=entries_per_segment, tier_split=tier_split)
    heads = batch * config.model.heads_per_request
    if heads == 0 or context == 0:
        return store.footprint()
    key = HeadKey(0, 0, 0)
    store.register_partitions(key, PartitionSpec.uniform(context, g))
    store.resize_device(key, cap)
    lru = BucketedLRU(store)
    ids, step = 0, 0
    while budget and ids < n_parts and store.head(key).capacity - len(store.resident_ids(key)) * pages_per_part >= mandatory:
        lru.replace(key, range(ids, min(ids + budget, n_parts)), step)
        ids += budget
        step += 1
    return store.footprint(scale=heads)
