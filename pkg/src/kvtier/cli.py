"""Command-line driver.

Exit codes: 0 success, 1 config error, 2 trace error, 3 internal invariant
violation (the invariant is named on stderr).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from contextlib import ExitStack
from dataclasses import replace
from fractions import Fraction
from typing import Optional, Sequence

from .core import Config, config_from_dict, load_document
from .envelope import EnvelopeParams, csv_rows, envelope_curve, tpot
from .errors import (
    BudgetTooLarge,
    HostCapacityExceeded,
    InstanceTooLarge,
    InvalidConfig,
    KVTierError,
    ParseError,
    TraceExhausted,
)
from .oracle import belady, exhaustive_min, lru_reference
from .replacement import ReplacementParams, replay_misses
from .sim import SimParams, compare, footprint_scenario, run_sim
from .workload import (
    LocalityModel,
    generate_trace,
    generate_trace_file,
    read_arrivals,
    read_trace,
    write_arrivals,
    write_trace,
)

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_INVARIANT = 0, 1, 2, 3


class TraceError(KVTierError):
    """Unreadable trace or arrival file."""


def _load(path: str) -> tuple[Config, SimParams]:
    doc = load_document(path)
    return config_from_dict(doc), SimParams.from_dict(doc.get("sim"))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def _read_trace(path: Optional[str]):
    if path is None:
        return None
    try:
        return read_trace(path)
    except OSError as exc:
        raise TraceError(f"unreadable trace: {exc}") from None


def _emit_text(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _head_partitions(config: Config, context: int) -> tuple[int, int]:
    """Partition count and retrieval budget of one head at ``context`` tokens."""
    sp = config.sparse
    if sp.is_variable:
        raise InvalidConfig(["needs fixed partition granularity"])
    g = int(sp.partition_granularity)
    n = -(-context // g)
    return n, max(1, min(n, sp.budget_partitions(context)))


# -- subcommands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    config, sim = _load(args.config)
    print(f"valid: L={config.model.num_layers} H={config.model.num_kv_heads} "
          f"page_bytes={config.page_bytes()} mode={sim.mode}")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    config, sim = _load(args.config)
    context = args.context or config.model.max_context
    n, budget = _head_partitions(config, context)
    if args.budget is not None:
        budget = args.budget
    model = LocalityModel(sim.reuse_fraction, sim.zipf_s, budget, args.seed)
    trace = generate_trace_file(model, n, args.steps, config.model.num_layers, config.model.num_kv_heads)
    write_trace(trace, args.out)
    if args.arrivals:
        write_arrivals(sim.arrivals(args.seed), args.arrivals)
    print(f"wrote {args.out}: {n} partitions, budget {budget}, {args.steps} steps")
    return EXIT_OK


def cmd_run(args) -> int:
    config, sim = _load(args.config)
    trace = _read_trace(args.trace)
    if args.arrivals:
        try:
            arrivals = read_arrivals(args.arrivals)
        except OSError as exc:
            raise TraceError(f"unreadable arrivals: {exc}") from None
    else:
        arrivals = sim.arrivals(args.seed)
    with ExitStack() as stack:
        steps = stack.enter_context(open(args.emit_steps, "w", encoding="utf-8")) if args.emit_steps else None
        elog = stack.enter_context(open(args.eviction_log, "w", encoding="utf-8")) if args.eviction_log else None
        report = run_sim(config, sim, arrivals, args.seed, trace=trace, emit_steps=steps, eviction_log=elog)
    _emit_text(report.to_json(), args.out)
    if args.csv:
        _emit_text(_footprint_csv(report.footprint), args.csv)
    return EXIT_OK


def _footprint_csv(footprint: dict) -> str:
    rows = [["table", "tier", "logical_bytes", "physical_bytes"]]
    rows += [[r["table"], r["tier"], r["logical_bytes"], r["physical_bytes"]] for r in footprint.get("rows", [])]
    if "total" in footprint:
        rows.append(["total", "all", footprint["total"]["logical_bytes"], footprint["total"]["physical_bytes"]])
    return _csv_text(rows)


def cmd_compare(args) -> int:
    config, sim = _load(args.config)
    rows = compare(config, sim, args.ratios, args.seed, trace=_read_trace(args.trace))
    _emit_text(_csv_text(rows), args.csv)
    return EXIT_OK


def cmd_envelope(args) -> int:
    config, sim = _load(args.config)
    context = args.context or config.model.max_context
    sp = config.sparse
    beta = sp.budget_tokens(context) / context
    base = EnvelopeParams.from_shape(
        config.model, context, 1, alpha=Fraction(repr(float(sp.summary_ratio))), beta=min(beta, Fraction(1)),
        rho=args.rho if args.rho is not None else 0, bw_hbm=config.tiers.bw_hbm,
        bw_pcie=config.tiers.bw_pcie, t_mlp=config.tiers.t_mlp,
    )
    if args.rho is not None:
        curve = [(B, tpot(replace(base, B=B))) for B in args.batches]
    else:
        n, budget = _head_partitions(config, context)
        model = LocalityModel(sim.reuse_fraction, sim.zipf_s, budget, args.seed)
        trace = generate_trace(model, n, args.steps)
        pages_per_part = -(-int(sp.partition_granularity) // sp.page_size)
        page_bytes = config.page_bytes() * pages_per_part
        curve = envelope_curve(base, args.batches, config.tiers.device_capacity, page_bytes,
                               config.model.heads_per_request, lambda B: trace)
    _emit_text(_csv_text(csv_rows(curve)), args.csv)
    return EXIT_OK


def cmd_footprint(args) -> int:
    config, sim = _load(args.config)
    batch = args.batch or sim.max_batch
    ratio = sim.min_buffer_ratio if args.ratio is None else args.ratio
    report = footprint_scenario(config, batch, args.context, ratio, tier_split=not args.flat,
                                entries_per_segment=sim.entries_per_segment)
    _emit_text(report.to_csv(), args.csv)
    if args.out:
        _emit_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    trace = _read_trace(args.trace)
    head = trace.for_head(args.layer, args.head)
    cap = args.capacity
    if cap < head.max_demand():
        raise InvalidConfig([f"capacity {cap} below the largest step demand {head.max_demand()}"])
    counts = head.all_page_counts()
    doc = {
        "accesses": head.num_accesses,
        "capacity": cap,
        "belady": belady(head, cap),
        "lru": lru_reference(head, cap).misses,
        "bucketed": sum(replay_misses(head.steps, counts, cap, ReplacementParams(args.n_buckets))),
    }
    if args.exhaustive:
        try:
            doc["exhaustive"] = exhaustive_min(head, cap)
        except InstanceTooLarge as exc:
            doc["exhaustive"] = None
            print(f"exhaustive search skipped: {exc}", file=sys.stderr)
    _emit_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kvtier", description="Hierarchical KV-cache simulator for sparse attention.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON config with model, sparse, tiers, sim sections")
        sp.add_argument("--seed", type=int, default=0, help="root seed for every random stream")

    s = sub.add_parser("validate", help="check a config and print a one-line summary")
    common(s)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("gen-trace", help="generate a synthetic selection trace")
    common(s)
    s.add_argument("--out", required=True, help="trace file to write")
    s.add_argument("--steps", type=int, default=256, help="decode steps")
    s.add_argument("--context", type=int, help="context tokens (default: max_context)")
    s.add_argument("--budget", type=int, help="partitions per step (default: from retrieval_budget)")
    s.add_argument("--arrivals", help="also write the arrival schedule CSV here")
    s.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("run", help="simulate arrivals end to end and print a JSON report")
    common(s)
    s.add_argument("--trace", help="selection trace to play back instead of synthetic locality")
    s.add_argument("--arrivals", help="arrival schedule CSV (default: from the sim section)")
    s.add_argument("--emit-steps", help="write per-step metrics as JSON lines")
    s.add_argument("--eviction-log", help="write per-replacement eviction records as JSON lines")
    s.add_argument("--out", help="report JSON path (default: stdout)")
    s.add_argument("--csv", help="also write the metadata footprint CSV")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="buffer-ratio sweep against the envelope and oracles")
    common(s)
    s.add_argument("--trace", help="selection trace (default: generated from the sim locality)")
    s.add_argument("--ratios", type=_floats, default=[1, 2, 3, 4, 6, 8],
                   help="comma-separated buffer ratios; 0 means mandatory only")
    s.add_argument("--csv", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("envelope", help="ideal TPOT per batch size")
    common(s)
    s.add_argument("--batches", type=_ints, default=[1, 2, 4, 8, 16, 32], help="comma-separated batch sizes")
    s.add_argument("--context", type=int, help="context tokens (default: max_context)")
    s.add_argument("--rho", type=float, help="fixed miss ratio (default: Belady on a synthetic trace)")
    s.add_argument("--steps", type=int, default=256, help="trace length for the Belady miss ratio")
    s.add_argument("--csv", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_envelope)

    s = sub.add_parser("footprint", help="metadata bytes per table and tier for a full batch")
    common(s)
    s.add_argument("--batch", type=int, help="requests (default: sim.max_batch)")
    s.add_argument("--context", type=int, help="context tokens per request (default: max_context)")
    s.add_argument("--ratio", type=float, help="buffering pages per mandatory page (default: sim.min_buffer_ratio)")
    s.add_argument("--flat", action="store_true", help="keep every table on the device")
    s.add_argument("--csv", help="CSV path (default: stdout)")
    s.add_argument("--out", help="also write the report as JSON")
    s.set_defaults(func=cmd_footprint)

    s = sub.add_parser("oracle", help="Belady, LRU and bucketed-LRU misses on one head of a trace")
    common(s, config=False)
    s.add_argument("--trace", required=True, help="selection trace")
    s.add_argument("--capacity", type=int, required=True, help="device pages")
    s.add_argument("--layer", type=int, default=0)
    s.add_argument("--head", type=int, default=0)
    s.add_argument("--n-buckets", type=int, default=64)
    s.add_argument("--exhaustive", action="store_true", help="also run the exhaustive search (tiny traces)")
    s.add_argument("--out", help="JSON path (default: stdout)")
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors count as config errors
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except (InvalidConfig, HostCapacityExceeded, BudgetTooLarge) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, TraceExhausted, TraceError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except (KVTierError, AssertionError) as exc:
        print(f"invariant violated: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
