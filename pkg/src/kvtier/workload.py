"""Synthetic selection traces, request arrivals, and their file formats.

Selections follow a sliding working set: each id selected at the previous
step survives with probability ``reuse_fraction`` and the gap is refilled by
Zipf-weighted draws (id 0 most popular) among ids not already selected.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .errors import BudgetTooLarge, ParseError, TraceExhausted
from .oracle import AccessTrace

TRACE_MAGIC = "#kvtier-trace v1"


def sub_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a (layer, head, ...) path under one master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path)))


@dataclass(frozen=True)
class LocalityModel:
    reuse_fraction: float
    zipf_s: float
    budget: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.reuse_fraction <= 1.0:
            raise ValueError("reuse_fraction must lie in [0, 1]")
        if self.zipf_s < 0:
            raise ValueError("zipf_s must be non-negative")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")


class LocalitySelector:
    """Stateful step-by-step generator behind :func:`generate_trace`."""

    def __init__(self, model: LocalityModel, num_partitions: int, rng: Optional[np.random.Generator] = None):
        if model.budget > num_partitions:
            raise BudgetTooLarge(f"budget {model.budget} exceeds {num_partitions} partitions")
        self.model = model
        self.n = int(num_partitions)
        self.rng = rng if rng is not None else np.random.default_rng(model.seed)
        self.logw = -model.zipf_s * np.log(np.arange(1, self.n + 1, dtype=np.float64))
        self.current = np.empty(0, dtype=np.int64)

    def resize(self, num_partitions: int) -> None:
        """Widen the id space (new partitions appended at the cold end)."""
        if num_partitions != self.n:
            self.n = int(num_partitions)
            self.logw = -self.model.zipf_s * np.log(np.arange(1, self.n + 1, dtype=np.float64))

    def _keys(self, exclude: np.ndarray) -> np.ndarray:
        # Gumbel perturbation: sorting by key samples without replacement by weight
        keys = self.logw + self.rng.gumbel(size=self.n)
        keys[exclude] = -np.inf
        return keys

    def _draw(self, k: int, exclude: np.ndarray) -> np.ndarray:
        if k == 0:
            return np.empty(0, dtype=np.int64)
        top = np.argpartition(-self._keys(exclude), k - 1)[:k]
        return top.astype(np.int64)

    def _survivors(self) -> np.ndarray:
        if not self.current.size:
            return self.current
        return self.current[self.rng.random(self.current.size) < self.model.reuse_fraction]

    def next(self, budget: Optional[int] = None) -> np.ndarray:
        """Next selection; ``budget`` overrides the model's partition count."""
        b = self.model.budget if budget is None else min(int(budget), self.n)
        keep = self._survivors()
        if keep.size > b:
            keep = keep[:b]
        fresh = self._draw(b - keep.size, keep)
        self.current = np.sort(np.concatenate((keep, fresh)))
        return self.current

    def next_tokens(self, token_counts: np.ndarray, token_budget) -> np.ndarray:
        """Like :meth:`next` but sized by tokens: ids are added until their
        token counts reach ``token_budget``."""
        keep = self._survivors()
        cum = np.cumsum(token_counts[keep])
        if keep.size and cum[-1] >= token_budget:
            keep = keep[: int(np.searchsorted(cum, token_budget)) + 1]
            fresh = np.empty(0, dtype=np.int64)
        else:
            have = cum[-1] if keep.size else 0
            keys = self._keys(keep)
            order = np.argsort(-keys, kind="stable")[: self.n - keep.size]
            fcum = have + np.cumsum(token_counts[order])
            k = min(int(np.searchsorted(fcum, token_budget)) + 1, order.size)
            fresh = order[:k].astype(np.int64)
        self.current = np.sort(np.concatenate((keep, fresh)))
        return self.current


def generate_trace(model: LocalityModel, num_partitions: int, steps: int,
                   rng: Optional[np.random.Generator] = None) -> AccessTrace:
    sel = LocalitySelector(model, num_partitions, rng)
    return AccessTrace(tuple(tuple(sel.next().tolist()) for _ in range(steps)), num_partitions)


def mean_overlap(trace: AccessTrace) -> float:
    """Mean fraction of a step's selection already selected at the previous step."""
    vals = [len(set(a) & set(b)) / len(b) for a, b in zip(trace.steps, trace.steps[1:]) if b]
    return float(np.mean(vals)) if vals else 0.0


# -- multi-head trace files ---------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    step: int
    layer: int
    head: int
    sel: tuple


@dataclass
class Trace:
    """Selections for many (layer, head) streams, as stored in a trace file."""

    num_partitions: int
    budget: int
    records: list = field(default_factory=list)

    def __post_init__(self):
        self._index = {(r.step, r.layer, r.head): r.sel for r in self.records}

    def __eq__(self, other):
        return (isinstance(other, Trace) and self.num_partitions == other.num_partitions
                and self.budget == other.budget and self.records == other.records)

    @property
    def num_steps(self) -> int:
        return 1 + max((r.step for r in self.records), default=-1)

    def selection(self, step: int, layer: int, head: int) -> tuple:
        try:
            return self._index[(step, layer, head)]
        except KeyError:
            raise TraceExhausted(f"no selection for step {step} layer {layer} head {head}") from None

    def for_head(self, layer: int, head: int) -> AccessTrace:
        rows = sorted((r for r in self.records if r.layer == layer and r.head == head), key=lambda r: r.step)
        return AccessTrace(tuple(r.sel for r in rows), self.num_partitions)


def generate_trace_file(model: LocalityModel, num_partitions: int, steps: int,
                        layers: int = 1, heads: int = 1) -> Trace:
    """Independent per-(layer, head) traces derived from ``model.seed``."""
    per = {}
    for layer in range(layers):
        for head in range(heads):
            per[(layer, head)] = generate_trace(model, num_partitions, steps, sub_rng(model.seed, layer, head))
    recs = [TraceRecord(t, l, h, per[(l, h)].steps[t])
            for t in range(steps) for l in range(layers) for h in range(heads)]
    return Trace(num_partitions, model.budget, recs)


def write_trace(trace: Trace, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{TRACE_MAGIC} num_partitions={trace.num_partitions} budget={trace.budget}\n")
        for r in trace.records:
            fh.write(json.dumps({"step": r.step, "layer": r.layer, "head": r.head, "sel": list(r.sel)},
                                separators=(",", ":")) + "\n")


def _parse_header(line: str) -> tuple[int, int]:
    if not line.startswith(TRACE_MAGIC):
        raise ParseError(1, "missing trace header")
    fields = dict(tok.split("=", 1) for tok in line[len(TRACE_MAGIC):].split() if "=" in tok)
    try:
        n, b = int(fields["num_partitions"]), int(fields["budget"])
    except (KeyError, ValueError):
        raise ParseError(1, "header needs integer num_partitions and budget") from None
    if n < 0 or b < 0:
        raise ParseError(1, "negative header value")
    return n, b


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def read_trace(path: Union[str, Path]) -> Trace:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(1, "empty file")
    n, budget = _parse_header(lines[0])
    recs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed record: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ParseError(lineno, "record is not an object")
        for k in ("step", "layer", "head", "sel"):
            if k not in obj:
                raise ParseError(lineno, f"missing field {k}")
        if not all(_is_int(obj[k]) and obj[k] >= 0 for k in ("step", "layer", "head")):
            raise ParseError(lineno, "step, layer and head must be non-negative integers")
        sel = obj["sel"]
        if not isinstance(sel, list) or not all(_is_int(i) for i in sel):
            raise ParseError(lineno, "sel must be a list of integers")
        if any(not 0 <= i < n for i in sel):
            raise ParseError(lineno, f"partition id out of range [0, {n})")
        recs.append(TraceRecord(obj["step"], obj["layer"], obj["head"], tuple(sel)))
    return Trace(n, budget, recs)


# -- arrivals ----------------------------------------------------------------

@dataclass(frozen=True)
class LengthStats:
    min: int
    max: int
    avg: int


# input/output token statistics of the two long-context benchmarks
PRESETS = {
    "longbench-v2": (LengthStats(32_000, 120_000, 55_000), LengthStats(500, 15_000, 5_000)),
    "longgenbench": (LengthStats(16_000, 19_000, 18_000), LengthStats(7_000, 32_000, 12_000)),
}


@dataclass(frozen=True)
class ArrivalProcess:
    rate: float
    count: int
    seed: int = 0
    input_len: LengthStats = PRESETS["longbench-v2"][0]
    output_len: LengthStats = PRESETS["longbench-v2"][1]
    concentration: float = 4.0

    @classmethod
    def preset(cls, name: str, rate: float, count: int, seed: int = 0, scale: float = 1.0):
        """A dataset preset with every length multiplied by ``scale`` (for desk-sized runs)."""
        i, o = PRESETS[name]

        def sc(s: LengthStats) -> LengthStats:
            return LengthStats(max(1, round(s.min * scale)), max(1, round(s.max * scale)), max(1, round(s.avg * scale)))

        return cls(rate, count, seed, sc(i), sc(o))


@dataclass(frozen=True)
class Arrival:
    arrival_s: float
    input_tokens: int
    output_tokens: int


def _bounded(rng: np.random.Generator, s: LengthStats, k: float, n: int) -> np.ndarray:
    # scaled beta with the requested mean, confined to [min, max]
    if s.max == s.min:
        return np.full(n, s.min, dtype=np.int64)
    m = min(max((s.avg - s.min) / (s.max - s.min), 1e-3), 1 - 1e-3)
    x = rng.beta(k * m, k * (1 - m), size=n)
    return np.clip(np.rint(s.min + x * (s.max - s.min)), s.min, s.max).astype(np.int64)


def poisson_arrivals(proc: ArrivalProcess) -> list[Arrival]:
    if proc.rate <= 0:
        raise ValueError("arrival rate must be positive")
    if proc.count == 0:
        return []
    rng = np.random.default_rng(proc.seed)
    times = np.cumsum(rng.exponential(1.0 / proc.rate, size=proc.count))
    ins = _bounded(rng, proc.input_len, proc.concentration, proc.count)
    outs = _bounded(rng, proc.output_len, proc.concentration, proc.count)
    return [Arrival(float(t), int(i), int(o)) for t, i, o in zip(times, ins, outs)]


def write_arrivals(arrivals, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arrival_s", "input_tokens", "output_tokens"])
        for a in arrivals:
            w.writerow([repr(a.arrival_s), a.input_tokens, a.output_tokens])


def read_arrivals(path: Union[str, Path]) -> list[Arrival]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows: Iterator = csv.reader(fh)
        header = next(rows, None)
        if header != ["arrival_s", "input_tokens", "output_tokens"]:
            raise ParseError(1, "arrival header must be arrival_s,input_tokens,output_tokens")
        for lineno, row in enumerate(rows, start=2):
            try:
                t, i, o = float(row[0]), int(row[1]), int(row[2])
            except (ValueError, IndexError):
                raise ParseError(lineno, "expected float,int,int") from None
            if t < 0 or i < 0 or o < 0:
                raise ParseError(lineno, "negative value")
            out.append(Arrival(t, i, o))
    return out
