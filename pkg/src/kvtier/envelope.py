"""Analytic serving envelope for sparse attention over a two-tier KV cache.

Per decoding step and batch of ``B`` requests:

    qk_bytes = B * L * H * d * e * alpha * N        (summary scoring reads)
    kv_bytes = 2 * B * L * H * d * e * beta * N     (selected K and V reads)
    tpot     = (qk + kv) / bw_hbm + rho * kv / bw_pcie + t_mlp

Byte volumes are formed as exact rationals first and rounded to float once.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Iterable

from .core import ModelShape
from .oracle import AccessTrace, belady


def _frac(x) -> Fraction:
    # repr round-trips decimal literals, so 0.0156 stays 156/10000
    return x if isinstance(x, Fraction) else Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


@dataclass(frozen=True)
class EnvelopeParams:
    B: int
    L: int
    H: int
    d: int
    e: int
    N: int
    alpha: float
    beta: float
    rho: float
    bw_hbm: float
    bw_pcie: float
    t_mlp: float

    def __post_init__(self):
        for name in ("B", "L", "H", "d", "e", "N"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("alpha", "beta", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not (self.bw_hbm > 0 and self.bw_pcie > 0):
            raise ValueError("bandwidths must be positive")
        if self.t_mlp < 0:
            raise ValueError("t_mlp must be non-negative")

    @classmethod
    def from_shape(cls, shape: ModelShape, N: int, B: int, **kw) -> "EnvelopeParams":
        return cls(B=B, L=shape.num_layers, H=shape.num_kv_heads, d=shape.head_dim,
                   e=shape.bytes_per_element, N=N, **kw)

    def row_bytes(self) -> int:
        """B * L * H * d * e: bytes of one vector per head across the batch."""
        return self.B * self.L * self.H * self.d * self.e


@dataclass(frozen=True)
class TPOT:
    qk_bytes: Fraction
    kv_bytes: Fraction
    hbm_s: float
    pcie_s: float
    mlp_s: float
    total: float


def kv_bytes(shape: ModelShape, N: int, B: int = 1, beta=1) -> int:
    """Bytes of K and V for ``B`` requests of ``N`` tokens, optionally a ``beta`` slice (floored)."""
    full = 2 * B * shape.num_layers * shape.num_kv_heads * shape.head_dim * shape.bytes_per_element * N
    return int(full * _frac(beta))


def tpot(p: EnvelopeParams) -> TPOT:
    row = p.row_bytes()
    qk = row * _frac(p.alpha) * p.N
    kv = 2 * row * _frac(p.beta) * p.N
    hbm = float(qk + kv) / p.bw_hbm
    pcie = p.rho * float(kv) / p.bw_pcie
    mlp = p.t_mlp
    return TPOT(qk, kv, hbm, pcie, mlp, hbm + pcie + mlp)


def belady_rho(trace: AccessTrace, capacity_pages: int) -> float:
    """Belady miss ratio over selected partitions.

    A capacity below the largest step demand is raised to it: the current
    step's selection must always fit. When the whole context fits on the
    device nothing is offloaded and the ratio is 0.
    """
    accesses = trace.num_accesses
    if accesses == 0 or capacity_pages >= sum(trace.all_page_counts()):
        return 0.0
    misses = belady(trace, max(capacity_pages, trace.max_demand()))
    return misses / accesses


def envelope_curve(base: EnvelopeParams, batches: Iterable[int], capacity_bytes: int,
                   page_bytes_per_head: int, heads_per_request: int,
                   trace_for: Callable[[int], AccessTrace]) -> list[tuple[int, TPOT]]:
    """Ideal TPOT per batch size with rho from Belady at the implied capacity.

    ``capacity_bytes`` of device cache is split evenly over
    ``B * heads_per_request`` heads; ``trace_for(B)`` returns the one-head
    selection trace used to measure the Belady miss ratio.
    """
    out = []
    for B in batches:
        per_head = capacity_bytes // max(1, B * heads_per_request * page_bytes_per_head)
        trace = trace_for(B)
        rho = belady_rho(trace, int(per_head))
        out.append((B, tpot(replace(base, B=B, rho=rho))))
    return out


def csv_rows(curve) -> list[list]:
    rows = [["B", "qk_bytes", "kv_bytes", "hbm_s", "pcie_s", "mlp_s", "tpot_s"]]
    for B, t in curve:
        rows.append([B, int(t.qk_bytes), int(t.kv_bytes), repr(t.hbm_s), repr(t.pcie_s),
                     repr(t.mlp_s), repr(t.total)])
    return rows


__all__ = ["EnvelopeParams", "TPOT", "belady_rho", "csv_rows", "envelope_curve", "kv_bytes", "tpot"]
