"""Shared domain types and configuration validation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, NamedTuple, Union

from .errors import InvalidConfig

VARIABLE = "variable"
VALID_ELEMENT_BYTES = (1, 2, 4)


@dataclass(frozen=True)
class ModelShape:
    num_layers: int
    num_kv_heads: int
    head_dim: int
    bytes_per_element: int
    max_context: int

    @property
    def heads_per_request(self) -> int:
        return self.num_layers * self.num_kv_heads

    def token_bytes(self) -> int:
        """K and V bytes of one token in one head."""
        return 2 * self.head_dim * self.bytes_per_element


@dataclass(frozen=True)
class SparseConfig:
    """Sparse-algorithm parameters.

    ``retrieval_budget`` is a fraction of the context when given as a float in
    (0, 1], and a fixed token count when given as an int.
    ``partition_granularity`` is tokens per partition or ``"variable"``.
    """

    retrieval_budget: Union[float, int]
    partition_granularity: Union[int, str]
    page_size: int
    summary_ratio: float = 0.0
    update_interval: int = 0

    @property
    def is_fraction(self) -> bool:
        return isinstance(self.retrieval_budget, float)

    @property
    def is_variable(self) -> bool:
        return self.partition_granularity == VARIABLE

    def budget_tokens(self, context_len: int) -> Fraction:
        """Exact number of tokens the algorithm wants to retrieve per step."""
        if self.is_fraction:
            # decimal repr keeps 0.1 * 80 == 8 exactly
            return Fraction(repr(self.retrieval_budget)) * context_len
        return Fraction(min(int(self.retrieval_budget), context_len))

    def budget_partitions(self, context_len: int) -> int:
        """ceil(budget tokens / granularity); only defined for fixed granularity."""
        if self.is_variable:
            raise ValueError("budget in partitions is undefined for variable granularity")
        return math.ceil(self.budget_tokens(context_len) / int(self.partition_granularity))

    def pages_for(self, tokens: int) -> int:
        return -(-tokens // self.page_size)


class HeadKey(NamedTuple):
    request_id: Any
    layer: int
    head: int


@dataclass(frozen=True)
class TierParams:
    device_capacity: int
    host_capacity: int
    bw_hbm: float
    bw_pcie: float
    t_mlp: float = 0.0
    per_transfer_latency: float = 0.0


@dataclass(frozen=True)
class Config:
    model: ModelShape
    sparse: SparseConfig
    tiers: TierParams

    def page_bytes(self) -> int:
        """Bytes of one head-wise physical page (K and V)."""
        return self.sparse.page_size * self.model.token_bytes()

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "sparse": asdict(self.sparse), "tiers": asdict(self.tiers)}


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _model_violations(m: ModelShape) -> list[str]:
    out = []
    for name in ("num_layers", "num_kv_heads", "head_dim", "bytes_per_element", "max_context"):
        v = getattr(m, name)
        if not _is_int(v) or v < 1:
            out.append(name)
    if "bytes_per_element" not in out and m.bytes_per_element not in VALID_ELEMENT_BYTES:
        out.append("bytes_per_element")
    return out


def _sparse_violations(s: SparseConfig, max_context: int) -> list[str]:
    out = []
    if not _is_int(s.page_size) or s.page_size < 1:
        out.append("page_size")
    g = s.partition_granularity
    fixed = _is_int(g)
    if not (s.is_variable or (fixed and g >= 1)):
        out.append("partition_granularity")
        fixed = False
    if not isinstance(s.summary_ratio, (int, float)) or not 0.0 <= s.summary_ratio < 1.0:
        out.append("summary_ratio")
    if not _is_int(s.update_interval) or s.update_interval < 0:
        out.append("update_interval")

    b = s.retrieval_budget
    if isinstance(b, float):
        if not 0.0 < b <= 1.0:
            out.append("retrieval_budget")
            return out
    elif _is_int(b):
        if b < 1:
            out.append("retrieval_budget")
            return out
    else:
        out.append("retrieval_budget")
        return out
    if _is_int(max_context) and max_context >= 1:
        tokens = s.budget_tokens(max_context)
        if fixed:
            if tokens < g:
                out.append("budget<granularity")
        elif tokens < 1:
            out.append("budget<1token")
    return out


def _tier_violations(t: TierParams) -> list[str]:
    out = []
    if not t.device_capacity > 0:
        out.append("device_capacity")
    if not t.host_capacity > 0:
        out.append("host_capacity")
    if not t.bw_pcie > 0:
        out.append("bw_pcie")
    if not t.bw_hbm > t.bw_pcie:
        out.append("bw_hbm>bw_pcie")
    if t.t_mlp < 0:
        out.append("t_mlp")
    if t.per_transfer_latency < 0:
        out.append("per_transfer_latency")
    return out


def validate_config(model: ModelShape, sparse: SparseConfig, tiers: TierParams) -> Config:
    """Return the configuration bundled if every invariant holds.

    Raises InvalidConfig listing every violated invariant by name.
    """
    violations = _model_violations(model)
    violations += _sparse_violations(sparse, model.max_context)
    violations += _tier_violations(tiers)
    if violations:
        raise InvalidConfig(violations)
    return Config(model, sparse, tiers)


def config_from_dict(doc: dict) -> Config:
    try:
        model = ModelShape(**doc["model"])
        sparse = SparseConfig(**doc["sparse"])
        tiers = TierParams(**doc["tiers"])
    except KeyError as exc:
        raise InvalidConfig([f"missing section {exc.args[0]}"]) from None
    except TypeError as exc:
        raise InvalidConfig([str(exc)]) from None
    return validate_config(model, sparse, tiers)


def load_document(path: Union[str, Path]) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig([f"unreadable config: {exc}"]) from None


def load_config(path: Union[str, Path]) -> Config:
    return config_from_dict(load_document(path))
