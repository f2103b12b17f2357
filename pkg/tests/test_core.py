import pytest

from kvtier.core import ModelShape, SparseConfig, TierParams, config_from_dict, load_config, validate_config
from kvtier.errors import InvalidConfig

TIERS = TierParams(80 << 30, 1 << 40, 2e12, 32e9, 5e-3)


def test_qwen_shape_with_table3_sparse_config_is_valid():
    cfg = validate_config(ModelShape(36, 8, 128, 2, 131072), SparseConfig(0.0156, 8, 8), TIERS)
    assert cfg.page_bytes() == 8 * 2 * 128 * 2


def test_page_size_zero_is_named():
    with pytest.raises(InvalidConfig) as exc:
        validate_config(ModelShape(36, 8, 128, 2, 131072), SparseConfig(0.0156, 8, 0), TIERS)
    assert exc.value.violations == ["page_size"]


def test_budget_below_granularity():
    with pytest.raises(InvalidConfig) as exc:
        validate_config(ModelShape(1, 1, 128, 2, 32), SparseConfig(0.0156, 8, 8), TIERS)
    assert exc.value.violations == ["budget<granularity"]


def test_every_violation_is_listed():
    with pytest.raises(InvalidConfig) as exc:
        validate_config(ModelShape(0, 1, 128, 3, 4096), SparseConfig(1.5, 8, 8),
                        TierParams(0, 1, 1e9, 2e9))
    v = exc.value.violations
    for name in ("num_layers", "bytes_per_element", "retrieval_budget", "device_capacity", "bw_hbm>bw_pcie"):
        assert name in v


def test_fractional_budget_is_exact():
    s = SparseConfig(0.1, 8, 8)
    assert s.budget_tokens(80) == 8
    assert SparseConfig(0.0156, 8, 8).budget_partitions(32768) == 64
    assert SparseConfig(100, 8, 8).budget_tokens(50) == 50


def test_variable_granularity_budget_needs_one_token():
    with pytest.raises(InvalidConfig) as exc:
        validate_config(ModelShape(1, 1, 128, 2, 32), SparseConfig(0.01, "variable", 8), TIERS)
    assert exc.value.violations == ["budget<1token"]


def test_config_round_trip_and_missing_section(tmp_path):
    cfg = validate_config(ModelShape(2, 2, 64, 2, 1024), SparseConfig(64, 8, 8), TIERS)
    assert config_from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig):
        config_from_dict({"model": cfg.to_dict()["model"]})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InvalidConfig):
        load_config(p)
