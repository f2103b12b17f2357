import random
from dataclasses import replace

import pytest

from kvtier.core import ModelShape
from kvtier.envelope import EnvelopeParams, belady_rho, csv_rows, envelope_curve, kv_bytes, tpot
from kvtier.oracle import from_steps
from kvtier.workload import LocalityModel, generate_trace

QWEN = ModelShape(36, 8, 128, 2, 131072)
GOLDEN = EnvelopeParams(1, 36, 8, 128, 2, 32768, 0.125, 0.0156, 0.2, 2.0e12, 32e9, 5e-3)


def test_kv_bytes_anchor():
    assert kv_bytes(QWEN, 131072) == 19_327_352_832
    assert kv_bytes(QWEN, 131072, beta=0.05) == 966_367_641
    assert kv_bytes(QWEN, 0) == 0


def test_golden_tpot():
    t = tpot(GOLDEN)
    assert t.hbm_s == 0.0001886832820224
    assert t.pcie_s == 0.00047110422528
    assert t.mlp_s == 5e-3
    assert t.total == 0.0056597875073024


def test_degenerate_is_t_mlp():
    p = replace(GOLDEN, alpha=0.0, beta=0.0, rho=0.0)
    assert tpot(p).total == 5e-3


def test_linear_in_batch():
    a, b = tpot(GOLDEN), tpot(replace(GOLDEN, B=2))
    assert b.qk_bytes == 2 * a.qk_bytes and b.kv_bytes == 2 * a.kv_bytes
    assert b.total - b.mlp_s == pytest.approx(2 * (a.total - a.mlp_s), rel=1e-12)


def test_decomposition_is_exact_on_random_params():
    rng = random.Random(11)
    for _ in range(100):
        p = EnvelopeParams(rng.randint(1, 64), rng.randint(1, 80), rng.randint(1, 16), 128, 2,
                           rng.randint(0, 1 << 17), rng.random() * 0.5, rng.random(), rng.random(),
                           rng.uniform(1e12, 4e12), rng.uniform(8e9, 64e9), rng.uniform(0, 1e-2))
        t = tpot(p)
        assert t.total == t.hbm_s + t.pcie_s + t.mlp_s
        assert min(t.hbm_s, t.pcie_s, t.mlp_s) >= 0


def test_invalid_params():
    with pytest.raises(ValueError):
        replace(GOLDEN, rho=1.5)
    with pytest.raises(ValueError):
        replace(GOLDEN, bw_pcie=0)


def test_curve_full_capacity_has_zero_rho():
    tr = generate_trace(LocalityModel(0.7, 0.8, 8, 0), 64, 100)
    curve = envelope_curve(replace(GOLDEN, N=512), [1, 2, 4], 1 << 40, 4096, 288, lambda B: tr)
    for B, t in curve:
        assert t.pcie_s == 0.0
    totals = [t.total - t.mlp_s for _, t in curve]
    assert totals[1] == pytest.approx(2 * totals[0]) and totals[2] == pytest.approx(4 * totals[0])
    rows = csv_rows(curve)
    assert rows[0] == ["B", "qk_bytes", "kv_bytes", "hbm_s", "pcie_s", "mlp_s", "tpot_s"] and len(rows) == 4


def test_tpot_non_increasing_in_capacity():
    tr = generate_trace(LocalityModel(0.7, 0.8, 16, 2), 512, 300)
    prev = None
    for cap in (16, 32, 64, 128, 256, 512):
        t = tpot(replace(GOLDEN, rho=belady_rho(tr, cap))).total
        assert prev is None or t <= prev
        prev = t


def test_pinned_only_capacity_is_the_upper_curve():
    tr = from_steps([[0, 1], [2, 3], [0, 1], [2, 3]], 4)
    assert belady_rho(tr, 2) == 1.0
    assert belady_rho(tr, 3) == 0.75
    assert belady_rho(tr, 4) == 0.0
