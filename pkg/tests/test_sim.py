import io
import json

import pytest

from kvtier.errors import InvalidConfig
from kvtier.sim import COMPARE_HEADER, SimParams, compare, footprint_scenario, run_sim
from kvtier.workload import Arrival

from conftest import make_config


def small(**kw):
    kw.setdefault("n_max", 8192)
    kw.setdefault("budget", 64)
    kw.setdefault("t_mlp", 1e-4)
    return make_config(**kw)


def test_empty_schedule_reports_zero_tokens():
    rep = run_sim(small(), SimParams(), [], seed=0)
    assert rep.output_tokens == 0 and rep.throughput_tok_s == 0.0 and rep.steps == 0
    assert json.loads(rep.to_json())["output_tokens"] == 0


def test_reports_are_byte_identical_per_seed():
    sim = SimParams(arrival_count=4, arrival_rate=5.0, length_scale=0.05, max_batch=4)
    cfg = small(L=2, H=1)
    a = run_sim(cfg, sim, sim.arrivals(7), seed=7).to_json()
    b = run_sim(cfg, sim, sim.arrivals(7), seed=7).to_json()
    assert a == b
    c = run_sim(cfg, sim, sim.arrivals(8), seed=8).to_json()
    assert a != c


def test_full_reuse_hits_after_warmup():
    sim = SimParams(reuse_fraction=1.0, min_buffer_ratio=6.0)
    steps = io.StringIO()
    rep = run_sim(small(), sim, [Arrival(0.0, 4096, 64)], seed=1, emit_steps=steps)
    rows = [json.loads(line) for line in steps.getvalue().splitlines()]
    assert rows[0]["transferred_bytes"] > 0
    assert all(r["transferred_bytes"] == 0 for r in rows[1:])
    assert all(q["hits"] == q["selected"] for r in rows[1:] for q in r["requests"])
    assert rep.output_tokens == 64 and rep.requests_done == 1


def test_larger_buffer_ratio_raises_hit_ratio():
    arr = [Arrival(0.0, 4096, 300)]
    lo = run_sim(small(), SimParams(min_buffer_ratio=1.0), arr, seed=2)
    hi = run_sim(small(), SimParams(min_buffer_ratio=5.0), arr, seed=2)
    assert hi.hit_ratio > lo.hit_ratio


def test_report_invariants():
    sim = SimParams(arrival_count=5, arrival_rate=10.0, length_scale=0.05, max_batch=8)
    rep = run_sim(small(), sim, sim.arrivals(3), seed=3)
    assert rep.requests_done == 5
    assert rep.throughput_tok_s == rep.output_tokens / rep.simulated_s
    assert 0.0 <= rep.hit_ratio <= 1.0
    assert rep.ttft_proxy_s > 0 and rep.mean_batch >= 1


def test_tight_device_budget_preempts_and_finishes():
    # room for about one request at the minimum ratio
    cfg = small(device=4096 * 8 * 100)
    sim = SimParams(min_buffer_ratio=5.0)
    arr = [Arrival(0.0, 4000, 300), Arrival(0.0, 4000, 300)]
    rep = run_sim(cfg, sim, arr, seed=4)
    assert rep.requests_done == 2 and rep.output_tokens == 600
    assert rep.mean_batch <= 2


def test_unfittable_request_is_rejected():
    cfg = small(device=4096 * 8 * 4)
    rep = run_sim(cfg, SimParams(), [Arrival(0.0, 4096, 5)], seed=0)
    assert rep.requests_rejected == 1 and rep.output_tokens == 0


def test_modes_order_throughput():
    cfg = small(bw_pcie=2e12 / 60, t_mlp=0.0)
    arr = [Arrival(0.0, 4096, 200)]
    tp = {m: run_sim(cfg, SimParams(mode=m), arr, seed=5).throughput_tok_s for m in ("elastic", "mandatory", "none")}
    assert tp["elastic"] > tp["mandatory"] > tp["none"]


def test_sim_params_validation():
    with pytest.raises(InvalidConfig):
        SimParams.from_dict({"mode": "fast"})
    with pytest.raises(InvalidConfig):
        SimParams.from_dict({"no_such_knob": 1})
    p = SimParams.from_dict({"requests": [[0, 10, 2]]})
    assert p.arrivals(0) == [Arrival(0.0, 10, 2)]


def test_compare_rows_and_envelope_dominance():
    sim = SimParams(requests=((0.0, 4096, 200),))
    rows = compare(small(t_mlp=0.0), sim, [1, 4], seed=6)
    assert rows[0] == COMPARE_HEADER and len(rows) == 3
    for r in rows[1:]:
        d = dict(zip(COMPARE_HEADER, r))
        assert d["rho_belady"] <= d["rho_lru"]
        assert d["tpot_envelope_s"] <= d["tpot_realized_s"]


def test_footprint_scenario_small():
    cfg = small(L=2, H=2)
    split = footprint_scenario(cfg, 4, 8192, 5.0)
    flat = footprint_scenario(cfg, 4, 8192, 5.0, tier_split=False)
    assert split.bytes("device") < flat.bytes("device")
    assert split.totals() == flat.totals()
    assert {r.tier for r in split.rows if r.table in ("partition_offset", "host_page_array")} == {"host"}
