import json
import subprocess
import sys

import pytest

from kvtier.cli import main

CFG = {
    "model": {"num_layers": 1, "num_kv_heads": 2, "head_dim": 128, "bytes_per_element": 2, "max_context": 8192},
    "sparse": {"retrieval_budget": 64, "partition_granularity": 8, "page_size": 8,
               "summary_ratio": 0.125, "update_interval": 256},
    "tiers": {"device_capacity": 16777216, "host_capacity": 1073741824, "bw_hbm": 2e12, "bw_pcie": 32e9,
              "t_mlp": 1e-4, "per_transfer_latency": 1e-6},
    "sim": {"requests": [[0.0, 2048, 40], [0.01, 1024, 20]], "max_batch": 4},
}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(CFG))
    return str(p)


def test_validate(cfg, capsys):
    assert main(["validate", "--config", cfg]) == 0
    assert "valid" in capsys.readouterr().out


def test_config_errors(tmp_path, capsys):
    bad = dict(CFG, sparse=dict(CFG["sparse"], page_size=0))
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["validate", "--config", str(p)]) == 1
    assert "page_size" in capsys.readouterr().err
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 1
    assert main(["run"]) == 1  # usage error


def test_run_is_reproducible(cfg, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}.json"
        steps = tmp_path / f"s{i}.jsonl"
        assert main(["run", "--config", cfg, "--seed", "3", "--out", str(out), "--emit-steps", str(steps),
                     "--eviction-log", str(tmp_path / "e.jsonl"), "--csv", str(tmp_path / "f.csv")]) == 0
        outs.append((out.read_bytes(), steps.read_bytes()))
    assert outs[0] == outs[1]
    rep = json.loads(outs[0][0])
    assert rep["output_tokens"] == 60 and rep["config"]["seed"] == 3
    assert (tmp_path / "f.csv").read_text().startswith("table,tier,logical_bytes,physical_bytes\n")


def test_gen_trace_then_run_and_oracle(cfg, tmp_path, capsys):
    tr = tmp_path / "t.trace"
    assert main(["gen-trace", "--config", cfg, "--seed", "1", "--steps", "40", "--context", "2048",
                 "--out", str(tr), "--arrivals", str(tmp_path / "a.csv")]) == 0
    one = dict(CFG, sim={"requests": [[0.0, 2048, 40]]})
    c1 = tmp_path / "one.json"
    c1.write_text(json.dumps(one))
    assert main(["run", "--config", str(c1), "--trace", str(tr), "--out", str(tmp_path / "r.json")]) == 0
    capsys.readouterr()
    assert main(["oracle", "--trace", str(tr), "--capacity", "24"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["belady"] <= doc["lru"] <= doc["bucketed"]


def test_trace_errors(cfg, tmp_path):
    tr = tmp_path / "short.trace"
    assert main(["gen-trace", "--config", cfg, "--steps", "5", "--context", "2048", "--out", str(tr)]) == 0
    one = dict(CFG, sim={"requests": [[0.0, 2048, 40]]})
    c1 = tmp_path / "one.json"
    c1.write_text(json.dumps(one))
    assert main(["run", "--config", str(c1), "--trace", str(tr)]) == 2  # trace exhausted
    bad = tmp_path / "bad.trace"
    bad.write_text("#kvtier-trace v1 num_partitions=4 budget=1\n{oops\n")
    assert main(["oracle", "--trace", str(bad), "--capacity", "2"]) == 2
    assert main(["oracle", "--trace", str(tmp_path / "none.trace"), "--capacity", "2"]) == 2


def test_empty_schedule_exits_zero(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps(dict(CFG, sim={})))
    assert main(["run", "--config", str(p)]) == 0
    assert json.loads(capsys.readouterr().out)["output_tokens"] == 0


def test_csv_commands(cfg, tmp_path, capsys):
    assert main(["envelope", "--config", cfg, "--batches", "1,2", "--steps", "50"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "B,qk_bytes,kv_bytes,hbm_s,pcie_s,mlp_s,tpot_s" and len(lines) == 3
    assert main(["footprint", "--config", cfg, "--batch", "2", "--context", "4096"]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("total,all,")
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--config", cfg, "--ratios", "1,2", "--csv", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "kvtier", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("validate", "gen-trace", "run", "compare", "envelope", "footprint", "oracle"):
        assert cmd in r.stdout
