import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from adfolio.cli import main

ROOT = Path(__file__).resolve().parent.parent
DEFAULT_MARKET = ROOT / "configs" / "paper-default" / "market.json"
DEFAULT_EXPERIMENT = ROOT / "configs" / "paper-default" / "experiment.json"


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def one_ad_market():
    return {"m": 50, "ads": [{"id": "solo", "bid": 2.0, "posterior": {"s_mean": 0.01, "s_var": 1e-6}}]}


def two_ad_market():
    return {
        "m": 1000,
        "ads": [
            {"id": "a", "bid": 1.0, "price_type": "CPC", "learning": {"impressions": 10000, "responses": 12}},
            {"id": "b", "bid": 10.0, "price_type": "CPA", "learning": {"impressions": 10000, "responses": 1},
             "prior": {"kind": "truncated_uniform", "lo": 0.0, "hi": 0.01}},
        ],
    }


# -- allocate


def test_allocate_single_ad(write_json, tmp_path):
    path = write_json("m.json", one_ad_market())
    assert main(["allocate", str(path), "--q", "3", "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_csv(tmp_path / "allocation.csv")
    assert [r["count"] for r in rows] == ["50"]
    summary = read_csv(tmp_path / "allocation_summary.csv")[0]
    assert float(summary["expected_revenue"]) == pytest.approx(50 * 0.02)
    manifest = json.loads((tmp_path / "allocate_manifest.json").read_text())
    assert manifest["command"] == "allocate"
    assert {"tool_version", "started", "finished", "outputs", "config", "master_seed"} <= set(manifest)


def test_allocate_default_market(tmp_path, capsys):
    assert main(["allocate", str(DEFAULT_MARKET), "--q", "500", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "allocation.csv")
    counts = [int(r["count"]) for r in rows]
    assert len(counts) == 20
    assert min(counts) >= 0 and sum(counts) == 10_000
    out = capsys.readouterr().out
    assert "total variance" in out


def test_allocate_by_variance_cap(write_json, tmp_path):
    path = write_json("m.json", two_ad_market())
    assert main(["allocate", str(path), "--d", "1e9", "--out", str(tmp_path), "--quiet"]) == 0
    counts = [int(r["count"]) for r in read_csv(tmp_path / "allocation.csv")]
    assert sum(counts) == 1000


def test_allocate_infeasible_cap(write_json, tmp_path):
    path = write_json("m.json", two_ad_market())
    assert main(["allocate", str(path), "--d", "1e-9", "--out", str(tmp_path), "--quiet"]) == 2


def test_allocate_solver_failure(write_json, tmp_path, monkeypatch):
    from adfolio import cli
    from adfolio.qp import QMAPSolution
    import numpy as np

    monkeypatch.setattr(cli, "solve_qmap", lambda *a, **k: QMAPSolution(np.array([0.5, 0.5]), 0.0, 1.0, 5, False))
    path = write_json("m.json", two_ad_market())
    assert main(["allocate", str(path), "--q", "1", "--out", str(tmp_path), "--quiet"]) == 3


@pytest.mark.parametrize(
    "content",
    ["{not json", "[]", json.dumps({"m": 10, "ads": [{"id": "x", "bid": -1, "posterior": {"s_mean": 0.1, "s_var": 0.01}}]}),
     json.dumps({"m": 10.5, "ads": []}), json.dumps({"m": 10, "ads": [{"id": "x", "bid": 1}]}),
     json.dumps({"m": 10, "ads": [{"id": "x", "bid": 1, "learning": {"impressions": 5, "responses": 9}}]})],
)
def test_allocate_bad_market(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert main(["allocate", str(path), "--q", "1", "--out", str(tmp_path), "--quiet"]) == 1


def test_allocate_needs_exactly_one_target(write_json, tmp_path):
    path = write_json("m.json", one_ad_market())
    assert main(["allocate", str(path), "--out", str(tmp_path), "--quiet"]) == 1
    assert main(["allocate", str(path), "--q", "1", "--d", "2", "--out", str(tmp_path), "--quiet"]) == 1
    assert main(["allocate", str(tmp_path / "missing.json"), "--q", "1", "--quiet"]) == 1


def test_usage_errors_exit_one():
    assert main([]) == 1
    assert main(["nonsense"]) == 1
    assert main(["variance", "--k", "abc"]) == 1


# -- frontier


def test_frontier_default_grid(tmp_path, capsys):
    assert main(["frontier", str(DEFAULT_MARKET), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "frontier.csv")
    assert len(rows) == 70
    qs = [float(r["q"]) for r in rows]
    assert qs == sorted(qs)
    assert "w_cpa-9" in rows[0]
    assert capsys.readouterr().out.startswith("q,est_revenue,est_variance")


def test_frontier_single_ad(write_json, tmp_path):
    path = write_json("m.json", one_ad_market())
    assert main(["frontier", str(path), "--q-grid", "0,10,100", "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_csv(tmp_path / "frontier.csv")
    assert [r["w_solo"] for r in rows] == ["1"] * 3


def test_frontier_bad_grid(write_json, tmp_path):
    path = write_json("m.json", one_ad_market())
    assert main(["frontier", str(path), "--q-grid", "5,1", "--out", str(tmp_path), "--quiet"]) == 1
    assert main(["frontier", str(path), "--q-grid", "a,b", "--out", str(tmp_path), "--quiet"]) == 1


def test_frontier_numbers_use_twelve_digits(write_json, tmp_path):
    path = write_json("m.json", two_ad_market())
    assert main(["frontier", str(path), "--q-grid", "0,1000", "--out", str(tmp_path), "--quiet"]) == 0
    text = (tmp_path / "frontier.csv").read_bytes()
    assert b"\r" not in text
    for row in read_csv(tmp_path / "frontier.csv"):
        for value in row.values():
            mantissa = value.split("e")[0].replace("-", "").replace(".", "").lstrip("0")
            assert len(mantissa) <= 12


# -- variance


def test_variance_nine_times(tmp_path, capsys):
    args = ["variance", "--form", "learning", "--k", "1000", "--v", "9000", "--p", "0.001", "--c-comp", "0.01",
            "--out", str(tmp_path)]
    assert main(args) == 0
    row = read_csv(tmp_path / "variance.csv")[0]
    assert float(row["ratio"]) == pytest.approx(1 / 9, rel=1e-11)
    assert float(row["uncertainty_share"]) == pytest.approx(0.1, rel=1e-11)
    assert "uncertainty share" in capsys.readouterr().out


def test_variance_zero_calls(tmp_path):
    args = ["variance", "--form", "raw", "--k", "0", "--p", "0.01", "--bid", "1", "--sigma", "0.001",
            "--out", str(tmp_path), "--quiet"]
    assert main(args) == 0
    row = read_csv(tmp_path / "variance.csv")[0]
    assert [float(row[c]) for c in ("uncertainty", "randomness", "total")] == [0.0, 0.0, 0.0]


def test_variance_guards(tmp_path):
    base = ["--out", str(tmp_path), "--quiet"]
    assert main(["variance", "--form", "competitive", "--k", "10", "--p", "0", "--sigma", "0.1", "--c-comp", "1"] + base) == 1
    assert main(["variance", "--form", "raw", "--k", "10", "--p", "0.1"] + base) == 1
    assert main(["variance", "--form", "learning", "--k", "10", "--p", "0.1", "--c-comp", "1"] + base) == 1
    assert main(["variance", "--k", "10"] + base) == 1


# -- simulate

SIM_ARGS = ["--q-grid", "0,100,1000,20000", "--quiet"]


def _experiment(write_json):
    return write_json("exp.json", {"n_cpc": 3, "n_cpa": 3, "learning_calls": 20000})


def test_simulate_byte_identical(write_json, tmp_path):
    exp = _experiment(write_json)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", str(exp), "--trials", "10", "--seed", "42", "--out", str(out)] + SIM_ARGS) == 0
    for name in ("simulate_uniform.csv", "simulate_uniform_detail.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "simulate_uniform.csv")
    assert list(rows[0]) == ["q", "est_rev_frac", "portfolio_actual_frac", "single_winner_actual_frac", "trials"]
    assert len({r["single_winner_actual_frac"] for r in rows}) == 1
    assert rows[0]["trials"] == "10"
    manifest = json.loads((a / "simulate_manifest.json").read_text())
    assert manifest["master_seed"] == 42


def test_simulate_seed_from_environment(write_json, tmp_path, monkeypatch):
    exp = _experiment(write_json)
    monkeypatch.setenv("ADFOLIO_SEED", "42")
    assert main(["simulate", str(exp), "--trials", "4", "--out", str(tmp_path / "env")] + SIM_ARGS) == 0
    monkeypatch.delenv("ADFOLIO_SEED")
    assert main(["simulate", str(exp), "--trials", "4", "--seed", "42", "--out", str(tmp_path / "flag")] + SIM_ARGS) == 0
    assert (tmp_path / "env" / "simulate_uniform.csv").read_bytes() == (tmp_path / "flag" / "simulate_uniform.csv").read_bytes()
    monkeypatch.setenv("ADFOLIO_SEED", "x")
    assert main(["simulate", str(exp), "--trials", "4", "--out", str(tmp_path / "bad")] + SIM_ARGS) == 1


def test_simulate_all_regimes(write_json, tmp_path):
    exp = _experiment(write_json)
    assert main(["simulate", str(exp), "--trials", "3", "--regime", "all", "--out", str(tmp_path)] + SIM_ARGS) == 0
    for regime in ("uniform", "approximate", "exact"):
        assert len(read_csv(tmp_path / f"simulate_{regime}.csv")) == 4


def test_simulate_bad_inputs(write_json, tmp_path):
    exp = _experiment(write_json)
    assert main(["simulate", str(exp), "--trials", "0", "--out", str(tmp_path)] + SIM_ARGS) == 1
    assert main(["simulate", str(exp), "--trials", "2", "--parallel", "0", "--out", str(tmp_path)] + SIM_ARGS) == 1
    bad = write_json("bad.json", {"n_cpc": 3, "colour": "red"})
    assert main(["simulate", str(bad), "--trials", "2", "--out", str(tmp_path)] + SIM_ARGS) == 1


def test_default_experiment_config_loads():
    from adfolio.formats import load_experiment
    from adfolio.simulator import ExperimentConfig

    assert load_experiment(DEFAULT_EXPERIMENT) == ExperimentConfig()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "adfolio", "variance", "--form", "learning", "--k", "1", "--v", "1", "--p", "0.5",
         "--c-comp", "1", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "ratio" in proc.stdout
