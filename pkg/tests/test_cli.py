import json

import pytest

from starris.cli import main

CFG = {
    "scenario": {"L": 1, "K": 2, "M": 1, "N_RIS": 4, "transmit_fraction": 0.5},
    "seeds": [0],
    "sweep_values": [1.0],
    "solver": {"max_outer": 1, "ccp_inner_iters": 1},
    "record_wall_time": False,
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CFG))
    return p


def test_run_writes_results(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out), "--seeds", "0..1"]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["points"][0]["count"] == 2
    assert json.loads(capsys.readouterr().out)[0]["count"] == 2


def test_trace_to_stdout(cfg_path, capsys):
    assert main(["trace", "--config", str(cfg_path), "--seed", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("outer_iter,half_step,objective")
    assert [l.split(",")[1] for l in lines[1:]] == ["init", "P", "theta"]


def test_trace_to_file(cfg_path, tmp_path):
    assert main(["trace", "--config", str(cfg_path), "--seed", "0", "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "trace.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"seeds": []}))
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "seeds" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_bad_seed_range(cfg_path, tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--config", str(cfg_path), "--out", str(tmp_path), "--seeds", "5..2"])


def test_bad_thread_count(cfg_path, tmp_path):
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path), "--threads", "0"]) == 2
