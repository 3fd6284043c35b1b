import io
import json
import time
from importlib import resources

import pytest
from fastapi.testclient import TestClient

from fairfl import cli
from fairfl.config import load_config
from fairfl.data import load_csv
from fairfl.errors import NumericalError
from fairfl.results import config_from_result, read_result_file, strip_volatile
from fairfl.service.app import app
from fairfl.workflows import generate_from_config, run_config, with_overrides

SMALL = """\
seed: 1
data: {synth: {n_samples: 2000}}
federation: {n_clients: 4, rounds: 4}
local: {epochs: 2}
aggregator: {mechanism: fairfed}
attack: {attacker_fraction: 0.05}
"""


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def _main(*argv):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def test_run_writes_valid_file_and_summary(small, tmp_path):
    out = tmp_path / "r.jsonl"
    code, text = _main("run", "--config", small, "--out", out)
    assert code == 0
    lines = read_result_file(out)
    assert [l["kind"] for l in lines] == ["header"] + ["round"] * 4 + ["summary"]
    assert lines[0]["config"]["attack"]["attacker_ids"]
    assert "final accuracy" in text and "final |DP|" in text
    assert "attributable to attack" in text


def test_rerun_from_embedded_config_reproduces_records(small, tmp_path):
    out = tmp_path / "r.jsonl"
    assert _main("--seed", 9, "run", "--config", small, "--out", out)[0] == 0
    lines = read_result_file(out)
    assert lines[0]["seed"] == 9
    again = json.loads(json.dumps(run_config(config_from_result(lines))))
    assert strip_volatile(again) == strip_volatile(lines)


def test_output_is_deterministic_apart_from_timestamp(small, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _, ta = _main("run", "--config", small, "--out", a)
    _, tb = _main("run", "--config", small, "--out", b)
    assert ta.replace(str(a), "") == tb.replace(str(b), "")
    la, lb = a.read_text().splitlines(), b.read_text().splitlines()
    assert la[1:] == lb[1:]


def test_invalid_config_exits_1_naming_field(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("federation: {selection_fraction: 0}\n")
    code, _ = _main("run", "--config", p, "--out", tmp_path / "x.jsonl")
    assert code == 1
    assert "federation.selection_fraction" in capsys.readouterr().err
    assert not (tmp_path / "x.jsonl").exists()


def test_missing_config_exits_1(tmp_path):
    assert _main("run", "--config", tmp_path / "nope.yaml", "--out", tmp_path / "x.jsonl")[0] == 1


def test_runtime_failure_exits_2(small, tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise NumericalError("non-finite parameters after aggregation")

    monkeypatch.setattr(cli.workflows, "run_config", boom)
    code, _ = _main("run", "--config", small, "--out", tmp_path / "x.jsonl")
    assert code == 2
    assert "non-finite" in capsys.readouterr().err


def test_sweep_gamma(small, tmp_path):
    d = tmp_path / "sw"
    code, text = _main("sweep", "--config", small, "--param", "gamma", "--values", "1,5,10,20", "--out-dir", d)
    assert code == 0
    assert sorted(p.name for p in d.glob("*.jsonl")) == [f"gamma={g}.jsonl" for g in ("1", "10", "20", "5")]
    rows = (d / "summary.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["gamma", "status", "final_accuracy", "final_abs_dp"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "5", "10", "20"]
    assert "final_abs_dp" in text


def test_sweep_aggregator_and_fraction(small, tmp_path):
    six = tmp_path / "six.yaml"
    six.write_text(SMALL.replace("n_clients: 4", "n_clients: 6"))
    code, _ = _main("sweep", "--config", six, "--param", "aggregator", "--values", "trimmed_mean,trimmed_median", "--out-dir", tmp_path / "a")
    assert code == 0
    code, _ = _main("sweep", "--config", small, "--param", "attacker_fraction", "--values", "0.05,0.4", "--out-dir", tmp_path / "f")
    assert code == 0
    ids = [read_result_file(p)[0]["config"]["attack"]["attacker_ids"] for p in sorted((tmp_path / "f").glob("*.jsonl"))]
    assert sorted(len(i) for i in ids) == [1, 1]  # 4 clients, 2 selected: 0.4 * 2 rounds to 1


def test_sweep_partial_failure_keeps_successes(small, tmp_path):
    # krum needs more than 2f+2 = 4 selected clients: fails, trimmed_median succeeds
    d = tmp_path / "p"
    code, _ = _main("sweep", "--config", small, "--param", "aggregator", "--values", "krum,trimmed_median", "--out-dir", d)
    assert code == 2
    assert [p.name for p in d.glob("*.jsonl")] == ["aggregator=trimmed_median.jsonl"]
    assert "failed" in (d / "summary.tsv").read_text()


def test_sweep_bad_values_exit_1(small, tmp_path):
    assert _main("sweep", "--config", small, "--param", "gamma", "--values", "1,x", "--out-dir", tmp_path)[0] == 1
    assert _main("sweep", "--config", small, "--param", "gamma", "--values", "0", "--out-dir", tmp_path)[0] == 1


def test_gen_data_round_trip_and_stats(tmp_path):
    cfg = tmp_path / "g.yaml"
    cfg.write_text("data: {synth: {n_samples: 3000, bias_strength: 0.8}}\n")
    out = tmp_path / "d.csv"
    code, text = _main("gen-data", "--config", cfg, "--out", out)
    assert code == 0 and "3000 rows" in text
    data = load_csv(out)
    assert len(data) == 3000
    orig = generate_from_config(with_overrides(load_config(cfg)))
    assert data.X.tobytes() == orig.X.tobytes()
    assert (data.s == orig.s).all() and (data.y == orig.y).all()
    code, text = _main("stats", "--data", out)
    assert code == 0
    gap = float(text.split("label rate gap (group 0 - group 1):")[1].split()[0])
    assert abs(gap) >= 0.1


def test_stats_bad_csv_exits_1(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x0,s\n1.0,0\n")
    assert _main("stats", "--data", p)[0] == 1


def test_bundled_example_runs_within_budget(tmp_path):
    path = resources.files("fairfl").joinpath("configs/example.yaml")
    t0 = time.perf_counter()
    code, _ = _main("run", "--config", path, "--out", tmp_path / "ex.jsonl")
    assert code == 0
    assert time.perf_counter() - t0 < 120


# ------------------------------------------------------------- thin client


class _InProcessRemote(cli._Remote):
    def __init__(self, url):
        self.client = TestClient(app)


def test_thin_client_matches_local(small, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "_Remote", _InProcessRemote)
    local, remote = tmp_path / "l.jsonl", tmp_path / "r.jsonl"
    assert _main("run", "--config", small, "--out", local)[0] == 0
    assert _main("--server", "http://test", "run", "--config", small, "--out", remote)[0] == 0
    assert strip_volatile(read_result_file(local)) == strip_volatile(read_result_file(remote))
    code, _ = _main("--server", "http://test", "gen-data", "--config", small, "--out", tmp_path / "d.csv")
    assert code == 0 and len(load_csv(tmp_path / "d.csv")) == 2000
    assert _main("--server", "http://test", "stats", "--data", tmp_path / "d.csv")[0] == 0


def test_thin_client_config_error(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "_Remote", _InProcessRemote)
    p = tmp_path / "c.yaml"
    p.write_text("federation: {n_clients: 4}\naggregator: {mechanism: krum}\n")
    # validation happens before the request; an unreachable server is never contacted
    assert _main("--server", "http://test", "run", "--config", p, "--out", tmp_path / "x.jsonl")[0] == 1


def test_unreachable_server_exits_2(small, tmp_path):
    code, _ = _main("--server", "http://127.0.0.1:9", "run", "--config", small, "--out", tmp_path / "x.jsonl")
    assert code == 2
