import csv
import hashlib

import pytest

from distex.book import Side
from distex.config import ConfigError
from distex.experiment import (EXIT_BAD_SPEC, EXIT_OK, ExperimentSpec, RepeatResult, check_invariants,
                               client_seed, load_spec, main, ordering_violations, run_experiment)
from distex.scheduler import RosterEntry

SPEC = """\
name = "smoke"
runtime = "sim"
repeats = 2
duration_s = 60
seed = 5
clients = 2
injected_delay_ms = [0, 20]
output_dir = "{out}"

[[schedule]]
start_t = 0
end_t = 30
low = 100
high = 200

[[roster]]
strategy = "ZIC"
side = "buyer"
count = 3

[[roster]]
strategy = "ZIC"
side = "seller"
count = 3

[[roster]]
strategy = "GVWY"
side = "buyer"
count = 2

[[roster]]
strategy = "GVWY"
side = "seller"
count = 2
"""


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.toml"
    path.write_text(SPEC.format(out=tmp_path / "out"))
    return path


def test_load_spec(spec_file):
    spec = load_spec(str(spec_file))
    assert spec.clients == ["CLNT1", "CLNT2"]
    assert spec.delays == [0.0, 20.0]
    # the 30 s schedule is tiled to cover the 60 s session
    assert [(s.start_t, s.end_t) for s in spec.schedule.segments] == [(0, 30), (30, 60)]
    assert spec.roster[:2] == [RosterEntry("ZIC", Side.BID, 3), RosterEntry("ZIC", Side.ASK, 3)]
    assert spec.repeat_seed(1) == 6
    assert spec.client_config(1, 0).seed == client_seed(6, 0) == 6001


def test_load_spec_overrides(spec_file):
    spec = load_spec(str(spec_file), repeats=4, runtime=None)
    assert spec.repeats == 4 and spec.runtime == "sim"


@pytest.mark.parametrize("text", [
    'runtime = "cloud"',
    "repeats = 0",
    "clients = []",
    'clients = ["A", "A"]',
    "injected_delay_ms = [0, 0]\nclients = 1",
    "colour = 3",
])
def test_bad_specs_rejected(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_spec(str(path))


def test_missing_spec_file(tmp_path):
    with pytest.raises(ConfigError):
        load_spec(str(tmp_path / "nope.toml"))
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_BAD_SPEC


def test_sim_run_writes_outputs(spec_file, tmp_path):
    result = run_experiment(load_spec(str(spec_file)))
    out = tmp_path / "out"
    for name in ("profits.csv", "latency.csv", "summary.csv", "ratios.csv", "runs.csv", "report.txt"):
        assert (out / name).exists(), name
    assert result.exit_code == EXIT_OK and result.violations == []
    assert len(result.repeats) == 2 and all(r.trades > 0 for r in result.repeats)
    with open(out / "profits.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2 * 2 * 10
    assert {r["seed"] for r in rows} == {"5", "6"}
    report = (out / "report.txt").read_text()
    assert "CLNT2" in report and "invariant violations: 0" in report
    summary = {r["client_id"]: r for r in csv.DictReader(open(out / "summary.csv"))}
    assert float(summary["CLNT2"]["median"]) > float(summary["CLNT1"]["median"]) + 15


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_sim_run_is_deterministic(spec_file, tmp_path):
    spec = load_spec(str(spec_file))
    run_experiment(spec)
    first = _digest(tmp_path / "out" / "profits.csv")
    run_experiment(load_spec(str(spec_file)))
    assert _digest(tmp_path / "out" / "profits.csv") == first
    other = load_spec(str(spec_file), seed=99, output_dir=str(tmp_path / "other"))
    run_experiment(other)
    assert _digest(tmp_path / "other" / "profits.csv") != first


def test_cli_run_and_stats(spec_file, tmp_path, capsys):
    assert main(["run", str(spec_file), "--repeats", "1"]) == EXIT_OK
    assert "latency (ms)" in capsys.readouterr().out
    assert main(["stats", str(tmp_path / "out" / "latency.csv")]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["client_id", "n", "min", "q1", "median", "q3", "max", "mean", "variance", "sd"]
    assert [ln.split()[0] for ln in lines[1:]] == ["CLNT1", "CLNT2"]
    assert main(["stats", str(tmp_path / "missing.csv")]) == EXIT_BAD_SPEC


def test_ordering_violations():
    assert ordering_violations([[1, 2, 3], [5, 9]]) == 0
    assert ordering_violations([[1, 1], [3, 2], [4]]) == 2


def test_check_invariants_flags_problems():
    r = RepeatResult(0, 1, [], trades=0, volume=0, publishes=1, crossed=2, publish_stamps=[[2, 1]])
    problems = check_invariants(r)
    assert any("crossed" in p for p in problems)
    assert any("ordinal" in p for p in problems)


def test_zero_duration_sim_has_undefined_ratios(tmp_path):
    spec = ExperimentSpec(runtime="sim", duration_s=0, clients=2, output_dir=str(tmp_path))
    result = run_experiment(spec)
    assert result.report is not None and not result.report.defined
    assert "undefined" in (tmp_path / "ratios.csv").read_text()


@pytest.mark.live
def test_live_smoke(tmp_path):
    spec = ExperimentSpec(name="live-smoke", runtime="live", repeats=1, duration_s=10, clients=1,
                          roster=[RosterEntry("GVWY", Side.BID, 2), RosterEntry("GVWY", Side.ASK, 2)],
                          output_dir=str(tmp_path))
    result = run_experiment(spec)
    assert result.aborted is None
    assert result.violations == []
    assert (tmp_path / "report.txt").exists()
    (rep,) = result.repeats
    assert rep.sessions[0].latency
    assert rep.publishes > 0
