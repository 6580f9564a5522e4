import json

import numpy as np
import pytest

from erislab.cli import TOL_PROFILES, main, run_scenario
from erislab.scenarios import Scenario, ScenarioError, builtin, builtin_names, list_builtins, load


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main(["run", *args, "--out", str(out)])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


def write_scenario(tmp_path, data, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def matrix(re, im=None):
    re = np.asarray(re, dtype=float)
    return {"dim": re.shape[0], "re": re.tolist(), "im": np.zeros_like(re).tolist() if im is None else im}


def as_matrix(m):
    return np.array(m["re"]) + 1j * np.array(m["im"])


# --- builtin scenarios --------------------------------------------------------------------------------


def test_list_contains_required_builtins(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("flip-cycle-2", "haar-iid-d2", "damping-transient"):
        assert name in out
    assert all(what for _, what in list_builtins())


@pytest.mark.parametrize("name", builtin_names())
def test_every_builtin_runs_cleanly(tmp_path, name):
    code, report, _ = run(tmp_path, name)
    assert code == 0, report.get("error")
    assert report["status"] == "ok"


def test_flip_cycle_report(tmp_path):
    code, report, _ = run(tmp_path, "flip-cycle-2")
    dec = report["results"]["decompose"]
    assert code == 0 and len(dec["blocks"]) == 2
    assert max(np.max(v) for v in dec["residuals"].values()) < 1e-8
    assert max(report["results"]["cocycle_check"]["block_residuals"]) < 1e-8


def test_haar_report(tmp_path):
    code, report, out = run(tmp_path, "haar-iid-d2")
    ces = report["results"]["cesaro"]
    assert code == 0 and ces["M"] == 5000 and ces["R"] == 8
    assert ces["trace_distance_to_target"] < 0.05
    assert len(report["results"]["iid_decompose"]["blocks"]) == 1
    assert (out / "trace.csv").exists()


def test_depolarizing_report(tmp_path):
    _, report, _ = run(tmp_path, "depolarizing-0.5")
    dec = report["results"]["decompose"]
    assert dec["dynamically_ergodic"]
    rho = as_matrix(dec["blocks"][0]["stationary_state"][0])
    assert np.abs(rho - np.eye(2) / 2).max() < 1e-9


def test_damping_report(tmp_path):
    _, report, _ = run(tmp_path, "damping-transient")
    dec = report["results"]["decompose"]
    assert np.abs(as_matrix(dec["transient"][0]) - np.diag([0.0, 1.0])).max() < 1e-9
    assert abs(report["results"]["ergodic_average"]["value"]) < 1e-6


def test_iid_two_unitary_report(tmp_path):
    _, report, _ = run(tmp_path, "iid-two-unitary")
    res = report["results"]["iid_decompose"]
    got = sorted(np.diag(as_matrix(b["projection"][0])).real.round(8).tolist() for b in res["blocks"])
    assert got == [[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]
    assert res["reliable"]


# --- reports ---------------------------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["flip-cycle-2", "haar-iid-d2", "depolarizing-0.5"])
def test_reports_are_byte_identical_modulo_wall_time(tmp_path, name):
    texts = []
    for k, threads in enumerate((1, 3)):
        out = tmp_path / f"r{k}"
        assert main(["run", name, "--out", str(out), "--seed", "5", "--threads", str(threads)]) == 0
        report = json.loads((out / "report.json").read_text())
        report.pop("wall_time")
        report["flags"].pop("threads")
        texts.append((json.dumps(report, sort_keys=True), (out / "trace.csv").read_bytes()))
    assert texts[0] == texts[1]


@pytest.mark.parametrize("profile", sorted(TOL_PROFILES))
def test_tolerance_profile_is_echoed(tmp_path, profile):
    _, report, _ = run(tmp_path, "flip-cycle-2", "--tol-profile", profile)
    assert report["tolerance"] == TOL_PROFILES[profile].to_dict()


def test_tolerance_profile_from_file(tmp_path):
    prof = {"eig_tol": 1e-8, "rank_tol": 1e-8, "psd_tol": 1e-9, "fixpoint_tol": 1e-8}
    path = write_scenario(tmp_path, prof, "tol.json")
    _, report, _ = run(tmp_path, "flip-cycle-2", "--tol-profile", path)
    assert report["tolerance"] == prof


def test_trace_csv_format(tmp_path):
    _, _, out = run(tmp_path, "depolarizing-0.5")
    raw = (out / "trace.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "step,value,residual"
    steps = [int(line.split(",")[0]) for line in lines[1:]]
    assert steps == sorted(steps) and steps[-1] == 1000
    assert all(len(line.split(",")) == 3 for line in lines[1:])


def test_several_scenarios_get_subdirectories(tmp_path, capsys):
    out = tmp_path / "many"
    assert main(["run", "flip-cycle-2", "depolarizing-0.5", "--out", str(out), "--threads", "2"]) == 0
    assert (out / "flip-cycle-2" / "report.json").exists()
    assert (out / "depolarizing-0.5" / "report.json").exists()


# --- exit codes ---------------------------------------------------------------------------------------------


def test_malformed_json_exits_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 1


def test_unknown_scenario_exits_1(tmp_path):
    assert main(["run", "no-such-scenario", "--out", str(tmp_path / "o")]) == 1


def test_usage_error_exits_1():
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 1


def test_non_cptp_channel_exits_2(tmp_path):
    sc = {
        "name": "not-tp",
        "eris": {"driver": {"kind": "cycle", "n": 1}, "channels": {"*": {"kind": "explicit_kraus", "kraus": [matrix(np.diag([1.0, 0.5]))]}}},
        "analyses": ["validate", "decompose"],
    }
    code, report, _ = run(tmp_path, write_scenario(tmp_path, sc))
    assert code == 2 and report["status"] == "invalid"
    assert not report["results"]["validate"]["ok"]
    assert main(["validate", write_scenario(tmp_path, sc)]) == 2


def test_iteration_cap_exits_3(tmp_path):
    # eigenvalue exp(0.001i) needs far more than 10 averaged terms
    a = 0.001
    U = {"dim": 2, "re": [[1, 0], [0, np.cos(a)]], "im": [[0, 0], [0, np.sin(a)]]}
    sc = {
        "name": "slow-rotation",
        "eris": {"driver": {"kind": "cycle", "n": 1}, "channels": {"*": {"kind": "unitary", "unitary": U}}},
        "analyses": ["cesaro"],
    }
    code, report, _ = run(tmp_path, write_scenario(tmp_path, sc), "--max-iters", "10")
    assert code == 3 and report["status"] == "tolerance"
    assert report["error"]


def test_exact_only_analysis_on_sampled_driver_exits_1(tmp_path):
    sc = {
        "name": "iid-decompose",
        "eris": {"driver": {"kind": "iid", "alphabet_size": 2}, "channels": {"*": {"kind": "depolarizing", "p": 0.5}}},
        "analyses": ["decompose"],
    }
    code, report, _ = run(tmp_path, write_scenario(tmp_path, sc))
    assert code == 1 and report["status"] == "malformed"


def test_validate_subcommand(capsys):
    assert main(["validate", "flip-cycle-2"]) == 0
    assert "channel 0: ok" in capsys.readouterr().out


# --- scenario files -----------------------------------------------------------------------------------------


def test_scenario_roundtrip(tmp_path):
    sc = builtin("flip-cycle-2")
    path = write_scenario(tmp_path, sc.to_json())
    assert load(path) == sc


@pytest.mark.parametrize(
    "data",
    [
        {"name": "x", "eris": {"driver": {"kind": "cycle", "n": 1}}},
        {"name": "x", "eris": {"driver": {"kind": "cycle", "n": 1}, "channels": {"*": {"kind": "depolarizing", "p": 0.1}}}, "analyses": ["fly"]},
        {"name": "x", "eris": {}, "extra": 1},
    ],
)
def test_scenario_rejects_malformed(data):
    with pytest.raises(ScenarioError):
        Scenario.from_json(data)


def test_run_scenario_api(tmp_path):
    assert run_scenario(builtin("flip-cycle-3"), tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["results"]["decompose"]["blocks"]) == 3
