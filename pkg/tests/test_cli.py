import json
import subprocess
import sys

import pytest

from dlcrem.cli import main

SIM = {
    "seed": 4,
    "simulation": {
        "n_actors": 6,
        "sb_membership": [1, 1, 1, 2, 2, 2],
        "statistics": ["inertia"],
        "beta": {"intercept": [-1.0, -4.0, -4.0, -1.5], "inertia": [0.05, 0.0, 0.0, 0.05]},
        "n_events": 400,
        "burn_in_events": 50,
        "n_replications": 2,
    },
}


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write(root / "sim.json", SIM)
    assert main(["simulate", "--config", cfg, "--output", str(root / "sim")]) == 0
    events = root / "sim" / "events_000.csv"
    burn = float(events.read_text().splitlines()[50].split(",")[-1])
    fit_cfg = {
        "seed": 2,
        "data": {"events": str(events), "burn_in_end": burn},
        "statistics": ["inertia", "reciprocity"],
        "concomitant": [{"statistic": "inertia", "aggregate": "max"}],
        "model": {"K": 2, "n_starts": 2},
        "assessment": {"thresholds": [0.9, 0.95]},
        "sweep": {"k_values": [1, 2]},
        "sbrem": {"C": 2, "n_starts": 3},
    }
    return root, write(root / "fit.json", fit_cfg), fit_cfg


def test_simulate_outputs_and_determinism(simulated, tmp_path):
    root, _, _ = simulated
    names = sorted(p.name for p in (root / "sim").iterdir())
    assert names == ["events_000.csv", "events_001.csv", "manifest.json", "metadata.json", "truth_000.csv", "truth_001.csv"]
    main(["simulate", "--config", str(root / "sim.json"), "--output", str(tmp_path)])
    for name in names:
        if name != "metadata.json":
            assert (tmp_path / name).read_bytes() == (root / "sim" / name).read_bytes()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert {f["file"] for f in manifest["outputs"]} == set(names) - {"manifest.json", "metadata.json"}
    assert (root / "sim" / "events_000.csv").read_bytes() != (root / "sim" / "events_001.csv").read_bytes()


def test_fit_assess_round_trip(simulated):
    root, cfg, _ = simulated
    out = root / "fit"
    assert main(["fit", "--config", cfg, "--output", str(out)]) == 0
    for name in ["model.json", "diagnostics.json", "report.json", "classification.csv", "manifest.json"]:
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["K"] == 2 and report["n_params"] == 2 * 3 + 1 * 2
    truth = root / "sim" / "truth_000.csv"
    code = main(["assess", "--config", cfg, "--model", str(out / "model.json"), "--truth", str(truth),
                 "--output", str(root / "assess")])
    assert code == 0
    a = json.loads((root / "assess" / "assessment.json").read_text())
    assert a["loglik"] == pytest.approx(report["loglik"], abs=1e-8)
    assert a["recall"] == report["recall"]
    assert 0 <= a["truth"]["agreement"] <= 1


def test_sweep_marks_winners(simulated):
    root, cfg, _ = simulated
    out = root / "sweep"
    assert main(["sweep", "--config", cfg, "--output", str(out)]) == 0
    doc = json.loads((out / "sweep.json").read_text())
    assert [r["K"] for r in doc["rows"]] == [1, 2]
    assert set(doc["winners"]) == {"aic", "bic", "recall@0.9", "recall@0.95"}
    assert (out / "model_K1.json").exists() and "*" in (out / "sweep.txt").read_text()


def test_convert_sb_and_reload(simulated):
    root, cfg, _ = simulated
    out = root / "sb"
    assert main(["convert-sb", "--config", cfg, "--output", str(out)]) == 0
    sb = json.loads((out / "sb_model.json").read_text())
    dlc = json.loads((out / "dlc_model.json").read_text())
    assert dlc["loglik"] == pytest.approx(sb["loglik"], abs=1e-8)
    assert main(["convert-sb", "--config", cfg, "--model", str(out / "sb_model.json"), "--output", str(root / "sb2")]) == 0
    again = json.loads((root / "sb2" / "dlc_model.json").read_text())
    assert again["loglik"] == pytest.approx(dlc["loglik"], abs=1e-10)
    code = main(["assess", "--config", cfg, "--model", str(out / "dlc_model.json"), "--output", str(root / "sba")])
    assert code == 0
    assert json.loads((root / "sba" / "assessment.json").read_text())["loglik"] == pytest.approx(dlc["loglik"], abs=1e-8)


def test_stats_command(simulated):
    root, cfg, _ = simulated
    assert main(["stats", "--config", cfg, "--output", str(root / "stats")]) == 0
    head = (root / "stats" / "stack.csv").read_text().splitlines()[0]
    assert head == "dyad_id,interval_id,group_id,y,offset,intercept,inertia,reciprocity"


@pytest.mark.parametrize("patch,code,needle", [
    ({"model": {"K": 2, "bogus": 1}}, 2, "bogus"),
    ({"assessment": {"thresholds": [1.5]}}, 2, "thresholds"),
    ({"statistics": ["inertia", "nonsense"]}, 2, "nonsense"),
    ({"data": {"events": "missing.csv"}}, 3, "missing.csv"),
])
def test_error_exit_codes(simulated, tmp_path, capsys, patch, code, needle):
    _, _, base = simulated
    cfg = write(tmp_path / "bad.json", {**base, **patch})
    assert main(["fit", "--config", cfg, "--output", str(tmp_path / "o")]) == code
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["exit_code"] == code and needle in err["error"]["message"]
    assert json.loads((tmp_path / "o" / "error.json").read_text()) == err


def test_cli_threshold_out_of_range(simulated, tmp_path):
    root, cfg, _ = simulated
    code = main(["assess", "--config", cfg, "--model", "x.json", "--threshold", "1.5", "--output", str(tmp_path)])
    assert code == 2


def test_simulation_missing_beta_names_statistics(tmp_path, capsys):
    doc = json.loads(json.dumps(SIM))
    doc["simulation"]["statistics"] = ["inertia", "reciprocity"]
    doc["simulation"]["beta"] = {"intercept": [0, 0, 0, 0]}
    cfg = write(tmp_path / "s.json", doc)
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "o")]) == 2
    assert "reciprocity" in capsys.readouterr().err


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "dlcrem.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("dlcrem ")
