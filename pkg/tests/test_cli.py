from pathlib import Path

import pytest

from amisec import cli
from amisec.experiments import (ExperimentError, baseline_errors, contaminated, merge_params,
                                ocsvm_error_triple, run_experiment)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_strength_output(capsys):
    assert cli.main(["strength", "256", "32", "256"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "strength = 2^256 + 2^128" in out
    assert f"strength_decimal = {2**256 + 2**128}" in out
    assert "permutation_entropy_bits = 117.66" in out


def test_strength_indivisible(capsys):
    assert cli.main(["strength", "256", "30", "256"]) == 2
    assert "do not split" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("sessions: 12\nkey_bits: 64\nblocks: 4\n")
    assert cli.main(["--out-dir", str(tmp_path / "out"), "--seed", "4", "run", str(cfg)]) == 0
    out = tmp_path / "out" / "run" / "4"
    for name in ("trace.log", "metrics.csv", "alerts.csv", "params.txt"):
        assert (out / name).is_file()
    assert "sessions completed 12/12" in capsys.readouterr().out


def test_run_config_flag(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("sessions: 4\nkey_bits: 64\nblocks: 4\n")
    assert cli.main(["--out-dir", str(tmp_path), "--config", str(cfg), "run"]) == 0


def test_run_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("sessions: 4\nblocks: 1\n")
    assert cli.main(["--out-dir", str(tmp_path), "run", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "blocks" in err and "line 2" in err


def test_run_missing_file(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 2
    assert cli.main(["run"]) == 2


def test_experiment_files(tmp_path, capsys):
    assert cli.main(["--out-dir", str(tmp_path), "--seed", "2", "experiment", "fig7"]) == 0
    out = tmp_path / "fig7" / "2"
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0] == "n_train,training_errors,regular_novel_errors,abnormal_novel_errors"
    assert rows[1] == "100," + ",".join(map(str, ocsvm_error_triple(2, 100)))
    params = (out / "params.txt").read_text()
    assert "experiment=fig7" in params and "seed=2" in params and "nu=0.10000000000000001" in params
    assert (out / "trace.log").read_text().startswith("errors training=")


def test_experiment_few_trials_warns(tmp_path, capsys):
    assert cli.main(["--out-dir", str(tmp_path), "experiment", "fig6", "--trials", "10"]) == 0
    assert "trials_below_50" in capsys.readouterr().err
    assert "warning=trials_below_50" in (tmp_path / "fig6" / "0" / "params.txt").read_text()


def test_trials_only_for_localization(tmp_path, capsys):
    assert cli.main(["--out-dir", str(tmp_path), "experiment", "fig7", "--trials", "10"]) == 2


def test_experiment_config_overrides(tmp_path):
    cfg = tmp_path / "p.yaml"
    cfg.write_text("n_train: 30\n")
    assert cli.main(["--out-dir", str(tmp_path), "--config", str(cfg), "experiment", "fig7"]) == 0
    assert (tmp_path / "fig7" / "0" / "metrics.csv").read_text().splitlines()[1].startswith("30,")
    cfg.write_text("n_trian: 30\n")
    assert cli.main(["--out-dir", str(tmp_path), "--config", str(cfg), "experiment", "fig7"]) == 2


def test_unknown_experiment():
    with pytest.raises(SystemExit):
        cli.main(["experiment", "fig12"])
    with pytest.raises(ExperimentError):
        merge_params("fig12", {})


def test_strength_experiment_csv():
    res = run_experiment("strength", 0)
    assert res.rows[0][3] == str(2**256 + 2**128)


def test_e2e_experiment_small():
    res = run_experiment("e2e", 0, {"sessions": 20, "meters": 4, "key_bits": 64, "blocks": 8})
    metrics = dict(res.rows)
    assert metrics["sessions_completed"] == 20 and metrics["plaintext_mismatches"] == 0
    assert "alerts.csv" in res.extra_files


def test_contaminated_labels():
    X, y = contaminated("banana", 0, 150, 0.1, 6.0)
    assert X.shape == (150, 2) and (y == -1).sum() == 15
    assert baseline_errors("bimodal", 0)[0] == 15


def test_verify_oracles(capsys):
    assert cli.main(["verify-oracles"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 18 and all(line.startswith("PASS") for line in out)
