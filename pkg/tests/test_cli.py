import numpy as np
import pytest

from marginimpute.cli import main
from marginimpute.table import write_csv

from conftest import random_table


@pytest.fixture
def truth_csv(tmp_path):
    t = random_table(np.random.default_rng(0), 40, [2, 3, 2, 3])
    path = tmp_path / "toy.csv"
    write_csv(t, path)
    return path


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def run_pipeline(tmp, truth_csv):
    tmp.mkdir()
    assert main(["inject", "--input", str(truth_csv), "--fractions", "0.2", "--splits", "2",
                 "--seed", "5", "--out-dir", str(tmp / "splits")]) == 0
    masked = tmp / "splits" / "toy_f20_s1.csv"
    assert main(["train", "--input", str(masked), "--lambda", "auto",
                 "--model-out", str(tmp / "m.json")]) == 0
    assert main(["impute", "--input", str(masked), "--model", str(tmp / "m.json"),
                 "--constraints", "label", "--out", str(tmp / "imp.csv")]) == 0
    assert main(["run", "--input", str(masked), "--method", "wwfp-wc", "--lambda", "1",
                 "--out", str(tmp / "run.csv"), "--trace", str(tmp / "trace.json"),
                 "--no-timing"]) == 0
    assert main(["experiment", "--truth", str(truth_csv), "--fractions", "0.2",
                 "--splits", "2", "--methods", "mo,wwfp-wo", "--out", str(tmp / "exp.tsv"),
                 "--no-timing"]) == 0
    return outputs(tmp / "splits") | outputs(tmp)


def test_every_command_is_byte_deterministic(tmp_path, truth_csv, capsys):
    a = run_pipeline(tmp_path / "a", truth_csv)
    out_a = capsys.readouterr().out
    b = run_pipeline(tmp_path / "b", truth_csv)
    out_b = capsys.readouterr().out
    assert a.keys() == b.keys()
    assert {k for k in a} >= {"toy_f20_s1.csv", "toy_f20_s1.mask", "toy_f20_s2.csv",
                              "m.json", "imp.csv", "run.csv", "trace.json", "exp.tsv"}
    for k in a:
        assert a[k] == b[k], k
    assert out_a == out_b


def test_evaluate_prints_loss(tmp_path, truth_csv, capsys):
    main(["inject", "--input", str(truth_csv), "--fractions", "0.3", "--splits", "1",
          "--out-dir", str(tmp_path)])
    masked = tmp_path / "toy_f30_s1.csv"
    main(["run", "--input", str(masked), "--method", "mo", "--out", str(tmp_path / "o.csv")])
    capsys.readouterr()
    assert main(["evaluate", "--imputed", str(tmp_path / "o.csv"), "--truth", str(truth_csv),
                 "--mask", str(tmp_path / "toy_f30_s1.mask")]) == 0
    loss = float(capsys.readouterr().out)
    assert 0.0 < loss < 1.0


def test_experiment_tsv_schema(tmp_path, truth_csv):
    out = tmp_path / "e.tsv"
    main(["experiment", "--truth", str(truth_csv), "--fractions", "0.1,0.3", "--splits", "1",
          "--methods", "mo", "--out", str(out)])
    lines = out.read_text().splitlines()
    assert lines[0] == "dataset\tfraction\tmethod\tmean_loss_pct\tstd_loss_pct\tmean_seconds"
    assert [l.split("\t")[:3] for l in lines[1:]] == [["toy", "0.1", "MO"], ["toy", "0.3", "MO"]]


def test_config_file_supplies_flags(tmp_path, truth_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# defaults\ninput = {truth_csv}\nmethod = mo\nout = {tmp_path / 'x.csv'}\n")
    assert main(["--config", str(cfg), "run"]) == 0
    assert (tmp_path / "x.csv").exists()
    # explicit flags win over the file
    assert main(["--config", str(cfg), "run", "--out", str(tmp_path / "y.csv")]) == 0
    assert (tmp_path / "y.csv").exists()


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["evaluate", "--imputed", str(tmp_path / "no.csv"), "--truth",
                 str(tmp_path / "no.csv"), "--mask", str(tmp_path / "m")]) == 2
    assert "error" in capsys.readouterr().err
