import json

import pytest

from cepsonar.cli import build_parser, main
from conftest import TINY_CONFIG_TEXT


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.txt").write_text(TINY_CONFIG_TEXT)
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_subcommands_registered():
    p = build_parser()
    for cmd in ("simulate", "featurize", "train", "eval", "baseline", "sweep", "report", "run"):
        args = p.parse_args([cmd])
        assert args.command == cmd


def test_file_based_workflow(workdir, capsys):
    cfg = workdir / "tiny.txt"
    corpus, data, models, records = (workdir / n for n in ("corpus", "data", "models", "rec"))
    assert run("simulate", "--config", cfg, "--out", corpus) == 0
    index = json.loads((corpus / "index.json").read_text())
    assert {r["kind"] for r in index["recordings"]} == {"A", "B", "background"}

    assert run("featurize", "--corpus", corpus, "--variant", "n8", "--augment", "on",
               "--out", data) == 0
    made = {p.name for p in data.iterdir()}
    assert {"background.psdm", "train_n8_aug.ceps", "val_n8.ceps", "test_n8.ceps",
            "gen_n8.ceps", "test_n1.ceps", "gen_n1.ceps", "config.txt"} <= made
    assert "train_n8.ceps" not in made

    assert run("train", "--config", cfg, "--data", data, "--variant", "n8", "--augment", "on",
               "--out", models) == 0
    assert (models / "cnn_n8_aug.cnnm").exists()
    log_lines = (models / "cnn_n8_aug.log.jsonl").read_text().splitlines()
    assert json.loads(log_lines[0])["event"] == "model"

    assert run("eval", "--data", data, "--model", models, "--out", records) == 0
    assert run("baseline", "--corpus", corpus, "--data", data, "--out", records) == 0
    assert run("sweep", "--corpus", corpus, "--model", models, "--out", records) == 0
    made = {p.name for p in records.iterdir()}
    assert {"records_test_cnn_n8_aug.csv", "records_gen_cnn_n8_aug.csv",
            "records_test_baseline.csv", "records_gen_baseline.csv", "snr_sweep.csv"} <= made
    assert any(n.startswith("track_") for n in made)

    out1, out2 = workdir / "rep1", workdir / "rep2"
    assert run("report", "--config", cfg, "--records", records, "--out", out1) == 0
    assert run("report", "--config", cfg, "--records", records, "--out", out2) == 0
    for sub in ("report_test", "report_gen"):
        files = sorted(p.name for p in (out1 / sub).iterdir())
        assert "summary.json" in files and "ap_table.csv" in files
        for f in files:
            assert (out1 / sub / f).read_bytes() == (out2 / sub / f).read_bytes()
    summary = json.loads((out1 / "report_test" / "summary.json").read_text())
    assert set(summary["average_precision"]) == {"baseline", "cnn_n8_aug"}
    assert "snr_sweep" in summary


def test_errors_exit_nonzero(workdir, capsys):
    assert run("featurize", "--corpus", workdir / "nowhere", "--out", workdir / "x") == 1
    assert "error" in capsys.readouterr().err
    bad = workdir / "bad.txt"
    bad.write_text("not_a_key = 3\n")
    assert run("simulate", "--config", bad, "--out", workdir / "y") == 1
    assert "not_a_key" in capsys.readouterr().err
    assert run("report", "--records", workdir / "empty", "--out", workdir / "z") == 1
    with pytest.raises(SystemExit):
        main(["train", "--variant", "n3"])
