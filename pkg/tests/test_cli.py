import csv
import json

import pytest

from akgfuse.cli import main
from cli_chain import run_chain

ARTIFACTS = ("docs.json", "akg.nt", "akg_filtered.nt", "kge.bin", "kge_abs.tsv",
             "anchors.json", "kge_rel.tsv", "cv_rel.tsv", "hybrid.tsv", "clf.bin",
             "history.csv", "preds.tsv", "report.json")


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    d = tmp_path_factory.mktemp("chain")
    return d, run_chain(d)


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--in", "x.json"])
    assert exc.value.code == 2


def test_domain_error_is_one_line_exit_1(tmp_path, capsys):
    bad = tmp_path / "docs.json"
    bad.write_text('[{"image_id": "a", "ac_label": "joy"}]')
    assert main(["ingest", "--in", str(bad), "--out", str(tmp_path / "g.nt")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0 and "ac_label" in err
    assert not (tmp_path / "g.nt").exists()


def test_missing_file_exit_1(tmp_path):
    assert main(["filter", "--in", str(tmp_path / "nope.nt"), "--out",
                 str(tmp_path / "o.nt")]) == 1


def test_chain_writes_artifacts_with_sidecars(chain):
    d, files = chain
    for name in ARTIFACTS:
        assert name in files
        side = json.loads((d / (name + ".json")).read_text())
        assert side["seed"] == 7 and len(side["config_hash"]) == 16
    for png in ("kge_loss.png", "history.png", "confusion.png"):
        assert (d / png).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert not [f for f in files if f.endswith(".tmp")]


def test_filter_prints_removed_count(chain, capsys):
    d, _ = chain
    assert main(["filter", "--in", str(d / "akg.nt"), "--out", str(d / "again.nt")]) == 0
    out = capsys.readouterr().out
    removed = json.loads((d / "akg_filtered.nt.json").read_text())["removed"]
    assert f"removed_count {removed}" in out and removed >= 70


def test_eval_prints_table(chain, capsys):
    d, _ = chain
    assert main(["eval", "--clf", str(d / "clf.bin"), "--store", str(d / "hybrid.tsv"),
                 "--labels", str(d / "labels.tsv"), "--split", "all"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("macro_f1 ") and "comfort" in out


def test_history_columns(chain):
    d, _ = chain
    rows = list(csv.DictReader(open(d / "history.csv")))
    assert len(rows) == 5 and set(rows[0]) == {"epoch", "train_loss", "val_macro_f1"}


def test_hadamard_dim_mismatch_via_cli(chain, capsys):
    d, _ = chain
    code = main(["fuse", "--a", str(d / "kge_abs.tsv"), "--b", str(d / "hybrid.tsv"),
                 "--kind", "hadamard", "--out", str(d / "bad.tsv")])
    assert code == 1 and "equal dims" in capsys.readouterr().err


def test_same_seed_byte_identical(tmp_path, chain):
    d, files = chain
    other = tmp_path / "again"
    other.mkdir()
    assert run_chain(other) == files
    for name in files:
        assert (d / name).read_bytes() == (other / name).read_bytes(), name


def test_ablation_small(tmp_path):
    cfg = {"seeds": [1], "synth": {"n": 70, "cv_dim": 16}, "per_class": 5,
           "kge": {"dim": 8, "epochs": 3}, "mlp": {"hidden_dim": 8, "epochs": 2}}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    out = tmp_path / "table.csv"
    assert main(["ablation", "--config", str(tmp_path / "run.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 7
    assert rows[-1]["input"] == "Relative KGE || Relative CV"
    assert (tmp_path / "table_by_seed.csv").exists() and (tmp_path / "table.png").exists()
