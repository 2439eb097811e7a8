from pathlib import Path

import pytest

from canet.harness.cli import main
from canet.harness.config import read_kv
from canet.harness.vvol import read_vvol


def test_pipeline(tmp_path, capsys):
    raw, prep, run, pred = (tmp_path / d for d in ("raw", "prep", "run", "pred"))
    assert main(["phantom", "--out", str(raw), "--count", "3", "--dims", "32", "32", "32", "--seed", "1"]) == 0
    assert len(list(raw.glob("*_img.vvol"))) == 3
    assert read_kv(raw / "config.txt")["phantom.kidney_hu"] == "160.0"

    assert main(["preprocess", "--data", str(raw), "--out", str(prep)]) == 0
    assert (prep / "stats.txt").exists()

    cfg = tmp_path / "train.txt"
    cfg.write_text("epochs = 1\nsteps_per_epoch = 1\npatch = 16 16 16\nfolds = 3\n"
                   "net.stages = 2\nnet.base_filters = 2\nnet.max_axis_len = 16\n")
    assert main(["train", "--data", str(prep), "--out", str(run), "--config", str(cfg), "--fold", "0",
                 "--deterministic", "--set", "batch_size=1"]) == 0
    echo = read_kv(run / "config.txt")
    assert echo["batch_size"] == "1" and echo["fold"] == "0" and echo["net.channel_extend"] == "true"
    assert echo["augment.p_scale"] == "0.2"  # defaults are materialized
    assert len(read_kv(run / "split.txt")["val"].split()) == 1
    assert (run / "history.tsv").read_text().startswith("epoch\t")

    imgs = sorted(str(p) for p in raw.glob("*_img.vvol"))
    assert main(["infer", "--checkpoint", str(run / "checkpoint.cnck"), "--stats", str(prep / "stats.txt"),
                 "--out", str(pred), "--patch", "16", "16", "16", *imgs]) == 0
    lab = read_vvol(pred / "case_000_seg.vvol", "label")
    assert lab.dims == (32, 32, 32)
    assert (pred / "config.txt").exists()

    report = tmp_path / "report.tsv"
    assert main(["eval", "--pred", str(pred), "--gt", str(raw), "--out", str(report)]) == 0
    assert len(report.read_text().splitlines()) == 1 + 3 * 4
    capsys.readouterr()
    assert main(["eval", "--aggregate", str(report)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "class\tdsc\thd_mm\tavd_mm" and "kidney" in out


def test_gradcheck_and_bench(tmp_path, capsys):
    assert main(["gradcheck", "--base", "1", "--stages", "2", "--dims", "4", "4", "4"]) == 0
    assert "worst relative error" in capsys.readouterr().out
    out = tmp_path / "bench.tsv"
    assert main(["bench-attn", "--sizes", "2", "4", "--channels", "2", "--repeats", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("edge\ttokens")


def test_bad_override():
    with pytest.raises(SystemExit):
        main(["train", "--data", ".", "--out", ".", "--set", "oops"])
