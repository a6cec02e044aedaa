import csv
import json
import subprocess
import sys

import pytest

from desk import gray
from fastintra.cli import cli_main
from fastintra.media import LumaFrame, write_pgm, write_y4m


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_pgm(d / "train_a.pgm", LumaFrame(gray("coffee")[::4, ::4][:96, :128]))
    write_pgm(d / "train_b.pgm", LumaFrame(gray("chelsea")[::3, ::3][:96, :128]))
    img = gray("camera")[::4, ::4]
    write_y4m(d / "scene.y4m", [LumaFrame(img[t:t + 48, 2 * t:2 * t + 48], t) for t in range(3)])
    raw = b"".join(img[t:t + 32, t:t + 32].tobytes() + bytes(2 * 16 * 16) for t in range(2))
    (d / "scene.yuv").write_bytes(raw)
    assert cli_main(["extract", "-i", str(d / "train_a.pgm"), "-i", str(d / "train_b.pgm"),
                     "--block-size", "8", "--qps", "22", "32", "-o", str(d / "ds.json")]) == 0
    assert cli_main(["fit-pca", "--dataset", str(d / "ds.json"), "-o", str(d / "pca.json")]) == 0
    assert cli_main(["train-offline", "--dataset", str(d / "ds.json"), "--pca", str(d / "pca.json"),
                     "--max-epochs", "40", "-o", str(d / "model.json")]) == 0
    assert cli_main(["extract", "-i", str(d / "train_a.pgm"), "-i", str(d / "train_b.pgm"),
                     "-o", str(d / "ds16.json")]) == 0
    assert cli_main(["fit-pca", "--dataset", str(d / "ds16.json"), "-o", str(d / "pca16.json")]) == 0
    return d


def test_artifacts(work):
    ds = json.loads((work / "ds.json").read_text())
    assert ds["block_size"] == 8 and len(ds["labels"]) > 0 and sorted(set(ds["qps"])) == [22, 32]
    pca = json.loads((work / "pca.json").read_text())
    assert pca["block_size"] == 8 and len(pca["pca"]["basis"]) == 45
    model = json.loads((work / "model.json").read_text())
    assert model["strategy"] == "offline" and model["models"][0]["input_dim"] == 15


@pytest.mark.parametrize("strategy", ["offline", "online", "mixed"])
def test_encode_each_strategy(work, strategy):
    out = work / f"enc_{strategy}.csv"
    args = ["encode", "-i", str(work / "scene.y4m"), "--block-size", "8", "--strategy", strategy,
            "--tau", "0.7", "--k", "3", "--r", "2", "-o", str(out)]
    if strategy != "online":
        args += ["--model", str(work / "model.json")]
    assert cli_main(args) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and rows[0]["strategy"] == strategy and rows[0]["scene"] == "scene"
    assert int(rows[0]["blocks"]) == 3 * 36 and rows[0]["train_ms"] == ""


def test_encode_json_timings_and_save_model(work):
    out, saved = work / "enc.json", work / "scene_model.json"
    assert cli_main(["encode", "-i", str(work / "scene.y4m"), "--block-size", "8", "--strategy", "mixed",
                     "--model", str(work / "model.json"), "--report-format", "json", "--timings",
                     "--per-block", "--save-model", str(saved), "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc[0]["timings_ms"]["total_ms"] > 0 and len(doc[0]["decisions"]) == 108
    kinds = {m["strategy"] for m in json.loads(saved.read_text())["models"]}
    assert kinds == {"offline", "online", "mixed"}


def test_raw_input(work):
    out = work / "raw.csv"
    assert cli_main(["baseline", "-i", str(work / "scene.yuv"), "--width", "32", "--height", "32",
                     "--block-size", "8", "-o", str(out)]) == 0
    row = next(csv.DictReader(open(out)))
    assert row["accuracy_pct"] == "100.0" and row["mode_reduction_pct"] == "0.0" and row["blocks"] == "32"


def test_sweep(work):
    out = work / "sweep.csv"
    assert cli_main(["sweep", "-i", str(work / "scene.y4m"), "--block-size", "8", "--model",
                     str(work / "model.json"), "--taus", "0.5", "0.9", "--ks", "1", "2", "--rs", "1", "2",
                     "-o", str(out)]) == 0
    assert len(list(csv.DictReader(open(out)))) == 8


@pytest.mark.parametrize("args", [
    ["encode", "--strategy", "online", "-o", "x.csv"],                                 # no frames
    ["encode", "-i", "scene.yuv", "-o", "x.csv"],                                      # raw without dims
    ["encode", "-i", "scene.y4m", "--width", "4", "--height", "4", "-o", "x.csv"],     # dims on y4m
    ["encode", "-i", "scene.y4m", "--strategy", "mixed", "-o", "x.csv"],               # needs --model
    ["baseline", "-i", "scene.y4m", "--per-block", "-o", "x.csv"],                     # per-block needs json
    ["fit-pca", "--dataset", "ds.json", "--dataset", "ds16.json", "-o", "p.json"],     # mixed sizes
    ["train-offline", "--dataset", "ds.json", "--pca", "pca16.json", "-o", "m.json"],  # PCA without data
    ["encode", "-i", "scene.y4m", "-i", "scene.y4m", "--save-model", "s.json", "-o", "x.csv"],
])
def test_usage_errors(work, monkeypatch, capsys, args):
    monkeypatch.chdir(work)
    assert cli_main(args) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["bogus"],
    ["encode", "--no-such-flag"],
    ["encode", "-i", "scene.y4m", "--block-size", "12", "-o", "x.csv"],
])
def test_argparse_errors(work, monkeypatch, args):
    monkeypatch.chdir(work)
    assert cli_main(args) == 2


def test_runtime_errors(work, monkeypatch, capsys):
    monkeypatch.chdir(work)
    (work / "broken.y4m").write_bytes(b"YUV4MPEG2 W8 H8 C420jpeg\nFRAME\n" + bytes(5))
    assert cli_main(["baseline", "-i", "broken.y4m", "-o", "x.csv"]) == 1
    assert cli_main(["baseline", "-i", "missing.pgm", "-o", "x.csv"]) == 1
    assert cli_main(["encode", "-i", "scene.y4m", "--model", "model.json", "--block-size", "16",
                     "-o", "x.csv"]) == 1
    (work / "junk.json").write_text("{")
    assert cli_main(["encode", "-i", "scene.y4m", "--model", "junk.json", "--block-size", "8",
                     "-o", "x.csv"]) == 1
    assert capsys.readouterr().err.count("error") == 4


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fastintra", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "encode" in res.stdout
