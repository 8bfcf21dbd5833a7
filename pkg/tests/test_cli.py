import json
import subprocess
import sys

import numpy as np
import pytest

from dendconv.cli import main, read_image, write_image

from test_harness import tiny_config


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    cfg = tiny_config(tmp_path / "unused", seeds=[0], train={"epochs": 1, "batch_size": 8})
    path.write_text(cfg.to_yaml())
    return path


def _jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


@pytest.mark.parametrize("command", ["train", "eval", "corrupt", "compare", "gradcheck", "map"])
def test_help(command, capsys):
    with pytest.raises(SystemExit) as e:
        main([command, "--help"])
    assert e.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_command():
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 1


def test_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "dendconv", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout


# train / eval / compare


def test_train_writes_results(tiny_yaml, tmp_path, capsys):
    out = tmp_path / "run1"
    assert main(["train", "--config", str(tiny_yaml), "--out", str(out)]) == 0
    assert (out / "ddc_result.json").is_file() and (out / "ddc_seed0.ckpt").is_file()
    assert "ddc" in capsys.readouterr().out
    out2 = tmp_path / "run2"
    assert main(["train", "--config", str(tiny_yaml), "--out", str(out2)]) == 0
    assert (out / "ddc_result.json").read_bytes() == (out2 / "ddc_result.json").read_bytes()


def test_train_missing_config(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == 1
    assert "not found" in capsys.readouterr().err


def test_train_bad_config(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("bogus_key: 1\n")
    assert main(["train", "--config", str(p)]) == 1


def test_twins_eval_and_compare(tiny_yaml, tmp_path, capsys):
    out = tmp_path / "twins"
    assert main(["train", "--config", str(tiny_yaml), "--out", str(out), "--twins"]) == 0
    capsys.readouterr()
    rc = main(["eval", "--checkpoint", str(out / "conv_seed0.ckpt"), "--config", str(tiny_yaml), "--kind", "gaussian"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("clean: ") and lines[1].startswith("gaussian: ")
    conv = json.loads((out / "conv_result.json").read_text())
    assert float(lines[1].split()[1]) == pytest.approx(conv["seeds"][0]["noise"]["gaussian"], abs=0.005)
    csv_path = tmp_path / "cmp.csv"
    assert main(["compare", "--a", str(out / "conv_result.json"), "--b", str(out / "ddc_result.json"), "--csv", str(csv_path)]) == 0
    assert csv_path.read_text().startswith("baseline,candidate,gaussian")
    assert main(["compare", "--a", str(out / "conv_result.json"), "--b", str(out / "ddc_result.json")]) == 0
    assert (out / "comparison.csv").read_text() == csv_path.read_text()


def test_compare_missing_file(tmp_path):
    assert main(["compare", "--a", str(tmp_path / "a.json"), "--b", str(tmp_path / "b.json")]) == 1


def test_eval_missing_checkpoint(tiny_yaml, tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "x.ckpt"), "--config", str(tiny_yaml)]) == 1


# corrupt


def _image_dir(tmp_path, n=10):
    d = tmp_path / "imgs"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        write_image(d / f"img{i:02d}.ddt", rng.uniform(0, 1, (3, 8, 8)))
    return d


def test_image_dump_round_trip(tmp_path):
    img = np.random.default_rng(1).uniform(0, 1, (3, 4, 5))
    write_image(tmp_path / "a.ddt", img)
    np.testing.assert_array_equal(read_image(tmp_path / "a.ddt")[0], img)


def test_corrupt_outputs_and_manifest(tmp_path):
    src = _image_dir(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["corrupt", "--in", str(src), "--kind", "gaussian", "--seed", "3", "--out", str(out_a)]) == 0
    assert len(list(out_a.glob("*.ddt"))) == 10
    lines = (out_a / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 10 and json.loads(lines[0])["file"] == "img00.ddt"
    assert main(["corrupt", "--in", str(src), "--kind", "gaussian", "--seed", "3", "--out", str(out_b)]) == 0
    assert (out_a / "manifest.jsonl").read_bytes() == (out_b / "manifest.jsonl").read_bytes()
    for f in out_a.glob("*.ddt"):
        out = read_image(f)
        assert out.min() >= 0 and out.max() <= 1


def test_corrupt_unknown_kind(tmp_path, capsys):
    src = _image_dir(tmp_path, 1)
    assert main(["corrupt", "--in", str(src), "--kind", "pink", "--out", str(tmp_path / "o")]) == 1
    assert "gaussian" in capsys.readouterr().err


def test_corrupt_empty_dir(tmp_path):
    assert main(["corrupt", "--in", str(tmp_path), "--kind", "gaussian", "--out", str(tmp_path / "o")]) == 1


# gradcheck


def test_gradcheck_pass(capsys):
    assert main(["gradcheck", "--op", "ddc", "--trials", "5", "--seed", "0"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_injected_fault_fails(capsys):
    assert main(["gradcheck", "--op", "ddc", "--trials", "3", "--inject-fault", "1e-2"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_zero_trials():
    assert main(["gradcheck", "--trials", "0"]) == 1


# map


def test_map_perfect(tmp_path, capsys):
    gts = [{"image_id": 0, "class_id": 0, "bbox": [0, 0, 10, 10]}, {"image_id": 1, "class_id": 1, "bbox": [5, 5, 9, 9]}]
    preds = [dict(g, confidence=0.9) for g in gts]
    args = ["--preds", str(_jsonl(tmp_path / "p.jsonl", preds)), "--gt", str(_jsonl(tmp_path / "g.jsonl", gts))]
    assert main(["map", *args]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mAP@0.5\t1.000000000000"
    assert main(["map", *args, "--mode", "range"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mAP@0.5:0.95\t1.000000000000"


def test_map_five_sixths(tmp_path, capsys):
    gts = [{"image_id": 0, "class_id": 0, "bbox": [0, 0, 10, 10]}, {"image_id": 0, "class_id": 0, "bbox": [20, 0, 30, 10]}]
    preds = [
        {"image_id": 0, "class_id": 0, "bbox": [0, 0, 10, 10], "confidence": 0.9},
        {"image_id": 0, "class_id": 0, "bbox": [50, 50, 60, 60], "confidence": 0.8},
        {"image_id": 0, "class_id": 0, "bbox": [20, 0, 30, 10], "confidence": 0.7},
    ]
    rc = main(["map", "--preds", str(_jsonl(tmp_path / "p.jsonl", preds)), "--gt", str(_jsonl(tmp_path / "g.jsonl", gts))])
    assert rc == 0
    value = float(capsys.readouterr().out.splitlines()[-1].split("\t")[1])
    assert value == pytest.approx(5 / 6, abs=1e-9)


def test_map_malformed_line(tmp_path, capsys):
    gt = _jsonl(tmp_path / "g.jsonl", [{"image_id": 0, "class_id": 0, "bbox": [0, 0, 1, 1]}])
    preds = tmp_path / "p.jsonl"
    preds.write_text('{"image_id": 0, "class_id": 0, "bbox": [0, 0, 1, 1], "confidence": 0.5}\n{"image_id": 0\n')
    assert main(["map", "--preds", str(preds), "--gt", str(gt)]) == 1
    assert "p.jsonl:2" in capsys.readouterr().err
