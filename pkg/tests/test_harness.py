import json

import numpy as np
import pytest

from dendconv.errors import InputError
from dendconv.harness import (
    ExperimentConfig,
    ExperimentResult,
    comparison_csv,
    compare,
    results_table,
    results_table_csv,
    run_experiment,
    run_twins,
    summarize,
)
from dendconv.metrics import NOISE_ORDER, avg_over_noises


def tiny_config(out_dir, **overrides):
    d = {
        "name": "tiny",
        "data": {"source": "synthetic", "classes": 3, "size": 8, "train_per_class": 10, "test_per_class": 6},
        "architecture": [
            {"kind": "conv", "out_channels": 4, "k": 3, "padding": 1},
            {"kind": "relu"},
            {"kind": "maxpool2"},
            {"kind": "flatten"},
            {"kind": "linear", "out_features": 3},
        ],
        "train": {"epochs": 2, "batch_size": 8, "lr": 0.01, "momentum": 0.9},
        "seeds": [0, 1],
        "out_dir": str(out_dir),
    }
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


def test_config_yaml_round_trip(tmp_path):
    cfg = tiny_config(tmp_path)
    text = cfg.to_yaml()
    again = ExperimentConfig.from_yaml(text)
    assert again == cfg
    assert again.to_yaml() == text


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.ddc.alpha == 0.1 and not cfg.ddc.alpha_learnable
    assert cfg.noise_kinds == list(NOISE_ORDER)


def test_config_rejects_unknown_keys_and_kinds():
    with pytest.raises(InputError, match="unknown config keys"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(InputError):
        ExperimentConfig.from_dict({"noise_kinds": ["pink"]})
    with pytest.raises(InputError):
        ExperimentConfig.from_yaml("- just\n- a list\n")


def test_layer_specs_swap():
    cfg = ExperimentConfig()
    kinds = [s.kind for s in cfg.layer_specs("ddc")]
    assert kinds.count("ddc") == 2 and "conv" not in kinds
    assert [s.kind for s in cfg.layer_specs("conv")].count("conv") == 2


def test_run_is_deterministic(tmp_path):
    a = run_experiment(tiny_config(tmp_path / "a"))
    b = run_experiment(tiny_config(tmp_path / "b"))
    assert a.to_json() == b.to_json()
    assert (tmp_path / "a" / "ddc_result.json").read_bytes() == (tmp_path / "b" / "ddc_result.json").read_bytes()
    assert (tmp_path / "a" / "ddc_seed0.ckpt").read_bytes() == (tmp_path / "b" / "ddc_seed0.ckpt").read_bytes()


def test_twins_fair_and_equal_at_alpha_zero(tmp_path):
    cfg = tiny_config(tmp_path, ddc={"alpha": 0.0})
    conv, ddc = run_twins(cfg)
    for sc, sd in zip(conv.seeds, ddc.seeds):
        assert sc["init_hash"] == sd["init_hash"]
        assert sc["corruption_hash"] == sd["corruption_hash"]
        assert sc["clean"] == sd["clean"] and sc["noise"] == sd["noise"]
    assert ddc.comparison["average"] == 0.0
    for name in ("conv_result.json", "ddc_result.json", "comparison.json", "table.csv"):
        assert (tmp_path / name).is_file()


def test_untrained_model_near_chance(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "data": {"source": "synthetic", "size": 16, "train_per_class": 2, "test_per_class": 100},
        "train": {"epochs": 0},
        "seeds": [0],
        "noise_kinds": ["gaussian"],
    })
    res = run_experiment(cfg, write=False)
    assert abs(res.seeds[0]["clean"] - 10.0) <= 2.0


def test_summary_recomputes_from_seeds(tmp_path):
    res = run_experiment(tiny_config(tmp_path), write=False)
    for kind in NOISE_ORDER:
        vals = [s["noise"][kind] for s in res.seeds]
        assert res.summary["noise"][kind]["mean"] == pytest.approx(np.mean(vals), abs=1e-12)
        assert res.summary["noise"][kind]["std"] == pytest.approx(np.std(vals, ddof=1), abs=1e-12)
    for s in res.seeds:
        assert s["a_avg"] == pytest.approx(avg_over_noises([s["noise"][k] for k in NOISE_ORDER]), abs=1e-12)


def _fake_result(kind, per_noise, seeds=(0,)):
    records = [{"seed": s, "error": None, "clean": 50.0, "noise": dict(per_noise)} for s in seeds]
    if list(per_noise) == list(NOISE_ORDER):
        for r in records:
            r["a_avg"] = avg_over_noises(list(per_noise.values()))
    return summarize("m", kind, list(per_noise), records)


def test_single_seed_has_no_std():
    r = _fake_result("conv", {k: 10.0 for k in NOISE_ORDER})
    assert r.summary["clean"]["std"] is None
    assert results_table([r])[0]["clean"] == "50.00"


def test_failed_seed_excluded():
    ok = {"seed": 0, "error": None, "clean": 40.0, "noise": {"gaussian": 30.0}}
    bad = {"seed": 1, "error": "overflow", "epochs": []}
    r = summarize("m", "ddc", ["gaussian"], [ok, bad])
    assert r.summary["clean"] == {"mean": 40.0, "std": None, "n": 1}


def test_compare_examples():
    zeros = {k: 0.0 for k in NOISE_ORDER}
    base = _fake_result("conv", {k: 10.0 for k in NOISE_ORDER})
    assert compare(base, base)["average"] == 0.0
    better = _fake_result("ddc", {k: 11.0 for k in NOISE_ORDER})
    c = compare(base, better)
    assert c["relative_improvement"] == {k: pytest.approx(10.0) for k in NOISE_ORDER}
    assert c["average"] == pytest.approx(10.0)
    with pytest.raises(InputError):
        compare(_fake_result("conv", zeros), better)


def test_compare_small_gap():
    a = _fake_result("conv", {"gaussian": 68.13})
    b = _fake_result("ddc", {"gaussian": 68.56})
    assert compare(a, b)["relative_improvement"]["gaussian"] == pytest.approx(0.63, abs=0.05)


def test_compare_mismatch():
    a = _fake_result("conv", {"gaussian": 10.0})
    with pytest.raises(InputError):
        compare(a, _fake_result("ddc", {"poisson": 10.0}))
    with pytest.raises(InputError):
        compare(a, _fake_result("ddc", {"gaussian": 10.0}, seeds=(1,)))


def test_tables_and_json_round_trip(tmp_path):
    a = _fake_result("conv", {k: 10.0 for k in NOISE_ORDER}, seeds=(0, 1))
    b = _fake_result("ddc", {k: 12.0 for k in NOISE_ORDER}, seeds=(0, 1))
    text = results_table_csv([a, b])
    header, row_a, row_b = text.strip().splitlines()
    assert header.split(",") == ["model", "convolution", "clean", *NOISE_ORDER, "average"]
    assert row_b.split(",")[3] == "12.00±0.00"
    row = comparison_csv(compare(a, b)).splitlines()[1].split(",")
    assert row[:3] == ["conv", "ddc", "20.00"]
    path = tmp_path / "r.json"
    path.write_text(a.to_json())
    assert ExperimentResult.load(path) == a
    json.loads(path.read_text())


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(InputError):
        ExperimentResult.load(p)
