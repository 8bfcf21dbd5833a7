"""Conv-vs-DDC twin experiments: train, corrupt the test set, evaluate, aggregate."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import nn
from .data import LabeledDataset, load_cifar10, make_synthetic, subset
from .errors import InputError, NumericRangeError
from .metrics import NOISE_ORDER, avg_over_noises, relative_improvement
from .noise import check_kind, corrupt_dataset

log = logging.getLogger(__name__)

DEFAULT_ARCHITECTURE = (
    {"kind": "conv", "out_channels": 16, "k": 3, "padding": 1},
    {"kind": "relu"},
    {"kind": "maxpool2"},
    {"kind": "conv", "out_channels": 32, "k": 3, "padding": 1},
    {"kind": "relu"},
    {"kind": "maxpool2"},
    {"kind": "flatten"},
    {"kind": "linear", "out_features": 10},
)


@dataclass
class DataConfig:
    source: str = "cifar10"  # "cifar10" or "synthetic"
    directory: str = "data/cifar-10-batches-bin"
    train_per_class: int = 500
    test_per_class: int = 200
    subset_seed: int = 0
    classes: int = 10  # synthetic only
    size: int = 32  # synthetic only
    standardize: bool = False


@dataclass
class DdcConfig:
    alpha: float = 0.1
    alpha_learnable: bool = False
    scope: str = "per-channel"
    normalize_s: bool = False


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 64


@dataclass
class ExperimentConfig:
    name: str = "desk"
    conv_kind: str = "ddc"
    data: DataConfig = field(default_factory=DataConfig)
    architecture: list = field(default_factory=lambda: [dict(d) for d in DEFAULT_ARCHITECTURE])
    ddc: DdcConfig = field(default_factory=DdcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise_kinds: list = field(default_factory=lambda: list(NOISE_ORDER))
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "results"

    def __post_init__(self):
        if self.conv_kind not in ("conv", "ddc"):
            raise InputError(f"conv_kind must be 'conv' or 'ddc', got {self.conv_kind!r}")
        for k in self.noise_kinds:
            check_kind(k)
        if self.data.source not in ("cifar10", "synthetic"):
            raise InputError(f"data.source must be 'cifar10' or 'synthetic', got {self.data.source!r}")
        if not self.seeds:
            raise InputError("at least one seed is required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        try:
            for key, sub in (("data", DataConfig), ("ddc", DdcConfig), ("train", TrainConfig)):
                if key in d:
                    d[key] = sub(**d[key])
            return cls(**d)
        except TypeError as e:
            raise InputError(f"bad config: {e}") from None

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise InputError(f"config is not valid YAML: {e}") from None
        if not isinstance(d, dict):
            raise InputError("config must be a mapping")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def layer_specs(self, conv_kind: str | None = None) -> list[nn.LayerSpec]:
        specs = [nn.LayerSpec(**layer) for layer in self.architecture]
        kind = conv_kind or self.conv_kind
        flags = asdict(self.ddc) if kind == "ddc" else {}
        return nn.swap_conv_kind(specs, kind, **flags)

    def twin(self, conv_kind: str) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), "conv_kind": conv_kind})


def load_datasets(cfg: DataConfig) -> tuple[LabeledDataset, LabeledDataset]:
    if cfg.source == "synthetic":
        train = make_synthetic(cfg.classes, cfg.train_per_class, cfg.size, seed=cfg.subset_seed)
        test = make_synthetic(cfg.classes, cfg.test_per_class, cfg.size, seed=cfg.subset_seed + 1)
        return train, test
    train, test = load_cifar10(cfg.directory)
    train = subset(train, cfg.train_per_class, cfg.subset_seed)
    test = subset(test, cfg.test_per_class, cfg.subset_seed)
    return train, test


class Standardizer:
    """Per-channel mean/std fitted on clean training images, applied after corruption."""

    def __init__(self, images: np.ndarray | None):
        if images is None:
            self.mean = self.std = None
        else:
            self.mean = images.mean(axis=(0, 2, 3), keepdims=True)
            self.std = images.std(axis=(0, 2, 3), keepdims=True) + 1e-12

    def __call__(self, images):
        return images if self.mean is None else (images - self.mean) / self.std


def _sha(*arrays_or_text) -> str:
    h = hashlib.sha256()
    for a in arrays_or_text:
        h.update(a.encode() if isinstance(a, str) else np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def _summary(values: list[float]) -> dict:
    """Mean and sample standard deviation (absent below two values)."""
    if not values:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if len(arr) >= 2 else None,
        "n": len(arr),
    }


@dataclass
class ExperimentResult:
    name: str
    conv_kind: str
    noise_kinds: list
    seeds: list  # per-seed records
    summary: dict = field(default_factory=dict)
    comparison: dict | None = None

    def ok_seeds(self) -> list[dict]:
        return [s for s in self.seeds if s.get("error") is None]

    def noise_mean(self, kind: str) -> float:
        return self.summary["noise"][kind]["mean"]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentResult":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as e:
            raise InputError(f"{path}: not a result file ({e})") from None


def summarize(name: str, conv_kind: str, noise_kinds: list, seeds: list[dict]) -> ExperimentResult:
    ok = [s for s in seeds if s.get("error") is None]
    summary = {
        "clean": _summary([s["clean"] for s in ok]),
        "noise": {k: _summary([s["noise"][k] for s in ok]) for k in noise_kinds},
    }
    if list(noise_kinds) == list(NOISE_ORDER):
        summary["a_avg"] = _summary([s["a_avg"] for s in ok])
    return ExperimentResult(name, conv_kind, list(noise_kinds), seeds, summary)


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_seed(cfg: ExperimentConfig, seed: int, train: LabeledDataset, test: LabeledDataset, out: Path | None, progress=None) -> dict:
    model = nn.build_model(cfg.layer_specs(), seed, train.images.shape[1:])
    record = {"seed": seed, "init_hash": model.weight_hash(), "error": None}
    prep = Standardizer(train.images if cfg.data.standardize else None)
    x_train = prep(train.images)
    rng = np.random.default_rng([seed, 0xDA7A])
    epochs = []
    try:
        for epoch in range(cfg.train.epochs):
            stats = nn.train_epoch(model, x_train, train.labels, cfg.train.batch_size, cfg.train.lr, cfg.train.momentum, rng)
            epochs.append({"loss": stats.loss, "accuracy": stats.accuracy})
            if progress:
                progress(f"[{cfg.conv_kind}] seed={seed} epoch={epoch + 1} loss={stats.loss:.4f} acc={stats.accuracy:.2f}")
        record["epochs"] = epochs
        record["clean"] = nn.evaluate(model, prep(test.images), test.labels)
        record["noise"], record["corruption_hash"] = {}, {}
        for kind in cfg.noise_kinds:
            corrupted, manifest = corrupt_dataset(test.images, kind, seed)
            record["corruption_hash"][kind] = _sha("\n".join(m.to_json() for m in manifest), corrupted)
            record["noise"][kind] = nn.evaluate(model, prep(corrupted), test.labels)
        if list(cfg.noise_kinds) == list(NOISE_ORDER):
            record["a_avg"] = avg_over_noises([record["noise"][k] for k in NOISE_ORDER])
    except NumericRangeError as e:
        log.warning("seed %d aborted: %s", seed, e)
        record = {"seed": seed, "init_hash": record["init_hash"], "error": str(e), "epochs": epochs}
        return record
    if out is not None:
        nn.save_checkpoint(model, out / f"{cfg.conv_kind}_seed{seed}.ckpt")
    return record


def run_experiment(cfg: ExperimentConfig, datasets=None, progress=None, write: bool = True) -> ExperimentResult:
    """Train and evaluate ``cfg.conv_kind`` under every seed.

    Writes ``<out_dir>/<conv_kind>_result.json`` and one checkpoint per seed
    unless ``write`` is false.
    """
    train, test = datasets if datasets is not None else load_datasets(cfg.data)
    out = Path(cfg.out_dir) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    seeds = [run_seed(cfg, s, train, test, out, progress) for s in cfg.seeds]
    result = summarize(cfg.name, cfg.conv_kind, cfg.noise_kinds, seeds)
    if out is not None:
        _write_atomic(out / f"{cfg.conv_kind}_result.json", result.to_json())
    return result


def compare(result_a: ExperimentResult, result_b: ExperimentResult) -> dict:
    """Relative improvement of ``result_b`` over baseline ``result_a`` per noise kind."""
    if list(result_a.noise_kinds) != list(result_b.noise_kinds):
        raise InputError("results cover different noise kinds")
    if [s["seed"] for s in result_a.seeds] != [s["seed"] for s in result_b.seeds]:
        raise InputError("results use different seeds")
    row = {k: relative_improvement(result_b.noise_mean(k), result_a.noise_mean(k)) for k in result_a.noise_kinds}
    if list(row) == list(NOISE_ORDER):
        average = avg_over_noises(list(row.values()))
    else:
        average = float(np.mean(list(row.values())))
    return {"baseline": result_a.conv_kind, "candidate": result_b.conv_kind, "relative_improvement": row, "average": average}


def run_twins(cfg: ExperimentConfig, progress=None, write: bool = True) -> tuple[ExperimentResult, ExperimentResult]:
    """Run conv and ddc twins on identical data, seeds and corruptions."""
    datasets = load_datasets(cfg.data)
    conv = run_experiment(cfg.twin("conv"), datasets, progress, write)
    ddc = run_experiment(cfg.twin("ddc"), datasets, progress, write)
    ddc.comparison = compare(conv, ddc)
    if write:
        out = Path(cfg.out_dir)
        _write_atomic(out / "ddc_result.json", ddc.to_json())
        _write_atomic(out / "comparison.json", json.dumps(ddc.comparison, sort_keys=True, indent=2) + "\n")
        _write_atomic(out / "table.csv", results_table_csv([conv, ddc]))
    return conv, ddc


def _cell(s: dict) -> str:
    if s["mean"] is None:
        return ""
    return f"{s['mean']:.2f}" if s["std"] is None else f"{s['mean']:.2f}±{s['std']:.2f}"


def results_table(results) -> list[dict]:
    """Rows of (name, convolution, clean, per-noise 'mean±std')."""
    rows = []
    for r in results:
        row = {"model": r.name, "convolution": r.conv_kind, "clean": _cell(r.summary["clean"])}
        for k in r.noise_kinds:
            row[k] = _cell(r.summary["noise"][k])
        if "a_avg" in r.summary:
            row["average"] = _cell(r.summary["a_avg"])
        rows.append(row)
    return rows


def results_table_csv(results) -> str:
    rows = results_table(results)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def comparison_csv(comparison: dict) -> str:
    buf = io.StringIO()
    kinds = list(comparison["relative_improvement"])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["baseline", "candidate", *kinds, "average"])
    writer.writerow(
        [comparison["baseline"], comparison["candidate"]]
        + [f"{comparison['relative_improvement'][k]:.2f}" for k in kinds]
        + [f"{comparison['average']:.2f}"]
    )
    return buf.getvalue()
