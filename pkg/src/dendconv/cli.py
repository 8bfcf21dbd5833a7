"""``dendconv`` command line: train, eval, corrupt, compare, gradcheck, map.

Exit codes: 0 success, 1 usage/input error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, harness, nn
from .errors import DendConvError, InputError
from .metrics import MAP_THRESHOLDS, NOISE_ORDER, DetectionRecord, GroundTruthBox, map_at, map_range, per_class_ap
from .noise import SPEC_TYPES, corrupt_dataset

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# Image dump: b"DT" | u16 C, H, W (little-endian) | C*H*W float64 values.
IMAGE_MAGIC = b"DT"
IMAGE_SUFFIX = ".ddt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_image(path, image) -> None:
    img = np.asarray(image, dtype="<f8")
    if img.ndim == 4:
        img = img[0]
    c, h, w = img.shape
    Path(path).write_bytes(IMAGE_MAGIC + struct.pack("<3H", c, h, w) + img.tobytes())


def read_image(path) -> np.ndarray:
    """Read a dump as a (1, C, H, W) tensor."""
    data = Path(path).read_bytes()
    if data[:2] != IMAGE_MAGIC or len(data) < 8:
        raise InputError(f"{path}: not an image dump")
    c, h, w = struct.unpack_from("<3H", data, 2)
    if len(data) != 8 + 8 * c * h * w:
        raise InputError(f"{path}: payload size does not match header shape ({c}, {h}, {w})")
    return np.frombuffer(data, "<f8", offset=8).reshape(1, c, h, w).astype(np.float64)


def cmd_train(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    cfg = harness.ExperimentConfig.load(path)
    if args.out:
        cfg.out_dir = args.out
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out_dir) / "config.yaml").write_text(cfg.to_yaml())
    if args.twins:
        conv, ddc = harness.run_twins(cfg, progress=print)
        print(harness.results_table_csv([conv, ddc]), end="")
        print(harness.comparison_csv(ddc.comparison), end="")
    else:
        result = harness.run_experiment(cfg, progress=print)
        print(harness.results_table_csv([result]), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    cfg = harness.ExperimentConfig.load(args.config)
    model = nn.load_checkpoint(ckpt)
    train, test = harness.load_datasets(cfg.data)
    prep = harness.Standardizer(train.images if cfg.data.standardize else None)
    print(f"clean: {nn.evaluate(model, prep(test.images), test.labels):.2f}")
    for kind in args.kind or cfg.noise_kinds:
        corrupted, _ = corrupt_dataset(test.images, kind, args.seed)
        print(f"{kind}: {nn.evaluate(model, prep(corrupted), test.labels):.2f}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    if args.kind not in SPEC_TYPES:
        raise UsageError(f"unknown noise kind {args.kind!r}; valid kinds: {', '.join(NOISE_ORDER)}")
    src = Path(args.input)
    files = sorted(src.glob(f"*{IMAGE_SUFFIX}"))
    if not files:
        raise UsageError(f"no {IMAGE_SUFFIX} images in {src}")
    images = [read_image(f) for f in files]
    corrupted, manifest = corrupt_dataset(images, args.kind, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, img in zip(files, corrupted):
        write_image(out / f.name, img)
    lines = []
    for f, entry in zip(files, manifest):
        d = json.loads(entry.to_json())
        d["file"] = f.name
        lines.append(json.dumps(d, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(files)} corrupted images and manifest.jsonl to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    report = gradcheck.run_trials(args.op, args.trials, args.seed, fault=args.inject_fault)
    for name, err in report.errors.items():
        print(f"{args.op} {name:8s} max_rel_err={err:.3e}")
    ok = report.passed()
    print("PASS" if ok else f"FAIL (tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def _read_jsonl(path, make):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(make(d))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise UsageError(f"{path}:{lineno}: malformed record ({e})") from None
    return out


def cmd_map(args) -> int:
    preds = _read_jsonl(
        args.preds, lambda d: DetectionRecord(int(d["image_id"]), int(d["class_id"]), tuple(d["bbox"]), float(d["confidence"]))
    )
    gts = _read_jsonl(args.gt, lambda d: GroundTruthBox(int(d["image_id"]), int(d["class_id"]), tuple(d["bbox"])))
    if args.mode == "0.5":
        print("class\tAP@0.5")
        for cls, ap in per_class_ap(preds, gts, 0.5).items():
            print(f"{cls}\t{ap:.12f}")
        print(f"mAP@0.5\t{map_at(preds, gts, 0.5):.12f}")
    else:
        print("class\t" + "\t".join(f"AP@{t:.2f}" for t in MAP_THRESHOLDS))
        table = {t: per_class_ap(preds, gts, t) for t in MAP_THRESHOLDS}
        for cls in table[0.5]:
            print(f"{cls}\t" + "\t".join(f"{table[t][cls]:.6f}" for t in MAP_THRESHOLDS))
        print(f"mAP@0.5\t{map_at(preds, gts, 0.5):.12f}")
        print(f"mAP@0.5:0.95\t{map_range(preds, gts):.12f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a = harness.ExperimentResult.load(args.a)
    b = harness.ExperimentResult.load(args.b)
    comparison = harness.compare(a, b)
    text = harness.comparison_csv(comparison)
    print(text, end="")
    Path(args.csv or Path(args.b).with_name("comparison.csv")).write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dendconv", description="Dendritic convolution toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a conv/ddc experiment from a YAML config")
    t.add_argument("--config", required=True, help="experiment config (YAML)")
    t.add_argument("--out", help="output directory (overrides out_dir in the config)")
    t.add_argument("--twins", action="store_true", help="train both conv and ddc twins and compare them")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the clean and corrupted test set")
    e.add_argument("--checkpoint", required=True, help="DDC1 checkpoint file")
    e.add_argument("--config", required=True, help="experiment config naming the dataset")
    e.add_argument("--kind", action="append", choices=NOISE_ORDER, help="noise kind (repeatable; default: config's list)")
    e.add_argument("--seed", type=int, default=0, help="corruption seed")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("corrupt", help=f"corrupt a directory of {IMAGE_SUFFIX} image dumps")
    c.add_argument("--in", dest="input", required=True, help=f"directory of {IMAGE_SUFFIX} files")
    c.add_argument("--kind", required=True, help=f"one of: {', '.join(NOISE_ORDER)}")
    c.add_argument("--seed", type=int, default=0, help="corruption seed")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_corrupt)

    cmp_ = sub.add_parser("compare", help="relative improvement of result B over baseline result A")
    cmp_.add_argument("--a", required=True, help="baseline result JSON")
    cmp_.add_argument("--b", required=True, help="candidate result JSON")
    cmp_.add_argument("--csv", help="CSV output path (default: comparison.csv next to --b)")
    cmp_.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradcheck", help="finite-difference check of operator gradients")
    g.add_argument("--op", choices=("conv", "ddc"), default="ddc")
    g.add_argument("--trials", type=int, default=20, help="number of random cases")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument(
        "--inject-fault", type=float, default=0.0, metavar="DELTA",
        help="add DELTA to the analytic input gradient (negative control; expect failure)",
    )
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("map", help="detection mAP from JSON-lines prediction and ground-truth files")
    m.add_argument("--preds", required=True, help="predictions: {image_id, class_id, bbox, confidence} per line")
    m.add_argument("--gt", required=True, help="ground truth: {image_id, class_id, bbox} per line")
    m.add_argument("--mode", choices=("0.5", "range"), default="0.5", help="mAP@0.5 or mAP@0.5:0.95")
    m.set_defaults(func=cmd_map)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DendConvError, OSError, ArithmeticError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
