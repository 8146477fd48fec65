"""Command-line front end.

Subcommands: solve, warp, classify, train, synth, eval. Failures exit nonzero
with one line on stderr of the form ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import formats
from .classifier import TrainConfig, accuracy, classifier_forward, train_classifier
from .flow import compose_flow, densify, scale_flow, warp_image
from .geometry import GeometryError, make_regular_grid
from .metrics import psnr, ssim
from .synth import FAMILIES, DistortionSpec, SynthError, generate_classifier_dataset, generate_sample
from .tps import SingularSystemError, eval_tps, solve_tps

log = logging.getLogger("tpswarp")

EXIT_CODES = {"usage": 2, "io": 3, "format": 4, "singular-system": 5, "geometry": 6, "synth": 7, "value": 8}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error[usage]: {' '.join(message.split())}", file=sys.stderr)
        sys.exit(EXIT_CODES["usage"])


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def parse_param(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{key}: not a number: {value!r}") from None


def parse_params(text: str) -> list[tuple[str, float]]:
    return [parse_param(item) for item in text.split(",") if item.strip()]


def _mask_path(out: Path) -> Path:
    return out.with_name(out.stem + ".mask" + out.suffix)


# --------------------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    target = formats.read_grid(args.grid)
    source = formats.read_grid(args.source) if args.source else make_regular_grid(target.rows, target.cols)
    t = solve_tps(source, target, args.reg)
    resid = float(np.sqrt(((eval_tps(t, source) - target.points) ** 2).sum(1)).max())
    formats.write_tps(args.out, t)
    print(f"residual_max={resid:.3e}")
    print(f"weights_max={float(np.abs(t.weights).max()):.3e}")
    return 0


def cmd_warp(args) -> int:
    src = formats.read_image(getattr(args, "in"))
    if (args.grid is None) == (args.flow is None):
        raise CliError("usage", "give exactly one of --grid or --flow")
    residual = formats.read_flow(args.residual) if args.residual else None
    if args.grid is not None:
        grid = formats.read_grid(args.grid)
        w, h = (residual.width, residual.height) if residual is not None else (src.width, src.height)
        flow = densify(grid, w, h, args.reg)
    else:
        flow = formats.read_flow(args.flow)
    if residual is not None:
        if (residual.width, residual.height) != (flow.width, flow.height):
            raise CliError(
                "geometry",
                f"residual flow is {residual.width}x{residual.height} but base flow is {flow.width}x{flow.height}",
            )
        flow = compose_flow(flow, residual)
    out_w, out_h = args.size if args.size else (flow.width, flow.height)
    flow = scale_flow(flow, out_w, out_h)
    mask = formats.read_mask(args.mask) if args.mask else None
    result = warp_image(src, flow, mask)
    out = Path(args.out)
    formats.write_image(out, result.image)
    formats.write_mask(_mask_path(out), result.validity)
    print(f"size={out_w}x{out_h} valid_fraction={float(result.validity.data.mean()):.6f}")
    return 0


def cmd_classify(args) -> int:
    grid = formats.read_grid(args.grid)
    params = formats.read_params(args.params)
    logits, label = classifier_forward(params, grid)
    idx = int(np.argmax(logits))
    print(f"class={idx} family={FAMILIES[idx]}")
    print("probs=" + ",".join(f"{p:.6f}" for p in label.probs))
    return 0


def _load_dataset_dir(root: Path):
    files = sorted(root.glob("*.json"))
    items = []
    for f in files:
        doc = json.loads(f.read_text())
        if not isinstance(doc, dict) or "label" not in doc or "grid" not in doc:
            continue
        grid = formats.grid_from_dict(doc["grid"], f"{f}: grid")
        label = int(doc["label"])
        if not 0 <= label < len(FAMILIES):
            raise CliError("format", f"{f}: label {label} out of range")
        items.append((grid, label))
    return items


def _dataset_from_dir(path: Path):
    if not path.is_dir():
        raise CliError("io", f"{path}: not a directory")
    if (path / "train").is_dir():
        train = _load_dataset_dir(path / "train")
        test = _load_dataset_dir(path / "test") if (path / "test").is_dir() else []
    else:
        items = _load_dataset_dir(path)
        train = [it for i, it in enumerate(items) if i % 6 != 5]
        test = [it for i, it in enumerate(items) if i % 6 == 5]
    if not train:
        raise CliError("value", f"{path}: dataset is empty")
    return train, test


def cmd_train(args) -> int:
    if getattr(args, "in"):
        train, test = _dataset_from_dir(Path(getattr(args, "in")))
    else:
        train = generate_classifier_dataset(args.count_per_class, args.grid_size, args.seed)
        test = generate_classifier_dataset(max(1, args.count_per_class // 5), args.grid_size, args.seed + 1000)
    config = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    params, report = train_classifier(train, config, test_set=test or None)
    out = Path(args.out)
    formats.write_params(out, params)
    metrics = {
        "train_size": len(train),
        "test_size": len(test),
        "initial_loss": report.initial_loss,
        "epoch_loss": report.epoch_loss,
        "test_accuracy": report.test_accuracy,
        "final_test_accuracy": accuracy(params, test) if test else None,
    }
    out.with_name(out.stem + ".metrics.json").write_text(json.dumps(metrics, indent=1))
    print(f"final_loss={report.final_loss:.6f}")
    if test:
        print(f"test_accuracy={metrics['final_test_accuracy']:.4f}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.count_per_class:
        data = generate_classifier_dataset(args.count_per_class, args.grid_size, args.seed)
        for i, item in enumerate(data):
            doc = {
                "label": item.label,
                "family": item.spec.family,
                "params": item.spec.params,
                "seed": item.spec.seed,
                "grid": formats.grid_to_dict(item.grid),
            }
            (out / f"sample_{i:05d}.json").write_text(json.dumps(doc))
        print(f"samples={len(data)}")
        return 0
    if args.family is None:
        raise CliError("usage", "--family is required unless --count-per-class is given")
    spec = DistortionSpec(args.family, dict((args.param or []) + (args.params or [])), args.seed)
    w, h = args.size if args.size else (256, 256)
    s = generate_sample(spec, w, h, args.grid_size)
    formats.write_image(out / "input.png", s.image)
    formats.write_image(out / "clean.png", s.clean)
    formats.write_mask(out / "mask.png", s.mask)
    formats.write_grid(out / "grid.json", s.grid)
    formats.write_flow(out / "flow.wflo", s.flow)
    doc = {"label": spec.label, "family": spec.family, "params": spec.params, "seed": spec.seed,
           "width": w, "height": h, "grid": formats.grid_to_dict(s.grid)}
    (out / "sample.json").write_text(json.dumps(doc, indent=1))
    print(f"family={spec.family} valid_fraction={float(s.mask.data.mean()):.6f}")
    return 0


def cmd_eval(args) -> int:
    pred = formats.read_image(getattr(args, "in"))
    gt = formats.read_image(args.ref)
    mask = formats.read_mask(args.mask) if args.mask else None
    p = psnr(pred, gt, mask)
    s = ssim(pred, gt, mask)
    print(f"psnr={'inf' if math.isinf(p) else f'{p:.6f}'}")
    print(f"ssim={s:.6f}")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tpswarp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="fit a TPS from a source grid to a target grid")
    p.add_argument("--grid", required=True, help="target grid JSON")
    p.add_argument("--source", help="source grid JSON (default: regular lattice of the target's size)")
    p.add_argument("--reg", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("warp", help="backward-warp an image by a grid or flow")
    p.add_argument("--in", required=True)
    p.add_argument("--grid")
    p.add_argument("--flow")
    p.add_argument("--residual")
    p.add_argument("--mask", help="validity mask of the input image")
    p.add_argument("--size", type=parse_size, help="output size WxH")
    p.add_argument("--reg", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("classify", help="predict the distortion family of a grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("train", help="train the point-set classifier")
    p.add_argument("--in", help="dataset directory (default: generate a synthetic one)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-per-class", type=int, default=100)
    p.add_argument("--grid-size", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic sample or classifier dataset")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--param", type=parse_param, action="append", help="family parameter key=value")
    p.add_argument("--params", type=parse_params, help="comma-separated key=value list")
    p.add_argument("--size", type=parse_size)
    p.add_argument("--grid-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-per-class", type=int, default=0, help="dump a classifier dataset instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="PSNR/SSIM between two images")
    p.add_argument("--in", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--mask")
    p.set_defaults(func=cmd_eval)
    return parser


def _categorize(exc: Exception) -> tuple[str, str]:
    if isinstance(exc, CliError):
        return exc.category, str(exc)
    if isinstance(exc, SingularSystemError):
        return "singular-system", str(exc)
    if isinstance(exc, formats.FormatError):
        return "format", str(exc)
    if isinstance(exc, SynthError):
        return "synth", str(exc)
    if isinstance(exc, GeometryError):
        return "geometry", str(exc)
    if isinstance(exc, OSError):
        return "io", str(exc)
    if isinstance(exc, json.JSONDecodeError):
        return "format", str(exc)
    return "value", str(exc)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        category, message = _categorize(exc)
        print(f"error[{category}]: {' '.join(message.split())}", file=sys.stderr)
        return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
