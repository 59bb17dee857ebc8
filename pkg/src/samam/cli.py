"""Command-line entry points: train, stylize, scan-viz, erf, inspect."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .imageio import atomic_write_bytes, gray_to_uint8, list_images, read_ppm, to_float, to_uint8, write_ppm
from .network import PATCH, ModelConfig, SaMam, erf_map
from .scan_order import MODES, scan_paths
from .tensor import no_grad
from .train import LossRecord, train

log = logging.getLogger("samam")

CSV_FIELDS = [f.name for f in fields(LossRecord)]


class CliError(Exception):
    pass


def _seed(args) -> int:
    env = os.environ.get("SAMAM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"SAMAM_SEED must be an integer, got {env!r}") from None
    return args.seed


def _load_dir(path) -> list[np.ndarray]:
    files = list_images(path)
    if not files:
        raise CliError(f"no .ppm images in {path}")
    return [to_float(read_ppm(f)) for f in files]


def records_to_csv(records: list[LossRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: repr(v) for k, v in asdict(rec).items()})
    return buf.getvalue()


def records_from_csv(text: str) -> list[LossRecord]:
    rows = csv.DictReader(io.StringIO(text))
    return [LossRecord(int(r["iter"]), *(float(r[k]) for k in CSV_FIELDS[1:])) for r in rows]


def cmd_train(args) -> None:
    cfg = ModelConfig()
    if args.config:
        cfg = ModelConfig.from_text(Path(args.config).read_text())
    seed = _seed(args)
    cfg = cfg.replace(seed=seed)
    if args.scan_mode:
        cfg = cfg.replace(scan_mode=args.scan_mode)
    if args.size % PATCH:
        raise CliError(f"--size {args.size} must be divisible by {PATCH}")
    if args.iters < 0 or args.batch < 1:
        raise CliError("--iters must be >= 0 and --batch >= 1")
    contents = _load_dir(args.content_dir)
    styles = _load_dir(args.style_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def report(rec: LossRecord) -> None:
        if rec.iter % 10 == 0 or rec.iter == args.iters:
            log.info("iter %d  total %.3f  c %.3f  s %.3f  id1 %.3f  id2 %.3f",
                     rec.iter, rec.total, rec.content, rec.style, rec.id1, rec.id2)

    model, records = train(
        cfg, contents, styles, iters=args.iters, batch=args.batch, lr=args.lr, size=args.size, seed=seed, on_step=report
    )
    data = checkpoint.save(model, out / "model.ckpt")
    atomic_write_bytes(out / "losses.csv", records_to_csv(records).encode())
    manifest = {
        "config": asdict(cfg),
        "seed": seed,
        "checkpoint": "model.ckpt",
        "checkpoint_sha256": checkpoint.content_hash(data),
        "iters": args.iters,
        "batch": args.batch,
        "lr": args.lr,
        "size": args.size,
        "losses": "losses.csv",
    }
    atomic_write_bytes(out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
    print(out / "model.ckpt")


def _pad_to_patch(img: np.ndarray) -> np.ndarray:
    _, h, w = img.shape
    ph, pw = (-h) % PATCH, (-w) % PATCH
    if not (ph or pw):
        return img
    mode = "reflect" if h > ph and w > pw else "edge"
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode=mode)


def cmd_stylize(args) -> None:
    model = checkpoint.load(args.weights)
    content = to_float(read_ppm(args.content))
    style = to_float(read_ppm(args.style))
    _, h, w = content.shape
    with no_grad():
        out = model.stylize(_pad_to_patch(content), _pad_to_patch(style)).data[:, :h, :w]
    write_ppm(args.out, to_uint8(out))


def scan_order_image(height: int, width: int, mode: str, path: int) -> np.ndarray:
    """(H, W) visit order t / (L - 1); a 1x1 grid maps to 0."""
    p = {sp.path_index: sp for sp in scan_paths(mode, height, width)}[path]
    L = height * width
    order = p.inv.reshape(height, width).astype(float)
    return order / (L - 1) if L > 1 else order


def cmd_scan_viz(args) -> None:
    if not (1 <= args.height <= 256 and 1 <= args.width <= 256):
        raise CliError("--height and --width must be in 1..256")
    if args.path not in range(4):
        raise CliError(f"--path must be 0..3, got {args.path}")
    write_ppm(args.out, gray_to_uint8(scan_order_image(args.height, args.width, args.mode, args.path)))


def cmd_erf(args) -> None:
    if args.size % PATCH or args.size < PATCH:
        raise CliError(f"--size {args.size} must be a positive multiple of {PATCH}")
    if args.weights:
        if args.conv_only:
            raise CliError("--conv-only builds a fresh ablation model; omit --weights")
        model = checkpoint.load(args.weights)
    else:
        model = SaMam(ModelConfig(conv_only=args.conv_only, seed=_seed(args)))
    heat = erf_map(model, args.size)
    # darker means larger gradient
    write_ppm(args.out, gray_to_uint8(1.0 - heat))


def cmd_inspect(args) -> None:
    info = checkpoint.inspect(args.weights)
    width = max((len(n) for n, _, _ in info["tensors"]), default=4)
    for name, shape, size in info["tensors"]:
        print(f"{name:<{width}}  {'x'.join(map(str, shape)) or 'scalar':>16}  {size}")
    print(f"tensors: {len(info['tensors'])}")
    print(f"total parameters: {info['total']}")
    print(f"sha256: {info['sha256']}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="samam", description="Desk-scale state-space style transfer.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="toy training run")
    p.add_argument("--content-dir", required=True)
    p.add_argument("--style-dir", required=True)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--config", help="key=value model config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scan-mode", choices=MODES)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stylize", help="stylize one content image")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("scan-viz", help="render a scan path's visit order")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--mode", choices=MODES, default="zigzag")
    p.add_argument("--path", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan_viz)

    p = sub.add_parser("erf", help="effective receptive field of the centre output pixel")
    p.add_argument("--weights")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--conv-only", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_erf)

    p = sub.add_parser("inspect", help="validate a checkpoint and list its tensors")
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CliError, checkpoint.CheckpointError, ValueError, OSError) as exc:
        print(f"samam {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
