"""``lal`` command line: gen, train, sweep, denoise, eval.

Exit status 2 means a usage error, 1 a runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as lio
from .metrics import compute_metrics, eval_against_gt
from .phantom import generate_phantom
from .sweep import DegenerateCurveError, denoise, recommend_w, sweep, uncertainty_map, worker_count
from .training import LabelPair, train

log = logging.getLogger("lal")


def cmd_gen(args) -> None:
    cfg = lio.load_run_config(args.config).phantom
    out = Path(args.out)
    seeds = [cfg.seed + i for i in range(args.count)]

    def one(i_seed):
        i, seed = i_seed
        image, labels = generate_phantom(cfg, seed)
        d = out / f"sample_{i:04d}"
        lio.write_image(d / "image.pgm", image)
        lio.write_mask(d / "pixel.pgm", labels.pixel)
        lio.write_mask(d / "skeleton.pgm", labels.skeleton)

    with ThreadPoolExecutor(worker_count()) as pool:
        list(pool.map(one, enumerate(seeds)))


def load_dataset(directory) -> list[tuple[np.ndarray, LabelPair]]:
    samples = sorted(p for p in Path(directory).iterdir() if (p / "image.pgm").exists())
    if not samples:
        raise FileNotFoundError(f"no sample directories with image.pgm under {directory}")
    return [
        (lio.read_image(p / "image.pgm"),
         LabelPair(lio.read_mask(p / "pixel.pgm"), lio.read_mask(p / "skeleton.pgm")))
        for p in samples
    ]


def cmd_train(args) -> None:
    cfg = lio.load_run_config(args.config)
    data = load_dataset(args.data)
    params, history = train(data, cfg.train, cfg.network,
                            on_epoch=lambda e, l: log.info("epoch %d  loss %.6f", e, l))
    lio.save_checkpoint(args.out, params)
    if args.log:
        lio.write_atomic(args.log, lio.loss_log_csv(history))


def _recommend_report(w_star, diag, error) -> str:
    if error is not None:
        return f"{error}\n"
    lines = [f"w_star = {w_star:.2f}", f"max_curvature = {diag['max_curvature']!r}",
             "w,vdi,vdi_smooth,curvature"]
    for w, v, s, k in zip(diag["grid"], diag["vdi"], diag["vdi_smooth"], diag["curvature"]):
        lines.append(f"{w!r},{v!r},{s!r},{'' if np.isnan(k) else repr(float(k))}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> None:
    cfg = lio.load_run_config(args.config).sweep if args.config else lio.SweepConfig()
    step = cfg.step if args.step is None else args.step
    threshold = cfg.threshold if args.threshold is None else args.threshold
    params = lio.load_checkpoint(args.ckpt)
    image = lio.read_image(args.image)
    gt = lio.read_mask(args.gt) if args.gt else None
    result = sweep(params, image, step=step, threshold=threshold, gt=gt)
    out = Path(args.out)
    for w, mask in zip(result.grid, result.masks):
        lio.write_mask(out / "masks" / f"w_{w:.2f}.pgm", mask)
    lio.write_atomic(out / "curves.csv", lio.metrics_csv(list(zip(result.grid, result.records))))
    u = uncertainty_map(result)
    lio.write_image(out / "uncertainty.pgm", u)
    try:
        w_star, diag = recommend_w(result)
        error = None
    except DegenerateCurveError as exc:
        w_star, diag, error = None, None, exc
    lio.write_atomic(out / "recommend.txt", _recommend_report(w_star, diag, error).encode())
    if w_star is not None:
        mask, _ = result.at(w_star)
        lio.write_mask(out / "recommended.pgm", mask)
        lio.write_mask(out / "recommended_denoised.pgm", denoise(mask, u))


def cmd_denoise(args) -> None:
    mask = lio.read_mask(args.mask)
    u = lio.read_image(args.uncertainty)
    lio.write_mask(args.out, denoise(mask, u))


def cmd_eval(args) -> None:
    pred = lio.read_mask(args.pred)
    gt = lio.read_mask(args.gt)
    rec = compute_metrics(pred, gt=gt)
    rows = [(None, rec)]
    if args.gt_skeleton:
        sk_rec = compute_metrics(pred)
        sk_rec.dice, sk_rec.accuracy = eval_against_gt(pred, lio.read_mask(args.gt_skeleton))
        rows.append((None, sk_rec))
    sys.stdout.write(lio.metrics_csv(rows).decode())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write synthetic phantoms")
    g.add_argument("--config")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train UNet-LAL on a phantom directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="sweep the adversarial weight on one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--step", type=float)
    s.add_argument("--threshold", type=float)
    s.add_argument("--gt", help="pixel-level label; fills the dice/accuracy columns")
    s.add_argument("--config")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("denoise", help="remove small, uncertain components")
    d.add_argument("--mask", required=True)
    d.add_argument("--uncertainty", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("eval", help="print the metric record of a mask")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--gt-skeleton")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"lal {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
