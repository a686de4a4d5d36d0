#!/usr/bin/env python3
import os
import sys
import argparse
from datetime import datetime

import numpy as np

from checkpoint import export_packed, format_footprint, load_checkpoint
from idx_data import load_idx_images, load_split, subsample
from operators.encoding import EncodingConfig, encode_image
from operators.errors import SpikeEngineError
from run_config import DATA_DIR_ENV, RunConfig
from trainer import Trainer, evaluate
from verifier import run_all


def cmd_train(args, verbose):
    overrides = {}
    if args.binary:
        overrides["mode"] = "binary"
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = RunConfig.from_file(args.config, overrides)
    out_dir = args.out or os.path.join("runs", os.path.splitext(os.path.basename(args.config))[0])

    print(f"training {config.architecture} ({config.mode}, seed {config.seed}) -> {out_dir}")
    ckpt_path, metrics = Trainer(config, data_dir=args.data, out_dir=out_dir, verbose=verbose).train()
    print(f"best test accuracy: {metrics.accuracy:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_eval(args, verbose):
    a = datetime.now()
    network = load_checkpoint(args.checkpoint)
    data_dir = args.data or os.environ.get(DATA_DIR_ENV, "data")
    dataset = load_split(data_dir, args.split)
    if args.size:
        dataset = subsample(dataset, args.size)
    metrics = evaluate(network, dataset, threads=args.threads, verbose=verbose)
    print(metrics.summary_text(), end="")
    if args.metrics_out:
        for path in metrics.write(args.metrics_out):
            if verbose:
                print(f"wrote {path}")
    if verbose:
        print(f"evaluated {len(dataset)} samples: {datetime.now() - a}")
    return 0


def cmd_encode(args, verbose):
    if args.image.endswith(".npy"):
        images = np.load(args.image)
    else:
        images = load_idx_images(args.image)
    image = images[args.index] if images.ndim == 3 else images
    raster = encode_image(image, EncodingConfig(t_max=args.t_max, intensity_max=args.intensity_max))
    width = len(str(args.t_max))
    for row in np.atleast_2d(raster.times):
        print(" ".join("." * width if t < 0 else f"{t:>{width}d}" for t in row))
    if verbose:
        print(f"{raster.count()} of {raster.times.size} inputs spike")
    return 0


def cmd_pack(args, verbose):
    report = export_packed(args.checkpoint, args.out)
    print(format_footprint(report))
    return 0


def cmd_verify(args, verbose):
    a = datetime.now()
    report = run_all(n_cases=args.cases, smoke=not args.no_smoke, verbose=verbose)
    for name, result in report["results"].items():
        print(f"{name}: {'PASS' if result['pass'] else 'FAIL'}")
        for e in result["errors"]:
            print(f"  {e}")
    if not report["results"]["sign_convention"]["pass"]:
        print("hint: set 'eta_sign = -1' in the run config to flip the weight update")
    print(f"{'PASSED' if report['pass'] else 'FAILED'}: {datetime.now() - a}")
    return 0 if report["pass"] else 1


def build_parser():
    parser = argparse.ArgumentParser(description="Single-spike temporal-coded SNN training")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    p = sub.add_parser("train")
    p.add_argument("--config", required=True)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--metrics-out")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--size", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("encode")
    p.add_argument("--image", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--t-max", type=int, default=100)
    p.add_argument("--intensity-max", type=int, default=255)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("pack")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("verify")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--no-smoke", action="store_true")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    # note that the cli argument is --quiet but from here on the argument passed around is "verbose"
    verbose = not args.quiet
    try:
        return args.func(args, verbose)
    except (SpikeEngineError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
