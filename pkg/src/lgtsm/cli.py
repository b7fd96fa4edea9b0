"""Command-line entry point: ``lgtsm <subcommand> ...``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
The LGTSM_THREADS environment variable caps BLAS worker threads.
"""
from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shape(text: str):
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected BxLxHxW, got {text!r}") from None
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected four positive sizes BxLxHxW, got {text!r}")
    return dims


def _size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _ratio(text: str):
    lo, sep, hi = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lgtsm", description="Learnable gated temporal shift video inpainting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--resume", help="continue the same stage from this checkpoint")
    t.add_argument("--init", help="start the configured stage from another stage's checkpoint")
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
    t.add_argument("--quiet", action="store_true")

    i = sub.add_parser("inpaint", help="fill masked regions of a frame directory")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--frames", required=True, help="directory of frame_%%05d.ppm")
    i.add_argument("--masks", required=True, help="directory of frame_%%05d.pbm")
    i.add_argument("--out", required=True)
    i.add_argument("--causal", action="store_true", help="never read future frames")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites (float64)")
    g.add_argument("--component", default="all",
                   choices=["ops", "layer", "generator", "losses", "discriminator", "all"])
    g.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("paramreport", help="parameter counts and forward timing")
    r.add_argument("--shape", type=_shape, default=(1, 8, 64, 64), help="BxLxHxW (default 1x8x64x64)")
    r.add_argument("--repeats", type=int, default=5)
    r.add_argument("--base-channels", type=int, default=32)
    r.add_argument("--no-timing", action="store_true")

    e = sub.add_parser("evaluate", help="per-mask-ratio-bucket MSE and PROXY distance")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="dataset manifest, or synthetic:N")
    e.add_argument("--buckets", type=int, default=7)
    e.add_argument("--kind", default="stroke", choices=["stroke", "bbox", "object_like"])
    e.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("maskgen", help="write a mask video as PBM frames")
    m.add_argument("--kind", default="stroke", choices=["stroke", "bbox", "object_like"])
    m.add_argument("--ratio", type=_ratio, required=True, help="lo:hi")
    m.add_argument("--out", required=True)
    m.add_argument("--frames", type=int, default=8)
    m.add_argument("--size", type=_size, default=(64, 64), help="HxW")
    m.add_argument("--motion", type=float, default=2.0)
    m.add_argument("--seed", type=int, default=0)
    return p


def _threads():
    raw = os.environ.get("LGTSM_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"LGTSM_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def cmd_train(args) -> int:
    from .train import TrainConfig, train
    cfg = TrainConfig.load(args.config)
    overrides = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = val.strip()
    if overrides:
        cfg = TrainConfig.from_dict(overrides, base=cfg)
    tr = train(cfg, resume=args.resume, init=args.init, out_dir=args.out, verbose=not args.quiet)
    print(f"finished {tr.stage} at step {tr.step}; checkpoint: {tr.last_good}")
    return EXIT_OK


def cmd_inpaint(args) -> int:
    from .inference import inpaint
    paths = inpaint(args.ckpt, args.frames, args.masks, args.out, causal=args.causal)
    print(f"wrote {len(paths)} frames to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_report, run_suite
    results = run_suite(args.component, seed=args.seed)
    print(format_report(results), end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_paramreport(args) -> int:
    from .inference import format_paramreport, paramreport
    from .networks import GeneratorConfig
    if args.repeats < 1:
        raise UsageError("--repeats must be positive")
    B, L, H, W = args.shape
    if H % 4 or W % 4:
        raise UsageError("H and W must be multiples of 4")
    rep = paramreport(args.shape, GeneratorConfig(base_channels=args.base_channels), args.repeats,
                      timing=not args.no_timing)
    print(format_paramreport(rep), end="")
    return EXIT_OK


def _eval_clips(spec: str, ck):
    from .data import load_dataset, synthetic_dataset
    from .train import TrainConfig
    if spec.startswith("synthetic"):
        _, _, n = spec.partition(":")
        cfg = TrainConfig.from_dict(ck.meta["config"])
        return synthetic_dataset(int(n or 8), seed=cfg.seed + 20011, L=cfg.clip_len, H=cfg.height, W=cfg.width)
    return load_dataset(spec)


def cmd_evaluate(args) -> int:
    from .checkpoint import load_checkpoint
    from .inference import evaluate_checkpoint
    if not 1 <= args.buckets <= 7:
        raise UsageError("--buckets must be in 1..7")
    ck = load_checkpoint(args.ckpt)
    clips = _eval_clips(args.data, ck)
    rep = evaluate_checkpoint(ck, clips, args.buckets, seed=args.seed)
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_maskgen(args) -> int:
    from .maskgen import MaskSpec, generate_mask
    H, W = args.size
    spec = MaskSpec(args.kind, args.ratio, args.motion, args.seed)
    mask = generate_mask(spec, args.frames, H, W)
    mask.save(args.out)
    print(f"wrote {args.frames} mask frames to {args.out} (ratio {mask.ratio:.4f})")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "inpaint": cmd_inpaint, "gradcheck": cmd_gradcheck,
            "paramreport": cmd_paramreport, "evaluate": cmd_evaluate, "maskgen": cmd_maskgen}


def main(argv=None) -> int:
    from .autograd import NonFiniteError
    from .checkpoint import CheckpointError
    from .maskgen import MaskRatioError
    from .netpbm import NetpbmError
    from .train import ConfigError, StageMismatchError, TrainingDiverged

    args = build_parser().parse_args(argv)
    try:
        with _threads():
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError, StageMismatchError) as e:
        print(f"lgtsm {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as e:
        print(f"lgtsm {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NetpbmError, CheckpointError, MaskRatioError, FileNotFoundError, NotADirectoryError,
            ValueError, KeyError) as e:
        print(f"lgtsm {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
