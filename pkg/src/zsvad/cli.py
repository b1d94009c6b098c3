"""Command-line entry point: ``zsvad <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 provider error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import dump_config, load_config
from .errors import ContractViolation, StageError, ZsvadError
from . import pipeline


def _with_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace("run", seed=args.seed)
    if getattr(args, "ratio", None) is not None:
        cfg = cfg.replace("compression", ratio=args.ratio)
    if getattr(args, "k", None) is not None:
        cfg = cfg.replace("compression", k=args.k)
    if getattr(args, "provider", None) is not None:
        cfg = cfg.replace("semantic", provider=args.provider)
    if getattr(args, "workers", None) is not None:
        cfg = cfg.replace("run", workers=args.workers)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsvad", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI config file (defaults apply to missing keys)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="relabel segmentation samples into pseudo-anomaly samples")
    p.add_argument("--input", required=True, help="source manifest (JSON lines)")
    p.add_argument("--output", required=True, help="exposure manifest to write")
    p.add_argument("--sampler-seed", type=int)
    p.add_argument("--max-categories", type=int, help="upper bound of the injected category count")
    p.add_argument("--anomaly-probability", type=float)

    p = sub.add_parser("compress", help="compress a binary token dump")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="compressed tokens; a .json sidecar is written next to it")
    p.add_argument("--ratio", type=float)
    p.add_argument("-k", type=int)

    p = sub.add_parser("detect", help="score the videos of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--provider", choices=("synthetic", "fixture", "subprocess", "oracle"))
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("eval", help="recompute metrics from detect outputs")
    p.add_argument("--scores", required=True, help="directory written by detect")
    p.add_argument("--manifest", required=True, help="ground-truth manifest")
    p.add_argument("--output", help="directory for metrics.json (default: --scores)")

    p = sub.add_parser("synth", help="write a synthetic test suite")
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)

    sub.add_parser("config", help="print the default configuration")
    return parser


def run(args) -> int:
    cfg = load_config(args.config)
    if args.command == "config":
        print(dump_config(cfg), end="")
        return 0
    cfg = _with_overrides(cfg, args)
    if args.command == "sample":
        changes = {"seed": args.sampler_seed, "max_categories": args.max_categories,
                   "anomaly_probability": args.anomaly_probability}
        changes = {k: v for k, v in changes.items() if v is not None}
        if changes:
            cfg = cfg.replace("sampler", **changes)
        pipeline.run_sampler(cfg, args.input, args.output)
    elif args.command == "compress":
        pipeline.run_compress(cfg, args.input, args.output)
    elif args.command == "detect":
        metrics = pipeline.run_detect(cfg, args.manifest, args.output)
        print(json.dumps(metrics, sort_keys=True))
    elif args.command == "eval":
        metrics = pipeline.run_eval(cfg, args.scores, args.manifest, args.output)
        print(json.dumps(metrics, sort_keys=True))
    elif args.command == "synth":
        path = pipeline.run_synth(args.output, args.count, args.seed, args.frames, args.height, args.width)
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ZsvadError, ContractViolation) as exc:
        module = exc.module if isinstance(exc, StageError) else None
        code = exc.exit_code
        print(json.dumps({"error": str(exc), "type": type(exc).__name__, "module": module,
                          "exit_code": code}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
