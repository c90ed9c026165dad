"""``conceptinc`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConceptIncError, NumericError
from ..inference.regions import ATTENTION_KINDS, RegionCondition
from . import artifacts
from .commands import (METHODS, cmd_eval_forgetting, cmd_inspect, cmd_learn, cmd_merge_info, cmd_sample,
                       learn_sequence, load_model, write_report)
from .config import load_run_config

log = logging.getLogger("conceptinc")

EXIT_USAGE, EXIT_ERROR, EXIT_NUMERIC = 2, 3, 4


def _region(text: str) -> RegionCondition:
    try:
        return RegionCondition.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration (defaults to the built-in toy run)")
    common.add_argument("--seed", type=int, help="root seed for training and sampling (default 0)")
    common.add_argument("--out", type=Path, help="output directory (overrides [paths] out)")
    common.add_argument("-v", "--verbose", action="store_true")

    guide = argparse.ArgumentParser(add_help=False)
    guide.add_argument("--alpha", type=float, help="weight of the global estimate when regions are given")
    guide.add_argument("--scale", type=float, help="classifier-free guidance scale")
    guide.add_argument("--attention", choices=ATTENTION_KINDS, help="region attention normalization")
    guide.add_argument("--steps", type=int, help="sampler steps (default: every training timestep)")

    p = argparse.ArgumentParser(prog="conceptinc", description="Concept-incremental LoRA customization of a toy diffusion model")
    sub = p.add_subparsers(dest="verb", required=True)

    learn = sub.add_parser("learn", parents=[common], help="learn one task (or all remaining ones)")
    learn.add_argument("task", help="1-based task index, or 'all'")
    learn.add_argument("--method", choices=METHODS, default="cidm")
    learn.add_argument("--force", action="store_true", help="relearn a stored task, discarding it and later ones")

    smp = sub.add_parser("sample", parents=[common, guide], help="sample a prompt, optionally with regions")
    smp.add_argument("prompt")
    smp.add_argument("--region", type=_region, action="append", default=[],
                     help="'tokens@top,left,h,w' (repeatable)")
    smp.add_argument("--method", choices=METHODS, default="cidm")
    smp.add_argument("-n", type=int, default=1, help="number of latents")
    smp.add_argument("--stem", default="sample", help="output file stem")

    mi = sub.add_parser("merge-info", parents=[common], help="show merge relations and weights for a prompt")
    mi.add_argument("prompt")

    ev = sub.add_parser("eval-forgetting", parents=[common, guide], help="compare the method with the baseline")
    ev.add_argument("--learn", action="store_true", help="learn any missing tasks of both methods first")

    sub.add_parser("inspect", parents=[common], help="summarize config, base and stores")
    return p


def _config(args):
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "scale", None) is not None or getattr(args, "alpha", None) is not None \
            or getattr(args, "attention", None) is not None or getattr(args, "steps", None) is not None:
        cfg = cfg.with_guidance(scale=args.scale, alpha=args.alpha, attention=args.attention, steps=args.steps)
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = _config(args)
    out = args.out
    if args.verb == "learn":
        if args.task == "all":
            learn_sequence(cfg, args.method)
            print(f"{args.method}: {len(cfg.tasks)} tasks learned in {cfg.store}")
        else:
            try:
                index = int(args.task)
            except ValueError:
                print(f"error: task must be an integer or 'all', got {args.task!r}", file=sys.stderr)
                return EXIT_USAGE
            tl = cmd_learn(cfg, index, args.method, force=args.force)
            print(f"{args.method}: task {tl.task_id} learned ({', '.join(tl.token_names())})")
    elif args.verb == "sample":
        res = cmd_sample(cfg, args.prompt, args.region, args.method, n=args.n, out=out, stem=args.stem)
        for f in res.files:
            print(f)
        for note in res.notes:
            print(f"note: {note}")
    elif args.verb == "merge-info":
        print(cmd_merge_info(cfg, args.prompt).to_text(), end="")
    elif args.verb == "eval-forgetting":
        model = load_model(cfg)
        if args.learn:
            for m in METHODS:
                learn_sequence(cfg, m, model)
        report = cmd_eval_forgetting(cfg, model)
        path = write_report(cfg, report, out)
        print(report.to_json(), end="")
        print(path)
    elif args.verb == "inspect":
        text = cmd_inspect(cfg)
        print(text, end="")
        if out is not None:
            artifacts.write_text(Path(out) / "inspect.txt", text, cfg.digest(), cfg.seed)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConceptIncError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
