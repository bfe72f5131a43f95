"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .synth import save_scene, make_corpus

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def _config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    scenes = make_corpus(cfg.scene, args.count, seed_offset=args.offset)
    for i, scene in enumerate(scenes):
        save_scene(scene, out / f"scene_{i:04d}")
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import format_table, heldout_corpus, train

    cfg = _config(args)
    out = Path(args.out or cfg.output_dir)
    log = (lambda e: print(json.dumps(e), flush=True)) if not args.quiet else None
    eval_set = heldout_corpus(cfg) if cfg.test_scenes > 0 else None
    _, record = train(cfg, output_dir=out, eval_corpus=eval_set, log=log)
    if record.evals:
        print(format_table([{"variant": "point_only", **record.evals[-1]}]))
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import evaluate, heldout_corpus, load_model

    model = load_model(args.checkpoint, _config(args) if (args.config or args.set) else None)
    corpus = heldout_corpus(model.cfg)
    result = {"point": evaluate(model, corpus, args.mode).as_dict()}
    if args.mode == "dual":
        result["image"] = evaluate(model, corpus, "dual", head="image").as_dict()
    _print_json(result)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .trainer import ablate, format_table

    cfg = _config(args)
    rows = ablate(cfg, args.axis, log=None if args.quiet else (lambda r: print(json.dumps(r), flush=True)))
    print(format_table(rows))
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
    return EXIT_OK


def _labels(text: str) -> np.ndarray:
    path = Path(text)
    if path.exists():
        text = path.read_text()
    tokens = text.replace(",", " ").split()
    if not tokens:
        raise ConfigError("empty label sequence")
    try:
        return np.array([int(t) for t in tokens])
    except ValueError:
        raise ConfigError(f"labels must be integers: {text!r}") from None


def cmd_metrics(args) -> int:
    from .metrics import evaluate_sequences, mean_iou

    pred, gt = _labels(args.pred), _labels(args.gt)
    if pred.shape != gt.shape:
        raise ConfigError(f"pred and gt lengths differ ({pred.size} vs {gt.size})")
    report = evaluate_sequences([pred], [gt])
    if args.num_classes:
        report.miou = mean_iou(pred, gt, args.num_classes)
    _print_json(report.as_dict())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import CASES, run_gradchecks

    names = args.only or None
    if names:
        unknown = sorted(set(names) - set(CASES))
        if unknown:
            raise ConfigError(f"unknown gradcheck case(s): {unknown}")
    errors = run_gradchecks(range(args.seeds), names)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:<36} {err:.2e} {'ok' if err < args.tol else 'FAIL'}")
    print(f"worst relative error {worst:.2e} (tolerance {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xmodal4d", description="Cross-modal 4D point-cloud training on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key=value config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
            p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        return p

    p = common(sub.add_parser("synth", help="write synthetic scenes to disk"))
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--offset", type=int, default=0, help="seed offset of the first scene")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("train", help="train a model and write a run directory"))
    p.add_argument("--out", help="run directory (defaults to output_dir)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint on the held-out corpus"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("point_only", "dual"), default="point_only")
    p.set_defaults(func=cmd_eval)

    from .trainer import ABLATION_AXES

    p = common(sub.add_parser("ablate", help="train and compare the variants of one axis"))
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--out", help="write the table rows as JSON")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="score a predicted frame-label sequence")
    p.add_argument("--pred", required=True, help="comma/space separated labels or a file")
    p.add_argument("--gt", required=True, help="comma/space separated labels or a file")
    p.add_argument("--num-classes", type=int, default=0, help="also report mIoU over this many classes")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every op and loss")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--only", nargs="*", help="restrict to these case names")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .trainer import CheckpointMismatch, NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
