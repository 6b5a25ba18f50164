"""Command-line entry point: ``calreason <command> [options]``.

Every command works inside one output directory (``--out``, default ``run``)
laid out as ``data/``, ``checkpoints/``, ``logs/``, ``reports/``; relative
paths given to a command resolve against it.

Exit codes: 0 success, 1 stage failure or unparseable input, 2 bad usage,
bad config or missing input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .errors import CalreasonError, InvalidConfig, ParseError
from .evaluate import compare_reports, read_report
from .grammar import parse_partial
from .pipeline import (
    Layout,
    MissingInput,
    StageError,
    calibrate,
    evaluate,
    gen_data,
    load_checkpoint,
    load_data,
    reason,
    require,
    run_pipeline,
    warmup,
)
from .rewards import REWARD_MODES, RewardEngine

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _run_config(args) -> config_mod.RunConfig:
    cfg = config_mod.preset(args.preset)
    if args.config:
        cfg = config_mod.load(args.config, base=cfg)
    pairs = [tuple(s.split("=", 1)) for s in args.set or []]
    bad = [s for s, p in zip(args.set or [], pairs) if len(p) != 2]
    if bad:
        raise InvalidConfig(f"--set expects key=value, got {bad[0]!r}")
    flags = {
        "seed": args.seed, "n": args.n, "noise_level": args.noise_level,
        "reward_mode": getattr(args, "reward", None),
    }
    pairs += [(k, str(v)) for k, v in flags.items() if v is not None]
    for flag in ("skip_calibration", "skip_grpo", "freeze_condition_columns", "ablations"):
        if getattr(args, flag, False):
            pairs.append((flag, "true"))
    return config_mod.with_env(config_mod.apply_overrides(cfg, pairs))


def _print_json(obj):
    print(json.dumps(obj, indent=2))


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args, cfg, layout):
    split = gen_data(cfg, layout)
    print(f"wrote {len(split.train)} train / {len(split.test)} test records to {layout.data}")


def cmd_calibrate(args, cfg, layout):
    split = load_data(layout, "calibration")
    init = load_checkpoint(layout.resolve(args.init), "calibration") if args.init else None
    calibrate(cfg, layout, split, init=init)
    print(f"wrote {layout.checkpoint('calibration')}")


def cmd_warmup(args, cfg, layout):
    split = load_data(layout, "warmup")
    init = load_checkpoint(layout.resolve(args.init or "checkpoints/calibration.ckpt"), "warmup")
    warmup(cfg, layout, split, init)
    print(f"wrote {layout.checkpoint('warmup')}")


def cmd_grpo(args, cfg, layout):
    split = load_data(layout, "grpo")
    init = load_checkpoint(layout.resolve(args.init or "checkpoints/warmup.ckpt"), "grpo")
    reason(cfg, layout, split, init)
    print(f"wrote {layout.checkpoint('grpo')}")


def cmd_eval(args, cfg, layout):
    split = load_data(layout, "eval")
    path = layout.resolve(args.checkpoint)
    params = load_checkpoint(path, "eval")
    name = args.name or Path(path).stem
    report = evaluate(layout, split, params, name)
    _print_json(report.to_json())


def cmd_parse(args, cfg, layout):
    data = sys.stdin.buffer.read() if args.file == "-" else Path(args.file).read_bytes()
    part = parse_partial(data)
    doc = {
        "complete": part.complete,
        "scores": part.scores,
        "artifacts": [
            {"kind": a.kind, "start": a.start, "end": a.end, "description": a.description}
            for a in part.artifacts
        ],
        "summary": part.summary,
        "errors": [{"line_no": n, "line": line, "message": msg} for n, line, msg in part.errors],
        "warnings": list(part.warnings),
    }
    _print_json(doc)
    return EXIT_OK if part.complete else EXIT_FAIL


def cmd_reward(args, cfg, layout):
    split = load_data(layout, "reward")
    by_id = {r.id: r for r in (*split.train, *split.test)}
    if args.record not in by_id:
        raise MissingInput("reward", f"no record with id {args.record}")
    pred = require(Path(args.pred), "reward").read_text(encoding="utf-8")
    mode = args.mode or cfg.reward_mode
    bd = RewardEngine(mode, cfg.judge).score(pred, by_id[args.record])
    print(f"total {bd.total}")
    _print_json(bd.to_dict())


def cmd_pipeline(args, cfg, layout):
    result = run_pipeline(cfg, layout.root)
    for name, rep in result.reports.items():
        iou = "n/a" if rep.mean_iou is None else f"{rep.mean_iou:.4f}"
        pcc = "n/a" if rep.avg_pcc is None else f"{rep.avg_pcc:.4f}"
        print(f"{name:<18} avg_pcc {pcc}  mean_iou {iou}  rouge_l {rep.rouge_l:.4f}"
              f"  parse_failures {rep.n_parse_failures}/{rep.n_records}")
    print(f"reports in {layout.root / 'reports'}")


def cmd_compare(args, cfg, layout):
    a = read_report(require(layout.resolve(args.a), "compare"))
    b = read_report(require(layout.resolve(args.b), "compare"))
    _print_json(compare_reports(a, b))


def cmd_config(args, cfg, layout):
    sys.stdout.write(config_mod.dumps(cfg))


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="run", help="output directory (default: run)")
    common.add_argument("--preset", choices=config_mod.PRESETS, default="toy")
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--noise-level", type=float)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="calreason", description="calibration + GRPO reasoning pipeline on a synthetic quality-assessment task")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset").set_defaults(func=cmd_gen_data)

    s = sub.add_parser("calibrate", parents=[common], help="supervised training on score lines")
    s.add_argument("--init", help="start from this checkpoint instead of a fresh init")
    s.add_argument("--freeze-condition-columns", action="store_true")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("warmup", parents=[common], help="one supervised epoch on full assessments")
    s.add_argument("--init", help="checkpoint to start from (default: checkpoints/calibration.ckpt)")
    s.set_defaults(func=cmd_warmup)

    s = sub.add_parser("grpo", parents=[common], help="GRPO from the warm-up checkpoint")
    s.add_argument("--init", help="checkpoint to start from (default: checkpoints/warmup.ckpt)")
    s.add_argument("--reward", choices=REWARD_MODES)
    s.set_defaults(func=cmd_grpo)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--name", help="report name (default: checkpoint file stem)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("parse", parents=[common], help="parse an assessment text file ('-' for stdin)")
    s.add_argument("file")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("reward", parents=[common], help="score a prediction against a dataset record")
    s.add_argument("--mode", choices=REWARD_MODES)
    s.add_argument("--pred", required=True, help="file holding the generated assessment")
    s.add_argument("--record", type=int, required=True, help="record id")
    s.set_defaults(func=cmd_reward)

    s = sub.add_parser("pipeline", parents=[common], help="gen-data, calibrate, warmup, grpo, eval")
    s.add_argument("--reward", choices=REWARD_MODES)
    s.add_argument("--skip-calibration", action="store_true")
    s.add_argument("--skip-grpo", action="store_true")
    s.add_argument("--freeze-condition-columns", action="store_true")
    s.add_argument("--ablations", action="store_true", help="also run calibration-only, reasoning-only and encoder ablations")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("compare", parents=[common], help="signed per-metric deltas between two reports (b - a)")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_compare)

    sub.add_parser("config", parents=[common], help="print the effective config").set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
    except (CalreasonError, OSError) as e:
        print(f"error [config]: {e}", file=sys.stderr)
        return EXIT_USAGE
    layout = Layout(args.out)
    try:
        code = args.func(args, cfg, layout)
    except MissingInput as e:
        print(f"error {e}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as e:
        print(f"error {e}", file=sys.stderr)
        return EXIT_USAGE if e.stage == "config" else EXIT_FAIL
    except (ParseError, CalreasonError, OSError) as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
