"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from pairrl import harness
from pairrl.errors import PairRLError
from pairrl.ppo import TrainConfig, load_policy, train
from pairrl.splits import CLUTTER_LEVELS, SCENARIO_KINDS, build_splits, scenario

log = logging.getLogger("pairrl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; keep that code but raise instead
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--clip-c", dest="sens_clip", type=float)
    p.add_argument("--train-steps", type=int)
    p.add_argument("--head", choices=("discrete", "continuous"))
    p.add_argument("--view-mode", choices=("composite", "viewpoint"))


def _add_eval_flags(p: argparse.ArgumentParser, checkpoint_required: bool = True) -> None:
    p.add_argument("--checkpoint", type=Path, required=checkpoint_required, action="append",
                   help="checkpoint path; repeat for one checkpoint per seed")
    p.add_argument("--episodes", type=int, default=harness.DEFAULT_EPISODES)
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="evaluation seed; repeat for several (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pairrl", description="Paired-view PPO on a 2D tabletop task.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one policy")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="success rate on one scenario")
    _add_eval_flags(p)
    p.add_argument("--scenario", choices=SCENARIO_KINDS, default="train")
    p.add_argument("--n-distractors", type=int)
    p.add_argument("--camera-deg", type=float)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("suite", help="full OOD suite -> report.json")
    _add_eval_flags(p)
    p.add_argument("--baseline", type=Path, help="report.json to compute the average delta against")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep-alpha", help="train and evaluate alpha in {0,1,2,4} with beta=0")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--alphas", type=float, nargs="+", default=list(harness.ALPHA_GRID))
    p.add_argument("--episodes", type=int, default=harness.DEFAULT_EPISODES)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("clutter-curve", help="success against distractor count")
    p.add_argument("--method", action="append", required=True, metavar="NAME=CKPT[,CKPT...]",
                   help="method name and one checkpoint per seed")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--episodes", type=int, default=harness.DEFAULT_EPISODES)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("viewpoint", help="viewpoint-mode training vs PPO across camera angles")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--episodes", type=int, default=harness.DEFAULT_EPISODES)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("make-splits", help="write the split tables")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    return parser


def load_config(args: argparse.Namespace) -> TrainConfig:
    """File values first, then explicit CLI flags."""
    base = json.loads(args.config.read_text(encoding="utf-8")) if getattr(args, "config", None) else {}
    for key in ("seed", "alpha", "beta", "sens_clip", "train_steps", "head", "view_mode"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return TrainConfig.from_json(base)


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        harness.write_text(path, text)


def _policies(paths: Sequence[Path], n_seeds: int):
    pols = [load_policy(p) for p in paths]
    if len(pols) == 1:
        return pols * n_seeds
    if len(pols) != n_seeds:
        raise UsageError("give one checkpoint, or one checkpoint per seed")
    return pols


def _env_config_for(checkpoint: Path):
    """The run's config.json next to the checkpoint, else defaults matching the head."""
    cfg_path = checkpoint.parent / "config.json"
    if cfg_path.exists():
        return TrainConfig.load(cfg_path).env_config()
    pol = load_policy(checkpoint)
    return TrainConfig(head=pol.head).env_config()


def cmd_train(args) -> int:
    cfg = load_config(args)
    log.info("training %s", json.dumps(cfg.to_json(), sort_keys=True))
    train(cfg, out_dir=args.out, progress=lambda r: log.info("update %d success %.3f", r["step"],
                                                             r["rollout_success_rate"]))
    return 0


def cmd_eval(args) -> int:
    seeds = args.seeds or [0]
    env_cfg = _env_config_for(args.checkpoint[0])
    cam = None if args.camera_deg is None else (args.camera_deg,)
    spec = scenario(args.scenario, env_cfg.splits, n_distractors=args.n_distractors, camera_deg=cam)
    pols = _policies(args.checkpoint, len(seeds))
    rates = [harness.evaluate(p, env_cfg, spec, args.episodes, s) for p, s in zip(pols, seeds)]
    out = {"scenario": spec.to_json(), "episodes": args.episodes, "seeds": seeds,
           "success": [harness.sig6(r) for r in rates], "mean": harness.sig6(sum(rates) / len(rates))}
    _write(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_suite(args) -> int:
    seeds = args.seeds or [0]
    env_cfg = _env_config_for(args.checkpoint[0])
    report = harness.run_ood_suite(_policies(args.checkpoint, len(seeds)), env_cfg, seeds, args.episodes)
    if args.baseline is not None:
        report = report.with_baseline(harness.EvalReport.load(args.baseline), str(args.baseline))
    out = args.out / "report.json" if args.out is not None and args.out.suffix != ".json" else args.out
    _write(out, report.dumps())
    return 0


def cmd_sweep_alpha(args) -> int:
    cfg = load_config(args)
    reports = harness.run_alpha_sweep(cfg, args.alphas, args.seeds, args.episodes)
    for a, rep in reports.items():
        harness.write_text(args.out / f"alpha_{a:g}" / "report.json", rep.dumps())
    harness.write_text(args.out / "alpha_sweep.csv", harness.long_csv(harness.alpha_sweep_rows(reports)))
    rows = [harness.curve_row("alpha_sweep", a, [r["avg"] for r in rep.per_seed]) for a, rep in reports.items()]
    harness.write_text(args.out / "alpha_curve.csv", harness.curve_csv(rows))
    return 0


def cmd_clutter_curve(args) -> int:
    methods = {}
    env_cfg = None
    for item in args.method:
        name, sep, paths = item.partition("=")
        if not sep or not paths:
            raise UsageError(f"--method expects NAME=CKPT[,CKPT...], got {item!r}")
        ckpts = [Path(p) for p in paths.split(",")]
        env_cfg = env_cfg or _env_config_for(ckpts[0])
        methods[name] = _policies(ckpts, len(args.seeds))
    rows = harness.clutter_curve(methods, env_cfg, args.seeds, CLUTTER_LEVELS, args.episodes)
    harness.write_text(args.out / "clutter_curve.csv", harness.curve_csv(rows))
    return 0


def cmd_viewpoint(args) -> int:
    cfg = load_config(args)
    res = harness.run_viewpoint_extrapolation(cfg, args.seeds, args.episodes)
    harness.write_text(args.out / "viewpoint_curve.csv", harness.curve_csv(res["rows"]))
    summary = {m: {k: harness.sig6(v) for k, v in s.items()} for m, s in res["summary"].items()}
    harness.write_text(args.out / "viewpoint_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_make_splits(args) -> int:
    _write(args.out, json.dumps(build_splits(args.seed).to_json(), indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "suite": cmd_suite, "sweep-alpha": cmd_sweep_alpha,
    "clutter-curve": cmd_clutter_curve, "viewpoint": cmd_viewpoint, "make-splits": cmd_make_splits,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pairrl {args.command}: {exc}", file=sys.stderr)
        return 2
    except (PairRLError, OSError, ValueError, KeyError) as exc:
        print(f"pairrl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
