"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 training
fault or missing/incompatible checkpoints.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import (ConfigError, DecodeError, DegenerateStatisticError, DomainError, GenerationError,
                      InsufficientDataError, ParseError, StateError, StuckError, TrainingFault)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3
ABLATIONS = ("without_sg_net", "without_micro", "without_ll_prior")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--seed", type=int, help="sets the dataset, training and eval seeds")
    p.add_argument("--out", help="run directory (default runs/default)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="msforecast", parents=[common],
                     description="Multi-scale trajectory forecasting: simulate, train, evaluate, compare.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="build a synthetic navigation dataset")
    s.add_argument("--workers", type=int)

    t = sub.add_parser("train", parents=[common], help="train one stage or all stages")
    t.add_argument("--stage", choices=("pretrain", "lg", "sg", "micro", "all"), default="all")
    t.add_argument("--ablation", nargs="+", choices=ABLATIONS, default=[])

    e = sub.add_parser("evaluate", parents=[common], help="forecast the eval split and write metrics")
    e.add_argument("--k", type=int, nargs="+", help="samples per scene (default: config k_list)")
    e.add_argument("--ablation", nargs="+", choices=ABLATIONS, default=[])
    e.add_argument("--max-scenes", type=int)
    e.add_argument("--degenerate-prior", action="store_true", help="zero prior spread (diagnostic)")

    st = sub.add_parser("stats", parents=[common], help="significance analysis over metric CSVs")
    st.add_argument("--inputs", nargs="+", required=True)
    st.add_argument("--names", nargs="+")
    st.add_argument("--metric", default="ade", help="ade, fde, nll, ecfl or all")
    st.add_argument("--rope", default="auto", help="'auto' or a number")
    st.add_argument("--units", choices=("meters", "pixels"))
    st.add_argument("--mc-samples", type=int, default=50_000)

    pl = sub.add_parser("plot", parents=[common], help="heatmap and trajectory overlay PNG for a scene")
    pl.add_argument("--scene", required=True)
    pl.add_argument("--k", type=int, default=5)
    pl.add_argument("--ablation", nargs="+", choices=ABLATIONS, default=[])

    ins = sub.add_parser("inspect", parents=[common], help="dump a scene's heatmap stack as PGMs")
    ins.add_argument("--scene", required=True)
    return parser


def _config(args):
    from .config import load_config, resolve_config_path
    cfg = load_config(resolve_config_path(getattr(args, "config", None)))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "ablation", None):
        cfg = cfg.with_ablation(args.ablation)
    return cfg


def _cmd_simulate(args, cfg, run_dir: Path) -> None:
    from ..envsim import DatasetSpec, SocialForceParams, build_dataset
    from .train import data_dir
    d = cfg.dataset
    spec = DatasetSpec(env_counts=tuple(d.env_counts), scenes_per_env=d.scenes_per_env, seed=d.data_seed,
                       window_stride=d.window_stride, grid_size=tuple(d.grid_size),
                       workers=getattr(args, "workers", None) or d.workers)
    summary = build_dataset(data_dir(cfg, run_dir), spec, SocialForceParams(px_per_meter=d.px_per_meter))
    print(f"wrote {summary['records']} scenes from {summary['paths']} walks in {summary['envs']} environments "
          f"to {data_dir(cfg, run_dir)}")


def _cmd_train(args, cfg, run_dir: Path) -> None:
    from .train import active_stages, train_all
    stages = active_stages(cfg) if args.stage == "all" else (args.stage,)
    for stage, digest in train_all(cfg, run_dir, stages).items():
        print(f"{stage}: {digest}")


def _cmd_evaluate(args, cfg, run_dir: Path) -> None:
    from .evaluate import evaluate
    if args.max_scenes is not None:
        cfg = replace(cfg, eval=replace(cfg.eval, max_eval_scenes=args.max_scenes))
    if args.degenerate_prior:
        cfg = replace(cfg, eval=replace(cfg.eval, degenerate_prior=True))
    for k in args.k or cfg.eval.k_list:
        report = evaluate(cfg, run_dir, k)
        agg = ", ".join(f"{m}={v:.4f}" for m, v in report.aggregate.items())
        print(f"K={k} ablation={report.ablation}: {agg}")


def _cmd_stats(args, cfg, run_dir: Path) -> None:
    from .significance import build_report
    rope = args.rope if args.rope == "auto" else _float(args.rope, "--rope")
    report = build_report(args.inputs, args.names, args.metric, rope, args.units or cfg.dataset.units,
                          args.mc_samples, cfg.eval.eval_seed)
    report.write(run_dir / "stats")
    sys.stdout.write(report.markdown())


def _cmd_plot(args, cfg, run_dir: Path) -> None:
    from .plot import plot_scene
    png = plot_scene(cfg, run_dir, args.scene, args.k, run_dir / "plots" / f"{args.scene}_k{args.k}.png")
    print(png)


def _cmd_inspect(args, cfg, run_dir: Path) -> None:
    from .plot import inspect_scene
    summary = inspect_scene(cfg, run_dir, args.scene, run_dir / "inspect" / args.scene)
    print(json.dumps(summary, indent=2))


def _float(text, flag):
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{flag} expects 'auto' or a number, got {text!r}") from None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run_dir = Path(getattr(args, "out", None) or "runs/default")
    try:
        cfg = _config(args)
        globals()[f"_cmd_{args.command}"](args, cfg, run_dir)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingFault, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (ParseError, DomainError, GenerationError, StuckError, DecodeError, InsufficientDataError,
            DegenerateStatisticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
