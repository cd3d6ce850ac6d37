"""Command-line entry point.

    masla run --config exp.ini [--out DIR] [--seed U64] [--scale F] [--workers N] [--plot]
    masla figure fig5 [--out DIR] [--scale F] [--iters N] [--workers N] [--plot]
    masla list targets|kernels|figures

Errors are reported on stderr as ``<category>: <message>`` with a nonzero
exit status: 2 for usage and configuration problems, 3 for unsupported
kernel/target combinations, 4 for I/O failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .experiments import FIGURES, emit_figure_data, run_experiment
from .kernel import ConfigurationError, Variant
from .potential import TARGETS, Unsupported

__all__ = ["main", "build_parser"]


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive(kind):
    def parse(text: str):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masla", description="Subdifferential Langevin samplers and experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a configuration file")
    run.add_argument("--config", required=True, help="path to the configuration file")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seed", type=_u64, help="master seed override")
    run.add_argument("--scale", type=_positive(float), help="chains (ensemble) or iterations (trajectory) multiplier")
    run.add_argument("--workers", type=_positive(int), default=1)
    run.add_argument("--plot", action="store_true", help="also render PNG figures next to the data files")

    fig = sub.add_parser("figure", help="run a catalogue figure")
    fig.add_argument("figure", help=", ".join(FIGURES))
    fig.add_argument("--out", help="output directory (default out/<figure>)")
    fig.add_argument("--scale", type=_positive(float), default=1.0)
    fig.add_argument("--iters", type=_positive(int), help="iteration count override")
    fig.add_argument("--workers", type=_positive(int), default=1)
    fig.add_argument("--plot", action="store_true")

    lst = sub.add_parser("list", help="list available ids")
    lst.add_argument("what", choices=["targets", "kernels", "figures"])
    return parser


def _summary(manifest) -> str:
    lines = [f"experiment {manifest.experiment_id}"]
    for label, curves in manifest.results.items():
        for metric, curve in curves.items():
            k, v = curve[-1]
            lines.append(f"{label},{metric},{k},{v:.6g}")
        lines.append(f"{label},acceptance,,{manifest.acceptance[label]:.4f}")
    return "\n".join(lines)


def _list(what: str) -> str:
    if what == "targets":
        return "\n".join(f"{tid}\t{cls.__doc__.strip().splitlines()[0] if cls.__doc__ else ''}" for tid, cls in TARGETS.items())
    if what == "kernels":
        return "\n".join(v.value for v in Variant)
    return "\n".join(f"{fid}\t{desc}" for fid, desc in FIGURES.items())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "list":
            print(_list(args.what))
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, run=replace(cfg.run, master_seed=args.seed))
            if args.scale is not None:
                cfg = cfg.scaled(args.scale)
            manifest = run_experiment(cfg, args.out, workers=args.workers, plot=args.plot)
        else:
            if args.figure not in FIGURES:
                raise ConfigError(f"unknown figure {args.figure!r}; valid figures: {', '.join(FIGURES)}")
            manifest = emit_figure_data(
                args.figure, args.out, scale=args.scale, n_iters=args.iters, workers=args.workers, plot=args.plot
            )
    except (ConfigError, ConfigurationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Unsupported as err:
        print(f"unsupported: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return 4
    print(_summary(manifest))
    return 0
