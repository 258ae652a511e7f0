"""Command line entry point: ``clstream run|iid|sweep|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import ConfigError, load_config
from .metrics import DEFAULT_BAND_EDGES, band_report, moving_average, total_forgetting
from .runner import DEFAULT_SWEEP_LRS, load_run_csv, run_iid_baseline, run_scenario, sweep


def parse_seed_range(text: str) -> list[int]:
    """``"3"`` -> [3], ``"0..4"`` -> [0, 1, 2, 3, 4], ``"1,5"`` -> [1, 5]."""
    seeds = []
    for part in text.split(","):
        lo, sep, hi = part.partition("..")
        if sep:
            if int(hi) < int(lo):
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_window(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return int(lo), int(hi)


def _load(args):
    config = load_config(args.config)
    if args.out:
        config = config.replace(**{"run.out": args.out})
    return config


def cmd_run(args) -> int:
    config = _load(args)
    result = run_scenario(config)
    print(json.dumps(result.summary, indent=2, default=float))
    return 1 if any(s["error"] for s in result.summary.values()) else 0


def cmd_iid(args) -> int:
    config = _load(args)
    for seed in config.run.seeds:
        print(f"seed {seed}: iid accuracy {run_iid_baseline(config, seed):.4f}")
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    seeds = args.seeds if args.seeds is not None else config.run.seeds
    lrs = args.lr if args.lr is not None else DEFAULT_SWEEP_LRS
    failed = False
    for lr, result in sweep(config, lrs, seeds).items():
        finals = [s["final_accuracy"] for s in result.summary.values()
                  if s["final_accuracy"] is not None]
        failed |= any(s["error"] for s in result.summary.values())
        mean = f"{np.mean(finals):.4f}" if finals else "n/a"
        print(f"lr={lr:g}: mean final accuracy {mean} over {len(finals)} seed(s)")
    return 1 if failed else 0


def cmd_report(args) -> int:
    for path in args.csv:
        for seed, run in sorted(load_run_csv(path).items()):
            print(f"{path} seed {seed}")
            if run.failed:
                print(f"  {run.failed}")
            if not len(run.log):
                continue
            print(f"  final moving-average accuracy {moving_average(run.log.overall)[-1]:.4f}")
            if run.log.iid_accuracy:
                print(f"  iid accuracy {run.log.iid_accuracy:.4f}")
            try:
                print(f"  total forgetting {total_forgetting(run.log):+.5f}")
            except ValueError:
                pass
            if args.bands:
                if run.class_probs is None:
                    print("  no .classprobs.csv next to this run; skipping bands")
                    continue
                N = len(run.class_probs)
                report = band_report(run.log, run.class_probs, N, run.classes_per_task,
                                     args.edges, window=args.window)
                lo, hi = report.task_window
                print(f"  frequency bands over tasks [{lo}, {hi}):")
                for b in report.bands:
                    acc = "   n/a" if b.mean_accuracy is None else f"{b.mean_accuracy:.4f}"
                    print(f"    [{b.low:g}, {b.high:g}) classes={b.count:3d} accuracy={acc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clstream", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, text in (("run", cmd_run, "run every seed of a scenario"),
                             ("iid", cmd_iid, "train and cache the IID baseline"),
                             ("sweep", cmd_sweep, "grid over learning rates and seeds")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--out", help="output path prefix (overrides run.out)")
        p.set_defaults(func=func)
        if name == "sweep":
            p.add_argument("--lr", type=parse_floats, help="comma-separated learning rates (default 0.1,0.01,0.001)")
            p.add_argument("--seeds", type=parse_seed_range, help="e.g. 0..4")

    p = sub.add_parser("report", help="summarise run CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--bands", action="store_true", help="per frequency-band accuracy")
    p.add_argument("--window", type=parse_window, help="task window a:b (half-open)")
    p.add_argument("--edges", type=parse_floats, default=list(DEFAULT_BAND_EDGES))
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
