"""Command-line entry point: ``selexit <subcommand> [--run-dir DIR] ...``.

Relative run directories are resolved against ``$SELEXIT_RUN_ROOT`` when it
is set.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .data import ParseError
from .nn import ShapeError, TrainingError

RUN_ROOT_ENV = "SELEXIT_RUN_ROOT"


def _run_dir(arg: str) -> Path:
    p = Path(arg)
    root = os.environ.get(RUN_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", default="runs/toy", help="run directory (default: runs/toy)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="selexit",
        description="Early-exit classifier with deferral heads: train, gate, tune, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("gen-data", "generate data splits and start a run manifest")
    p.add_argument("--config", help="config or manifest JSON (default: bundled toy config)")
    p.add_argument("--seed", type=int)

    add("train-ec", "train backbone and exit heads")

    p = add("build-dc-data", "label the lowest-confidence K%% of training samples hard")
    p.add_argument("--k-percent", type=float)

    add("train-dc", "train the deferral heads with everything else frozen")
    add("tune", "grid-search alpha and beta on the validation split")

    p = add("infer", "gate the test splits and write metrics")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--data", help="evaluate this CSV instead of the run's test splits")

    p = add("curve", "risk-coverage curve over a beta sweep")
    p.add_argument("--alpha", type=float)

    p = add("verify-bound", "check deferral error rates against the risk bound")
    p.add_argument("--gamma", type=float)

    add("report", "print and save a run summary")

    p = add("run-all", "every phase in order")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--k-percent", type=float)
    p.add_argument("--gamma", type=float)
    return parser


def _config(args):
    return pipeline.load_config(args.config) if args.config else pipeline.default_config()


def dispatch(args) -> int:
    run = pipeline.Run(_run_dir(args.run_dir))
    cmd = args.command
    if cmd == "gen-data":
        run.root.mkdir(parents=True, exist_ok=True)
        pipeline.gen_data(run, _config(args), args.seed)
    elif cmd == "train-ec":
        pipeline.train_ec(run)
    elif cmd == "build-dc-data":
        pipeline.build_dc_data(run, args.k_percent)
    elif cmd == "train-dc":
        pipeline.train_dc(run)
    elif cmd == "tune":
        m = pipeline.tune(run)
        print("alpha={alpha} beta={beta}".format(**m["thresholds"]))
    elif cmd == "infer":
        m = pipeline.infer(run, args.alpha, args.beta, args.data)
        for name, r in m["phases"]["infer"]["results"].items():
            print(f"{name}: risk={r['risk']:.4f} coverage={r['coverage']:.4f} speedup={r['speedup']:.3f}")
    elif cmd == "curve":
        pipeline.curve(run, args.alpha)
    elif cmd == "verify-bound":
        _, rep = pipeline.verify_bound(run, args.gamma)
        sys.stdout.write(rep.to_text())
    elif cmd == "report":
        sys.stdout.write(pipeline.report(run))
    elif cmd == "run-all":
        run.root.mkdir(parents=True, exist_ok=True)
        pipeline.run_all(run, _config(args), args.seed, args.k_percent, args.gamma)
        sys.stdout.write(run.path("reports/summary.txt").read_text())
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (pipeline.PipelineError, ShapeError, ParseError, TrainingError, ValueError,
            FileNotFoundError) as e:
        print(f"selexit {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
