"""Command line interface: ``gmsfem-dl <stage> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io as msio
from .fem import NonConvergenceError
from .gmsfem import DegenerateSnapshotError, SingularCoarseSystemError
from .neural import TrainingDivergedError
from . import pipeline
from .surrogate import ExteriorMismatchError, NetworkBank, OfflineData, predict_model, predicted_solve, source_vector

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(Exception):
    pass


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory")
    common.add_argument("--experiment", type=int, choices=(1, 2), help="experiment preset")
    common.add_argument("--jobs", type=_positive, help="worker processes (default $MSFEM_JOBS or 1)")

    p = _Parser(prog="gmsfem-dl", description="GMsFEM discretizations predicted by neural networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="write the permeability ensemble")
    sub.add_parser("offline", parents=[common], help="exterior model and exact targets")
    sub.add_parser("dataset", parents=[common], help="standardized datasets and split")
    sub.add_parser("train", parents=[common], help="train the network bank")
    ev = sub.add_parser("eval", parents=[common], help="error tables on the test split")
    ev.add_argument("--oracle", action="store_true", help="use exact targets as predictions")
    so = sub.add_parser("solve", parents=[common], help="predicted solve for one field")
    so.add_argument("--kappa", type=Path, help="MSARR001 cell field (default: an ensemble sample)")
    so.add_argument("--index", type=int, default=0, help="ensemble sample used without --kappa")
    so.add_argument("--allow-exterior-mismatch", action="store_true",
                    help="warn instead of failing when the exterior field differs")
    sub.add_parser("report", parents=[common], help="merge error tables into mean tables")
    sub.add_parser("config", parents=[common], help="print the resolved configuration")
    return p


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("MSFEM_JOBS")
    if env is None:
        return 1
    try:
        return _positive(env)
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"MSFEM_JOBS must be a positive integer, got {env!r}") from None


def _config(args):
    try:
        return msio.load_config(args.config, args.experiment, args.seed)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _solve(cfg, args):
    out = args.out
    offline = OfflineData.load(out / "offline")
    bank = NetworkBank.load(out / "bank")
    if args.kappa is not None:
        kappa = msio.read_array(args.kappa).ravel()
    else:
        kappa = pipeline.load_ensemble(cfg, out)[args.index]
    f = source_vector(offline.exterior.grid, cfg.source)
    model = predict_model(bank, kappa, offline.exterior, f, override=args.allow_exterior_mismatch)
    u_c, u = predicted_solve(model)
    msio.write_array(out / "u_pred.msarr", u)
    msio.write_array(out / "u_c_pred.msarr", u_c)
    print(f"wrote {out / 'u_pred.msarr'}  (|u|_max = {np.max(np.abs(u)):.6g})")


def run(args) -> int:
    cfg = _config(args)
    jobs = _jobs(args)
    out = args.out
    cmd = args.command
    if cmd == "config":
        print(msio.dump_config(cfg), end="")
    elif cmd == "gen":
        print(f"wrote {pipeline.stage_gen(cfg, out)}")
    elif cmd == "offline":
        off = pipeline.stage_offline(cfg, out, jobs)
        print(f"offline targets for {off.n_samples} realizations, {len(off.targets)} targets")
    elif cmd == "dataset":
        data = pipeline.stage_dataset(cfg, out)
        print(f"split: {data.split.train.size} train / {data.split.test.size} test")
    elif cmd == "train":
        bank = pipeline.stage_train(cfg, out, jobs)
        for t in bank.targets:
            state = "FAILED" if t in bank.failed else f"final loss {bank.losses[t][-1]:.3e}"
            print(f"{t}: {state}")
        if bank.partial:
            print("bank is partial", file=sys.stderr)
            return EXIT_NUMERIC
    elif cmd == "eval":
        reports = pipeline.stage_eval(cfg, out, oracle=args.oracle)
        for name, rep in reports.items():
            means = ", ".join(f"{c}={100 * m:.4g}%" for c, m in zip(rep.columns, rep.mean()))
            print(f"{name}: {means}")
    elif cmd == "solve":
        _solve(cfg, args)
    elif cmd == "report":
        print(pipeline.stage_report(out), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExteriorMismatchError as exc:
        print(f"input error: {exc} (pass --allow-exterior-mismatch to override)", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc.filename} (run the earlier stages first)", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, NonConvergenceError, SingularCoarseSystemError,
            DegenerateSnapshotError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
