"""Command-line harness for the random-feature experiments.

Every command writes one JSON result object (stdout, --out, or OUTPUT_DIR with
--save) and optionally a flat CSV of its records. Exit codes: 0 success,
2 configuration error, 3 numeric error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from config import config
from dataio import Regime, RegimeSpec, load_csv, synth_blobs, synth_regime
from errors import FavorError, InvalidArgument
from experiments import ExperimentRunner
from kernelcore import PointSet
from linalg import DrawScheme, derive_rng
from models import ErrorRecord, ExperimentResult

logger = logging.getLogger(__name__)

MECHANISMS = ("trig", "pos", "gerf", "saderf", "aderf", "sderf", "arf")


def _comma_list(cast):
    def parse(value: str) -> List:
        try:
            return [cast(v) for v in value.split(",") if v.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad list {value!r}: {e}") from e

    return parse


def _sigma_grid(value: str) -> List[float]:
    """lo:hi:n, log-spaced"""
    try:
        lo, hi, n = value.split(":")
        grid = np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(n))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"--sigma-grid expects lo:hi:n, got {value!r}") from e
    return [float(s) for s in grid]


def _qmc_psi(value: str) -> Optional[float]:
    if value == "antithetic":
        return None
    try:
        return float(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError("--qmc-psi expects a number or 'antithetic'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="favor", description="Variance-optimal random features for the softmax kernel"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=config.SEED)
    common.add_argument("--threads", type=int, default=config.THREADS)
    common.add_argument("--out", help="write the JSON result here instead of stdout")
    common.add_argument(
        "--save",
        action="store_true",
        help="without --out, write the JSON to OUTPUT_DIR/<command>-seed<seed>.json",
    )
    common.add_argument("--csv-out", help="also write the records as a flat CSV")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.NORMAL.value)
    data.add_argument("--csv", help="data file (header row, numeric features)")
    data.add_argument("--csv-y", help="second data file for the y set")
    data.add_argument("--d", type=int, default=8)
    data.add_argument("--L", type=int, default=config.VARIANCE_L)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("variance-compare", parents=[common, data])
    p.add_argument("--mechs", type=_comma_list(str), default=["pos", "gerf", "sderf"])
    _add_sigma_flags(p)
    p.add_argument("--set-pairs", type=int, default=config.VARIANCE_SET_PAIRS)

    p = sub.add_parser("kernel-classify", parents=[common])
    p.add_argument("--csv", help="labelled data file; two Gaussian blobs when omitted")
    p.add_argument("--label-col", default="label")
    p.add_argument("--mechs", type=_comma_list(str), default=["pos", "gerf", "sderf"])
    p.add_argument("--M-grid", type=_comma_list(int), default=list(config.M_GRID))
    _add_sigma_flags(p)
    p.add_argument("--seeds", type=int, default=config.CLASSIFY_SEEDS)
    p.add_argument("--d", type=int, default=2, help="blob dimension")
    p.add_argument("--blob-size", type=int, default=200, help="points per blob")
    p.add_argument("--separation", type=float, default=5.0, help="blob mean distance")
    _add_sampling_flags(p, DrawScheme.ORTHOGONAL)

    p = sub.add_parser("attention-bench", parents=[common])
    p.add_argument("--L-grid", type=_comma_list(int), default=[256, 512, 1024, 2048, 4096])
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--M", type=int, default=config.DEFAULT_M)
    p.add_argument("--mech", choices=MECHANISMS, default="sderf")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--omit-timings", action="store_true", help="drop wall-clock records")
    _add_sampling_flags(p, DrawScheme.IID)

    p = sub.add_parser("fit-dump", parents=[common, data])
    p.add_argument("--mech", choices=MECHANISMS, default="sderf")
    p.add_argument("--sigma", type=float, default=1.0)

    return parser


def _add_sigma_flags(p: argparse.ArgumentParser):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sigma", type=float, action="append", help="repeatable")
    group.add_argument("--sigma-grid", type=_sigma_grid)


def _add_sampling_flags(p: argparse.ArgumentParser, scheme: DrawScheme):
    p.add_argument("--scheme", choices=[s.value for s in DrawScheme], default=scheme.value)
    p.add_argument(
        "--qmc-psi",
        type=_qmc_psi,
        default=None,
        help="per-coordinate correlation for --scheme qmc, or 'antithetic' for -1/(M-1)",
    )


def _sigmas(args) -> Optional[List[float]]:
    return args.sigma_grid or args.sigma


def _load_points(path: str) -> PointSet:
    data = load_csv(path)
    if not isinstance(data, PointSet):
        raise InvalidArgument(f"{path} should hold features only")
    return data


def run_command(args, runner: ExperimentRunner) -> ExperimentResult:
    """Dispatch parsed arguments to the experiment runner"""
    if args.command == "variance-compare":
        sigmas = _sigmas(args)
        if sigmas is None:
            lo, hi, n = config.SIGMA_GRID
            sigmas = _sigma_grid(f"{lo}:{hi}:{n}")
        csv_x = _load_points(args.csv) if args.csv else None
        csv_y = _load_points(args.csv_y) if args.csv_y else None
        if csv_y is not None and csv_x is None:
            raise InvalidArgument("--csv-y needs --csv")
        return runner.variance_compare(
            mechs=args.mechs,
            sigmas=sigmas,
            regime=Regime(args.regime),
            d=args.d,
            l=args.L,
            set_pairs=args.set_pairs,
            seed=args.seed,
            csv_x=csv_x,
            csv_y=csv_y,
            threads=args.threads,
        )

    if args.command == "kernel-classify":
        if args.csv:
            dataset = load_csv(args.csv, label_column=args.label_col)
        else:
            blob_rng = derive_rng(args.seed, 99)
            dataset = synth_blobs(args.blob_size, args.d, args.separation, blob_rng)
        return runner.kernel_classify(
            dataset,
            mechs=args.mechs,
            m_grid=args.M_grid,
            sigmas=_sigmas(args),
            seeds=args.seeds,
            seed=args.seed,
            scheme=DrawScheme(args.scheme),
            qmc_psi=args.qmc_psi,
            threads=args.threads,
        )

    if args.command == "attention-bench":
        return runner.attention_bench(
            lengths=args.L_grid,
            d=args.d,
            m=args.M,
            mech_name=args.mech,
            seeds=args.seeds,
            seed=args.seed,
            scheme=DrawScheme(args.scheme),
            qmc_psi=args.qmc_psi,
            include_timings=not args.omit_timings,
            threads=args.threads,
        )

    # fit-dump
    if args.csv:
        xs = _load_points(args.csv).scaled(args.sigma)
        ys = _load_points(args.csv_y).scaled(args.sigma) if args.csv_y else xs
        source = {"source": "csv", "sigma": args.sigma}
    else:
        spec = RegimeSpec(regime=Regime(args.regime), sigma=args.sigma, l=args.L, d=args.d)
        xs, ys = synth_regime(spec, derive_rng(args.seed, 0))
        source = {"source": "synthetic", "regime": args.regime, "sigma": args.sigma}
    return runner.fit_dump(args.mech, xs, ys, source=source)


def _config_echo(args) -> dict:
    hidden = ("out", "csv_out", "threads", "save")
    return {k: v for k, v in sorted(vars(args).items()) if k not in hidden}


def _out_path(args) -> Optional[str]:
    if args.out or not args.save:
        return args.out
    return str(Path(config.OUTPUT_DIR) / f"{args.command}-seed{args.seed}.json")


def write_result(result: ExperimentResult, out: Optional[str], csv_out: Optional[str]):
    text = result.to_json() + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if csv_out:
        Path(csv_out).parent.mkdir(parents=True, exist_ok=True)
        result.records_frame().to_csv(csv_out, index=False)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    runner = ExperimentRunner(config)
    try:
        result = run_command(args, runner)
        code = 0
    except FavorError as e:
        logger.error("%s failed: %s", args.command, e)
        result = ExperimentResult(
            command=args.command, config=_config_echo(args), error=ErrorRecord.from_exception(e)
        )
        code = e.exit_code
    else:
        result.config.setdefault("argv", _config_echo(args))

    write_result(result, _out_path(args), args.csv_out)
    return code


if __name__ == "__main__":
    sys.exit(main())
