"""Command line entry point: ``simulate``, ``estimate`` and ``bench``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    ConfigError,
    SweepError,
    format_csv,
    format_param_csv,
    load_config,
    manifest,
    run_sweep,
)
from .cp_als import AlsOptions, NumericalError
from .dataset import DatasetFormatError, read_dataset, write_dataset
from .nested import (
    IdentifiabilityError,
    StageError,
    estimate_baseline_parafac,
    estimate_nested,
)
from .radar_model import PARAM_NAMES, synthesize
from .tensor_core import DimensionError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments, which collides with the
    # numerical-failure code
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _snr_list(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from None


def build_parser():
    p = _Parser(prog="emvs-parafac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesize a snapshot tensor file")
    s.add_argument("--config", required=True, help="scene config JSON")
    noise = s.add_mutually_exclusive_group(required=True)
    noise.add_argument("--snr", type=float, help="SNR in dB")
    noise.add_argument("--noiseless", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("estimate", help="estimate target parameters from a tensor file")
    e.add_argument("dataset", type=Path)
    e.add_argument("--M", type=int, help="transmit elements (default: from --config)")
    e.add_argument("--N", type=int, help="receive elements (default: from --config)")
    e.add_argument("--K", type=int, help="number of targets (default: from --config)")
    e.add_argument("--config", help="scene config supplying M, N, K and ALS options")
    e.add_argument("--method", choices=("nested", "baseline"), default="nested")
    e.add_argument("--format", choices=("text", "json"), default="text")
    e.add_argument("--seed", type=int, default=0, help="ALS initialization seed")

    b = sub.add_parser("bench", help="run a Monte-Carlo RMSE sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True, type=Path, help="results CSV")
    b.add_argument("--manifest", type=Path, help="manifest JSON (default: <out>.manifest.json)")
    b.add_argument("--trials", type=int, help="override trial count")
    b.add_argument("--snr-grid", type=_snr_list, help="override SNR grid, e.g. 0,10,20")
    b.add_argument("--noiseless", action="store_true")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--record-wall-time", action="store_true",
                   help="fill the wall_time_s column (output is then not reproducible)")
    return p


def _cmd_simulate(args):
    cfg = load_config(args.config)
    data = synthesize(cfg.scene, None if args.noiseless else args.snr, seed=args.seed)
    write_dataset(args.out, data.tensor)
    print(f"wrote {args.out} shape={data.tensor.shape}")


def _cmd_estimate(args):
    M, N, K = args.M, args.N, args.K
    opts = None
    if args.config:
        cfg = load_config(args.config)
        M = M or cfg.scene.M
        N = N or cfg.scene.N
        K = K or cfg.scene.K
        opts = AlsOptions(rank=K, seed=args.seed,
                          **{k: v for k, v in cfg.als.items() if k != "rank"})
    if None in (M, N, K):
        raise UsageError("estimate needs --M, --N and --K (or --config)")
    if opts is None:
        opts = AlsOptions(rank=K, max_iters=2000, seed=args.seed)
    tensor = read_dataset(args.dataset)
    fn = estimate_nested if args.method == "nested" else estimate_baseline_parafac
    est = fn(tensor, M, N, K, opts)
    rows = [np.rad2deg(e.as_array()) for e in est]
    if args.format == "json":
        doc = [{f"{n}_deg": round(float(v), 6) for n, v in zip(PARAM_NAMES, r)} for r in rows]
        print(json.dumps(doc, indent=2))
    else:
        print("target " + " ".join(f"{n + '_deg':>13}" for n in PARAM_NAMES))
        for k, r in enumerate(rows):
            print(f"{k:6d} " + " ".join(f"{v:13.6f}" for v in r))


def _cmd_bench(args):
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg.trials = args.trials
    if args.snr_grid is not None:
        cfg.snr_grid_db = args.snr_grid
    # re-run validation after overrides
    cfg.__post_init__()
    result = run_sweep(cfg, n_jobs=args.jobs, noiseless=args.noiseless)
    args.out.write_text(format_csv(result, include_wall_time=args.record_wall_time))
    params_path = args.out.with_name(args.out.stem + "_params.csv")
    params_path.write_text(format_param_csv(result))
    man_path = args.manifest or args.out.with_name(args.out.name + ".manifest.json")
    man_path.write_text(json.dumps(manifest(cfg, result, args.noiseless), indent=2) + "\n")
    for r in result.rows:
        print(f"{r.snr_db:6.1f} dB  {r.method:8s} {r.param_group:12s} "
              f"rmse={r.rmse_rad:.6g} rad  trials={r.trials_used}")
    if result.failures:
        print(f"{len(result.failures)} trial(s) excluded, see {man_path}", file=sys.stderr)


COMMANDS = {"simulate": _cmd_simulate, "estimate": _cmd_estimate, "bench": _cmd_bench}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        COMMANDS[args.command](args)
    # LinAlgError subclasses ValueError, so numerical failures are caught first
    except (NumericalError, StageError, SweepError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ConfigError, DatasetFormatError, IdentifiabilityError,
            DimensionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
