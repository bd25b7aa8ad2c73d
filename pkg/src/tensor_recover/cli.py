"""Command-line entry point.

Exit codes:
  0  success, all outputs written
  1  runtime failure (simulation, training, numerical errors)
  2  malformed path CSV (message carries the line number)
  3  matrix order k too small for the requested depth
  4  invalid experiment config or JSON input (JSON pointer paths printed)
  5  usage error (bad flags, missing input files)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .development import PathFormatError, develop, read_path_batch, read_path_csv, signature, write_path_batch
from .distances import NAMES, DistanceSpec, EmpiricalMeasure, OptConfig, TrainResult, train
from .harness import (ConfigError, DevelopmentStatistic, PermTestConfig, load_config, permutation_test,
                      run_experiment)
from .matrix_core import LinearMapFamily, MatrixClass, matrix_from_json, matrix_to_json, random_family
from .recovery import OrderTooSmallError, Variant, bm_oracle, recovery_diagnostics
from .stochastic import FbmConfig, simulate_fbm
from .tensor_core import TruncatedTensor

EXIT_OK, EXIT_FAIL, EXIT_CSV, EXIT_ORDER, EXIT_CONFIG, EXIT_USAGE = range(6)
SEED_ENV = "TENSOR_RECOVER_SEED"

log = logging.getLogger("tensor_recover")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("/", f"{path}: invalid JSON: {exc}")]) from exc


def _measure(path: Path) -> EmpiricalMeasure:
    paths = read_path_batch(path) if path.is_dir() else [read_path_csv(path)]
    return EmpiricalMeasure(paths, augment=True)


# subcommands -------------------------------------------------------------


def cmd_sig(args) -> int:
    path = read_path_csv(_existing(args.path, "path CSV"))
    _emit(signature(path, args.depth).to_json(), args.out)
    return EXIT_OK


def _load_family(path: Path) -> LinearMapFamily:
    data = _read_json(path)
    try:
        images = np.stack([matrix_from_json(m) for m in data["images"]])
        cls = MatrixClass(data.get("class", MatrixClass.SKEW_HERMITIAN.value))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([("/images", f"{path}: {exc}")]) from exc
    if cls.is_real:
        images = images.real
    return LinearMapFamily(images, cls)


def cmd_develop(args) -> int:
    path = read_path_csv(_existing(args.path, "path CSV"))
    maps = _existing(args.maps, "maps JSON")
    if maps is not None:
        family = _load_family(maps)
    else:
        rng = np.random.default_rng(args.seed)
        family = random_family(MatrixClass(args.matrix_class), path.d, args.k, rng, scale=args.scale)
    result = develop(path, family)
    doc = {
        "class": family.matrix_class.value,
        "images": [matrix_to_json(m) for m in family.images],
        "matrix": matrix_to_json(result.matrix),
        "group_residual": result.group_residual(),
    }
    _emit(json.dumps(doc), args.out)
    return EXIT_OK


def cmd_recover(args) -> int:
    if args.tensor is not None:
        source = TruncatedTensor.from_json(_existing(args.tensor, "tensor JSON").read_text())
        d = source.d
        depth = source.depth if args.depth is None else args.depth
        if depth > source.depth:
            raise UsageError(f"--depth {depth} exceeds the tensor depth {source.depth}")
        reference = source.truncate(depth)
    else:
        d = args.dim
        depth = 4 if args.depth is None else args.depth
        source = bm_oracle(d, args.bm)
        reference = None
    if args.k is not None and args.k < depth + 1:
        raise OrderTooSmallError(f"matrix order k={args.k} too small for depth {depth} (need >= {depth + 1})")
    tensor, rows = recovery_diagnostics(source, d, depth, args.k, args.variant, reference)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "tensor.json").write_text(tensor.to_json() + "\n")
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["word", "c_w", "k", "value", "fd_value", "abs_err"])
        for r in rows:
            w.writerow(["".join(map(str, r.word)) if d < 10 else "-".join(map(str, r.word)), r.c_w, r.k,
                        repr(r.value), "" if r.fd_value is None else repr(r.fd_value),
                        "" if r.abs_err is None else repr(r.abs_err)])
    errs = [r.abs_err for r in rows if r.abs_err is not None]
    if errs:
        log.info("max abs error %.3g over %d words", max(errs), len(rows))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = FbmConfig(hurst=args.hurst, dim=args.dim, steps=args.steps, horizon=args.horizon, seed=args.seed)
    paths = simulate_fbm(cfg, args.count, stream=args.stream)
    write_path_batch(paths, args.out or "paths", hurst=args.hurst, seed=args.seed, stream=args.stream)
    return EXIT_OK


def cmd_train(args) -> int:
    mu = _measure(_existing(args.x, "x paths"))
    nu = _measure(_existing(args.y, "y paths"))
    spec = DistanceSpec.named(args.statistic, K=args.K, k=args.k, d=mu.d)
    opt = OptConfig(iterations=args.iterations, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                    unbiased=args.unbiased)
    result = train(mu, nu, spec, opt)
    _emit(result.to_json(), args.out)
    return EXIT_OK


def cmd_permtest(args) -> int:
    x = _measure(_existing(args.x, "x paths"))
    y = _measure(_existing(args.y, "y paths"))
    params_doc = _read_json(_existing(args.params, "params JSON"))
    try:
        trained = TrainResult.from_dict(params_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([("/", f"{args.params}: {exc}")]) from exc
    stat = DevelopmentStatistic(trained.params)
    cfg = PermTestConfig(alpha=args.alpha, N=args.N, M=args.M, m=args.m, n=args.n, h0=args.h0, seed=args.seed)
    report = permutation_test(stat.features(x), stat.features(y), stat, cfg, threads=args.threads)
    _emit(json.dumps(report.to_dict()), args.out)
    return EXIT_OK


def bundled_config(name: str = "desk") -> dict:
    return json.loads(resources.files(__package__).joinpath("configs", f"{name}.json").read_text())


def cmd_experiment(args) -> int:
    if args.config is None:
        config = bundled_config()
    else:
        config = load_config(_existing(args.config, "config"))
    result = run_experiment(config, args.out or "experiment", seed=args.seed, threads=args.threads)
    for r in result.rows:
        log.info("h=%s %s power=%s type1=%s", r.h, r.statistic, r.power, r.type1)
    return EXIT_OK


# parser ------------------------------------------------------------------


def _global_flags(top: bool) -> argparse.ArgumentParser:
    # subcommands accept the same flags; SUPPRESS keeps them from clobbering values given earlier
    default = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--seed", type=int, default=default(None),
                       help=f"master seed (default: ${SEED_ENV} or 0)")
    flags.add_argument("--threads", type=int, default=default(1), help="worker threads; 1 is bit-reproducible")
    flags.add_argument("--out", default=default(None), help="output file or directory (default depends on command)")
    flags.add_argument("-v", "--verbose", action="store_true", default=default(False), help="log progress to stderr")
    return flags


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(top=False)
    parser = _Parser(prog="tensor-recover", description=__doc__.split("\n")[0], parents=[_global_flags(top=True)],
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog=__doc__.split("\n", 2)[2])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sig", parents=[common], help="truncated signature of a path CSV")
    p.add_argument("path", help="CSV with header t,x1,...,xd")
    p.add_argument("--depth", type=int, required=True, help="truncation depth")
    p.set_defaults(func=cmd_sig)

    p = sub.add_parser("develop", parents=[common], help="development of a path CSV under a linear map")
    p.add_argument("path", help="CSV with header t,x1,...,xd")
    p.add_argument("--maps", help="JSON {class, images: [matrix]} with [re, im] entries")
    p.add_argument("--class", dest="matrix_class", default=MatrixClass.SKEW_HERMITIAN.value,
                   choices=[c.value for c in MatrixClass], help="class of random maps when --maps is absent")
    p.add_argument("--k", type=int, default=4, help="matrix order of random maps")
    p.add_argument("--scale", type=float, default=1.0, help="entry scale of random maps")
    p.set_defaults(func=cmd_develop)

    p = sub.add_parser("recover", parents=[common], help="recover a tensor from its generating function")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tensor", help="tensor JSON whose generating function is used as the oracle")
    src.add_argument("--bm", type=float, metavar="T", help="Brownian expected signature on [0, T]")
    p.add_argument("--dim", type=int, default=3, help="Brownian dimension for --bm")
    p.add_argument("--depth", type=int, help="recovery depth (default: tensor depth, or 4 for --bm)")
    p.add_argument("--k", type=int, help="matrix order (default: |W| + 1 per word)")
    p.add_argument("--variant", default=Variant.ANTISYM.value, choices=[v.value for v in Variant])
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("simulate", parents=[common], help="simulate fBM paths into a batch directory")
    p.add_argument("--hurst", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--stream", type=int, default=0, help="RNG stream; use distinct streams for independent pools")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train a distance between two path batches")
    p.add_argument("--x", required=True, help="batch directory or single CSV")
    p.add_argument("--y", required=True, help="batch directory or single CSV")
    p.add_argument("--statistic", default="RPCFD", choices=list(NAMES.values()))
    p.add_argument("--K", type=int, default=8)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--lr", type=float, default=None, help="default 0.5 for RPCFD, 0.05 otherwise")
    p.add_argument("--unbiased", action="store_true", help="ascend the unbiased mini-batch distance")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("permtest", parents=[common], help="permutation test with a trained distance")
    p.add_argument("--x", required=True, help="x pool: batch directory or single CSV")
    p.add_argument("--y", required=True, help="y pool: batch directory or single CSV")
    p.add_argument("--params", required=True, help="trained parameters JSON from `train`")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--M", type=int, default=500)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--h0", action="store_true", help="label the ratio as Type-I error")
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("experiment", parents=[common], help="power / Type-I experiment from a JSON config")
    p.add_argument("config", nargs="?", help="config JSON (default: bundled desk-scale config)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PathFormatError as exc:
        print(f"error: malformed path CSV: {exc}", file=sys.stderr)
        return EXIT_CSV
    except OrderTooSmallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORDER
    except ConfigError as exc:
        for pointer, message in exc.errors:
            print(f"error: {pointer}: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
