"""Command-line entry point: ``bcorrca simulate|fit|benchmark|sweep-restarts``.

Exit codes are 0 on success, 1 on numerical failure and 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, harness, io, metrics
from .harness import ALGORITHMS, VARIATIONAL, ConfigError, RestartSweepConfig, SweepConfig
from .inference import RestartsFailedError, fit_with_restarts
from .model import BCorrCAError, Coupling, InvalidDimensionError, NumericalBreakdownError
from .simulate import SimSpec, generate_dataset

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("bcorrca")


class UsageError(Exception):
    pass


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate a synthetic multi-view dataset")
    p.add_argument("--k0", type=int, default=1, help="number of true sources (1-4)")
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--d", type=int, default=6, help="channels per view")
    p.add_argument("--n-total", type=int, default=5000, help="samples summed over views")
    p.add_argument("--snr-db", type=float, default=0.0)
    p.add_argument("--lambda-true", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-phases", action="store_true")
    p.add_argument("--out", required=True, help="output directory")


def _add_fit(sub):
    p = sub.add_parser("fit", help="fit one algorithm to a dataset")
    p.add_argument("dataset", help="dataset directory or manifest path")
    p.add_argument("--alg", default="bcorrca", help=f"one of {', '.join(ALGORITHMS)}")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--rel-tol", type=float, default=1e-9)
    p.add_argument("--a0", type=float, help="Gamma shape for alpha and lambda")
    p.add_argument("--b0", type=float, help="Gamma rate for alpha and lambda")
    p.add_argument("--v0", type=float, help="Wishart degrees of freedom")
    p.add_argument("--noise-prior", choices=("default", "informed"), default="default")
    p.add_argument("--ridge", type=float, help="covariance ridge for cca/corrca")
    p.add_argument("--out", help="result JSON path (default: <dataset>/fit_<alg>.json)")


def _grid_flags(p):
    p.add_argument("--k0", type=int, nargs="+")
    p.add_argument("--views", type=int, nargs="+")
    p.add_argument("--d", type=int, nargs="+")
    p.add_argument("--n-total", type=int, nargs="+")
    p.add_argument("--snr-db", type=float, nargs="+")
    p.add_argument("--lambda-true", type=float, nargs="+")


def _add_benchmark(sub):
    p = sub.add_parser("benchmark", help="run algorithms over a simulation grid")
    p.add_argument("config", nargs="?", help="JSON sweep config; flags override its keys")
    p.add_argument("--alg", nargs="+", dest="algorithms")
    _grid_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--reps", type=int, dest="repetitions")
    p.add_argument("--restarts", type=int, dest="n_restarts")
    p.add_argument("--base-seed", type=int)
    p.add_argument("--noise-prior", choices=("default", "informed"))
    p.add_argument("--max-iter", type=int)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--random-phases", action="store_true", default=None)
    p.add_argument("--record-wall-time", action="store_true", default=None)
    p.add_argument("--out", dest="output")
    p.add_argument("--workers", type=int)


def _add_sweep_restarts(sub):
    p = sub.add_parser("sweep-restarts",
                       help="accuracy of active-source selection versus restart budget")
    p.add_argument("config", nargs="?", help="JSON restart-sweep config; flags override it")
    p.add_argument("--alg", dest="algorithm", choices=VARIATIONAL)
    p.add_argument("--k0", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--n-total", type=int)
    p.add_argument("--snr-db", type=float)
    p.add_argument("--lambda-true", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--datasets", type=int)
    p.add_argument("--fits-per-dataset", type=int)
    p.add_argument("--budgets", type=int, nargs="+", dest="restart_budgets")
    p.add_argument("--base-seed", type=int)
    p.add_argument("--noise-prior", choices=("default", "informed"))
    p.add_argument("--max-iter", type=int)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--out", dest="output")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcorrca", description="Bayesian correlated component analysis toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_fit(sub)
    _add_benchmark(sub)
    _add_sweep_restarts(sub)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = SimSpec(K0=args.k0, M=args.views, D=args.d, N_total=args.n_total,
                   snr_db=args.snr_db, lambda_true=args.lambda_true, seed=args.seed,
                   random_phases=args.random_phases)
    data, truth = generate_dataset(spec)
    print(io.write_dataset(args.out, data, truth, simulation=spec.to_dict()))
    return EXIT_OK


def _fit_hyperparameters(args, data):
    hp = harness.make_hyperparameters(args.alg, data, args.noise_prior, args.max_iter, args.rel_tol)
    overrides = {k: getattr(args, k) for k in ("a0", "b0", "v0") if getattr(args, k) is not None}
    if not overrides:
        return hp
    doc = hp.to_dict()
    doc.update(overrides)
    if "v0" in overrides and args.noise_prior == "informed":
        from .model import informed_noise_prior
        doc["S0"] = informed_noise_prior(data, overrides["v0"]).tolist()
    elif "v0" in overrides:
        doc["S0"] = (np.eye(data.D) / overrides["v0"]).tolist()
    return type(hp).from_dict(doc)


def cmd_fit(args) -> int:
    if args.alg not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {args.alg!r}; choose from {', '.join(ALGORITHMS)}")
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    data, _ = io.read_dataset(args.dataset)
    data_hash = io.dataset_hash(args.dataset)
    root = Path(args.dataset)
    root = root if root.is_dir() else root.parent
    out = Path(args.out) if args.out else root / f"fit_{args.alg}.json"

    start = time.perf_counter()
    if args.alg in VARIATIONAL:
        hp = _fit_hyperparameters(args, data)
        res = fit_with_restarts(data, args.k, hp, n_restarts=args.restarts, seed=args.seed)
        elapsed = (time.perf_counter() - start) * 1e3
        io.write_json(out, io.fit_result_to_dict(res, hp, args.alg, data_hash))
        lam = f" lambda={res.lambda_point:.6g}" if hp.coupling is Coupling.HIERARCHICAL else ""
        print(f"algorithm={args.alg} K={args.k} lower_bound={res.lower_bound:.10g}"
              f" active_sources={metrics.count_active_sources(res)}"
              f" iterations={res.iterations} wall_time_ms={elapsed:.1f}"
              f" converged={str(res.converged).lower()}{lam}")
    else:
        if data.M < 2:
            raise UsageError(f"{args.alg} needs M >= 2 views, dataset has M={data.M}")
        sol = baselines.multiview(args.alg, data, K=args.k, ridge=args.ridge)
        elapsed = (time.perf_counter() - start) * 1e3
        io.write_json(out, io.eigen_solution_to_dict(sol, args.alg, data_hash))
        corr = ",".join(f"{c:.6g}" for c in sol.correlations)
        print(f"algorithm={args.alg} K={args.k} correlations={corr}"
              f" wall_time_ms={elapsed:.1f}")
    log.info("wrote %s", out)
    return EXIT_OK


def _merge_config(args, cls, path, skip=("config", "command", "verbose", "func", "workers")):
    doc = io.read_json(path) if path else {"format_version": harness.CONFIG_VERSION}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        if key not in names:
            raise ConfigError(f"flag {key} has no config counterpart")
        doc[key] = value
    return cls.from_dict(doc)


def cmd_benchmark(args) -> int:
    cfg = _merge_config(args, SweepConfig, args.config)
    harness.run_benchmark(cfg, workers=args.workers)
    print(cfg.output)
    print(harness.aggregate_path(Path(cfg.output)))
    return EXIT_OK


def cmd_sweep_restarts(args) -> int:
    cfg = _merge_config(args, RestartSweepConfig, args.config)
    rows, _ = harness.run_restart_sweep(cfg, workers=args.workers)
    for r in cfg.restart_budgets:
        acc = [row["accuracy"] for row in rows if row["restarts"] == r and "accuracy" in row]
        mean = f"{np.mean(acc):.4f}" if acc else "nan"
        print(f"restarts={r} mean_accuracy={mean} datasets={len(acc)}")
    print(cfg.output)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "benchmark": cmd_benchmark,
    "sweep-restarts": cmd_sweep_restarts,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericalBreakdownError, RestartsFailedError) as exc:
        print(f"bcorrca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ConfigError, InvalidDimensionError, io.FormatError,
            FileNotFoundError, ValueError, BCorrCAError) as exc:
        print(f"bcorrca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
