"""Benchmark machinery behind the ``benchmark`` and ``sweep-restarts`` commands.

Every grid cell (scenario x repetition) is generated from a seed derived
from ``(base_seed, scenario, repetition)`` alone, so cells can be run in any
order, in parallel, and reproduced one at a time with ``bcorrca fit``.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, metrics
from .inference import fit_with_restarts
from .model import (
    BCorrCAError,
    Coupling,
    Hyperparameters,
    NoiseModel,
    ViewSet,
    default_hyperparameters,
    informed_noise_prior,
)
from .simulate import SimSpec, generate_dataset

logger = logging.getLogger(__name__)

ALGORITHMS = ("bcorrca", "gfa-like", "cca", "corrca")
VARIATIONAL = ("bcorrca", "gfa-like")
WORKERS_ENV = "BCORRCA_WORKERS"
CONFIG_VERSION = 1

SCENARIO_COLUMNS = ("k0", "views", "d", "n_total", "snr_db", "lambda_true")
CSV_COLUMNS = SCENARIO_COLUMNS + (
    "rep", "seed", "algorithm", "mean_abs_corr", "lambda_est", "active_sources",
    "lower_bound", "iterations", "wall_time_ms", "error",
)
AGGREGATE_COLUMNS = SCENARIO_COLUMNS + (
    "algorithm", "n", "n_failed", "mean_abs_corr_mean", "mean_abs_corr_sem",
    "lambda_est_mean", "log10_lambda_est_mean", "log10_lambda_est_sem", "active_sources_mean",
)


class ConfigError(ValueError):
    pass


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(n, 1)


def cell_seed(base_seed: int, scenario: tuple, rep: int) -> int:
    """Stable 32-bit seed for one grid cell."""
    key = json.dumps([int(base_seed), *[_canonical(v) for v in scenario], int(rep)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "big")


def _canonical(v):
    return repr(float(v)) if isinstance(v, float) else v


def make_hyperparameters(algorithm: str, data: ViewSet, noise_prior: str = "default",
                         max_iter: int = 500, rel_tol: float = 1e-9) -> Hyperparameters:
    hp = default_hyperparameters(data.D)
    hp.max_iter, hp.rel_tol = max_iter, rel_tol
    if noise_prior == "informed":
        hp.S0 = informed_noise_prior(data, hp.v0)
    elif noise_prior != "default":
        raise ConfigError(f"unknown noise_prior {noise_prior!r}")
    if algorithm == "gfa-like":
        hp.coupling = Coupling.INDEPENDENT
        hp.noise_model = NoiseModel.DIAGONAL
    elif algorithm != "bcorrca":
        raise ConfigError(f"{algorithm!r} is not a variational algorithm")
    return hp


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _as_list(value, cast):
    values = value if isinstance(value, list) else [value]
    if not values:
        raise ConfigError("grid lists must be non-empty")
    return [cast(v) for v in values]


@dataclass
class SweepConfig:
    algorithms: list
    snr_db: list
    views: list
    lambda_true: list
    k0: list = field(default_factory=lambda: [1])
    d: list = field(default_factory=lambda: [6])
    n_total: list = field(default_factory=lambda: [5000])
    k: int | None = None
    repetitions: int = 20
    n_restarts: int = 1
    base_seed: int = 0
    output: str = "benchmark.csv"
    noise_prior: str = "default"
    max_iter: int = 500
    rel_tol: float = 1e-9
    random_phases: bool = False
    record_wall_time: bool = False
    format_version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.format_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported format_version {self.format_version}")
        self.algorithms = list(self.algorithms) if isinstance(self.algorithms, list) \
            else [self.algorithms]
        if not self.algorithms:
            raise ConfigError("algorithms must be non-empty")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ConfigError(f"unknown algorithms {sorted(unknown)}; choose from {ALGORITHMS}")
        self.k0 = _as_list(self.k0, int)
        self.views = _as_list(self.views, int)
        self.d = _as_list(self.d, int)
        self.n_total = _as_list(self.n_total, int)
        self.snr_db = _as_list(self.snr_db, float)
        self.lambda_true = _as_list(self.lambda_true, float)
        if self.repetitions < 1 or self.n_restarts < 1:
            raise ConfigError("repetitions and n_restarts must be >= 1")
        if self.noise_prior not in ("default", "informed"):
            raise ConfigError(f"unknown noise_prior {self.noise_prior!r}")
        baseline = {"cca", "corrca"} & set(self.algorithms)
        if baseline and min(self.views) < 2:
            raise ConfigError(f"{sorted(baseline)} need views >= 2")

    def scenarios(self) -> list[tuple]:
        return list(itertools.product(self.k0, self.views, self.d, self.n_total,
                                      self.snr_db, self.lambda_true))

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        return _from_dict(cls, doc)


@dataclass
class RestartSweepConfig:
    k0: int = 4
    views: int = 5
    d: int = 8
    n_total: int = 5000
    snr_db: float = -3.0
    lambda_true: float = 1.0
    k: int = 6
    datasets: int = 20
    fits_per_dataset: int = 100
    restart_budgets: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100])
    algorithm: str = "bcorrca"
    base_seed: int = 0
    output: str = "restarts.csv"
    noise_prior: str = "informed"
    max_iter: int = 500
    rel_tol: float = 1e-9
    format_version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.format_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported format_version {self.format_version}")
        if self.algorithm not in VARIATIONAL:
            raise ConfigError(f"restart sweeps need a variational algorithm, got {self.algorithm!r}")
        self.restart_budgets = sorted(set(_as_list(self.restart_budgets, int)))
        if self.restart_budgets[0] < 1 or self.restart_budgets[-1] > self.fits_per_dataset:
            raise ConfigError("restart budgets must lie in 1..fits_per_dataset")
        if self.datasets < 1:
            raise ConfigError("datasets must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "RestartSweepConfig":
        return _from_dict(cls, doc)


def _from_dict(cls, doc: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "format_version" not in doc:
        raise ConfigError("config is missing format_version")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, cls):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# running one algorithm on one dataset
# ---------------------------------------------------------------------------


def run_algorithm(algorithm: str, data: ViewSet, z_true: np.ndarray, K: int, seed: int,
                  n_restarts: int = 1, noise_prior: str = "default", max_iter: int = 500,
                  rel_tol: float = 1e-9) -> dict:
    """Fit one algorithm and score it against the true sources."""
    if algorithm in VARIATIONAL:
        hp = make_hyperparameters(algorithm, data, noise_prior, max_iter, rel_tol)
        res = fit_with_restarts(data, K, hp, n_restarts=n_restarts, seed=seed)
        z_est = res.posterior.z_mean
        return {
            "mean_abs_corr": metrics.match_sources(z_est, z_true).mean_abs_corr,
            "lambda_est": res.lambda_point if hp.coupling is Coupling.HIERARCHICAL else None,
            "active_sources": metrics.count_active_sources(res),
            "lower_bound": res.lower_bound,
            "iterations": res.iterations,
        }
    if algorithm in ("cca", "corrca"):
        sol = baselines.multiview(algorithm, data, K=K)
        return {
            "mean_abs_corr": metrics.match_sources(sol.project(data), z_true).mean_abs_corr,
            "lambda_est": None,
            "active_sources": None,
            "lower_bound": None,
            "iterations": None,
        }
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def _run_cell(args) -> list[dict]:
    cfg, scenario, rep = args
    k0, views, d, n_total, snr_db, lambda_true = scenario
    seed = cell_seed(cfg.base_seed, scenario, rep)
    base = dict(zip(SCENARIO_COLUMNS, scenario), rep=rep, seed=seed)
    try:
        spec = SimSpec(K0=k0, M=views, D=d, N_total=n_total, snr_db=snr_db,
                       lambda_true=lambda_true, seed=seed, random_phases=cfg.random_phases)
        data, truth = generate_dataset(spec)
    except (BCorrCAError, ValueError) as exc:
        return [dict(base, algorithm=alg, error=f"dataset: {exc}") for alg in cfg.algorithms]
    rows = []
    K = cfg.k if cfg.k is not None else k0
    for alg in cfg.algorithms:
        row = dict(base, algorithm=alg)
        start = time.perf_counter()
        try:
            row.update(run_algorithm(alg, data, truth.z_true, K, seed, cfg.n_restarts,
                                     cfg.noise_prior, cfg.max_iter, cfg.rel_tol))
        except (BCorrCAError, ValueError, np.linalg.LinAlgError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        if cfg.record_wall_time:
            row["wall_time_ms"] = (time.perf_counter() - start) * 1e3
        rows.append(row)
    return rows


def _map(func, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs))


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _sem(values) -> float | None:
    if len(values) < 2:
        return 0.0 if values else None
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def aggregate(rows: list[dict], scenarios: list[tuple], algorithms: list[str]) -> list[dict]:
    """Mean and standard error of the mean per scenario and algorithm."""
    out = []
    for scenario in scenarios:
        key = dict(zip(SCENARIO_COLUMNS, scenario))
        for alg in algorithms:
            cell = [r for r in rows if r["algorithm"] == alg
                    and all(r[c] == key[c] for c in SCENARIO_COLUMNS)]
            ok = [r for r in cell if not r.get("error")]
            corr = [r["mean_abs_corr"] for r in ok]
            lam = [r["lambda_est"] for r in ok if r.get("lambda_est") is not None]
            act = [r["active_sources"] for r in ok if r.get("active_sources") is not None]
            log_lam = [math.log10(v) for v in lam]
            out.append(dict(
                key, algorithm=alg, n=len(ok), n_failed=len(cell) - len(ok),
                mean_abs_corr_mean=float(np.mean(corr)) if corr else None,
                mean_abs_corr_sem=_sem(corr),
                lambda_est_mean=float(np.mean(lam)) if lam else None,
                log10_lambda_est_mean=float(np.mean(log_lam)) if log_lam else None,
                log10_lambda_est_sem=_sem(log_lam) if log_lam else None,
                active_sources_mean=float(np.mean(act)) if act else None,
            ))
    return out


def aggregate_path(output: Path) -> Path:
    return output.with_name(output.stem + "_aggregate" + output.suffix)


def run_benchmark(cfg: SweepConfig, output=None, workers: int | None = None):
    """Run every cell of the sweep; write the per-run and aggregate CSVs.

    Returns ``(rows, aggregate_rows)``.
    """
    output = Path(output or cfg.output)
    workers = workers_from_env() if workers is None else workers
    scenarios = cfg.scenarios()
    jobs = [(cfg, s, rep) for s in scenarios for rep in range(cfg.repetitions)]
    logger.info("benchmark: %d cells x %d algorithms on %d workers",
                len(jobs), len(cfg.algorithms), workers)
    cell_rows = _map(_run_cell, jobs, workers)
    order = {a: i for i, a in enumerate(cfg.algorithms)}
    scen_index = {s: i for i, s in enumerate(scenarios)}
    rows = sorted(
        (r for rs in cell_rows for r in rs),
        key=lambda r: (scen_index[tuple(r[c] for c in SCENARIO_COLUMNS)],
                       order[r["algorithm"]], r["rep"]),
    )
    agg = aggregate(rows, scenarios, cfg.algorithms)
    _write_csv(output, CSV_COLUMNS, rows)
    _write_csv(aggregate_path(output), AGGREGATE_COLUMNS, agg)
    return rows, agg


# ---------------------------------------------------------------------------
# restart sweep
# ---------------------------------------------------------------------------


def selection_accuracy(lower_bounds, correct, r: int) -> float:
    """Probability that the best-bound fit among ``r`` drawn without replacement is correct.

    This is the exact expectation of resampling ``r`` of the ``n`` fits and
    keeping the one with the highest lower bound (earliest fit on ties).
    """
    lb = np.asarray(lower_bounds, dtype=float)
    correct = np.asarray(correct, dtype=float)
    n = lb.size
    if not 1 <= r <= n:
        raise ValueError(f"budget r={r} outside 1..{n}")
    order = sorted(range(n), key=lambda i: (-lb[i], i))
    total = math.comb(n, r)
    # the fit ranked j is selected iff it is drawn and none of the j better ones are
    p = [math.comb(n - 1 - j, r - 1) / total for j in range(n)]
    return float(sum(p[j] * correct[i] for j, i in enumerate(order)))


def _run_restart_dataset(args):
    cfg, index = args
    scenario = (cfg.k0, cfg.views, cfg.d, cfg.n_total, float(cfg.snr_db), float(cfg.lambda_true))
    seed = cell_seed(cfg.base_seed, scenario, index)
    try:
        spec = SimSpec(K0=cfg.k0, M=cfg.views, D=cfg.d, N_total=cfg.n_total, snr_db=cfg.snr_db,
                       lambda_true=cfg.lambda_true, seed=seed)
        data, truth = generate_dataset(spec)
        hp = make_hyperparameters(cfg.algorithm, data, cfg.noise_prior, cfg.max_iter,
                                  cfg.rel_tol)
        _, fits = fit_with_restarts(data, cfg.k, hp, n_restarts=cfg.fits_per_dataset,
                                    seed=seed, return_all=True)
    except (BCorrCAError, ValueError) as exc:
        return seed, [], f"{type(exc).__name__}: {exc}"
    per_fit = [
        {"dataset": index, "seed": seed, "fit": i, "fit_seed": f.seed,
         "lower_bound": f.lower_bound, "active_sources": metrics.count_active_sources(f),
         "mean_abs_corr": metrics.match_sources(f.posterior.z_mean, truth.z_true).mean_abs_corr}
        for i, f in enumerate(fits)
    ]
    return seed, per_fit, None


def run_restart_sweep(cfg: RestartSweepConfig, output=None, workers: int | None = None):
    """Accuracy of picking the right number of active sources vs. restart budget.

    Writes the accuracy table to ``output`` and every individual fit to a
    ``*_fits`` sibling. Returns ``(accuracy_rows, fit_rows)``.
    """
    output = Path(output or cfg.output)
    workers = workers_from_env() if workers is None else workers
    results = _map(_run_restart_dataset, [(cfg, i) for i in range(cfg.datasets)], workers)
    acc_rows, fit_rows = [], []
    for index, (seed, per_fit, error) in enumerate(results):
        if error:
            logger.warning("dataset %d failed: %s", index, error)
            acc_rows.extend({"dataset": index, "seed": seed, "restarts": r, "error": error}
                            for r in cfg.restart_budgets)
            continue
        fit_rows.extend(per_fit)
        lbs = [f["lower_bound"] for f in per_fit]
        correct = [f["active_sources"] == cfg.k0 for f in per_fit]
        for r in cfg.restart_budgets:
            if r > len(per_fit):
                acc_rows.append({"dataset": index, "seed": seed, "restarts": r,
                                 "error": f"only {len(per_fit)} fits succeeded"})
                continue
            acc_rows.append({"dataset": index, "seed": seed, "restarts": r,
                             "accuracy": selection_accuracy(lbs, correct, r)})
    _write_csv(output, ("dataset", "seed", "restarts", "accuracy", "error"), acc_rows)
    _write_csv(output.with_name(output.stem + "_fits" + output.suffix),
               ("dataset", "seed", "fit", "fit_seed", "lower_bound", "active_sources",
                "mean_abs_corr"), fit_rows)
    return acc_rows, fit_rows
