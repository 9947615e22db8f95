"""On-disk formats.

A dataset is a directory holding ``manifest.json`` and one comma-delimited
text matrix per view (``D`` rows by ``N`` columns, no header). Synthetic
datasets add a ``truth`` section naming the ground-truth matrices, which are
stored the same way. Fit results are JSON documents carrying every
posterior parameter, the lower-bound trace and provenance.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import EigenSolution
from .model import FitResult, GroundTruth, Hyperparameters, PosteriorState, ViewSet

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


class FormatError(ValueError):
    pass


def _write_matrix(path: Path, a: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(a), fmt="%.17g", delimiter=",")


def _read_matrix(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_dataset(directory, data: ViewSet, truth: GroundTruth | None = None,
                  simulation: dict | None = None) -> Path:
    """Write views (and optional ground truth) under ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = len(str(data.M))
    names = [f"view_{m + 1:0{width}d}.csv" for m in range(data.M)]
    for name, X in zip(names, data.views):
        _write_matrix(directory / name, X)
    manifest = {
        "format_version": FORMAT_VERSION,
        "shape": {"M": data.M, "D": data.D, "N": data.N},
        "views": names,
    }
    if simulation is not None:
        manifest["simulation"] = simulation
    if truth is not None:
        a_names = [f"a_true_{m + 1:0{width}d}.csv" for m in range(truth.a_true.shape[0])]
        _write_matrix(directory / "z_true.csv", truth.z_true)
        _write_matrix(directory / "u_true.csv", truth.u_true)
        for name, a in zip(a_names, truth.a_true):
            _write_matrix(directory / name, a)
        manifest["truth"] = {
            "z_true": "z_true.csv",
            "u_true": "u_true.csv",
            "a_true": a_names,
            "lambda_true": truth.lambda_true,
            "noise_var": [float(v) for v in truth.noise_var],
            "snr_db": truth.snr_db,
        }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def read_manifest(path) -> dict:
    path = _manifest_path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {manifest.get('format_version')}")
    if not manifest.get("views"):
        raise FormatError(f"{path}: no views listed")
    return manifest


def read_dataset(path) -> tuple[ViewSet, GroundTruth | None]:
    mpath = _manifest_path(path)
    manifest = read_manifest(mpath)
    root = mpath.parent
    data = ViewSet([_read_matrix(root / name) for name in manifest["views"]])
    shape = manifest.get("shape")
    if shape and (shape["M"], shape["D"], shape["N"]) != (data.M, data.D, data.N):
        raise FormatError(f"{mpath}: view files do not match the declared shape {shape}")
    truth = None
    if "truth" in manifest:
        t = manifest["truth"]
        truth = GroundTruth(
            z_true=_read_matrix(root / t["z_true"]),
            u_true=_read_matrix(root / t["u_true"]),
            a_true=np.stack([_read_matrix(root / n) for n in t["a_true"]]),
            lambda_true=float(t["lambda_true"]),
            noise_var=np.asarray(t["noise_var"], dtype=float),
            snr_db=float(t["snr_db"]),
        )
    return data, truth


def dataset_hash(path) -> str:
    """SHA-256 over the manifest and every view file it lists."""
    mpath = _manifest_path(path)
    h = hashlib.sha256(mpath.read_bytes())
    for name in read_manifest(mpath)["views"]:
        h.update((mpath.parent / name).read_bytes())
    return h.hexdigest()


def fit_result_to_dict(result: FitResult, hp: Hyperparameters, algorithm: str = "bcorrca",
                       data_hash: str | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "variational_fit",
        "algorithm": algorithm,
        "posterior": result.posterior.to_dict(),
        "lb_trace": [float(x) for x in result.lb_trace],
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "lambda_point": float(result.lambda_point),
        "alpha_point": [float(x) for x in result.alpha_point],
        "restart_errors": list(result.restart_errors),
        "provenance": {
            "seed": result.seed,
            "hyperparameters": hp.to_dict(),
            "dataset_sha256": data_hash,
            "package_version": __version__,
        },
    }


def fit_result_from_dict(doc: dict) -> tuple[FitResult, Hyperparameters]:
    if doc.get("format_version") != FORMAT_VERSION or doc.get("kind") != "variational_fit":
        raise FormatError("not a version-1 variational fit document")
    result = FitResult(
        posterior=PosteriorState.from_dict(doc["posterior"]),
        lb_trace=list(doc["lb_trace"]),
        iterations=int(doc["iterations"]),
        converged=bool(doc["converged"]),
        lambda_point=float(doc["lambda_point"]),
        alpha_point=np.asarray(doc["alpha_point"]),
        seed=doc["provenance"]["seed"],
        restart_errors=list(doc.get("restart_errors", [])),
    )
    return result, Hyperparameters.from_dict(doc["provenance"]["hyperparameters"])


def eigen_solution_to_dict(sol: EigenSolution, algorithm: str, data_hash: str | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "eigen_solution",
        "algorithm": algorithm,
        "weights": sol.weights.tolist(),
        "correlations": sol.correlations.tolist(),
        "shared": sol.shared,
        "provenance": {"dataset_sha256": data_hash, "package_version": __version__},
    }


def eigen_solution_from_dict(doc: dict) -> EigenSolution:
    if doc.get("format_version") != FORMAT_VERSION or doc.get("kind") != "eigen_solution":
        raise FormatError("not a version-1 eigen solution document")
    return EigenSolution(np.asarray(doc["weights"]), np.asarray(doc["correlations"]),
                         bool(doc["shared"]))


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
