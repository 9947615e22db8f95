"""Domain types shared by the inference engine, baselines and harness.

Shapes follow one convention throughout the package:

* data views are stacked as ``(M, D, N)``
* view patterns ``A`` are ``(M, D, K)``; row covariances ``(M, D, K, K)``
* latent sources ``Z`` are ``(K, N)``
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class BCorrCAError(Exception):
    """Base class for errors raised by this package."""


class InvalidDimensionError(BCorrCAError, ValueError):
    pass


class DegenerateDataError(BCorrCAError, ValueError):
    pass


class InvalidStateError(BCorrCAError, AssertionError):
    """A posterior state violated a shape or positivity invariant."""


class NumericalBreakdownError(BCorrCAError, ArithmeticError):
    """An update produced a non-positive-definite or non-finite quantity."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (sweep {iteration})"
        super().__init__(message)


class NoiseModel(str, Enum):
    FULL = "full_precision"
    DIAGONAL = "diagonal_precision"


class Coupling(str, Enum):
    HIERARCHICAL = "hierarchical"
    INDEPENDENT = "independent"
    TIED = "tied"


# pinned E[lambda] for the non-hierarchical couplings
LAMBDA_INDEPENDENT = 1e-6
LAMBDA_TIED = 1e6


@dataclass
class ViewSet:
    """M parallel views, each ``D x N``, stored as one ``(M, D, N)`` array."""

    views: np.ndarray

    def __post_init__(self):
        if isinstance(self.views, (list, tuple)):
            shapes = {np.shape(v) for v in self.views}
            if len(shapes) > 1:
                raise InvalidDimensionError(f"views differ in shape: {sorted(shapes)}")
        views = np.asarray(self.views, dtype=float)
        if views.ndim == 2:
            views = views[None]
        if views.ndim != 3 or min(views.shape) < 1:
            raise InvalidDimensionError(f"expected (M, D, N) views, got shape {views.shape}")
        if not np.all(np.isfinite(views)):
            raise DegenerateDataError("views contain non-finite entries")
        self.views = views

    @classmethod
    def from_list(cls, views: Sequence[np.ndarray]) -> "ViewSet":
        return cls(list(views))

    @property
    def M(self) -> int:
        return self.views.shape[0]

    @property
    def D(self) -> int:
        return self.views.shape[1]

    @property
    def N(self) -> int:
        return self.views.shape[2]

    def __len__(self) -> int:
        return self.M

    def __getitem__(self, m: int) -> np.ndarray:
        return self.views[m]


@dataclass
class Hyperparameters:
    """Prior constants and fitting settings.

    ``S0`` may be a single ``(D, D)`` Wishart scale shared by all views or a
    stack ``(M, D, D)`` with one scale per view (see
    :func:`informed_noise_prior`).
    """

    S0: np.ndarray
    v0: float
    a0: float = 1e-3
    b0: float = 1e-3
    noise_model: NoiseModel = NoiseModel.FULL
    coupling: Coupling = Coupling.HIERARCHICAL
    max_iter: int = 500
    rel_tol: float = 1e-9

    def __post_init__(self):
        self.S0 = np.asarray(self.S0, dtype=float)
        self.noise_model = NoiseModel(self.noise_model)
        self.coupling = Coupling(self.coupling)
        if self.S0.ndim not in (2, 3) or self.S0.shape[-1] != self.S0.shape[-2]:
            raise InvalidDimensionError(f"S0 must be (D, D) or (M, D, D), got {self.S0.shape}")
        D = self.S0.shape[-1]
        if self.v0 < D:
            raise ValueError(f"v0={self.v0} must be >= D={D}")
        if self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("a0 and b0 must be positive")
        if self.max_iter < 1 or self.rel_tol <= 0:
            raise ValueError("max_iter must be >= 1 and rel_tol > 0")
        S = self.S0 if self.S0.ndim == 3 else self.S0[None]
        if not np.allclose(S, np.swapaxes(S, -1, -2)):
            raise ValueError("S0 must be symmetric")
        if np.any(np.linalg.eigvalsh(S) <= 0):
            raise ValueError("S0 must be positive definite")

    @property
    def D(self) -> int:
        return self.S0.shape[-1]

    def S0_for(self, M: int) -> np.ndarray:
        """Prior scale broadcast to ``(M, D, D)``."""
        if self.S0.ndim == 2:
            return np.broadcast_to(self.S0, (M,) + self.S0.shape)
        if self.S0.shape[0] != M:
            raise InvalidDimensionError(f"S0 holds {self.S0.shape[0]} views, data has {M}")
        return self.S0

    def to_dict(self) -> dict:
        return {
            "S0": self.S0.tolist(),
            "v0": float(self.v0),
            "a0": float(self.a0),
            "b0": float(self.b0),
            "noise_model": self.noise_model.value,
            "coupling": self.coupling.value,
            "max_iter": int(self.max_iter),
            "rel_tol": float(self.rel_tol),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        return cls(**d)


def default_hyperparameters(D: int) -> Hyperparameters:
    """Non-informative defaults: ``S0 = 1e-3 I``, ``v0 = D + 1``, ``a0 = b0 = 1e-3``."""
    if int(D) != D or D < 1:
        raise InvalidDimensionError(f"D must be a positive integer, got {D}")
    D = int(D)
    return Hyperparameters(S0=1e-3 * np.eye(D), v0=D + 1, a0=1e-3, b0=1e-3)


def informed_noise_prior(data: ViewSet, v0: float, per_channel: bool = False) -> np.ndarray:
    """Empirical Wishart scales ``var[X^(m)] I``, one per view.

    The variance is pooled over all ``D x N`` entries of each view. With
    ``per_channel=True`` a diagonal of per-channel variances is used instead.
    Returns an ``(M, D, D)`` stack suitable for ``Hyperparameters.S0``.
    """
    if data.M < 1:
        raise InvalidDimensionError("empty view set")
    if v0 < data.D:
        raise ValueError(f"v0={v0} must be >= D={data.D}")
    out = np.empty((data.M, data.D, data.D))
    for m, X in enumerate(data.views):
        if per_channel:
            var = X.var(axis=1)
            if np.any(var <= 0):
                raise DegenerateDataError(f"view {m} has a constant channel")
            out[m] = np.diag(var)
        else:
            var = X.var()
            if var <= 0:
                raise DegenerateDataError(f"view {m} has zero variance")
            out[m] = var * np.eye(data.D)
    return out


@dataclass
class PosteriorState:
    """Parameters of every variational factor.

    ``psi_scale`` and ``psi_dof`` parameterise the Wishart factor of each
    view's noise precision so that ``E[Psi] = psi_dof * psi_scale``. The gamma
    factors use shape/rate so ``E[alpha_k] = alpha_shape / alpha_rate[k]``.
    """

    z_mean: np.ndarray
    z_cov: np.ndarray
    psi_scale: np.ndarray
    psi_dof: float
    a_mean: np.ndarray
    a_cov: np.ndarray
    u_mean: np.ndarray
    u_var: np.ndarray
    alpha_shape: float
    alpha_rate: np.ndarray
    lambda_shape: float
    lambda_rate: float

    @property
    def M(self) -> int:
        return self.a_mean.shape[0]

    @property
    def D(self) -> int:
        return self.a_mean.shape[1]

    @property
    def K(self) -> int:
        return self.a_mean.shape[2]

    @property
    def N(self) -> int:
        return self.z_mean.shape[1]

    def copy(self) -> "PosteriorState":
        return copy.deepcopy(self)

    def validate(self, M: int | None = None, D: int | None = None,
                 N: int | None = None, K: int | None = None) -> None:
        """Raise :class:`InvalidStateError` if any invariant is violated."""
        M = self.M if M is None else M
        D = self.D if D is None else D
        N = self.N if N is None else N
        K = self.K if K is None else K
        expected = {
            "z_mean": (K, N),
            "z_cov": (K, K),
            "psi_scale": (M, D, D),
            "a_mean": (M, D, K),
            "a_cov": (M, D, K, K),
            "u_mean": (D, K),
            "u_var": (K,),
            "alpha_rate": (K,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise InvalidStateError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidStateError(f"{name} has non-finite entries")
        for name in ("z_cov", "psi_scale", "a_cov"):
            arr = getattr(self, name)
            if not np.allclose(arr, np.swapaxes(arr, -1, -2), rtol=1e-10, atol=1e-12):
                raise InvalidStateError(f"{name} is not symmetric")
            if np.any(np.linalg.eigvalsh(arr) <= 0):
                raise InvalidStateError(f"{name} is not positive definite")
        for name in ("psi_dof", "u_var", "alpha_shape", "alpha_rate",
                     "lambda_shape", "lambda_rate"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise InvalidStateError(f"{name} must be strictly positive")

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.tolist() if isinstance(value, np.ndarray) else float(value)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorState":
        scalars = {"psi_dof", "alpha_shape", "lambda_shape", "lambda_rate"}
        return cls(**{k: float(v) if k in scalars else np.asarray(v, dtype=float)
                      for k, v in d.items()})


@dataclass
class FitResult:
    posterior: PosteriorState
    lb_trace: list[float]
    iterations: int
    converged: bool
    lambda_point: float
    alpha_point: np.ndarray
    seed: int | None = None
    restart_errors: list[str] = field(default_factory=list)

    @property
    def lower_bound(self) -> float:
        return self.lb_trace[-1] if self.lb_trace else float("-inf")


@dataclass
class GroundTruth:
    """Generating quantities of a synthetic dataset.

    ``noise_var`` holds one variance per view since the SNR is set against
    each view's own clean-signal power.
    """

    z_true: np.ndarray
    u_true: np.ndarray
    a_true: np.ndarray
    lambda_true: float
    noise_var: np.ndarray
    snr_db: float

    @property
    def delta(self) -> np.ndarray:
        return self.a_true - self.u_true[None]
