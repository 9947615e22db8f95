"""Eigenvalue solvers for CCA and CorrCA, and the multi-view concatenation scheme."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import BCorrCAError, InvalidDimensionError, ViewSet


class IllConditionedError(BCorrCAError, ValueError):
    pass


@dataclass
class EigenSolution:
    """Filters and correlations from CCA or CorrCA.

    ``weights`` is ``(2, D, K)``; for CorrCA both entries hold the same
    shared filter matrix.
    """

    weights: np.ndarray
    correlations: np.ndarray
    shared: bool

    def project(self, data: ViewSet) -> np.ndarray:
        """Source estimate: view-averaged projections ``X^(m)^T w``, ``(K, N)``.

        The first filter set is applied to every view, which is what the
        pairwise-concatenation scheme fits.
        """
        w = self.weights[0]
        return np.mean([w.T @ X for X in data.views], axis=0)


@dataclass(frozen=True)
class OrthogonalMixCase:
    """Two views mixing one source through orthogonal unit patterns."""

    a1: np.ndarray
    a2: np.ndarray
    P: float
    sigma2: float

    def __post_init__(self):
        if not (np.isclose(np.linalg.norm(self.a1), 1.0)
                and np.isclose(np.linalg.norm(self.a2), 1.0)):
            raise ValueError("patterns must have unit length")
        if not np.isclose(self.a1 @ self.a2, 0.0):
            raise ValueError("patterns must be orthogonal")
        if self.P <= 0 or self.sigma2 <= 0:
            raise ValueError("P and sigma2 must be positive")

    @classmethod
    def random(cls, D: int, P: float, sigma2: float, seed=None) -> "OrthogonalMixCase":
        q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((D, 2)))
        return cls(q[:, 0], q[:, 1], P, sigma2)

    def covariances(self):
        """Population ``(R11, R12, R21, R22)``."""
        D = self.a1.size
        R11 = self.P * np.outer(self.a1, self.a1) + self.sigma2 * np.eye(D)
        R22 = self.P * np.outer(self.a2, self.a2) + self.sigma2 * np.eye(D)
        R12 = self.P * np.outer(self.a1, self.a2)
        return R11, R12, R12.T, R22

    @property
    def top_eigenvalue(self) -> float:
        return self.P / (2 * self.sigma2 + self.P)


def sample_covariances(x1: np.ndarray, x2: np.ndarray, center: bool = True):
    """``R_ij = X_i X_j^T / N`` after optional per-row mean removal."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape[1] != x2.shape[1]:
        raise InvalidDimensionError("views must have the same number of samples")
    N = x1.shape[1]
    if center and N < 2:
        raise InvalidDimensionError("need at least 2 samples to centre")
    if center:
        x1 = x1 - x1.mean(axis=1, keepdims=True)
        x2 = x2 - x2.mean(axis=1, keepdims=True)
    R12 = x1 @ x2.T / N
    return x1 @ x1.T / N, R12, R12.T, x2 @ x2.T / N


def _default_ridge(R: np.ndarray) -> float:
    return 1e-8 * np.trace(R) / R.shape[0]


def _regularize(R: np.ndarray, ridge: float | None) -> np.ndarray:
    ridge = _default_ridge(R) if ridge is None else ridge
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    R = R + ridge * np.eye(R.shape[0])
    if np.linalg.cond(R) > 1e14:
        raise IllConditionedError("regularised covariance is singular")
    return R


def _fix_sign(w: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(w), axis=0)
    signs = np.sign(w[idx, np.arange(w.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _unit_variance(w: np.ndarray, R: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.einsum("dk,de,ek->k", w, R, w))
    scale[scale == 0] = 1.0
    return w / scale


def cca_from_covariances(R11, R12, R21, R22, K: int = 1, ridge: float | None = None):
    D1 = R11.shape[0]
    if not 1 <= K <= min(D1, R22.shape[0]):
        raise InvalidDimensionError(f"K={K} out of range")
    R11r, R22r = _regularize(R11, ridge), _regularize(R22, ridge)
    # R11^-1 R12 R22^-1 R21 w = rho^2 w, solved as a symmetric-definite pencil
    lhs = R12 @ scipy.linalg.solve(R22r, R21, assume_a="pos")
    rho2, vecs = scipy.linalg.eigh(0.5 * (lhs + lhs.T), R11r)
    order = np.argsort(rho2)[::-1][:K]
    rho = np.sqrt(np.clip(rho2[order], 0.0, None))
    w1 = _unit_variance(vecs[:, order], R11r)
    w2 = _unit_variance(scipy.linalg.solve(R22r, R21 @ w1, assume_a="pos"), R22r)
    # the pairing fixes w2's sign relative to w1, so only w1 is normalised
    signs = _fix_sign(w1)
    return EigenSolution(np.stack([w1 * signs, w2 * signs]), rho, shared=False)


def corrca_from_covariances(R11, R12, R21, R22, K: int = 1, ridge: float | None = None):
    D = R11.shape[0]
    if R22.shape[0] != D:
        raise InvalidDimensionError("CorrCA needs views of equal dimension")
    if not 1 <= K <= D:
        raise InvalidDimensionError(f"K={K} out of range")
    within = _regularize(R11 + R22, ridge)
    between = R12 + R21
    rho, vecs = scipy.linalg.eigh(0.5 * (between + between.T), within)
    order = np.argsort(rho)[::-1][:K]
    w = _unit_variance(vecs[:, order], 0.5 * within)
    w = w * _fix_sign(w)
    return EigenSolution(np.stack([w, w]), rho[order], shared=True)


def cca(x1, x2, K: int = 1, ridge: float | None = None) -> EigenSolution:
    """Canonical correlation analysis of two ``D x N`` views."""
    return cca_from_covariances(*sample_covariances(x1, x2, center=True), K=K, ridge=ridge)


def corrca(x1, x2, K: int = 1, ridge: float | None = None) -> EigenSolution:
    """Correlated component analysis: one filter shared by both views."""
    return corrca_from_covariances(*sample_covariances(x1, x2, center=True), K=K, ridge=ridge)


def pairwise_concatenate(views: ViewSet):
    """Stack every ordered view pair ``(i, j), i != j`` side by side in time.

    Returns ``(xA, xB)`` each ``D x N M (M - 1)``.
    """
    if not isinstance(views, ViewSet):
        views = ViewSet(views)
    if views.M < 2:
        raise InvalidDimensionError(f"pairwise concatenation needs M >= 2 views, got {views.M}")
    pairs = [(i, j) for i in range(views.M) for j in range(views.M) if i != j]
    xA = np.concatenate([views[i] for i, _ in pairs], axis=1)
    xB = np.concatenate([views[j] for _, j in pairs], axis=1)
    return xA, xB


def multiview(method: str, data: ViewSet, K: int = 1, ridge: float | None = None) -> EigenSolution:
    """Run ``"cca"`` or ``"corrca"`` on the pairwise concatenation of all views."""
    solvers = {"cca": cca, "corrca": corrca}
    if method not in solvers:
        raise ValueError(f"unknown method {method!r}")
    return solvers[method](*pairwise_concatenate(data), K=K, ridge=ridge)
