"""Evaluation measures for fitted models."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import DegenerateDataError, FitResult, InvalidDimensionError, ViewSet

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_K = 8


@dataclass
class MatchResult:
    assignment: np.ndarray  # true index -> estimated index
    mean_abs_corr: float
    per_pair_corr: np.ndarray


def correlation_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlations between rows of ``a`` and rows of ``b``; constant rows give 0."""
    a = np.atleast_2d(a) - np.mean(np.atleast_2d(a), axis=1, keepdims=True)
    b = np.atleast_2d(b) - np.mean(np.atleast_2d(b), axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a @ b.T) / np.outer(na, nb)
    c[~np.isfinite(c)] = 0.0
    c[na == 0, :] = 0.0
    c[:, nb == 0] = 0.0
    return c


def match_sources(z_est: np.ndarray, z_true: np.ndarray) -> MatchResult:
    """Pair each true source with a distinct estimate, maximising mean |corr|."""
    z_est, z_true = np.atleast_2d(z_est), np.atleast_2d(z_true)
    K, K0 = z_est.shape[0], z_true.shape[0]
    if K < K0:
        raise InvalidDimensionError(f"{K} estimated sources cannot cover {K0} true ones")
    if z_est.shape[1] != z_true.shape[1] or z_est.shape[1] < 3:
        raise InvalidDimensionError("source matrices need equal length N >= 3")
    corr = correlation_matrix(z_true, z_est)
    score = np.abs(corr)
    if K <= EXHAUSTIVE_MAX_K:
        perms = np.array(list(itertools.permutations(range(K), K0)))
        totals = score[np.arange(K0)[None, :], perms].sum(axis=1)
        assignment = perms[int(np.argmax(totals))]
    else:
        rows, cols = linear_sum_assignment(score, maximize=True)
        assignment = cols[np.argsort(rows)]
    per_pair = corr[np.arange(K0), assignment]
    return MatchResult(assignment, float(np.mean(np.abs(per_pair))), per_pair)


def reconstructed_variance(a_mean: np.ndarray, z_mean: np.ndarray) -> np.ndarray:
    """Per component: variance of the source times variance of its pattern entries.

    ``a_mean`` is ``(M, D, K)`` (or ``(D, K)``); pattern entries are pooled
    over views.
    """
    a = np.asarray(a_mean)
    if a.ndim == 2:
        a = a[None]
    pattern_var = a.reshape(-1, a.shape[-1]).var(axis=0)
    return np.var(z_mean, axis=1) * pattern_var


def count_active_sources(fit: FitResult | tuple, rel_threshold: float = 1e-3) -> int:
    """Components whose reconstructed variance is at least ``rel_threshold`` of the largest.

    ``fit`` is a :class:`FitResult` or an ``(a_mean, z_mean)`` pair.
    """
    if isinstance(fit, FitResult):
        a_mean, z_mean = fit.posterior.a_mean, fit.posterior.z_mean
    else:
        a_mean, z_mean = fit
    v = reconstructed_variance(a_mean, z_mean)
    if not np.any(v > 0):
        logger.warning("degenerate fit: every component has zero reconstructed variance")
        return 0
    return int(np.sum(v >= rel_threshold * v.max()))


def _mean_variance(q: np.ndarray, axis) -> float:
    return float(np.mean(np.var(q, axis=axis)))


def within_view_variance(quantities: Sequence[np.ndarray], axis=None) -> float:
    """Average over views of each view's variance along ``axis`` (all entries if None)."""
    q = [np.asarray(x, dtype=float) for x in quantities]
    if not q:
        raise InvalidDimensionError("need at least one view")
    return float(np.mean([_mean_variance(x, axis) for x in q]))


def between_view_variance(quantities: Sequence[np.ndarray], axis=None) -> float:
    """Average variance of pairwise differences over the pairs ``m < i``."""
    q = np.asarray([np.asarray(x, dtype=float) for x in quantities])
    M = q.shape[0]
    if M < 2:
        raise InvalidDimensionError("between-view variance needs M >= 2")
    if axis is not None and axis >= 0:
        axis = axis + 1
    m, i = np.triu_indices(M, k=1)
    diffs = q[m] - q[i]
    if axis is None:
        return float(np.mean(diffs.reshape(len(m), -1).var(axis=1)))
    return float(np.mean(np.var(diffs, axis=axis)))


def pve(data: ViewSet, a_mean: np.ndarray, z_mean: np.ndarray) -> np.ndarray:
    """Proportion of variance explained by ``A^(m) Z`` for each view."""
    X = data.views
    sst = np.sum((X - X.mean(axis=(1, 2), keepdims=True)) ** 2, axis=(1, 2))
    if np.any(sst == 0):
        raise DegenerateDataError("a view has zero total sum of squares")
    recon = np.einsum("mdk,kn->mdn", a_mean, z_mean)
    sse = np.sum((X - recon) ** 2, axis=(1, 2))
    return (sst - sse) / sst


def normalize_scale(a: np.ndarray, z: np.ndarray):
    """Move the scale of each source into its pattern so sources have unit std.

    ``a`` is ``(..., D, K)``. Constant sources are left untouched.
    """
    a = np.array(a, dtype=float)
    z = np.array(z, dtype=float)
    std = z.std(axis=1)
    ok = std > 0
    if not np.all(ok):
        logger.warning("components %s have zero variance; scale left undefined",
                       np.flatnonzero(~ok).tolist())
    s = np.where(ok, std, 1.0)
    return a * s, z / s[:, None]


def backward_filters(data: ViewSet, a_mean: np.ndarray, ridge: float = 0.0,
                     max_cond: float = 1e12):
    """Filters ``W^(m) = (R_xx^(m) + ridge I)^-1 A^(m)`` and components ``y^(m) = X^(m)^T W^(m)``.

    Returns ``(W, y)`` with shapes ``(M, D, K)`` and ``(M, N, K)``.
    """
    a_mean = np.asarray(a_mean, dtype=float)
    W = np.empty_like(a_mean)
    y = np.empty((data.M, data.N, a_mean.shape[-1]))
    for m, X in enumerate(data.views):
        Xc = X - X.mean(axis=1, keepdims=True)
        R = Xc @ Xc.T / data.N + ridge * np.eye(data.D)
        if np.linalg.cond(R) > max_cond:
            raise DegenerateDataError(f"covariance of view {m} is ill-conditioned")
        W[m] = np.linalg.solve(R, a_mean[m])
        y[m] = X.T @ W[m]
    return W, y


def standardize_by_grand_average(quantities: Sequence[np.ndarray]) -> np.ndarray:
    """Divide every view's pattern or time series by the std of their average over views.

    Puts quantities from differently scaled methods on a common footing
    before within/between-view variances are compared.
    """
    q = np.asarray([np.asarray(x, dtype=float) for x in quantities])
    if q.shape[0] < 1:
        raise InvalidDimensionError("need at least one view")
    sd = float(q.mean(axis=0).std())
    if sd == 0:
        raise DegenerateDataError("grand average is constant")
    return q / sd
