"""Variational inference for Bayesian correlated component analysis.

The model couples per-view patterns ``A^(m)`` to a common pattern ``U``
through a shared precision ``lambda``::

    X^(m) ~ N(A^(m) Z, Psi^(m)^-1)      Z ~ N(0, I)
    a_k^(m) ~ N(u_k, lambda^-1 I)        u_k ~ N(0, alpha_k^-1 I)
    Psi^(m) ~ W(S0, v0)                  alpha_k, lambda ~ Ga(a0, b0)

and is fitted by coordinate ascent over a fully factorised posterior. Each
sweep updates Z, then A view by view, then Psi, U, alpha and lambda. Putting
Psi after A (and alpha, lambda after U) leaves every collapsed factor
optimal for the current moments at the end of a sweep, which is what makes
the compact lower bound in :func:`lower_bound` equal to the true bound up to
a constant.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln

from .model import (
    LAMBDA_INDEPENDENT,
    LAMBDA_TIED,
    BCorrCAError,
    Coupling,
    FitResult,
    Hyperparameters,
    NoiseModel,
    NumericalBreakdownError,
    PosteriorState,
    ViewSet,
)

logger = logging.getLogger(__name__)

_RESTART_KEY = 0x5EED


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _pinned_lambda(coupling: Coupling) -> float | None:
    if coupling is Coupling.INDEPENDENT:
        return LAMBDA_INDEPENDENT
    if coupling is Coupling.TIED:
        return LAMBDA_TIED
    return None


@dataclass
class MomentCache:
    """Posterior expectations consumed by the updates."""

    zz_sum: np.ndarray      # (K, K)  sum_n E[z_n z_n^T]
    psi_mean: np.ndarray    # (M, D, D)
    lambda_mean: float
    alpha_mean: np.ndarray  # (K,)
    u_sqnorm: np.ndarray    # (K,)  E[u_k^T u_k]
    a_sqnorm: np.ndarray    # (M, K)  E[a_k^T a_k]
    atpa: np.ndarray        # (M, K, K)  E[A^T Psi A]

    @classmethod
    def from_state(cls, state: PosteriorState) -> "MomentCache":
        cache = cls(
            zz_sum=np.zeros((state.K, state.K)),
            psi_mean=np.zeros_like(state.psi_scale),
            lambda_mean=0.0,
            alpha_mean=np.zeros(state.K),
            u_sqnorm=np.zeros(state.K),
            a_sqnorm=np.zeros((state.M, state.K)),
            atpa=np.zeros((state.M, state.K, state.K)),
        )
        cache.refresh_z(state)
        cache.refresh_psi(state)
        cache.refresh_u(state)
        cache.refresh_alpha(state)
        cache.refresh_lambda(state)
        return cache

    def refresh_z(self, state: PosteriorState) -> None:
        self.zz_sum = _sym(state.N * state.z_cov + state.z_mean @ state.z_mean.T)

    def refresh_psi(self, state: PosteriorState) -> None:
        """Refresh E[Psi] and everything derived from it (all views of E[A^T Psi A])."""
        self.psi_mean = state.psi_dof * state.psi_scale
        for m in range(state.M):
            self.refresh_a(state, m)

    def refresh_a(self, state: PosteriorState, m: int) -> None:
        mu, cov, psi = state.a_mean[m], state.a_cov[m], self.psi_mean[m]
        self.atpa[m] = _sym(mu.T @ psi @ mu + np.einsum("d,dkj->kj", np.diag(psi), cov))
        self.a_sqnorm[m] = np.sum(mu ** 2, axis=0) + np.einsum("dkk->k", cov)

    def refresh_u(self, state: PosteriorState) -> None:
        self.u_sqnorm = np.sum(state.u_mean ** 2, axis=0) + state.D * state.u_var

    def refresh_alpha(self, state: PosteriorState) -> None:
        self.alpha_mean = state.alpha_shape / state.alpha_rate

    def refresh_lambda(self, state: PosteriorState) -> None:
        self.lambda_mean = state.lambda_shape / state.lambda_rate


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def init_posterior(data: ViewSet, K: int, hp: Hyperparameters, seed=None) -> PosteriorState:
    """Random starting point for the coordinate ascent.

    ``E[alpha] = E[lambda] = 1`` (pinned couplings start at their pin),
    patterns are standard normal scaled by ``1/sqrt(K)``, and the noise
    factor is set so that ``E[Psi] = I``.
    """
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    K = int(K)
    M, D, N = data.M, data.D, data.N
    if hp.D != D:
        raise ValueError(f"hyperparameters are for D={hp.D}, data has D={D}")
    hp.S0_for(M)
    if K > D * M:
        warnings.warn(f"K={K} exceeds D*M={D * M}; surplus components will be pruned",
                      RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    alpha_shape = hp.a0 + D / 2.0
    pin = _pinned_lambda(hp.coupling)
    if pin is None:
        lambda_shape, lambda_rate = hp.a0 + M * K * D / 2.0, hp.a0 + M * K * D / 2.0
    else:
        lambda_shape, lambda_rate = pin, 1.0
    return PosteriorState(
        z_mean=np.zeros((K, N)),
        z_cov=np.eye(K),
        psi_scale=np.broadcast_to(np.eye(D) / hp.v0, (M, D, D)).copy(),
        psi_dof=float(hp.v0),
        a_mean=rng.standard_normal((M, D, K)) / np.sqrt(K),
        a_cov=np.broadcast_to(np.eye(K), (M, D, K, K)).copy(),
        u_mean=np.zeros((D, K)),
        u_var=np.ones(K),
        alpha_shape=alpha_shape,
        alpha_rate=np.full(K, alpha_shape),
        lambda_shape=lambda_shape,
        lambda_rate=lambda_rate,
    )


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------


def update_z(state: PosteriorState, data: ViewSet, cache: MomentCache) -> None:
    K = state.K
    prec = cache.atpa.sum(axis=0) + np.eye(K)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdownError("source precision is not positive definite") from exc
    eye = np.eye(K)
    inv_chol = np.linalg.solve(chol, eye)
    state.z_cov = _sym(inv_chol.T @ inv_chol)
    # sum_m E[A]^T E[Psi] X^(m)
    rhs = np.einsum("mdk,mde,men->kn", state.a_mean, cache.psi_mean, data.views, optimize=True)
    state.z_mean = state.z_cov @ rhs


def psi_inverse_scale(state: PosteriorState, data: ViewSet, cache: MomentCache,
                      hp: Hyperparameters, m: int) -> np.ndarray:
    """``S_Psi^(m)^-1`` before any noise-model restriction."""
    X, mu = data.views[m], state.a_mean[m]
    zz = cache.zz_sum
    S0 = hp.S0_for(state.M)[m]
    # E[A zz A^T] = mu zz mu^T + diag_d tr(zz Sigma_a_d)
    eazza = mu @ zz @ mu.T + np.diag(np.einsum("kj,djk->d", zz, state.a_cov[m]))
    cross = X @ state.z_mean.T @ mu.T
    return _sym(eazza + X @ X.T - cross - cross.T + np.linalg.inv(S0))


def update_psi(state: PosteriorState, data: ViewSet, cache: MomentCache,
               hp: Hyperparameters) -> None:
    new_scale = np.empty_like(state.psi_scale)
    for m in range(state.M):
        inv_scale = psi_inverse_scale(state, data, cache, hp, m)
        if hp.noise_model is NoiseModel.DIAGONAL:
            diag = np.diag(inv_scale)
            if np.any(diag <= 0):
                raise NumericalBreakdownError(f"noise scale of view {m} is not positive")
            new_scale[m] = np.diag(1.0 / diag)
            continue
        try:
            chol = np.linalg.cholesky(inv_scale)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdownError(
                f"noise scale of view {m} is not positive definite") from exc
        inv_chol = np.linalg.solve(chol, np.eye(state.D))
        new_scale[m] = _sym(inv_chol.T @ inv_chol)
    state.psi_scale = new_scale
    state.psi_dof = float(data.N + hp.v0)


def update_a(state: PosteriorState, data: ViewSet, cache: MomentCache, m: int) -> None:
    """Update the rows of ``A^(m)`` one after another.

    Rows share the noise precision, so row ``d`` uses the freshly updated
    means of rows ``< d``.
    """
    K, D = state.K, state.D
    psi = cache.psi_mean[m]
    zz = cache.zz_sum
    lam = cache.lambda_mean
    psi_diag = np.diag(psi)
    prec = psi_diag[:, None, None] * zz[None] + lam * np.eye(K)[None]
    try:
        cov = _sym(np.linalg.inv(prec))
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdownError(f"pattern precision of view {m} is singular") from exc
    # sum_n E[z_n] E[psi_(d,:)] x_n  for every d, plus the pull towards U
    rhs = psi @ data.views[m] @ state.z_mean.T + lam * state.u_mean
    mu = state.a_mean[m].copy()
    for d in range(D):
        # sum_{d' != d} psi_dd' mu_d'
        coupled = psi[d] @ mu - psi_diag[d] * mu[d]
        mu[d] = cov[d] @ (rhs[d] - zz @ coupled)
    state.a_mean[m] = mu
    state.a_cov[m] = cov


def update_u(state: PosteriorState, cache: MomentCache, M: int | None = None) -> None:
    M = state.M if M is None else M
    lam = cache.lambda_mean
    state.u_var = 1.0 / (M * lam + cache.alpha_mean)
    state.u_mean = state.u_var[None, :] * lam * state.a_mean.sum(axis=0)


def update_alpha(state: PosteriorState, cache: MomentCache, hp: Hyperparameters,
                 D: int | None = None) -> None:
    D = state.D if D is None else D
    state.alpha_shape = hp.a0 + D / 2.0
    state.alpha_rate = hp.b0 + 0.5 * cache.u_sqnorm


def _pattern_deviation(state: PosteriorState, cache: MomentCache) -> float:
    """sum_k sum_m E[(a_k - u_k)^T (a_k - u_k)] under the current moments."""
    cross = np.einsum("mdk,dk->", state.a_mean, state.u_mean)
    return float(cache.a_sqnorm.sum() + state.M * cache.u_sqnorm.sum() - 2.0 * cross)


def update_lambda(state: PosteriorState, cache: MomentCache, hp: Hyperparameters,
                  M: int | None = None, K: int | None = None, D: int | None = None) -> None:
    M = state.M if M is None else M
    K = state.K if K is None else K
    D = state.D if D is None else D
    state.lambda_shape = hp.a0 + M * K * D / 2.0
    cross = np.einsum("mdk,dk->k", state.a_mean, state.u_mean)
    bracket = M * cache.u_sqnorm / 2.0 + cache.a_sqnorm.sum(axis=0) / 2.0 - cross
    rate = hp.b0 + float(bracket.sum())
    if not rate > 0:
        raise NumericalBreakdownError(f"lambda rate became {rate}")
    state.lambda_rate = rate


# ---------------------------------------------------------------------------
# lower bound
# ---------------------------------------------------------------------------


def _logdet(a: np.ndarray, what: str) -> np.ndarray:
    sign, logdet = np.linalg.slogdet(a)
    if np.any(sign <= 0):
        raise NumericalBreakdownError(f"{what} is not positive definite")
    return logdet


def lower_bound(state: PosteriorState, data: ViewSet, cache: MomentCache,
                hp: Hyperparameters, include_constant: bool = False) -> float:
    """Compact variational lower bound, by default without its additive constant.

    Only valid when Psi, alpha and lambda are at their optimum for the
    current moments, i.e. at the end of a sweep of :func:`fit`.
    """
    N, D = state.N, state.D
    L = 0.5 * state.psi_dof * _logdet(state.psi_scale, "noise scale").sum()
    L += 0.5 * _logdet(state.a_cov, "pattern covariance").sum()
    if hp.coupling is Coupling.HIERARCHICAL:
        L -= state.lambda_shape * np.log(state.lambda_rate)
    elif hp.coupling is Coupling.TIED:
        L -= 0.5 * cache.lambda_mean * _pattern_deviation(state, cache)
    else:
        L -= 0.5 * cache.lambda_mean * float(cache.a_sqnorm.sum())
    if hp.coupling is not Coupling.INDEPENDENT:
        L += float(np.sum(-state.alpha_shape * np.log(state.alpha_rate)
                          + 0.5 * D * np.log(state.u_var)))
    L += 0.5 * N * _logdet(state.z_cov, "source covariance")
    L -= 0.5 * (N * np.trace(state.z_cov) + np.sum(state.z_mean ** 2))
    if include_constant:
        L += lower_bound_constant(state, hp)
    return float(L)


def lower_bound_constant(state: PosteriorState, hp: Hyperparameters) -> float:
    """The additive constant dropped by :func:`lower_bound`.

    It depends on the dimensions (including ``K``) and the priors, so it is
    needed whenever bounds of models with different ``K`` are compared.
    """
    M, D, N, K = state.M, state.D, state.N, state.K
    v0, v = hp.v0, N + hp.v0
    S0 = hp.S0_for(M)
    ln2pi = np.log(2 * np.pi)
    if hp.noise_model is NoiseModel.DIAGONAL:
        s0 = np.diagonal(S0, axis1=1, axis2=2)
        C = float(np.sum(-0.5 * N * np.log(np.pi) - 0.5 * v0 * np.log(s0)
                         + gammaln(v / 2) - gammaln(v0 / 2)))
    else:
        C = float(np.sum(-0.5 * N * D * np.log(np.pi) - 0.5 * v0 * _logdet(S0, "S0")
                         + multigammaln(v / 2, D) - multigammaln(v0 / 2, D)))
    C += 0.5 * N * K + 0.5 * M * D * K * (1 + ln2pi)
    gamma_norm = hp.a0 * np.log(hp.b0) - gammaln(hp.a0)
    if hp.coupling is Coupling.HIERARCHICAL:
        C += -0.5 * M * K * D * ln2pi + gamma_norm + gammaln(state.lambda_shape)
    else:
        lam = state.lambda_shape / state.lambda_rate
        C += 0.5 * M * K * D * (np.log(lam) - ln2pi)
    if hp.coupling is not Coupling.INDEPENDENT:
        C += K * (0.5 * D + gamma_norm + gammaln(state.alpha_shape))
    return float(C)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def sweep(state: PosteriorState, data: ViewSet, cache: MomentCache,
          hp: Hyperparameters, validate: bool = False) -> None:
    """One pass of coordinate ascent over every factor, in place."""
    check = state.validate if validate else (lambda: None)
    update_z(state, data, cache)
    cache.refresh_z(state)
    check()
    for m in range(data.M):
        update_a(state, data, cache, m)
        cache.refresh_a(state, m)
        check()
    update_psi(state, data, cache, hp)
    cache.refresh_psi(state)
    check()
    if hp.coupling is Coupling.INDEPENDENT:
        return
    update_u(state, cache)
    cache.refresh_u(state)
    check()
    update_alpha(state, cache, hp)
    cache.refresh_alpha(state)
    check()
    if hp.coupling is Coupling.HIERARCHICAL:
        update_lambda(state, cache, hp)
        cache.refresh_lambda(state)
        check()


def fit(data: ViewSet, K: int, hp: Hyperparameters, seed=None,
        validate: bool = False) -> FitResult:
    """Run coordinate ascent until the relative change of the bound is below ``hp.rel_tol``."""
    state = init_posterior(data, K, hp, seed)
    cache = MomentCache.from_state(state)
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, hp.max_iter + 1):
        try:
            sweep(state, data, cache, hp, validate=validate)
            L = lower_bound(state, data, cache, hp)
        except NumericalBreakdownError as exc:
            raise NumericalBreakdownError(str(exc), iteration=it) from exc
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdownError(f"linear algebra failure: {exc}", iteration=it) from exc
        if not np.isfinite(L):
            raise NumericalBreakdownError("lower bound is not finite", iteration=it)
        trace.append(L)
        if len(trace) > 1 and abs(L - trace[-2]) / (abs(L) + 1.0) < hp.rel_tol:
            converged = True
            break
    logger.debug("fit K=%d seed=%s: %d sweeps, L=%.6g, converged=%s",
                 K, seed, it, trace[-1], converged)
    return FitResult(
        posterior=state,
        lb_trace=trace,
        iterations=it,
        converged=converged,
        lambda_point=state.lambda_shape / state.lambda_rate,
        alpha_point=state.alpha_shape / state.alpha_rate,
        seed=None if seed is None else int(seed),
    )


class RestartsFailedError(BCorrCAError):
    def __init__(self, errors: list[tuple[int, Exception]]):
        self.errors = errors
        lines = "; ".join(f"restart {i} (seed {s}): {e}" for i, (s, e) in enumerate(errors))
        super().__init__(f"all {len(errors)} restarts failed: {lines}")


def restart_seeds(seed: int, n_restarts: int) -> list[int]:
    """Deterministic seeds for ``n_restarts`` fits derived from one base seed.

    A single restart uses the base seed itself, so ``fit_with_restarts``
    with one restart reproduces ``fit(seed=seed)``.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    if n_restarts == 1:
        return [int(seed)]
    ss = np.random.SeedSequence(int(seed), spawn_key=(_RESTART_KEY,))
    return [int(s) for s in ss.generate_state(n_restarts, dtype=np.uint32)]


def select_best(results: list[FitResult]) -> int:
    """Index of the highest final lower bound; the earliest wins ties."""
    best = 0
    for i, r in enumerate(results):
        if r.lower_bound > results[best].lower_bound:
            best = i
    return best


def fit_with_restarts(data: ViewSet, K: int, hp: Hyperparameters, n_restarts: int = 1,
                      seed: int = 0, return_all: bool = False):
    """Fit from several random starts and keep the run with the best lower bound.

    With ``return_all=True`` the list of every successful fit is returned as
    a second value.
    """
    results, errors = [], []
    for s in restart_seeds(seed, n_restarts):
        try:
            results.append(fit(data, K, hp, seed=s))
        except BCorrCAError as exc:
            logger.warning("restart with seed %d failed: %s", s, exc)
            errors.append((s, exc))
    if not results:
        raise RestartsFailedError(errors)
    best = results[select_best(results)]
    best.restart_errors = [f"seed {s}: {e}" for s, e in errors]
    return (best, results) if return_all else best
