"""Slow explicit-loop reference implementations used only by the tests.

Each function evaluates an update or metric by literal summation over the
indices that appear in the defining formula, with no shared code paths
with the vectorised package implementation.
"""

import itertools
import math

import numpy as np
from scipy.special import digamma, gammaln, multigammaln
from scipy.stats import gamma, wishart


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------


def e_atpa(a_mean, a_cov, psi_mean):
    """E[A^T Psi A] for one view by looping over d, d', k, k'."""
    D, K = a_mean.shape
    out = np.zeros((K, K))
    for k in range(K):
        for j in range(K):
            s = 0.0
            for d in range(D):
                for e in range(D):
                    s += psi_mean[d, e] * a_mean[d, k] * a_mean[e, j]
                s += psi_mean[d, d] * a_cov[d, k, j]
            out[k, j] = s
    return out


def e_zz_sum(z_mean, z_cov):
    K, N = z_mean.shape
    out = np.zeros((K, K))
    for n in range(N):
        for k in range(K):
            for j in range(K):
                out[k, j] += z_cov[k, j] + z_mean[k, n] * z_mean[j, n]
    return out


def e_sqnorm_a(a_mean, a_cov):
    """E[a_k^T a_k] per column."""
    D, K = a_mean.shape
    return np.array([sum(a_mean[d, k] ** 2 + a_cov[d, k, k] for d in range(D))
                     for k in range(K)])


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------


def update_z(X, a_mean, a_cov, psi_mean):
    M, D, N = X.shape
    K = a_mean.shape[2]
    prec = np.eye(K)
    for m in range(M):
        prec += e_atpa(a_mean[m], a_cov[m], psi_mean[m])
    cov = np.linalg.inv(prec)
    mean = np.zeros((K, N))
    for n in range(N):
        rhs = np.zeros(K)
        for m in range(M):
            for k in range(K):
                for d in range(D):
                    for e in range(D):
                        rhs[k] += a_mean[m, d, k] * psi_mean[m, d, e] * X[m, e, n]
        mean[:, n] = cov @ rhs
    return mean, cov


def update_psi_inverse_scale(X_m, a_mean_m, a_cov_m, z_mean, z_cov, S0_inv):
    """S_Psi^{-1} for one view, summing over d, d', n explicitly."""
    D, N = X_m.shape
    K = z_mean.shape[0]
    out = np.array(S0_inv, dtype=float, copy=True)
    for n in range(N):
        zz = z_cov + np.outer(z_mean[:, n], z_mean[:, n])
        for d in range(D):
            for e in range(D):
                # E[(a_d^T z_n)(a_e^T z_n)]
                s = 0.0
                for k in range(K):
                    for j in range(K):
                        s += a_mean_m[d, k] * zz[k, j] * a_mean_m[e, j]
                        if d == e:
                            s += a_cov_m[d, k, j] * zz[j, k]
                pred_d = sum(a_mean_m[d, k] * z_mean[k, n] for k in range(K))
                pred_e = sum(a_mean_m[e, k] * z_mean[k, n] for k in range(K))
                out[d, e] += s + X_m[d, n] * X_m[e, n] - X_m[d, n] * pred_e - pred_d * X_m[e, n]
    return out


def update_a_view(X_m, a_mean_m, z_mean, z_cov, psi_m, lam, u_mean):
    """Row-sequential A update for one view, literal sums over n and d'."""
    D, N = X_m.shape
    K = z_mean.shape[0]
    zz = e_zz_sum(z_mean, z_cov)
    mean = np.array(a_mean_m, dtype=float, copy=True)
    cov = np.zeros((D, K, K))
    for d in range(D):
        cov[d] = np.linalg.inv(psi_m[d, d] * zz + lam * np.eye(K))
        rhs = lam * u_mean[d].copy()
        for n in range(N):
            proj = sum(psi_m[d, e] * X_m[e, n] for e in range(D))
            rhs += z_mean[:, n] * proj
        for e in range(D):
            if e != d:
                rhs -= psi_m[d, e] * (zz @ mean[e])
        mean[d] = cov[d] @ rhs
    return mean, cov


def update_u(a_mean, lam, alpha_mean):
    M, D, K = a_mean.shape
    var = np.zeros(K)
    mean = np.zeros((D, K))
    for k in range(K):
        var[k] = 1.0 / (M * lam + alpha_mean[k])
        for d in range(D):
            mean[d, k] = var[k] * lam * sum(a_mean[m, d, k] for m in range(M))
    return mean, var


def update_alpha(u_mean, u_var, a0, b0):
    D, K = u_mean.shape
    shape = a0 + D / 2.0
    rate = np.array([b0 + 0.5 * (sum(u_mean[d, k] ** 2 for d in range(D)) + D * u_var[k])
                     for k in range(K)])
    return shape, rate


def update_lambda(a_mean, a_cov, u_mean, u_var, a0, b0):
    """Evaluates sum E[(a_k - u_k)^T (a_k - u_k)] term by term."""
    M, D, K = a_mean.shape
    shape = a0 + M * K * D / 2.0
    total = 0.0
    for m in range(M):
        for k in range(K):
            for d in range(D):
                # E[(a - u)^2] = Var a + Var u + (E a - E u)^2
                total += a_cov[m, d, k, k] + u_var[k] + (a_mean[m, d, k] - u_mean[d, k]) ** 2
    return shape, b0 + 0.5 * total


# ---------------------------------------------------------------------------
# covariances / eigenproblems
# ---------------------------------------------------------------------------


def covariance(x1, x2, center=True):
    D1, N = x1.shape
    D2 = x2.shape[0]
    m1 = [sum(x1[i]) / N for i in range(D1)] if center else [0.0] * D1
    m2 = [sum(x2[j]) / N for j in range(D2)] if center else [0.0] * D2
    out = np.zeros((D1, D2))
    for i in range(D1):
        for j in range(D2):
            out[i, j] = sum((x1[i, n] - m1[i]) * (x2[j, n] - m2[j]) for n in range(N)) / N
    return out


def canonical_correlations_svd(x1, x2):
    """Whiten each view and take singular values of the cross-covariance."""
    x1 = x1 - x1.mean(axis=1, keepdims=True)
    x2 = x2 - x2.mean(axis=1, keepdims=True)
    N = x1.shape[1]
    c11, c22, c12 = x1 @ x1.T / N, x2 @ x2.T / N, x1 @ x2.T / N

    def inv_sqrt(c):
        vals, vecs = np.linalg.eigh(c)
        return vecs @ np.diag(vals ** -0.5) @ vecs.T

    return np.linalg.svd(inv_sqrt(c11) @ c12 @ inv_sqrt(c22), compute_uv=False)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def mean_var(v):
    vals = list(np.ravel(v))
    mu = sum(vals) / len(vals)
    return sum((x - mu) ** 2 for x in vals) / len(vals)


def within_view_variance(quantities):
    return sum(mean_var(q) for q in quantities) / len(quantities)


def between_view_variance(quantities):
    M = len(quantities)
    total = 0.0
    for m in range(M):
        for i in range(m + 1, M):
            total += mean_var(np.asarray(quantities[m]) - np.asarray(quantities[i]))
    return 2.0 * total / (M * (M - 1))


def pve(X, a, z):
    D, N = X.shape
    K = z.shape[0]
    grand = sum(X[d, n] for d in range(D) for n in range(N)) / (D * N)
    sst = sum((X[d, n] - grand) ** 2 for d in range(D) for n in range(N))
    sse = 0.0
    for d in range(D):
        for n in range(N):
            pred = sum(a[d, k] * z[k, n] for k in range(K))
            sse += (X[d, n] - pred) ** 2
    return (sst - sse) / sst


def pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


def best_match(z_est, z_true):
    """Brute-force the injective assignment maximising mean |corr|."""
    K, K0 = z_est.shape[0], z_true.shape[0]
    corr = [[abs(pearson(z_true[i], z_est[j])) for j in range(K)] for i in range(K0)]
    best = -1.0
    for perm in itertools.permutations(range(K), K0):
        score = sum(corr[i][perm[i]] for i in range(K0)) / K0
        if score > best:
            best = score
    return best


# ---------------------------------------------------------------------------
# full evidence lower bound
# ---------------------------------------------------------------------------


def _gamma_elog(shape, rate):
    return digamma(shape) - np.log(rate)


def _gamma_logpdf_expect(a0, b0, shape, rate):
    """E_q[ln Ga(x; a0, b0)] for q = Ga(shape, rate)."""
    return a0 * np.log(b0) - gammaln(a0) + (a0 - 1) * _gamma_elog(shape, rate) - b0 * shape / rate


def _gamma_entropy(shape, rate):
    return gamma(shape, scale=1.0 / rate).entropy()


def _gauss_entropy(cov):
    k = cov.shape[0]
    return 0.5 * (k * (1 + math.log(2 * math.pi)) + np.linalg.slogdet(cov)[1])


def full_elbo(X, z_mean, z_cov, psi_scale, psi_dof, a_mean, a_cov, u_mean, u_var,
              alpha_shape, alpha_rate, lambda_shape, lambda_rate, S0, v0, a0, b0,
              diagonal=False, coupling="hierarchical"):
    """E_q[ln p(X, all latents)] + H[q], summed factor by factor.

    Pinned couplings treat lambda = shape/rate as a constant. Diagonal noise
    uses independent Ga(v/2, 1/(2 S_dd)) precisions per channel, with prior
    Ga(v0/2, 1/(2 S0_dd)).
    """

    M, D, N = X.shape
    K = z_mean.shape[0]
    ln2pi = math.log(2 * math.pi)
    total = 0.0

    # sources
    ezz = e_zz_sum(z_mean, z_cov)
    total += -0.5 * N * K * ln2pi - 0.5 * np.trace(ezz) + N * _gauss_entropy(z_cov)

    for m in range(M):
        if diagonal:
            shapes = np.full(D, psi_dof / 2.0)
            rates = 1.0 / (2.0 * np.diag(psi_scale[m]))
            psi_mean = np.diag(shapes / rates)
            elogdet = float(np.sum(_gamma_elog(shapes, rates)))
            for d in range(D):
                total += _gamma_logpdf_expect(v0 / 2.0, 1.0 / (2.0 * S0[m][d, d]),
                                              shapes[d], rates[d])
                total += _gamma_entropy(shapes[d], rates[d])
        else:
            S = psi_scale[m]
            psi_mean = psi_dof * S
            elogdet = (sum(digamma((psi_dof - i) / 2.0) for i in range(D))
                       + D * math.log(2) + np.linalg.slogdet(S)[1])
            # Wishart prior expectation
            total += ((v0 - D - 1) / 2.0 * elogdet
                      - 0.5 * np.trace(np.linalg.solve(S0[m], psi_mean))
                      - v0 * D / 2.0 * math.log(2) - v0 / 2.0 * np.linalg.slogdet(S0[m])[1]
                      - multigammaln(v0 / 2.0, D))
            total += wishart(df=psi_dof, scale=S).entropy()
        # likelihood: sum_n E[(x - A z)^T Psi (x - A z)]
        quad = 0.0
        atpa = e_atpa(a_mean[m], a_cov[m], psi_mean)
        for n in range(N):
            x = X[m, :, n]
            mz = a_mean[m] @ z_mean[:, n]
            quad += x @ psi_mean @ x - 2 * x @ psi_mean @ mz
        quad += np.trace(atpa @ ezz)
        total += 0.5 * N * elogdet - 0.5 * N * D * ln2pi - 0.5 * quad
        for d in range(D):
            total += _gauss_entropy(a_cov[m, d])

    # pattern prior
    if coupling == "hierarchical":
        elog_lam = _gamma_elog(lambda_shape, lambda_rate)
        e_lam = lambda_shape / lambda_rate
        total += _gamma_logpdf_expect(a0, b0, lambda_shape, lambda_rate)
        total += _gamma_entropy(lambda_shape, lambda_rate)
    else:
        e_lam = lambda_shape / lambda_rate
        elog_lam = math.log(e_lam)
    dev = 0.0
    for m in range(M):
        for d in range(D):
            for k in range(K):
                if coupling == "independent":
                    dev += a_mean[m, d, k] ** 2 + a_cov[m, d, k, k]
                else:
                    dev += ((a_mean[m, d, k] - u_mean[d, k]) ** 2
                            + a_cov[m, d, k, k] + u_var[k])
    total += 0.5 * M * K * D * (elog_lam - ln2pi) - 0.5 * e_lam * dev

    if coupling != "independent":
        for k in range(K):
            elog_a = _gamma_elog(alpha_shape, alpha_rate[k])
            e_a = alpha_shape / alpha_rate[k]
            usq = float(np.sum(u_mean[:, k] ** 2) + D * u_var[k])
            total += 0.5 * D * (elog_a - ln2pi) - 0.5 * e_a * usq
            total += 0.5 * D * (1 + ln2pi + math.log(u_var[k]))
            total += _gamma_logpdf_expect(a0, b0, alpha_shape, alpha_rate[k])
            total += _gamma_entropy(alpha_shape, alpha_rate[k])
    return float(total)
