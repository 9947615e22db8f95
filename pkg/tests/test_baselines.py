import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from bcorrca import baselines
from bcorrca.baselines import IllConditionedError, OrthogonalMixCase
from bcorrca.model import InvalidDimensionError, ViewSet


def angle(u, v):
    # arctan of the orthogonal residual over the projection; arccos loses digits near 0
    v = v / np.linalg.norm(v)
    along = u @ v
    return float(np.arctan2(np.linalg.norm(u - along * v), abs(along)))


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------


def test_identical_views_give_equal_blocks():
    x = np.random.default_rng(0).standard_normal((3, 50))
    R11, R12, R21, R22 = baselines.sample_covariances(x, x)
    assert np.allclose(R11, R12) and np.allclose(R22, R12) and np.allclose(R21, R12)


def test_whitened_rows_give_identity():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((400, 3)))
    q -= q.mean(axis=0)
    q, _ = np.linalg.qr(q)
    x = np.sqrt(400) * q.T
    assert np.allclose(baselines.sample_covariances(x, x)[0], np.eye(3), atol=1e-12)


def test_covariances_match_loop_oracle():
    rng = np.random.default_rng(2)
    x1, x2 = rng.standard_normal((3, 500)) + 1, rng.standard_normal((3, 500)) - 2
    for center in (True, False):
        R11, R12, R21, R22 = baselines.sample_covariances(x1, x2, center=center)
        assert np.max(np.abs(R12 - oracles.covariance(x1, x2, center))) <= 1e-12
        assert np.max(np.abs(R11 - oracles.covariance(x1, x1, center))) <= 1e-12
        assert np.array_equal(R21, R12.T)


def test_covariance_preconditions():
    with pytest.raises(InvalidDimensionError):
        baselines.sample_covariances(np.ones((2, 1)), np.ones((2, 1)))
    with pytest.raises(InvalidDimensionError):
        baselines.sample_covariances(np.ones((2, 4)), np.ones((2, 5)))


# ---------------------------------------------------------------------------
# CCA
# ---------------------------------------------------------------------------


def test_cca_self_correlation():
    x = np.random.default_rng(3).standard_normal((4, 300))
    assert baselines.cca(x, x).correlations[0] == pytest.approx(1.0, abs=1e-8)


def test_cca_independent_views():
    rng = np.random.default_rng(4)
    sol = baselines.cca(rng.standard_normal((4, 100_000)), rng.standard_normal((4, 100_000)))
    assert sol.correlations[0] < 0.05


@pytest.mark.parametrize("seed", range(10))
def test_cca_matches_whitening_svd(seed):
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((3, 3))
    x1 = rng.standard_normal((3, 400))
    x2 = mix @ x1 + rng.standard_normal((3, 400))
    sol = baselines.cca(x1, x2, K=3, ridge=0.0)
    assert np.max(np.abs(sol.correlations - oracles.canonical_correlations_svd(x1, x2))) <= 1e-8
    assert np.all(np.diff(sol.correlations) <= 0)


def test_cca_weights_are_canonical_pairs():
    rng = np.random.default_rng(5)
    x1 = rng.standard_normal((3, 2000))
    x2 = rng.standard_normal((3, 3)) @ x1 + rng.standard_normal((3, 2000))
    sol = baselines.cca(x1, x2, K=2, ridge=0.0)
    y1, y2 = sol.weights[0].T @ x1, sol.weights[1].T @ x2
    for k in range(2):
        assert np.corrcoef(y1[k], y2[k])[0, 1] == pytest.approx(sol.correlations[k], abs=1e-8)
        assert np.var(y1[k]) == pytest.approx(1.0, rel=1e-6)
    assert abs(np.corrcoef(y1[0], y1[1])[0, 1]) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_cca_invariant_to_linear_maps(seed):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((3, 500))
    x2 = x1[::-1] + rng.standard_normal((3, 500))
    T = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    a = baselines.cca(x1, x2, K=3, ridge=0.0).correlations
    b = baselines.cca(T @ x1, x2, K=3, ridge=0.0).correlations
    assert np.max(np.abs(a - b)) < 1e-6


def test_cca_ill_conditioned():
    x = np.zeros((3, 50))
    x[0] = np.arange(50.0)
    with pytest.raises(IllConditionedError):
        baselines.cca(x, x, ridge=0.0)


def test_sign_convention():
    rng = np.random.default_rng(6)
    x1 = rng.standard_normal((4, 300))
    x2 = x1 + rng.standard_normal((4, 300))
    for sol in (baselines.cca(x1, x2, K=2), baselines.corrca(x1, x2, K=2)):
        w = sol.weights[0]
        assert np.all(w[np.argmax(np.abs(w), axis=0), [0, 1]] > 0)


def test_solutions_are_deterministic():
    rng = np.random.default_rng(7)
    x1, x2 = rng.standard_normal((3, 100)), rng.standard_normal((3, 100))
    a, b = baselines.cca(x1, x2, 2), baselines.cca(x1, x2, 2)
    assert np.array_equal(a.weights, b.weights)


def test_k_out_of_range():
    x = np.random.default_rng(0).standard_normal((3, 30))
    with pytest.raises(InvalidDimensionError):
        baselines.cca(x, x, K=4)
    with pytest.raises(InvalidDimensionError):
        baselines.corrca(x, x, K=0)


# ---------------------------------------------------------------------------
# CorrCA
# ---------------------------------------------------------------------------


def test_corrca_identical_views():
    x = np.random.default_rng(8).standard_normal((3, 200))
    sol = baselines.corrca(x, x, K=3)
    assert np.allclose(sol.correlations, 1.0, atol=1e-10)
    assert baselines.cca(x, x).correlations[0] == pytest.approx(sol.correlations[0], abs=1e-6)


@pytest.mark.parametrize("P,sigma2", list(itertools.product([0.1, 1, 10], repeat=2)))
def test_corrca_orthogonal_mix_eigenpair(P, sigma2):
    case = OrthogonalMixCase.random(5, P, sigma2, seed=1)
    sol = baselines.corrca_from_covariances(*case.covariances(), K=5, ridge=0.0)
    assert abs(sol.correlations[0] - case.top_eigenvalue) <= 1e-10
    assert abs(sol.correlations[-1] + case.top_eigenvalue) <= 1e-10
    assert angle(sol.weights[0][:, 0], case.a1 + case.a2) < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_corrca_matches_generalized_eigenproblem(seed):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((4, 300))
    x2 = 0.5 * x1 + rng.standard_normal((4, 300))
    R11, R12, R21, R22 = (oracles.covariance(a, b) for a, b in
                          ((x1, x1), (x1, x2), (x2, x1), (x2, x2)))
    ref = np.sort(scipy.linalg.eigvals(R12 + R21, R11 + R22).real)[::-1]
    sol = baselines.corrca(x1, x2, K=4, ridge=0.0)
    assert np.max(np.abs(sol.correlations - ref)) <= 1e-8
    assert sol.shared and np.array_equal(sol.weights[0], sol.weights[1])


def test_orthogonal_case_validation():
    with pytest.raises(ValueError):
        OrthogonalMixCase(np.array([1.0, 0]), np.array([1.0, 0]), 1, 1)
    with pytest.raises(ValueError):
        OrthogonalMixCase(np.array([2.0, 0]), np.array([0, 1.0]), 1, 1)
    with pytest.raises(ValueError):
        OrthogonalMixCase(np.array([1.0, 0]), np.array([0, 1.0]), 0, 1)


# ---------------------------------------------------------------------------
# multi-view concatenation
# ---------------------------------------------------------------------------


def test_two_view_concatenation():
    x = np.random.default_rng(0).standard_normal((2, 3, 10))
    xA, xB = baselines.pairwise_concatenate(ViewSet(x))
    assert np.array_equal(xA, np.hstack([x[0], x[1]]))
    assert np.array_equal(xB, np.hstack([x[1], x[0]]))


def test_pair_order_is_lexicographic():
    x = np.arange(3)[:, None, None] * np.ones((3, 1, 2))
    xA, xB = baselines.pairwise_concatenate(ViewSet(x))
    assert list(zip(xA[0, ::2], xB[0, ::2])) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_concatenation_needs_two_views():
    with pytest.raises(InvalidDimensionError):
        baselines.pairwise_concatenate(ViewSet(np.ones((1, 2, 3))))


def test_multiview_dispatch():
    rng = np.random.default_rng(1)
    z = rng.standard_normal(400)
    data = ViewSet([np.outer(rng.standard_normal(3), z) + 0.3 * rng.standard_normal((3, 400))
                    for _ in range(3)])
    for method in ("cca", "corrca"):
        sol = baselines.multiview(method, data)
        assert abs(np.corrcoef(sol.project(data)[0], z)[0, 1]) > 0.9
    with pytest.raises(ValueError):
        baselines.multiview("pca", data)
