import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bcorrca.model import Hyperparameters, PosteriorState, ViewSet  # noqa: E402


def random_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T / n + 0.5 * np.eye(n))


def random_state(rng, M, D, N, K) -> PosteriorState:
    """A valid but otherwise arbitrary posterior, for testing single updates."""
    v = D + 2.0 + rng.uniform(0, 5)
    return PosteriorState(
        z_mean=rng.standard_normal((K, N)),
        z_cov=random_spd(rng, K, 0.3),
        psi_scale=np.stack([random_spd(rng, D, 1.0 / v) for _ in range(M)]),
        psi_dof=v,
        a_mean=rng.standard_normal((M, D, K)),
        a_cov=np.stack([np.stack([random_spd(rng, K, 0.2) for _ in range(D)])
                        for _ in range(M)]),
        u_mean=rng.standard_normal((D, K)),
        u_var=rng.uniform(0.1, 1.0, K),
        alpha_shape=1.0 + D / 2,
        alpha_rate=rng.uniform(0.5, 3.0, K),
        lambda_shape=1.0 + M * K * D / 2,
        lambda_rate=rng.uniform(0.5, 3.0) * (1.0 + M * K * D / 2),
    )


def random_problem(seed, M=None, D=None, N=None, K=None):
    rng = np.random.default_rng(seed)
    M = M or int(rng.integers(1, 4))
    D = D or int(rng.integers(2, 5))
    N = N or int(rng.integers(5, 12))
    K = K or int(rng.integers(1, 4))
    data = ViewSet(rng.standard_normal((M, D, N)))
    hp = Hyperparameters(S0=random_spd(rng, D, 0.5), v0=D + rng.uniform(0, 3),
                         a0=rng.uniform(0.01, 2), b0=rng.uniform(0.01, 2))
    return rng, data, hp, random_state(rng, M, D, N, K)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
