"""Synthetic multi-view data with controllable SNR and pattern similarity.

Each view is ``X^(m) = A^(m) Z + noise`` where all views share one source
realisation ``Z`` and the patterns scatter around a common ``U`` with
precision ``lambda_true``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .model import DegenerateDataError, GroundTruth, InvalidDimensionError, ViewSet

# integer cycle counts over the per-view record; distinct integers make the
# sinusoids exactly orthogonal and unit-power
CYCLES = (17, 29, 41, 53)


@dataclass(frozen=True)
class SimSpec:
    K0: int = 1
    M: int = 2
    D: int = 6
    N_total: int = 5000
    snr_db: float = 0.0
    lambda_true: float = 1.0
    seed: int = 0
    random_phases: bool = False

    def __post_init__(self):
        if not 1 <= self.K0 <= len(CYCLES):
            raise InvalidDimensionError(f"K0 must be in 1..{len(CYCLES)}, got {self.K0}")
        if self.M < 1:
            raise InvalidDimensionError("M must be >= 1")
        if self.K0 > self.D:
            raise InvalidDimensionError(f"K0={self.K0} exceeds D={self.D}")
        if self.N_total % self.M:
            raise InvalidDimensionError(f"N_total={self.N_total} not divisible by M={self.M}")
        if self.lambda_true <= 0:
            raise ValueError("lambda_true must be positive")

    @property
    def N(self) -> int:
        return self.N_total // self.M

    def to_dict(self) -> dict:
        return asdict(self)


def generate_sources(K0: int, N: int, seed=None, random_phases: bool = False) -> np.ndarray:
    """``sqrt(2) sin(2 pi kappa_k n / N + phi_k)`` rows with unit power."""
    if K0 < 1:
        raise InvalidDimensionError("K0 must be >= 1")
    if K0 > len(CYCLES):
        raise InvalidDimensionError(
            f"at most {len(CYCLES)} sources are supported (extend CYCLES for more)")
    if N <= 2 * CYCLES[K0 - 1]:
        raise InvalidDimensionError(f"N={N} too short for {CYCLES[K0 - 1]} cycles")
    if random_phases:
        phases = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, size=K0)
    else:
        phases = np.zeros(K0)
    n = np.arange(N)
    kappa = np.asarray(CYCLES[:K0], dtype=float)
    return np.sqrt(2.0) * np.sin(2 * np.pi * kappa[:, None] * n[None, :] / N + phases[:, None])


def generate_mixing(D: int, K0: int, M: int, lambda_true: float, seed=None):
    """Common pattern ``U ~ N(0, 1)`` and views ``A^(m) = U + delta^(m)``, ``delta ~ N(0, 1/lambda)``."""
    if lambda_true <= 0:
        raise ValueError("lambda_true must be positive")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((D, K0))
    delta = rng.standard_normal((M, D, K0)) / math.sqrt(lambda_true)
    return u, u[None] + delta


def apply_noise(clean: np.ndarray, snr_db: float, seed=None):
    """Add white Gaussian noise at ``snr_db`` relative to the channel-averaged signal power.

    ``snr_db = inf`` returns the input unchanged with zero noise variance.
    """
    clean = np.asarray(clean, dtype=float)
    if math.isinf(snr_db) and snr_db > 0:
        return clean.copy(), 0.0
    power = float(clean.var(axis=1).mean())
    if power <= 0:
        raise DegenerateDataError("clean signal has zero power")
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    noise = np.random.default_rng(seed).standard_normal(clean.shape) * math.sqrt(sigma2)
    return clean + noise, sigma2


def generate_dataset(spec: SimSpec) -> tuple[ViewSet, GroundTruth]:
    src_seed, mix_seed, noise_seed = np.random.SeedSequence(spec.seed).spawn(3)
    z = generate_sources(spec.K0, spec.N, src_seed, spec.random_phases)
    u, a = generate_mixing(spec.D, spec.K0, spec.M, spec.lambda_true, mix_seed)
    views, noise_var = [], []
    for m, view_seed in enumerate(noise_seed.spawn(spec.M)):
        x, s2 = apply_noise(a[m] @ z, spec.snr_db, view_seed)
        views.append(x)
        noise_var.append(s2)
    truth = GroundTruth(z_true=z, u_true=u, a_true=a, lambda_true=float(spec.lambda_true),
                        noise_var=np.asarray(noise_var), snr_db=float(spec.snr_db))
    return ViewSet(np.stack(views)), truth
