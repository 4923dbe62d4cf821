"""Normal, Bonferroni and Monte-Carlo Gaussian-max p-values."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, NonFinite, NotDecomposable
from .seeding import make_rng
from .statistic import CorrelationMatrix

DEFAULT_DRAWS = 10_000
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# Draws are generated in fixed blocks with their own seeds so that the sample
# does not depend on how blocks are spread over threads.
BLOCK_SIZE = 2048


def normal_two_sided_p(t: float) -> float:
    """``2 (1 - Phi(|t|))``, computed as ``erfc(|t| / sqrt 2)`` to avoid cancellation."""
    if not math.isfinite(t):
        raise NonFinite(f"statistic must be finite, got {t}")
    return math.erfc(abs(t) / math.sqrt(2.0))


def bonferroni_p(s: float, k: int) -> float:
    if not math.isfinite(s):
        raise NonFinite(f"statistic must be finite, got {s}")
    if k < 1:
        raise InvalidParameter("k must be >= 1")
    return min(1.0, k * normal_two_sided_p(s))


@dataclass(frozen=True, eq=False)
class MaxGaussianSampler:
    """Sorted Monte-Carlo sample of ``max_k |W_k|`` for ``W ~ N(0, Sigma + jitter I)``."""

    cholesky_factor: np.ndarray
    jitter_used: float
    draws: int
    seed: int
    sample: np.ndarray  # sorted ascending, length ``draws``

    @property
    def K(self) -> int:
        return self.cholesky_factor.shape[0]


def _cholesky_with_jitter(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    eye = np.eye(sigma.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(sigma + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise NotDecomposable(
        f"Cholesky failed for every jitter up to {JITTER_LADDER[-1]:g}; "
        "the correlation matrix is badly conditioned (duplicate weights?)"
    )


def _block_max(L: np.ndarray, seed: int, block: int, size: int) -> np.ndarray:
    g = make_rng(seed, "mc", block).standard_normal((size, L.shape[0]))
    return np.max(np.abs(g @ L.T), axis=1)


def build_sampler(
    sigma_hat: CorrelationMatrix,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    threads: int = 1,
) -> MaxGaussianSampler:
    """Factor ``sigma_hat`` (escalating jitter if needed) and draw the max-|W| sample."""
    if draws < 1:
        raise InvalidParameter("draws must be >= 1")
    L, jitter = _cholesky_with_jitter(sigma_hat.sigma_hat)
    sizes = [min(BLOCK_SIZE, draws - start) for start in range(0, draws, BLOCK_SIZE)]
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _block_max(L, seed, b, sizes[b]), range(len(sizes))))
    else:
        parts = [_block_max(L, seed, b, size) for b, size in enumerate(sizes)]
    sample = np.sort(np.concatenate(parts))
    sample.flags.writeable = False
    L.flags.writeable = False
    return MaxGaussianSampler(L, jitter, int(draws), int(seed), sample)


def gaussian_max_p(sampler: MaxGaussianSampler, s: float) -> tuple[float, float]:
    """Add-one Monte-Carlo estimate of ``P(max_k |W_k| >= s)`` and its standard error."""
    if not math.isfinite(s):
        raise NonFinite(f"statistic must be finite, got {s}")
    B = sampler.draws
    exceed = B - int(np.searchsorted(sampler.sample, s, side="left"))
    p = (1 + exceed) / (B + 1)
    return p, math.sqrt(p * (1.0 - p) / B)


def gaussian_max_quantile(sampler: MaxGaussianSampler, alpha: float) -> float:
    """Empirical ``alpha``-quantile: the order statistic at rank ``ceil(alpha * B)``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter("alpha must lie in (0, 1)")
    rank = max(1, math.ceil(alpha * sampler.draws))
    return float(sampler.sample[rank - 1])
