"""Weighted residual products, normalised test statistics and their correlation matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateResiduals,
    DimensionMismatch,
    EmptyInput,
    InvalidCorrelation,
    LengthMismatch,
    NonFinite,
)

VARIANCE_RTOL = 1e-14

Label = tuple[int, int, int]


@dataclass(frozen=True, eq=False)
class ResidualProducts:
    r: np.ndarray
    label: Label = (0, 0, 0)

    def __post_init__(self):
        r = np.array(self.r, dtype=float, copy=True).reshape(-1)
        if r.size < 2:
            raise LengthMismatch("residual products need at least two entries")
        if not np.all(np.isfinite(r)):
            raise NonFinite("residual products must be finite")
        r.flags.writeable = False
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.r.size


@dataclass(frozen=True)
class TestStatistic:
    t: float
    tau_n: float
    tau_d: float
    label: Label = (0, 0, 0)

    __test__ = False  # not a pytest class


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Unit-diagonal symmetric matrix with entries in [-1, 1] (checked on construction)."""

    sigma_hat: np.ndarray
    labels: tuple[Label, ...] = ()

    def __post_init__(self):
        s = np.array(self.sigma_hat, dtype=float, copy=True)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
            raise InvalidCorrelation("correlation matrix must be square and non-empty")
        if not np.all(np.isfinite(s)):
            raise InvalidCorrelation("correlation matrix has non-finite entries")
        if np.max(np.abs(s - s.T)) > 1e-12:
            raise InvalidCorrelation("correlation matrix is not symmetric")
        if np.max(np.abs(np.diag(s) - 1.0)) > 1e-12:
            raise InvalidCorrelation("correlation matrix diagonal is not 1")
        if np.max(np.abs(s)) > 1.0 + 1e-9:
            raise InvalidCorrelation("correlation entries exceed 1 in absolute value")
        if self.labels and len(self.labels) != s.shape[0]:
            raise InvalidCorrelation("one label per row is required")
        s.flags.writeable = False
        object.__setattr__(self, "sigma_hat", s)

    @property
    def K(self) -> int:
        return self.sigma_hat.shape[0]


def _moments(r: np.ndarray) -> tuple[float, float, float]:
    """Compensated mean, centred second moment and raw second moment."""
    n = r.size
    mean = math.fsum(r) / n
    centred = r - mean
    var = math.fsum(centred * centred) / n
    raw = math.fsum(r * r) / n
    return mean, var, raw


def residual_products(eps, xi, w_values, label: Label = (0, 0, 0)) -> ResidualProducts:
    eps = np.asarray(eps, dtype=float).reshape(-1)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    w = np.asarray(w_values, dtype=float).reshape(-1)
    if not eps.size == xi.size == w.size:
        raise LengthMismatch(f"lengths differ: {eps.size}, {xi.size}, {w.size}")
    return ResidualProducts(eps * xi * w, label)


def t_statistic(rp: ResidualProducts) -> TestStatistic:
    """``T = sqrt(n) * mean(R) / sd(R)`` with the plug-in (1/n) standard deviation.

    :raises DegenerateResiduals: if the variance of ``R`` is at most
        ``1e-14`` times its mean square.
    """
    r = rp.r
    n = r.size
    mean, var, raw = _moments(r)
    if not var > VARIANCE_RTOL * raw:
        raise DegenerateResiduals("residual products have zero variance", rp.label)
    tau_n = math.sqrt(n) * mean
    tau_d = math.sqrt(var)
    return TestStatistic(tau_n / tau_d, tau_n, tau_d, rp.label)


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix")
    return a


def statistic_vector(eps, xi, weights, z) -> tuple[list[TestStatistic], list[ResidualProducts]]:
    """Statistics ``T_{jlk}`` for every residual pair ``(j, l)`` and weight ``k``.

    ``weights`` is either one weight grid shared by all pairs or a mapping
    ``{(j, l): grid}``; a grid is anything with a ``functions`` sequence.
    Output order is ``j``-major, then ``l``, then ``k``.
    """
    eps = _as_matrix(eps, "eps")
    xi = _as_matrix(xi, "xi")
    z = _as_matrix(z, "z")
    n = eps.shape[0]
    if xi.shape[0] != n or z.shape[0] != n:
        raise DimensionMismatch("eps, xi and z need the same number of rows")
    shared = None if isinstance(weights, dict) else weights
    cache: dict[int, np.ndarray] = {}
    stats: list[TestStatistic] = []
    products: list[ResidualProducts] = []
    for j in range(eps.shape[1]):
        for l in range(xi.shape[1]):
            grid = shared if shared is not None else weights[(j, l)]
            base = eps[:, j] * xi[:, l]
            for k, w in enumerate(grid.functions):
                key = id(w)
                if key not in cache:
                    cache[key] = w.evaluate(z)
                rp = ResidualProducts(base * cache[key], (j, l, k))
                stats.append(t_statistic(rp))
                products.append(rp)
    if not stats:
        raise EmptyInput("no statistics: every (j, l) grid is empty")
    return stats, products


def correlation_matrix(rps: Sequence[ResidualProducts]) -> CorrelationMatrix:
    """Estimated correlation matrix of the statistics built from ``rps``.

    Entry ``(k, l)`` is ``(mean(R_k R_l) - mean(R_k) mean(R_l)) / (tau_k tau_l)``,
    evaluated on centred vectors.
    """
    if not rps:
        raise EmptyInput("no residual products")
    n = rps[0].n
    if any(rp.n != n for rp in rps):
        raise LengthMismatch("residual product vectors differ in length")
    R = np.column_stack([rp.r for rp in rps])
    centred = np.empty_like(R)
    sd = np.empty(R.shape[1])
    for k, rp in enumerate(rps):
        mean, var, raw = _moments(rp.r)
        if not var > VARIANCE_RTOL * raw:
            raise DegenerateResiduals("residual products have zero variance", rp.label)
        centred[:, k] = rp.r - mean
        sd[k] = math.sqrt(var)
    cov = centred.T @ centred / n
    sigma = cov / np.outer(sd, sd)
    sigma = 0.5 * (sigma + sigma.T)
    np.fill_diagonal(sigma, 1.0)
    np.clip(sigma, -1.0, 1.0, out=sigma)
    return CorrelationMatrix(sigma, tuple(rp.label for rp in rps))


def max_abs_statistic(ts: Sequence[TestStatistic]) -> float:
    if not ts:
        raise EmptyInput("no statistics")
    return max(abs(s.t) for s in ts)
