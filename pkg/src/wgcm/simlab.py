"""Synthetic data-generating processes and a seeded rejection-rate harness.

Normal variates come from numpy's PCG64 generator (``standard_normal``); a
dataset is a pure function of its :class:`SimSetting`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Any, Callable

import numpy as np

from .citests import MethodConfig, TestResult, run_test
from .datamodel import Dataset
from .errors import InvalidParameter, WGCMError
from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)

FAMILIES = ("motivating", "s1d", "s10d_add", "s10d_nonadd", "example74")
NOISE_SCALE = 0.3


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise InvalidParameter(f"{name} must lie in [0, 1], got {value}")


def h_lambda(x, lam: float):
    """``lam * x + 0.5 * (1 - lam) * x**2``."""
    _check_unit("lambda", lam)
    return lam * x + 0.5 * (1.0 - lam) * np.square(x)


def h1(t, b1: float, b2: float):
    return (b1 * np.cos(3 * b2 * t) + (1 - b1) * np.sin(3 * b2 * t)) * np.exp(-np.square(t) / 2)


def h2(t, b1: float):
    return 0.3 * (b1 * np.abs(t) + (1 - b1) * t)


def h_b(t, b1: float, b2: float):
    """Dependence function with symmetry ``b1`` and wiggliness ``b2``."""
    _check_unit("b1", b1)
    _check_unit("b2", b2)
    return (1 - b2) * h2(t, b1) - b2 * h1(t, b1, b2)


@dataclass(frozen=True)
class SimSetting:
    """One synthetic data-generating process.

    ``lam`` is used by ``motivating``; ``b1``/``b2`` by the ``s*`` families;
    ``d`` by ``example74``.  ``alternative=(c1, c2)`` adds ``h_b(X, c1, c2)``
    to ``Y`` (not available for ``example74``).
    """

    family: str
    n: int
    seed: int = 0
    lam: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    alternative: tuple[float, float] | None = None
    d: int = 50

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameter(f"unknown family {self.family!r}")
        if self.n < 2:
            raise InvalidParameter("n must be >= 2")
        for name in ("lam", "b1", "b2"):
            _check_unit(name, getattr(self, name))
        if self.alternative is not None:
            if self.family == "example74":
                raise InvalidParameter("example74 has no alternative modification")
            c1, c2 = self.alternative
            _check_unit("c1", c1)
            _check_unit("c2", c2)
            object.__setattr__(self, "alternative", (float(c1), float(c2)))
        if self.family == "example74" and self.d < 3:
            raise InvalidParameter("example74 needs d >= 3")

    def with_seed(self, seed: int) -> "SimSetting":
        return replace(self, seed=int(seed))

    def describe(self) -> dict[str, Any]:
        out = asdict(self)
        out["alternative"] = list(self.alternative) if self.alternative else None
        return out


def _draw(setting: SimSetting):
    rng = make_rng(setting.seed)
    n = setting.n
    if setting.family == "motivating":
        z = rng.standard_normal(n)
        eta_x = NOISE_SCALE * rng.standard_normal(n)
        eta_y = NOISE_SCALE * rng.standard_normal(n)
        x = z + eta_x
        y = z + eta_y + 0.3 * h_lambda(x, setting.lam)
        return x, y, z
    if setting.family == "example74":
        x = rng.standard_normal((n, setting.d))
        y = x[:, 0] * x[:, 1] + x[:, 0] - x[:, 2] + rng.standard_normal(n)
        return x, y, np.zeros((n, 1))
    b1, b2 = setting.b1, setting.b2
    if setting.family == "s1d":
        z = rng.standard_normal(n)
        x = h_b(z, b1, b2) + NOISE_SCALE * rng.standard_normal(n)
        y = h_b(z, b1, b2) + NOISE_SCALE * rng.standard_normal(n)
        return x, y, z
    z = rng.standard_normal((n, 10))
    h_first = h_b(z[:, 0], b1, b2)
    h_second = h_b(z[:, 1], b1, b2)
    if setting.family == "s10d_add":
        x = h_first - h_second + NOISE_SCALE * rng.standard_normal(n)
        y = h_first + h_second + NOISE_SCALE * rng.standard_normal(n)
    else:
        x = np.sign(h_first + h_second) + NOISE_SCALE * rng.standard_normal(n)
        y = np.sign(h_first - h_second) + NOISE_SCALE * rng.standard_normal(n)
    return x, y, z


def generate(setting: SimSetting) -> Dataset:
    """Draw the dataset of ``setting``.

    For ``example74`` the X block holds the ``d`` predictors and the Z block
    is a single zero column (variable selection builds its own conditioning
    sets from X).
    """
    x, y, z = _draw(setting)
    if setting.alternative is not None:
        y = y + h_b(x, *setting.alternative)
    return Dataset(x=x, y=y, z=z)


def replicate_seed(base_seed: int, index: int) -> int:
    """Seed of replicate ``index``: SplitMix64 mix of ``(base_seed, "replicate", index)``."""
    return derive_seed(base_seed, "replicate", index)


@dataclass
class RejectionResult:
    rate: float
    reject_count: int
    per_replicate: list[float | None]
    seeds: list[int]
    failed: int
    alpha: float

    def csv_rows(self) -> list[dict[str, Any]]:
        rows = []
        for i, (seed, p) in enumerate(zip(self.seeds, self.per_replicate)):
            rows.append({
                "replicate": i,
                "seed": seed,
                "p": "" if p is None else repr(float(p)),
                "reject": "" if p is None else int(p <= self.alpha),
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["replicate", "seed", "p", "reject"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.csv_rows())
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        return {
            "rate": self.rate,
            "reject_count": self.reject_count,
            "replicates": len(self.per_replicate),
            "failed": self.failed,
            "alpha": self.alpha,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def rejection_rate(
    setting: SimSetting,
    config: MethodConfig | Callable[[Dataset, int], TestResult],
    alpha: float = 0.05,
    replicates: int = 100,
    base_seed: int = 0,
    threads: int = 1,
) -> RejectionResult:
    """Fraction of ``replicates`` seeded datasets on which the test rejects at ``alpha``.

    ``setting`` is a template whose seed is replaced per replicate.
    ``config`` is a :class:`MethodConfig` or any callable ``(dataset, seed)
    -> object with p_value``.  A replicate whose test raises is recorded as
    failed (p is ``None``) and excluded from the denominator.
    """
    if replicates < 1:
        raise InvalidParameter("replicates must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameter("alpha must lie in [0, 1]")
    if isinstance(config, MethodConfig):
        method = config

        def runner(ds, seed):
            return run_test(ds, method, seed)
    else:
        runner = config

    seeds = [replicate_seed(base_seed, i) for i in range(replicates)]

    def one(i):
        rep = seeds[i]
        try:
            ds = generate(setting.with_seed(derive_seed(rep, "data")))
            return float(runner(ds, derive_seed(rep, "test")).p_value)
        except WGCMError as exc:
            log.warning("replicate %d failed: %s: %s", i, type(exc).__name__, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pvals = list(pool.map(one, range(replicates)))
    else:
        pvals = [one(i) for i in range(replicates)]
    ok = [p for p in pvals if p is not None]
    count = sum(p <= alpha for p in ok)
    return RejectionResult(
        rate=count / len(ok) if ok else float("nan"),
        reject_count=int(count),
        per_replicate=pvals,
        seeds=seeds,
        failed=replicates - len(ok),
        alpha=alpha,
    )
