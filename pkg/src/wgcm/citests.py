"""Conditional independence tests (GCM and weighted variants) and variable selection.

Every test takes one user ``seed``.  Regression, split and Monte-Carlo seeds
are derived from it with :func:`wgcm.seeding.derive_seed` under fixed labels,
and recorded in :attr:`TestResult.seeds`.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import gaussmax
from .datamodel import Dataset, split, split_sizes, subset
from .errors import (
    DegenerateSplit,
    DimensionMismatch,
    InvalidP,
    InvalidParameter,
    TooFewSamples,
    WGCMError,
)
from .regress import RegressorSpec, fit
from .seeding import derive_seed
from .statistic import (
    correlation_matrix,
    max_abs_statistic,
    statistic_vector,
    t_statistic,
    residual_products,
)
from .weights import (
    DEFAULT_FRACTION,
    DEFAULT_K0,
    MIN_WEIGHT_SAMPLES,
    WeightFunction,
    WeightGrid,
    estimate_sign_weight,
    quantile_sign_grid,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("gcm", "wgcm_fix", "wgcm_est", "mwgcm_fix", "mwgcm_est")
MIN_MAIN_SAMPLES = 4


def canonical_method(name: str) -> str:
    method = name.replace("-", "_").lower()
    if method not in METHODS:
        raise InvalidParameter(f"unknown method {name!r}; choose from {METHODS}")
    return method


@dataclass
class TestResult:
    """Outcome of one conditional independence test.

    ``statistic`` is ``T`` for the single-statistic methods and
    ``S_n = max |T_{jlk}|`` for the others.
    """

    __test__ = False

    method: str
    statistic: float
    p_value: float
    k_total: int
    n_main: int
    per_statistic: list[dict[str, Any]]
    p_bonferroni: float | None = None
    n_weight_est: int | None = None
    mc: dict[str, Any] | None = None
    seeds: dict[str, int] = field(default_factory=dict)
    regression_diagnostics: dict[str, float] = field(default_factory=dict)
    sigma_hat: np.ndarray | None = None

    def to_dict(self, include_sigma: bool = False) -> dict[str, Any]:
        out = {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "p_bonferroni": self.p_bonferroni,
            "k_total": self.k_total,
            "n_main": self.n_main,
            "n_weight_est": self.n_weight_est,
            "per_statistic": self.per_statistic,
            "mc": self.mc,
            "seeds": self.seeds,
            "diagnostics": self.regression_diagnostics,
        }
        if include_sigma and self.sigma_hat is not None:
            out["sigma_hat"] = self.sigma_hat.tolist()
        return out

    def to_json(self, include_sigma: bool = False, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(include_sigma), indent=indent, sort_keys=True)


# JSON schema of TestResult.to_dict(); validated in the test-suite and by the CLI.
RESULT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": [
        "schema_version", "method", "statistic", "p_value", "p_bonferroni",
        "k_total", "n_main", "per_statistic", "mc", "seeds", "diagnostics",
    ],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "method": {"enum": list(METHODS)},
        "statistic": {"type": "number"},
        "p_value": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "p_bonferroni": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "k_total": {"type": "integer", "minimum": 1},
        "n_main": {"type": "integer", "minimum": 1},
        "n_weight_est": {"type": ["integer", "null"], "minimum": 1},
        "per_statistic": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["j", "l", "k", "t", "weight"],
                "properties": {
                    "j": {"type": "integer"},
                    "l": {"type": "integer"},
                    "k": {"type": "integer"},
                    "t": {"type": "number"},
                    "weight": {"type": "object", "required": ["form"]},
                },
            },
        },
        "mc": {
            "type": ["object", "null"],
            "required": ["draws", "stderr", "jitter_used"],
        },
        "seeds": {"type": "object", "additionalProperties": {"type": "integer"}},
        "diagnostics": {"type": "object", "additionalProperties": {"type": "number"}},
        "sigma_hat": {"type": "array"},
    },
}


def _regression_seed(seed: int, block: str, column: int) -> int:
    return derive_seed(seed, "regression", block, column)


def _fit_residuals(fit_ds: Dataset, test_ds: Dataset, reg: RegressorSpec, seed: int):
    """Residual matrices on ``test_ds`` from per-column fits on ``fit_ds``."""
    diagnostics = {}
    seeds = {}
    blocks = {}
    for name, fit_block, test_block in (("x", fit_ds.x, test_ds.x), ("y", fit_ds.y, test_ds.y)):
        cols = []
        for c in range(fit_block.shape[1]):
            s = _regression_seed(seed, name, c)
            model = fit(reg.with_seed(s), fit_ds.z, fit_block[:, c])
            cols.append(test_block[:, c] - model.predict(test_ds.z))
            diagnostics[f"mse_{name}_{c}"] = model.training_mse
            seeds[f"regression_{name}_{c}"] = s
        blocks[name] = np.column_stack(cols)
    return blocks["x"], blocks["y"], diagnostics, seeds


def _fitting_parts(ds: Dataset, aux_split: float | None, seed: int):
    """Data for fitting f, g and data for the statistic (the same unless ``aux_split``)."""
    if aux_split is None:
        return ds, ds, {}
    s = derive_seed(seed, "aux_split")
    plan = split(ds, aux_split, s)
    return subset(ds, plan.indices_a), subset(ds, plan.indices_main), {"aux_split": s}


def _require_univariate(ds: Dataset, method: str):
    if ds.dx != 1 or ds.dy != 1:
        raise DimensionMismatch(f"{method} needs dX = dY = 1; use the m-variant for more columns")


def _entry(stat, weight: WeightFunction) -> dict[str, Any]:
    j, l, k = stat.label
    return {"j": j, "l": l, "k": k, "t": stat.t, "weight": weight.describe()}


def gcm_test(
    ds: Dataset,
    reg: RegressorSpec,
    seed: int = 0,
    aux_split: float | None = None,
) -> TestResult:
    """Unweighted generalised covariance measure with a two-sided normal p-value."""
    _require_univariate(ds, "gcm")
    if ds.n < MIN_MAIN_SAMPLES:
        raise TooFewSamples(f"gcm needs at least {MIN_MAIN_SAMPLES} rows")
    fit_ds, test_ds, seeds = _fitting_parts(ds, aux_split, seed)
    eps, xi, diag, reg_seeds = _fit_residuals(fit_ds, test_ds, reg, seed)
    seeds.update(reg_seeds)
    stat = t_statistic(residual_products(eps[:, 0], xi[:, 0], np.ones(test_ds.n)))
    return TestResult(
        method="gcm",
        statistic=stat.t,
        p_value=gaussmax.normal_two_sided_p(stat.t),
        k_total=1,
        n_main=test_ds.n,
        per_statistic=[_entry(stat, WeightFunction.constant())],
        seeds=seeds,
        regression_diagnostics=diag,
    )


def _max_test(method, eps, xi, weights, z, draws, seed, threads):
    """Shared tail of the max-statistic methods: T vector, Sigma-hat, MC and Bonferroni p."""
    stats, products = statistic_vector(eps, xi, weights, z)
    s_n = max_abs_statistic(stats)
    sigma = correlation_matrix(products)
    mc_seed = derive_seed(seed, "mc")
    sampler = gaussmax.build_sampler(sigma, draws, mc_seed, threads)
    p, stderr = gaussmax.gaussian_max_p(sampler, s_n)
    return stats, s_n, sigma, p, stderr, sampler.jitter_used, mc_seed


def _fix_test(method, ds, reg, k0, draws, seed, threads, aux_split):
    if ds.n < k0 + 2:
        raise TooFewSamples(f"{method} with k0={k0} needs at least {k0 + 2} rows")
    fit_ds, test_ds, seeds = _fitting_parts(ds, aux_split, seed)
    eps, xi, diag, reg_seeds = _fit_residuals(fit_ds, test_ds, reg, seed)
    seeds.update(reg_seeds)
    grid = quantile_sign_grid(test_ds.z, k0)
    stats, s_n, sigma, p, stderr, jitter, mc_seed = _max_test(
        method, eps, xi, grid, test_ds.z, draws, seed, threads
    )
    seeds["mc"] = mc_seed
    k_total = len(stats)
    return TestResult(
        method=method,
        statistic=s_n,
        p_value=p,
        p_bonferroni=gaussmax.bonferroni_p(s_n, k_total),
        k_total=k_total,
        n_main=test_ds.n,
        per_statistic=[_entry(s, grid.functions[s.label[2]]) for s in stats],
        mc={"draws": draws, "stderr": stderr, "jitter_used": jitter},
        seeds=seeds,
        regression_diagnostics=diag,
        sigma_hat=np.array(sigma.sigma_hat),
    )


def wgcm_fix_test(
    ds: Dataset,
    reg: RegressorSpec,
    k0: int = DEFAULT_K0,
    draws: int = gaussmax.DEFAULT_DRAWS,
    seed: int = 0,
    threads: int = 1,
    aux_split: float | None = None,
) -> TestResult:
    """Weighted GCM over the constant weight plus ``k0`` quantile-sign weights per Z column.

    The p-value is the Monte-Carlo Gaussian-max p-value of
    ``S_n = max_k |T_k|``; the Bonferroni p-value is reported alongside.
    """
    _require_univariate(ds, "wgcm_fix")
    return _fix_test("wgcm_fix", ds, reg, k0, draws, seed, threads, aux_split)


def mwgcm_fix_test(
    ds: Dataset,
    reg: RegressorSpec,
    k0: int = DEFAULT_K0,
    draws: int = gaussmax.DEFAULT_DRAWS,
    seed: int = 0,
    threads: int = 1,
    aux_split: float | None = None,
) -> TestResult:
    """Multivariate WGCM.fix: every (X_j, Y_l) pair shares one quantile-sign grid."""
    return _fix_test("mwgcm_fix", ds, reg, k0, draws, seed, threads, aux_split)


def _est_split(ds: Dataset, fraction: float, seed: int, min_weight_samples: int):
    split_seed = derive_seed(seed, "split")
    a_n, n_main = split_sizes(ds.n, fraction)
    if a_n < min_weight_samples or n_main < MIN_MAIN_SAMPLES:
        raise DegenerateSplit(
            f"split of n={ds.n} with fraction={fraction} gives {a_n} weight-estimation rows "
            f"(need {min_weight_samples}) and {n_main} test rows (need {MIN_MAIN_SAMPLES})"
        )
    plan = split(ds, fraction, split_seed)
    return subset(ds, plan.indices_a), subset(ds, plan.indices_main), split_seed


def _estimate_weights(ds_a, reg_xy, reg_h, seed, min_weight_samples):
    """One estimated sign weight per (j, l) pair, fitted on the weight-estimation rows."""
    weights = {}
    seeds = {}
    diag = {}
    for j in range(ds_a.dx):
        for l in range(ds_a.dy):
            pair = Dataset(x=ds_a.x[:, j], y=ds_a.y[:, l], z=ds_a.z)
            s_xy = derive_seed(seed, "weight", "xy", j, l)
            s_h = derive_seed(seed, "weight", "h", j, l)
            w = estimate_sign_weight(
                pair, reg_xy.with_seed(s_xy), reg_h.with_seed(s_h), min_weight_samples
            )
            weights[(j, l)] = w
            seeds[f"weight_xy_{j}_{l}"] = s_xy
            seeds[f"weight_h_{j}_{l}"] = s_h
            diag[f"mse_h_{j}_{l}"] = w.model.training_mse
    return weights, seeds, diag


def wgcm_est_test(
    ds: Dataset,
    reg_xy: RegressorSpec,
    reg_h: RegressorSpec | None = None,
    fraction: float = DEFAULT_FRACTION,
    seed: int = 0,
    min_weight_samples: int = MIN_WEIGHT_SAMPLES,
) -> TestResult:
    """Weighted GCM with one sign weight estimated on a ``fraction`` of the rows.

    The remaining rows give the statistic and a two-sided normal p-value.
    """
    _require_univariate(ds, "wgcm_est")
    reg_h = reg_xy if reg_h is None else reg_h
    ds_a, ds_main, split_seed = _est_split(ds, fraction, seed, min_weight_samples)
    weights, seeds, diag = _estimate_weights(ds_a, reg_xy, reg_h, seed, min_weight_samples)
    w = weights[(0, 0)]
    eps, xi, fit_diag, reg_seeds = _fit_residuals(ds_main, ds_main, reg_xy, seed)
    diag.update(fit_diag)
    stat = t_statistic(residual_products(eps[:, 0], xi[:, 0], w.evaluate(ds_main.z)))
    return TestResult(
        method="wgcm_est",
        statistic=stat.t,
        p_value=gaussmax.normal_two_sided_p(stat.t),
        k_total=1,
        n_main=ds_main.n,
        n_weight_est=ds_a.n,
        per_statistic=[_entry(stat, w)],
        seeds={"split": split_seed, **seeds, **reg_seeds},
        regression_diagnostics=diag,
    )


def mwgcm_est_test(
    ds: Dataset,
    reg_xy: RegressorSpec,
    reg_h: RegressorSpec | None = None,
    fraction: float = DEFAULT_FRACTION,
    draws: int = gaussmax.DEFAULT_DRAWS,
    seed: int = 0,
    threads: int = 1,
    min_weight_samples: int = MIN_WEIGHT_SAMPLES,
) -> TestResult:
    """One estimated sign weight per (X_j, Y_l) pair, all from a single shared split,
    aggregated with the Gaussian-max p-value."""
    reg_h = reg_xy if reg_h is None else reg_h
    ds_a, ds_main, split_seed = _est_split(ds, fraction, seed, min_weight_samples)
    weights, seeds, diag = _estimate_weights(ds_a, reg_xy, reg_h, seed, min_weight_samples)
    eps, xi, fit_diag, reg_seeds = _fit_residuals(ds_main, ds_main, reg_xy, seed)
    diag.update(fit_diag)
    grids = {pair: WeightGrid((w,), k0=1) for pair, w in weights.items()}
    stats, s_n, sigma, p, stderr, jitter, mc_seed = _max_test(
        "mwgcm_est", eps, xi, grids, ds_main.z, draws, seed, threads
    )
    k_total = len(stats)
    return TestResult(
        method="mwgcm_est",
        statistic=s_n,
        p_value=p,
        p_bonferroni=gaussmax.bonferroni_p(s_n, k_total),
        k_total=k_total,
        n_main=ds_main.n,
        n_weight_est=ds_a.n,
        per_statistic=[_entry(s, weights[s.label[:2]]) for s in stats],
        mc={"draws": draws, "stderr": stderr, "jitter_used": jitter},
        seeds={"split": split_seed, **seeds, **reg_seeds, "mc": mc_seed},
        regression_diagnostics=diag,
        sigma_hat=np.array(sigma.sigma_hat),
    )


@dataclass(frozen=True)
class MethodConfig:
    """Which test to run and with which parameters; used by sweeps and the CLI."""

    method: str = "wgcm_fix"
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    regressor_h: RegressorSpec | None = None
    k0: int = DEFAULT_K0
    fraction: float = DEFAULT_FRACTION
    draws: int = gaussmax.DEFAULT_DRAWS
    min_weight_samples: int = MIN_WEIGHT_SAMPLES
    aux_split: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        if self.k0 < 1:
            raise InvalidParameter("k0 must be >= 1")
        if not 0.0 < self.fraction < 1.0:
            raise InvalidParameter("fraction must lie in (0, 1)")
        if self.draws < 1:
            raise InvalidParameter("draws must be >= 1")

    def with_method(self, method: str) -> "MethodConfig":
        return replace(self, method=method)


def run_test(ds: Dataset, config: MethodConfig, seed: int = 0, threads: int = 1) -> TestResult:
    m = config.method
    if m == "gcm":
        return gcm_test(ds, config.regressor, seed, config.aux_split)
    if m == "wgcm_fix":
        return wgcm_fix_test(ds, config.regressor, config.k0, config.draws, seed, threads, config.aux_split)
    if m == "mwgcm_fix":
        return mwgcm_fix_test(ds, config.regressor, config.k0, config.draws, seed, threads, config.aux_split)
    if m == "wgcm_est":
        return wgcm_est_test(
            ds, config.regressor, config.regressor_h, config.fraction, seed, config.min_weight_samples
        )
    return mwgcm_est_test(
        ds, config.regressor, config.regressor_h, config.fraction, config.draws, seed,
        threads, config.min_weight_samples,
    )


def holm_adjust(pvals: Sequence[float]) -> np.ndarray:
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(pvals, dtype=float).reshape(-1)
    if p.size == 0:
        return p.copy()
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidP("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.empty(m)
    adjusted[order] = np.maximum.accumulate(scaled)
    return adjusted


@dataclass
class SelectionResult:
    raw_p: np.ndarray
    adjusted_p: np.ndarray
    selected: list[int]
    failed: list[int]
    alpha: float
    results: list[TestResult | None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "alpha": self.alpha,
            "raw_p": [float(v) for v in self.raw_p],
            "adjusted_p": [float(v) for v in self.adjusted_p],
            "selected": list(self.selected),
            "failed": list(self.failed),
        }


def select_variables(
    y,
    x,
    config: MethodConfig,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
) -> SelectionResult:
    """Test ``X_j`` against ``y`` given all other columns of ``x``, for every ``j``.

    The ``d`` p-values are Holm-adjusted and ``j`` is selected when its
    adjusted p-value is at most ``alpha``.  A test that fails counts as
    ``p = 1`` and is listed in ``failed``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionMismatch("variable selection needs at least two predictor columns")
    if x.shape[0] != y.size:
        raise DimensionMismatch("x and y need the same number of rows")
    d = x.shape[1]

    def one(j):
        ds = Dataset(x=x[:, j], y=y, z=np.delete(x, j, axis=1))
        try:
            return run_test(ds, config, derive_seed(seed, "select", j))
        except WGCMError as exc:
            log.warning("variable %d: %s: %s; recording p = 1", j, type(exc).__name__, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(d)))
    else:
        results = [one(j) for j in range(d)]
    raw = np.array([1.0 if r is None else r.p_value for r in results])
    adjusted = holm_adjust(raw)
    return SelectionResult(
        raw_p=raw,
        adjusted_p=adjusted,
        selected=[j for j in range(d) if adjusted[j] <= alpha],
        failed=[j for j, r in enumerate(results) if r is None],
        alpha=alpha,
        results=results,
    )
