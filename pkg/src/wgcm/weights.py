"""Bounded weight functions of Z: the quantile-sign grid and the estimated sign weight."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .datamodel import Dataset
from .errors import DimensionMismatch, InvalidParameter, TooFewSamples
from .regress import FittedModel, RegressorSpec, fit

DEFAULT_K0 = 7
DEFAULT_FRACTION = 0.3
MIN_WEIGHT_SAMPLES = 20

FORMS = ("const", "axis_sign", "estimated")


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """A map ``z -> w(z)`` with ``|w| <= bound``.

    ``form`` is ``"const"`` (always 1), ``"axis_sign"`` (``-1`` below
    ``threshold`` on coordinate ``dim``, ``+1`` at or above it) or
    ``"estimated"`` (sign of ``model``'s prediction, with sign(0) = +1).
    """

    form: str
    dim: int | None = None
    threshold: float | None = None
    model: FittedModel | None = None
    provenance: dict[str, Any] = field(default_factory=dict)
    bound: float = 1.0

    def __post_init__(self):
        if self.form not in FORMS:
            raise InvalidParameter(f"unknown weight form {self.form!r}")
        if self.form == "axis_sign" and (self.dim is None or self.dim < 0 or self.threshold is None):
            raise InvalidParameter("axis_sign needs a non-negative dim and a threshold")
        if self.form == "estimated" and self.model is None:
            raise InvalidParameter("estimated weight needs a fitted model")

    @classmethod
    def constant(cls) -> "WeightFunction":
        return cls("const")

    @classmethod
    def axis_sign(cls, dim: int, threshold: float) -> "WeightFunction":
        return cls("axis_sign", dim=int(dim), threshold=float(threshold))

    def evaluate(self, z) -> np.ndarray:
        """Weights at every row of ``z`` (an ``m x dZ`` matrix)."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if self.form == "const":
            return np.ones(z.shape[0])
        if self.form == "axis_sign":
            if self.dim >= z.shape[1]:
                raise DimensionMismatch(f"weight uses dim {self.dim}, z has {z.shape[1]} columns")
            return np.where(z[:, self.dim] < self.threshold, -1.0, 1.0)
        return np.where(self.model.predict(z) < 0.0, -1.0, 1.0)

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"form": self.form}
        if self.form == "axis_sign":
            out["dim"] = self.dim
            out["threshold"] = self.threshold
        elif self.form == "estimated":
            out.update(self.provenance)
        return out


def eval_weight(w: WeightFunction, z) -> float:
    """Weight at a single point ``z`` (a ``dZ`` vector)."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    return float(w.evaluate(z)[0])


@dataclass(frozen=True, eq=False)
class WeightGrid:
    functions: tuple[WeightFunction, ...]
    k0: int = DEFAULT_K0

    @property
    def K(self) -> int:
        return len(self.functions)

    def evaluate(self, z) -> np.ndarray:
        """``n x K`` matrix of all weights at the rows of ``z``."""
        return np.column_stack([w.evaluate(z) for w in self.functions])

    def to_json(self) -> str:
        return json.dumps([w.describe() for w in self.functions])

    @classmethod
    def from_json(cls, text: str, k0: int = DEFAULT_K0) -> "WeightGrid":
        functions = []
        for item in json.loads(text):
            if item["form"] == "const":
                functions.append(WeightFunction.constant())
            elif item["form"] == "axis_sign":
                functions.append(WeightFunction.axis_sign(item["dim"], item["threshold"]))
            else:
                raise InvalidParameter("estimated weights cannot be restored from JSON")
        return cls(tuple(functions), k0)


def quantile_thresholds(column, k0: int) -> np.ndarray:
    """Order statistics at 1-based ranks ``ceil(k n / (k0 + 1))``, ``k = 1..k0``."""
    values = np.sort(np.asarray(column, dtype=float))
    n = values.size
    ranks = [-(-k * n // (k0 + 1)) for k in range(1, k0 + 1)]
    return values[np.array(ranks) - 1]


def quantile_sign_grid(z, k0: int = DEFAULT_K0) -> WeightGrid:
    """Constant weight followed by ``sign(z_d - a_{d,k})`` for every column ``d``.

    Repeated ``(d, a)`` pairs (ties in the data) are kept only once.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if k0 < 1:
        raise InvalidParameter("k0 must be >= 1")
    n = z.shape[0]
    if n < k0 + 1:
        raise TooFewSamples(f"quantile grid with k0={k0} needs at least {k0 + 1} rows, got {n}")
    functions = [WeightFunction.constant()]
    for d in range(z.shape[1]):
        seen = set()
        for a in quantile_thresholds(z[:, d], k0):
            if a in seen:
                continue
            seen.add(a)
            functions.append(WeightFunction.axis_sign(d, a))
    return WeightGrid(tuple(functions), k0)


def estimate_sign_weight(
    ds_a: Dataset,
    spec_xy: RegressorSpec,
    spec_h: RegressorSpec | None = None,
    min_samples: int = MIN_WEIGHT_SAMPLES,
) -> WeightFunction:
    """Estimate ``sign(E[eps * xi | Z])`` on the weight-estimation sample.

    Regress X and Y on Z with ``spec_xy``, regress the product of their
    residuals on Z with ``spec_h`` (defaults to ``spec_xy``) and return the
    sign of that fit.
    """
    if ds_a.dx != 1 or ds_a.dy != 1:
        raise DimensionMismatch("weight estimation needs univariate X and Y")
    if ds_a.n < min_samples:
        raise TooFewSamples(
            f"weight estimation needs at least {min_samples} rows, got {ds_a.n}"
        )
    spec_h = spec_xy if spec_h is None else spec_h
    x, y, z = ds_a.x[:, 0], ds_a.y[:, 0], ds_a.z
    f_a = fit(spec_xy, z, x)
    g_a = fit(spec_xy, z, y)
    products = (x - f_a.predict(z)) * (y - g_a.predict(z))
    h = fit(spec_h, z, products)
    return WeightFunction(
        "estimated",
        model=h,
        provenance={
            "n_train": ds_a.n,
            "regressor": spec_h.kind,
            "seed": int(spec_h.seed),
            "training_mse": h.training_mse,
        },
    )
