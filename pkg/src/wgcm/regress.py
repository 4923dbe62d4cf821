"""Nonparametric regression backends estimating ``E[target | Z]``.

Four backends are available:

``boosted_trees``
    Squared-loss gradient boosting over depth-limited regression trees grown
    level by level on quantile-binned features, with early stopping on a
    seeded holdout followed by a refit on all rows.
``kernel_smoother``
    Nadaraya-Watson with a product Gaussian kernel.  ``bandwidth="auto"``
    scales Silverman's rule by the multiplier (from a fixed grid) with the
    smallest K-fold cross-validated error.
``knn``
    Mean of the ``k`` nearest training targets (Euclidean, ties to the lower
    index).
``mean_only``
    The training mean.

Predictions on training rows include the row itself: fits are in-sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .errors import DimensionMismatch, InvalidHyperparameter, NonFinite, TooFewSamples
from .seeding import make_rng

KINDS = ("boosted_trees", "kernel_smoother", "knn", "mean_only")

DEFAULTS: dict[str, dict[str, Any]] = {
    "boosted_trees": {
        "max_depth": 3,
        "shrinkage": 0.1,
        "n_rounds": 500,
        "early_stopping": True,
        "holdout": 0.2,
        "patience": 10,
        "reg_lambda": 1.0,
        "min_samples_leaf": 1,
        "max_bins": 64,
    },
    "kernel_smoother": {
        "bandwidth": "auto",
        "cv_folds": 5,
        "grid": (0.25, 0.5, 1.0, 2.0, 4.0),
    },
    "knn": {"k": 10},
    "mean_only": {},
}

# Early stopping needs a holdout of at least this many rows.
MIN_ROWS_EARLY_STOPPING = 10

_QUERY_BLOCK_ELEMENTS = 2_000_000


def _check_params(kind: str, p: Mapping[str, Any]) -> None:
    def bad(msg):
        raise InvalidHyperparameter(f"{kind}: {msg}")

    if kind == "boosted_trees":
        if int(p["max_depth"]) < 1:
            bad("max_depth must be >= 1")
        if not 0.0 < float(p["shrinkage"]) <= 1.0:
            bad("shrinkage must lie in (0, 1]")
        if int(p["n_rounds"]) < 0:
            bad("n_rounds must be >= 0")
        if not 0.0 < float(p["holdout"]) < 1.0:
            bad("holdout must lie in (0, 1)")
        if int(p["patience"]) < 1:
            bad("patience must be >= 1")
        if float(p["reg_lambda"]) < 0.0:
            bad("reg_lambda must be >= 0")
        if int(p["min_samples_leaf"]) < 1:
            bad("min_samples_leaf must be >= 1")
        if int(p["max_bins"]) < 2:
            bad("max_bins must be >= 2")
    elif kind == "kernel_smoother":
        bw = p["bandwidth"]
        if isinstance(bw, str):
            if bw != "auto":
                bad(f"unknown bandwidth {bw!r}")
        elif not (float(bw) > 0.0 and math.isfinite(float(bw))):
            bad("bandwidth must be a positive finite number or 'auto'")
        if int(p["cv_folds"]) < 2:
            bad("cv_folds must be >= 2")
        if not p["grid"] or any(float(g) <= 0 for g in p["grid"]):
            bad("grid multipliers must be positive")
    elif kind == "knn":
        if int(p["k"]) < 1:
            bad("k must be >= 1")


@dataclass(frozen=True)
class RegressorSpec:
    """Backend choice, hyperparameters and seed of a regression.

    ``params`` overrides the per-kind :data:`DEFAULTS`; unknown keys are an
    error.
    """

    kind: str = "kernel_smoother"
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidHyperparameter(f"unknown regressor kind {self.kind!r}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise InvalidHyperparameter(f"{self.kind}: unknown parameters {sorted(unknown)}")
        _check_params(self.kind, self.resolved())

    def resolved(self) -> dict[str, Any]:
        out = dict(DEFAULTS[self.kind])
        out.update(self.params)
        return out

    def with_seed(self, seed: int) -> "RegressorSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict[str, Any]:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "seed": int(self.seed)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "RegressorSpec":
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in obj.get("params", {}).items()}
        return cls(kind=obj["kind"], params=params, seed=int(obj.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "RegressorSpec":
        return cls.from_dict(json.loads(text))


def _as_design(z, name="z") -> np.ndarray:
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix")
    return arr


def _as_target(target, n: int) -> np.ndarray:
    t = np.asarray(target, dtype=float)
    if t.ndim == 2 and t.shape[1] == 1:
        t = t[:, 0]
    if t.ndim != 1 or t.shape[0] != n:
        raise DimensionMismatch(f"target must be a vector of length {n}")
    return t


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Fitted regression; call :meth:`predict` or the module-level :func:`predict`."""

    spec: RegressorSpec
    n_train: int
    n_features: int
    training_mse: float

    def predict(self, z) -> np.ndarray:
        z = _as_design(z)
        if z.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"model was fitted on {self.n_features} features, got {z.shape[1]}"
            )
        return self._predict(z)

    def _predict(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class MeanModel(FittedModel):
    mean: float = 0.0

    def _predict(self, z):
        return np.full(z.shape[0], self.mean)


@dataclass(frozen=True, eq=False)
class KNNModel(FittedModel):
    z_train: np.ndarray = None
    t_train: np.ndarray = None
    k: int = 1

    def _predict(self, z):
        out = np.empty(z.shape[0])
        n, d = self.z_train.shape
        block = max(1, _QUERY_BLOCK_ELEMENTS // max(1, n * d))
        for start in range(0, z.shape[0], block):
            q = z[start : start + block]
            dist = np.sum((q[:, None, :] - self.z_train[None, :, :]) ** 2, axis=2)
            nearest = np.argsort(dist, axis=1, kind="stable")[:, : self.k]
            out[start : start + block] = self.t_train[nearest].mean(axis=1)
        return out


def _nadaraya_watson(z_train, t_train, bandwidths, q) -> np.ndarray:
    out = np.empty(q.shape[0])
    n, d = z_train.shape
    zs = z_train / bandwidths
    qs = q / bandwidths
    block = max(1, _QUERY_BLOCK_ELEMENTS // max(1, n * d))
    for start in range(0, q.shape[0], block):
        diff = qs[start : start + block, None, :] - zs[None, :, :]
        logw = -0.5 * np.sum(diff * diff, axis=2)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        out[start : start + block] = (w @ t_train) / w.sum(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class KernelModel(FittedModel):
    z_train: np.ndarray = None
    t_train: np.ndarray = None
    bandwidths: np.ndarray = None
    cv_scores: tuple[float, ...] = ()

    def _predict(self, z):
        return _nadaraya_watson(self.z_train, self.t_train, self.bandwidths, z)


@dataclass(frozen=True, eq=False)
class BoostedModel(FittedModel):
    base: float = 0.0
    depth: int = 1
    features: np.ndarray = None  # (rounds, 2**depth - 1), -1 marks an unsplit node
    thresholds: np.ndarray = None  # (rounds, 2**depth - 1)
    leaves: np.ndarray = None  # (rounds, 2**depth)
    train_loss: tuple[float, ...] = ()
    best_rounds: int = 0

    @property
    def n_rounds(self) -> int:
        return self.features.shape[0]

    def _predict(self, z):
        m = z.shape[0]
        pred = np.full(m, self.base)
        if self.n_rounds == 0:
            return pred
        T = self.n_rounds
        rounds = np.arange(T)[None, :]
        rows = np.arange(m)[:, None]
        node = np.zeros((m, T), dtype=np.int64)
        for _ in range(self.depth):
            feat = self.features[rounds, node]
            thr = self.thresholds[rounds, node]
            right = (feat >= 0) & (z[rows, np.maximum(feat, 0)] >= thr)
            node = 2 * node + 1 + right
        leaf = node - (2**self.depth - 1)
        # Summing rounds in a fixed order keeps predictions bitwise reproducible.
        contrib = self.leaves[rounds, leaf]
        for t in range(T):
            pred += contrib[:, t]
        return pred


def _bin_features(z: np.ndarray, max_bins: int):
    """Quantile thresholds per feature and the bin code of every training value.

    ``bins[i, f]`` counts thresholds of feature ``f`` that are <= ``z[i, f]``, so
    ``bins <= s`` is equivalent to ``z < thresholds[f, s]``.
    """
    n, d = z.shape
    per_feature = []
    for f in range(d):
        values = np.unique(z[:, f])
        if values.size <= 1:
            thr = np.empty(0)
        elif values.size <= max_bins:
            thr = 0.5 * (values[1:] + values[:-1])
        else:
            qs = np.quantile(z[:, f], np.arange(1, max_bins) / max_bins)
            thr = np.unique(qs)
            thr = thr[thr > values[0]]
        per_feature.append(thr)
    width = max(1, max(t.size for t in per_feature))
    thresholds = np.full((d, width), np.inf)
    bins = np.empty((n, d), dtype=np.int64)
    for f, thr in enumerate(per_feature):
        thresholds[f, : thr.size] = thr
        bins[:, f] = np.searchsorted(thr, z[:, f], side="right")
    return thresholds, bins, width + 1


def _grow_tree(bins, thresholds, n_bins, grad, depth, reg_lambda, min_leaf):
    """Fit one least-squares tree to ``grad``; returns (features, thresholds, leaf sums/counts, leaf of each row)."""
    n, d = bins.shape
    stride = d * n_bins
    base_idx = (np.arange(d) * n_bins)[None, :] + bins
    n_internal = 2**depth - 1
    feat_out = np.full(n_internal, -1, dtype=np.int64)
    thr_out = np.full(n_internal, np.inf)
    node = np.zeros(n, dtype=np.int64)
    grad_rep = np.repeat(grad, d)
    for level in range(depth):
        n_nodes = 2**level
        idx = (node[:, None] * stride + base_idx).ravel()
        size = n_nodes * stride
        G = np.bincount(idx, weights=grad_rep, minlength=size).reshape(n_nodes, d, n_bins)
        C = np.bincount(idx, minlength=size).reshape(n_nodes, d, n_bins).astype(float)
        GL = np.cumsum(G, axis=2)
        CL = np.cumsum(C, axis=2)
        GT = GL[:, :, -1:]
        CT = CL[:, :, -1:]
        GR = GT - GL
        CR = CT - CL
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL * GL / (CL + reg_lambda) + GR * GR / (CR + reg_lambda) - GT * GT / (CT + reg_lambda)
        gain[(CL < min_leaf) | (CR < min_leaf)] = -np.inf
        flat = gain.reshape(n_nodes, -1)
        best = np.argmax(flat, axis=1)
        best_gain = flat[np.arange(n_nodes), best]
        split_ok = np.isfinite(best_gain) & (best_gain > 0.0)
        best_f = best // n_bins
        best_s = best % n_bins
        offset = n_nodes - 1
        feat_out[offset : offset + n_nodes] = np.where(split_ok, best_f, -1)
        chosen = thresholds[best_f, np.minimum(best_s, thresholds.shape[1] - 1)]
        thr_out[offset : offset + n_nodes] = np.where(split_ok, chosen, np.inf)
        go_right = split_ok[node] & (bins[np.arange(n), best_f[node]] > best_s[node])
        node = 2 * node + go_right
    n_leaves = 2**depth
    leaf_sum = np.bincount(node, weights=grad, minlength=n_leaves)
    leaf_cnt = np.bincount(node, minlength=n_leaves).astype(float)
    return feat_out, thr_out, leaf_sum, leaf_cnt, node


def _tree_predict(feat, thr, leaves, depth, z):
    m = z.shape[0]
    node = np.zeros(m, dtype=np.int64)
    rows = np.arange(m)
    for _ in range(depth):
        f = feat[node]
        right = (f >= 0) & (z[rows, np.maximum(f, 0)] >= thr[node])
        node = 2 * node + 1 + right
    return leaves[node - (2**depth - 1)]


def _boost(z, t, p, rounds, z_val=None, t_val=None, patience=None):
    """Run up to ``rounds`` boosting rounds; with validation data stop early.

    Returns the model arrays, the per-round training losses and the number
    of rounds with the lowest validation loss (0 means the mean alone).
    """
    depth = int(p["max_depth"])
    nu = float(p["shrinkage"])
    lam = float(p["reg_lambda"])
    min_leaf = int(p["min_samples_leaf"])
    thresholds, bins, n_bins = _bin_features(z, int(p["max_bins"]))
    base = float(np.mean(t))
    pred = np.full(t.shape[0], base)
    feats, thrs, leaves = [], [], []
    losses = [float(np.mean((t - pred) ** 2))]
    best_rounds = 0
    if z_val is not None:
        val_pred = np.full(t_val.shape[0], base)
        best_val = float(np.mean((t_val - val_pred) ** 2))
    for r in range(rounds):
        grad = t - pred
        feat, thr, lsum, lcnt, node = _grow_tree(bins, thresholds, n_bins, grad, depth, lam, min_leaf)
        leaf = nu * lsum / (lcnt + lam)
        leaf[lcnt == 0] = 0.0
        pred = pred + leaf[node]
        feats.append(feat)
        thrs.append(thr)
        leaves.append(leaf)
        losses.append(float(np.mean((t - pred) ** 2)))
        if z_val is not None:
            val_pred = val_pred + _tree_predict(feat, thr, leaf, depth, z_val)
            val = float(np.mean((t_val - val_pred) ** 2))
            if val < best_val:
                best_val = val
                best_rounds = r + 1
            elif r + 1 - best_rounds >= patience:
                break
    n_internal = 2**depth - 1
    if feats:
        F = np.vstack(feats)
        TH = np.vstack(thrs)
        L = np.vstack(leaves)
    else:
        F = np.empty((0, n_internal), dtype=np.int64)
        TH = np.empty((0, n_internal))
        L = np.empty((0, 2**depth))
    return base, F, TH, L, losses, best_rounds


def _fit_boosted(spec, p, z, t):
    n = z.shape[0]
    rounds = int(p["n_rounds"])
    best = rounds
    if p["early_stopping"] and n >= MIN_ROWS_EARLY_STOPPING and rounds > 0:
        n_hold = max(1, math.floor(float(p["holdout"]) * n))
        perm = make_rng(spec.seed, "holdout").permutation(n)
        hold = np.sort(perm[:n_hold])
        train = np.sort(perm[n_hold:])
        *_, best = _boost(z[train], t[train], p, rounds, z[hold], t[hold], int(p["patience"]))
    base, F, TH, L, losses, _ = _boost(z, t, p, best)
    return BoostedModel(
        spec=spec,
        n_train=n,
        n_features=z.shape[1],
        training_mse=losses[-1],
        base=base,
        depth=int(p["max_depth"]),
        features=F,
        thresholds=TH,
        leaves=L,
        train_loss=tuple(losses),
        best_rounds=best,
    )


def silverman_bandwidths(z: np.ndarray) -> np.ndarray:
    """Per-dimension normal-reference bandwidth ``sd_d * (4 / ((d + 2) n))^(1 / (d + 4))``."""
    n, d = z.shape
    sd = np.std(z, axis=0, ddof=1) if n > 1 else np.ones(d)
    sd = np.where(sd > 0, sd, 1.0)
    return sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    perm = make_rng(seed, "folds").permutation(n)
    ids = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(perm, folds)):
        ids[chunk] = fold
    return ids


def _fit_kernel(spec, p, z, t):
    n = z.shape[0]
    bw = p["bandwidth"]
    scores: tuple[float, ...] = ()
    if isinstance(bw, str):
        base = silverman_bandwidths(z)
        folds = min(int(p["cv_folds"]), n)
        ids = _fold_ids(n, folds, spec.seed)
        errs = []
        for mult in p["grid"]:
            sq = 0.0
            for fold in range(folds):
                test = ids == fold
                pred = _nadaraya_watson(z[~test], t[~test], base * float(mult), z[test])
                sq += float(np.sum((t[test] - pred) ** 2))
            errs.append(sq / n)
        scores = tuple(errs)
        bandwidths = base * float(p["grid"][int(np.argmin(errs))])
    else:
        bandwidths = np.full(z.shape[1], float(bw))
    fitted = _nadaraya_watson(z, t, bandwidths, z)
    return KernelModel(
        spec=spec,
        n_train=n,
        n_features=z.shape[1],
        training_mse=float(np.mean((t - fitted) ** 2)),
        z_train=z,
        t_train=t,
        bandwidths=bandwidths,
        cv_scores=scores,
    )


def fit(spec: RegressorSpec, z, target) -> FittedModel:
    """Fit the backend described by ``spec`` to ``target`` given ``z``.

    :raises TooFewSamples: with fewer than two rows (one for ``mean_only``
        and ``knn``).
    :raises NonFinite: on NaN/inf inputs.
    """
    z = np.array(_as_design(z), dtype=float, copy=True)
    n = z.shape[0]
    t = np.array(_as_target(target, n), dtype=float, copy=True)
    minimum = 1 if spec.kind in ("mean_only", "knn") else 2
    if n < minimum:
        raise TooFewSamples(f"{spec.kind} needs at least {minimum} rows, got {n}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(t))):
        raise NonFinite("regression inputs must be finite")
    z.flags.writeable = False
    t.flags.writeable = False
    p = spec.resolved()
    if spec.kind == "mean_only":
        mean = float(np.mean(t))
        return MeanModel(spec, n, z.shape[1], float(np.mean((t - mean) ** 2)), mean=mean)
    if spec.kind == "knn":
        k = min(int(p["k"]), n)
        model = KNNModel(spec, n, z.shape[1], 0.0, z_train=z, t_train=t, k=k)
        mse = float(np.mean((t - model.predict(z)) ** 2))
        return replace(model, training_mse=mse)
    if spec.kind == "kernel_smoother":
        return _fit_kernel(spec, p, z, t)
    return _fit_boosted(spec, p, z, t)


def predict(model: FittedModel, z) -> np.ndarray:
    return model.predict(z)


def residuals(model: FittedModel, z, target) -> np.ndarray:
    """``target - predict(model, z)``."""
    z = _as_design(z)
    t = _as_target(target, z.shape[0])
    return t - model.predict(z)


def cross_fit_mse(spec: RegressorSpec, z, target, folds: int = 5, seed: int = 0) -> float:
    """Average held-out squared error over a seeded ``folds``-way partition."""
    z = _as_design(z)
    n = z.shape[0]
    t = _as_target(target, n)
    if folds < 2:
        raise InvalidHyperparameter("folds must be >= 2")
    if n < folds:
        raise TooFewSamples(f"need at least {folds} rows for {folds}-fold cross-fitting")
    ids = _fold_ids(n, folds, seed)
    sq = 0.0
    for fold in range(folds):
        test = ids == fold
        model = fit(spec, z[~test], t[~test])
        sq += float(np.sum((t[test] - model.predict(z[test])) ** 2))
    return sq / n
