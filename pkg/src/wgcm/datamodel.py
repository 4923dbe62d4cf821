"""Datasets of (X, Y, Z) blocks, CSV ingestion and seeded sample splitting."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateSplit,
    DimensionMismatch,
    EmptyData,
    IndexOutOfRange,
    InvalidParameter,
    MissingColumn,
    MissingFile,
    NonFinite,
    ParseError,
)
from .seeding import make_rng


def _as_block(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a vector or a matrix, got ndim={arr.ndim}")
    if arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} needs at least one column")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or infinite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of ``n`` rows split into X, Y and Z blocks.

    Vectors are promoted to single-column matrices.  All blocks are copied
    and made read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    column_names: dict[str, tuple[str, ...]] | None = field(default=None)

    def __post_init__(self):
        x = _as_block(self.x, "x")
        y = _as_block(self.y, "y")
        z = _as_block(self.z, "z")
        n = x.shape[0]
        if n < 1:
            raise EmptyData("dataset has no rows")
        if y.shape[0] != n or z.shape[0] != n:
            raise DimensionMismatch(
                f"row counts differ: x={n}, y={y.shape[0]}, z={z.shape[0]}"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dx(self) -> int:
        return self.x.shape[1]

    @property
    def dy(self) -> int:
        return self.y.shape[1]

    @property
    def dz(self) -> int:
        return self.z.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z)
            and self.column_names == other.column_names
        )

    __hash__ = None


@dataclass(frozen=True)
class SplitPlan:
    """Partition of the row indices into a weight-estimation part and a test part."""

    indices_a: tuple[int, ...]
    indices_main: tuple[int, ...]
    seed: int
    fraction: float


def load_csv(
    path: str | os.PathLike,
    x_cols: Sequence[str],
    y_cols: Sequence[str],
    z_cols: Sequence[str],
) -> Dataset:
    """Read a headed CSV file and group its columns into a :class:`Dataset`.

    :param path: CSV file with one header row and '.' as decimal point.
    :param x_cols: header names forming the X block (likewise ``y_cols``, ``z_cols``).
    :raises MissingFile: if ``path`` does not exist.
    :raises MissingColumn: if a requested column is absent from the header.
    :raises ParseError: at the first cell that is not a real number.
    :raises NonFinite: at the first cell that parses to NaN or infinity.
    :raises EmptyData: if the file has no data rows.
    """
    if not os.path.isfile(path):
        raise MissingFile(str(path))
    groups = {"x": list(x_cols), "y": list(y_cols), "z": list(z_cols)}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyData(f"{path} is empty") from None
        position = {name: i for i, name in enumerate(header)}
        wanted: list[str] = []
        for cols in groups.values():
            if not cols:
                raise InvalidParameter("every block needs at least one column")
            for col in cols:
                if col not in position:
                    raise MissingColumn(col)
                if col not in wanted:
                    wanted.append(col)
        rows: list[list[float]] = []
        for row_number, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            parsed = []
            for col in wanted:
                idx = position[col]
                cell = row[idx].strip() if idx < len(row) else ""
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(row_number, col, cell) from None
                if not math.isfinite(value):
                    raise NonFinite(f"row {row_number}, column {col}: {cell!r}")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise EmptyData(f"{path} has no data rows")
    table = np.array(rows, dtype=float)
    index = {col: i for i, col in enumerate(wanted)}

    def block(cols):
        return table[:, [index[c] for c in cols]]

    return Dataset(
        x=block(groups["x"]),
        y=block(groups["y"]),
        z=block(groups["z"]),
        column_names={k: tuple(v) for k, v in groups.items()},
    )


def split_sizes(n: int, fraction: float) -> tuple[int, int]:
    """Sizes ``(a_n, n - a_n)`` with ``a_n = max(1, floor(fraction * n))``."""
    if not 0.0 < fraction < 1.0:
        raise InvalidParameter(f"fraction must lie in (0, 1), got {fraction}")
    a_n = max(1, math.floor(fraction * n))
    return a_n, n - a_n


def split(ds: Dataset, fraction: float, seed: int) -> SplitPlan:
    """Seeded uniform split; the first ``a_n`` shuffled indices form part A."""
    n = ds.n
    a_n, n_main = split_sizes(n, fraction)
    if n < 2 or n_main < 1:
        raise DegenerateSplit(f"cannot split n={n} rows with fraction={fraction}")
    perm = make_rng(seed).permutation(n)
    return SplitPlan(
        indices_a=tuple(sorted(int(i) for i in perm[:a_n])),
        indices_main=tuple(sorted(int(i) for i in perm[a_n:])),
        seed=int(seed),
        fraction=float(fraction),
    )


def subset(ds: Dataset, indices: Sequence[int]) -> Dataset:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise EmptyData("empty index list")
    if idx.min() < 0 or idx.max() >= ds.n:
        raise IndexOutOfRange(f"indices must lie in [0, {ds.n})")
    return Dataset(x=ds.x[idx], y=ds.y[idx], z=ds.z[idx], column_names=ds.column_names)
