"""Microdata and cell-summary containers, CSV ingestion and validation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCell,
    MissingCell,
    MissingColumn,
    NegativeSE,
    NonBinaryValue,
    NonFiniteValue,
    ValidationError,
)

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))

SOURCE_MICRODATA = "microdata"
SOURCE_SUMMARY = "summary"


@dataclass(frozen=True)
class Observation:
    t: int
    z: int
    d: int
    y: float
    x: tuple[float, ...] = ()
    unit_id: str | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented microdata sample.

    ``x`` is an ``(n, p)`` float array; ``p`` may be zero. Arrays are made
    read-only on construction so a ``Dataset`` can be shared freely.
    """

    t: np.ndarray
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    x: np.ndarray = None
    covariate_names: tuple[str, ...] = ()
    unit_id: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.y)
        if n < 1:
            raise ValidationError("dataset has no rows")
        cols = {}
        for name in ("t", "z", "d"):
            col = np.asarray(getattr(self, name))
            if col.shape != (n,):
                raise DimensionMismatch(f"column {name!r} has shape {col.shape}, expected ({n},)")
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise NonBinaryValue(int(bad[0]) + 1, name, col[bad[0]].item())
            cols[name] = col.astype(np.int8)
        y = np.asarray(self.y, dtype=float)
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise NonFiniteValue(int(bad[0]) + 1, "y", y[bad[0]].item())
        cols["y"] = y
        x = np.zeros((n, 0)) if self.x is None else np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise DimensionMismatch(f"covariate matrix has {x.shape[0]} rows, expected {n}")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DimensionMismatch(f"{len(names)} covariate names for {x.shape[1]} columns")
        finite = np.isfinite(x)
        if not finite.all():
            i, j = np.argwhere(~finite)[0]
            raise NonFiniteValue(int(i) + 1, names[j], x[i, j].item())
        cols["x"] = x
        for key, val in cols.items():
            val = np.ascontiguousarray(val)
            val.setflags(write=False)
            object.__setattr__(self, key, val)
        object.__setattr__(self, "covariate_names", names)
        if self.unit_id is not None:
            uid = np.asarray(self.unit_id)
            if uid.shape != (n,):
                raise DimensionMismatch("unit_id length does not match the data")
            uid.setflags(write=False)
            object.__setattr__(self, "unit_id", uid)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.n

    def rows(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                int(self.t[i]),
                int(self.z[i]),
                int(self.d[i]),
                float(self.y[i]),
                tuple(float(v) for v in self.x[i]),
                None if self.unit_id is None else str(self.unit_id[i]),
            )

    @classmethod
    def from_rows(cls, rows: Sequence[Observation], covariate_names: Sequence[str] = ()) -> "Dataset":
        rows = list(rows)
        if not rows:
            raise ValidationError("dataset has no rows")
        p = len(rows[0].x)
        if any(len(r.x) != p for r in rows):
            raise DimensionMismatch("rows have differing numbers of covariates")
        uid = None
        if any(r.unit_id is not None for r in rows):
            uid = np.array([r.unit_id for r in rows], dtype=object)
        return cls(
            t=np.array([r.t for r in rows]),
            z=np.array([r.z for r in rows]),
            d=np.array([r.d for r in rows]),
            y=np.array([r.y for r in rows], dtype=float),
            x=np.array([r.x for r in rows], dtype=float).reshape(len(rows), p),
            covariate_names=tuple(covariate_names),
            unit_id=uid,
        )

    def take(self, index: np.ndarray) -> "Dataset":
        """Row subset (with repetition allowed), e.g. for resampling."""
        return Dataset(
            self.t[index],
            self.z[index],
            self.d[index],
            self.y[index],
            self.x[index],
            self.covariate_names,
            None if self.unit_id is None else self.unit_id[index],
        )

    def replace(self, **columns) -> "Dataset":
        kw = dict(
            t=self.t, z=self.z, d=self.d, y=self.y, x=self.x,
            covariate_names=self.covariate_names, unit_id=self.unit_id,
        )
        kw.update(columns)
        return Dataset(**kw)

    def select_covariates(self, names: Sequence[str]) -> "Dataset":
        idx = []
        for name in names:
            if name not in self.covariate_names:
                raise MissingColumn(name)
            idx.append(self.covariate_names.index(name))
        return self.replace(x=self.x[:, idx], covariate_names=tuple(names))


@dataclass(frozen=True)
class Schema:
    """Maps the roles t, z, d, y (and optional covariates/unit id) to CSV columns."""

    t: str = "t"
    z: str = "z"
    d: str = "d"
    y: str = "y"
    covariates: tuple[str, ...] = ()
    unit_id: str | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "Schema":
        if mapping is None:
            return cls()
        if isinstance(mapping, Schema):
            return mapping
        kw = dict(mapping)
        if "covariates" in kw:
            kw["covariates"] = tuple(kw["covariates"])
        return cls(**kw)


def _parse_binary(token: str, row: int, column: str) -> int:
    tok = token.strip()
    try:
        value = float(tok)
    except ValueError:
        raise NonBinaryValue(row, column, token) from None
    if value == 0.0:
        return 0
    if value == 1.0:
        return 1
    raise NonBinaryValue(row, column, token)


def _parse_real(token: str, row: int, column: str) -> float:
    try:
        value = float(token.strip())
    except ValueError:
        raise NonFiniteValue(row, column, token) from None
    if not math.isfinite(value):
        raise NonFiniteValue(row, column, token)
    return value


def load_dataset(path: str | Path, schema: Mapping | Schema | None = None) -> Dataset:
    """Read a microdata CSV. Row numbers in errors count data rows from 1."""
    schema = Schema.from_mapping(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [schema.t, schema.z, schema.d, schema.y, *schema.covariates]
        if schema.unit_id:
            required.append(schema.unit_id)
        for col in required:
            if col not in header:
                raise MissingColumn(col)
        t, z, d, y, x, uid = [], [], [], [], [], []
        for i, rec in enumerate(reader, start=1):
            t.append(_parse_binary(rec[schema.t], i, schema.t))
            z.append(_parse_binary(rec[schema.z], i, schema.z))
            d.append(_parse_binary(rec[schema.d], i, schema.d))
            y.append(_parse_real(rec[schema.y], i, schema.y))
            x.append([_parse_real(rec[c], i, c) for c in schema.covariates])
            if schema.unit_id:
                uid.append(rec[schema.unit_id])
    if not y:
        raise ValidationError(f"{path}: no data rows")
    return Dataset(
        t=np.array(t),
        z=np.array(z),
        d=np.array(d),
        y=np.array(y, dtype=float),
        x=np.array(x, dtype=float).reshape(len(y), len(schema.covariates)),
        covariate_names=schema.covariates,
        unit_id=np.array(uid, dtype=object) if schema.unit_id else None,
    )


def write_dataset(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        extra = ["unit_id"] if data.unit_id is not None else []
        w.writerow(["t", "z", "d", "y", *data.covariate_names, *extra])
        for i in range(data.n):
            row = [int(data.t[i]), int(data.z[i]), int(data.d[i]), repr(float(data.y[i]))]
            row += [repr(float(v)) for v in data.x[i]]
            if extra:
                row.append(data.unit_id[i])
            w.writerow(row)


# -- cell summaries ------------------------------------------------------------


@dataclass(frozen=True)
class CellSummary:
    t: int
    z: int
    mean_y: float
    mean_d: float
    var_y: float
    var_d: float
    cov_yd: float
    n_cell: int
    se_mean_y: float
    se_mean_d: float


@dataclass(frozen=True)
class CellTable:
    """The four (t, z) cell summaries.

    ``source`` is ``"microdata"`` when built from rows (within-cell Y-D
    covariance known) or ``"summary"`` when read from a summary file, in which
    case ``cov_yd`` is 0 and not meaningful.
    """

    cells: tuple[CellSummary, ...]
    n_total: int
    source: str = SOURCE_MICRODATA

    def __post_init__(self):
        keys = sorted((c.t, c.z) for c in self.cells)
        if keys != list(CELLS):
            raise ValidationError(f"cell table must hold exactly the cells {CELLS}, got {keys}")
        object.__setattr__(self, "cells", tuple(sorted(self.cells, key=lambda c: (c.t, c.z))))

    def __getitem__(self, key: tuple[int, int]) -> CellSummary:
        t, z = key
        return self.cells[2 * t + z]

    @property
    def cov_available(self) -> bool:
        return self.source == SOURCE_MICRODATA

    def contrast(self, attr: str) -> float:
        """Double difference c(1,1) - c(0,1) - c(1,0) + c(0,0) of a cell attribute."""
        v = {k: getattr(self[k], attr) for k in CELLS}
        return (v[1, 1] - v[0, 1]) - (v[1, 0] - v[0, 0])

    @property
    def delta_y(self) -> float:
        return self.contrast("mean_y")

    @property
    def delta_d(self) -> float:
        return self.contrast("mean_d")


def _fsum_mean(v: np.ndarray) -> float:
    return math.fsum(v.tolist()) / len(v)


def _fsum_cov(a: np.ndarray, b: np.ndarray, ma: float, mb: float) -> float:
    if len(a) < 2:
        return float("nan")
    return math.fsum(((a - ma) * (b - mb)).tolist()) / (len(a) - 1)


def cell_table(data: Dataset) -> CellTable:
    """Per-cell means, n-1 variances and covariance of (y, d).

    Sums are exactly rounded (``math.fsum``), so the table does not depend on
    row order. Cells with a single row get NaN variances; the variance-based
    estimators reject them later with ``CellTooSmall``.
    """
    cells = []
    y = data.y
    d = data.d.astype(float)
    for t, z in CELLS:
        mask = (data.t == t) & (data.z == z)
        k = int(mask.sum())
        if k == 0:
            raise EmptyCell(t, z)
        yc, dc = y[mask], d[mask]
        my, md = _fsum_mean(yc), _fsum_mean(dc)
        vy = _fsum_cov(yc, yc, my, my)
        vd = _fsum_cov(dc, dc, md, md)
        cells.append(
            CellSummary(
                t=t, z=z, mean_y=my, mean_d=md, var_y=vy, var_d=vd,
                cov_yd=_fsum_cov(yc, dc, my, md), n_cell=k,
                se_mean_y=math.sqrt(vy / k), se_mean_d=math.sqrt(vd / k),
            )
        )
    return CellTable(tuple(cells), data.n, SOURCE_MICRODATA)


def summary_table(records: Mapping[tuple[int, int], tuple[float, float, int]], role: str) -> CellTable:
    """Build a summary-backed table from ``{(t, z): (mean, se, n)}``."""
    if role not in ("outcome", "exposure"):
        raise ValueError(f"role must be 'outcome' or 'exposure', not {role!r}")
    nan = float("nan")
    cells = []
    for t, z in CELLS:
        if (t, z) not in records:
            raise MissingCell(t, z)
        mean, se, n = records[t, z]
        if se < 0:
            raise NegativeSE(t, z, se)
        if not (math.isfinite(mean) and math.isfinite(se)):
            raise NonFiniteValue(2 * t + z + 1, "mean/se", (mean, se))
        if n < 1:
            raise ValidationError(f"cell t={t}, z={z}: n must be >= 1, got {n}")
        var = se * se * n
        if role == "outcome":
            cs = CellSummary(t, z, mean, nan, var, nan, 0.0, n, se, nan)
        else:
            cs = CellSummary(t, z, nan, mean, nan, var, 0.0, n, nan, se)
        cells.append(cs)
    return CellTable(tuple(cells), sum(c.n_cell for c in cells), SOURCE_SUMMARY)


def load_summary(path: str | Path, role: str) -> CellTable:
    """Read a ``t,z,mean,se,n`` summary CSV for the outcome or the exposure."""
    records = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("t", "z", "mean", "se", "n"):
            if col not in (reader.fieldnames or []):
                raise MissingColumn(col)
        for i, rec in enumerate(reader, start=1):
            t = _parse_binary(rec["t"], i, "t")
            z = _parse_binary(rec["z"], i, "z")
            if (t, z) in records:
                raise ValidationError(f"duplicate record for t={t}, z={z}")
            n_tok = rec["n"].strip()
            try:
                n = int(n_tok)
            except ValueError:
                n = int(_parse_real(n_tok, i, "n"))
            records[t, z] = (_parse_real(rec["mean"], i, "mean"), _parse_real(rec["se"], i, "se"), n)
    return summary_table(records, role)


def write_summary(table: CellTable, path: str | Path, role: str) -> None:
    """Write the outcome or exposure side of a table in the summary format."""
    mean_attr, se_attr = ("mean_y", "se_mean_y") if role == "outcome" else ("mean_d", "se_mean_d")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "z", "mean", "se", "n"])
        for c in table.cells:
            w.writerow([c.t, c.z, repr(getattr(c, mean_attr)), repr(getattr(c, se_attr)), c.n_cell])
