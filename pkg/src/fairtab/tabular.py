"""Table schemas and the reversible row encoding used by the GAN.

Numeric columns go through their empirical CDF (optionally followed by the
standard-normal quantile function); categorical columns become one-hot
blocks. An encoded row is the numeric block followed by the categorical
blocks in schema order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from .autodiff import DimensionError, DomainError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

TRANSFORMER_FORMAT = "fairtab.transformer"
TRANSFORMER_VERSION = 1


class SchemaError(ValueError):
    """A table does not conform to, or cannot define, a schema."""


class FitError(ValueError):
    """A transformer cannot be fitted to the given table."""


def _plain(value: Any) -> Any:
    """numpy scalars -> Python scalars, so vocabularies serialise cleanly."""
    return value.item() if isinstance(value, np.generic) else value


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaError(f"column {self.name!r}: duplicate categories")


@dataclass(frozen=True)
class TableSchema:
    """Ordered columns plus the protected attribute and label designations."""

    columns: tuple[Column, ...]
    protected: str | None = None
    underprivileged: Any = None
    label: str | None = None
    favorable: Any = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        for role, name, value in (
            ("protected", self.protected, self.underprivileged),
            ("label", self.label, self.favorable),
        ):
            if name is None:
                continue
            col = self.column(name)
            if col.kind != CATEGORICAL:
                raise SchemaError(f"{role} column {name!r} must be categorical")
            if col.categories and len(col.categories) != 2:
                raise SchemaError(
                    f"{role} column {name!r} must have exactly 2 categories, got {list(col.categories)}"
                )
            if col.categories and value not in col.categories:
                raise SchemaError(f"{role} value {value!r} not in {list(col.categories)}")

    @classmethod
    def infer(
        cls,
        table: pd.DataFrame,
        categorical: Iterable[str] | None = None,
        numeric: Iterable[str] | None = None,
        protected: str | None = None,
        underprivileged: Any = None,
        label: str | None = None,
        favorable: Any = None,
    ) -> TableSchema:
        """Build a schema from a table.

        Columns not named in ``categorical`` or ``numeric`` are classified by
        dtype. Vocabularies use first-appearance order; the protected and
        label columns are always categorical.
        """
        categorical = set(categorical or ())
        numeric = set(numeric or ())
        for name in (protected, label):
            if name is not None:
                categorical.add(name)
        missing = (categorical | numeric) - set(table.columns)
        if missing:
            raise SchemaError(f"columns not in table: {sorted(missing)}")
        columns = []
        for name in table.columns:
            if name in categorical:
                kind = CATEGORICAL
            elif name in numeric or pd.api.types.is_numeric_dtype(table[name].dtype):
                kind = NUMERIC
            else:
                kind = CATEGORICAL
            if kind == CATEGORICAL:
                vocab = tuple(_plain(v) for v in pd.unique(table[name]))
                columns.append(Column(name, CATEGORICAL, vocab))
            else:
                columns.append(Column(name, NUMERIC))
        return cls(tuple(columns), protected, _plain(underprivileged), label, _plain(favorable))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def numeric_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind == NUMERIC]

    @property
    def categorical_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind == CATEGORICAL]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def privileged(self) -> Any:
        (other,) = [v for v in self.column(self.protected).categories if v != self.underprivileged]
        return other

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": c.name, "kind": c.kind, "categories": list(c.categories)} for c in self.columns
            ],
            "protected": self.protected,
            "underprivileged": self.underprivileged,
            "label": self.label,
            "favorable": self.favorable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TableSchema:
        columns = tuple(Column(c["name"], c["kind"], tuple(c["categories"])) for c in d["columns"])
        return cls(columns, d["protected"], d["underprivileged"], d["label"], d["favorable"])


@dataclass(frozen=True)
class NumericSupport:
    """Empirical CDF of one training column, evaluated at its distinct values.

    The r-th order statistic gets ``(r - 0.5) / n``; a tied block gets the
    midpoint of its ranks. Between distinct values the CDF is linear.
    """

    values: np.ndarray
    cdf: np.ndarray
    n: int
    integer: bool = False

    @classmethod
    def fit(cls, column: np.ndarray, integer: bool = False) -> NumericSupport:
        x = np.sort(np.asarray(column, dtype=np.float64))
        n = len(x)
        if n == 0:
            raise FitError("cannot fit an empty column")
        if not np.all(np.isfinite(x)):
            raise FitError("numeric column contains non-finite values")
        values, first, counts = np.unique(x, return_index=True, return_counts=True)
        # 1-based ranks first+1 .. first+count, midpoint minus the half-step
        mid_rank = first + (counts + 1) / 2.0
        return cls(values, (mid_rank - 0.5) / n, n, integer)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise DomainError("transform: non-finite numeric input")
        # out of range takes the endpoint's value: 0.5/n and 1 - 0.5/n unless an
        # endpoint is tied, and 0.5 everywhere for a constant column
        return np.interp(x, self.values, self.cdf)

    def inverse(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        return np.interp(u, self.cdf, self.values)


@dataclass(frozen=True)
class FittedTransformer:
    schema: TableSchema
    supports: dict[str, NumericSupport]
    output_distribution: str = "uniform"
    blocks: dict[str, slice] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.output_distribution not in ("uniform", "normal"):
            raise ValueError(f"unknown output distribution {self.output_distribution!r}")
        blocks = {}
        pos = 0
        for c in self.schema.numeric_columns:
            blocks[c.name] = slice(pos, pos + 1)
            pos += 1
        for c in self.schema.categorical_columns:
            blocks[c.name] = slice(pos, pos + len(c.categories))
            pos += len(c.categories)
        object.__setattr__(self, "blocks", blocks)

    # Dimensions: N_C, N_D, l_i and l_w.
    @property
    def n_numeric(self) -> int:
        return len(self.schema.numeric_columns)

    @property
    def n_categorical(self) -> int:
        return len(self.schema.categorical_columns)

    @property
    def block_widths(self) -> list[int]:
        return [len(c.categories) for c in self.schema.categorical_columns]

    @property
    def width(self) -> int:
        return self.n_numeric + int(np.sum(self.block_widths, dtype=int))

    def category_index(self, column: str, value: Any) -> int:
        """Position of ``value`` within the one-hot block of ``column``."""
        cats = self.schema.column(column).categories
        try:
            return cats.index(value)
        except ValueError:
            raise SchemaError(f"{value!r} is not a category of {column!r}") from None

    def transform_numeric(self, name: str, values) -> np.ndarray:
        u = self.supports[name].transform(values)
        return norm.ppf(u) if self.output_distribution == "normal" else u

    def inverse_numeric(self, name: str, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        u = norm.cdf(values) if self.output_distribution == "normal" else values
        return self.supports[name].inverse(u)

    def encode(self, table: pd.DataFrame) -> np.ndarray:
        missing = [n for n in self.schema.names if n not in table.columns]
        if missing:
            raise SchemaError(f"table lacks columns {missing}")
        out = np.zeros((len(table), self.width))
        for c in self.schema.numeric_columns:
            try:
                col = table[c.name].to_numpy(dtype=np.float64)
            except (TypeError, ValueError):
                raise SchemaError(f"column {c.name!r} is not numeric") from None
            out[:, self.blocks[c.name].start] = self.transform_numeric(c.name, col)
        for c in self.schema.categorical_columns:
            lookup = {v: i for i, v in enumerate(c.categories)}
            try:
                codes = np.fromiter((lookup[_plain(v)] for v in table[c.name]), dtype=np.int64, count=len(table))
            except KeyError as exc:
                raise SchemaError(f"column {c.name!r}: unseen category {exc.args[0]!r}") from None
            out[np.arange(len(table)), self.blocks[c.name].start + codes] = 1.0
        return out

    def decode(self, batch: np.ndarray) -> pd.DataFrame:
        """Invert :meth:`encode`; soft categorical blocks decode to their argmax."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.width:
            raise DimensionError(f"decode: expected width {self.width}, got shape {batch.shape}")
        data = {}
        for c in self.schema.columns:
            block = batch[:, self.blocks[c.name]]
            if c.kind == NUMERIC:
                values = self.inverse_numeric(c.name, block[:, 0])
                if self.supports[c.name].integer:
                    values = np.rint(values).astype(np.int64)
                data[c.name] = values
            else:
                cats = np.empty(len(c.categories), dtype=object)
                cats[:] = list(c.categories)
                data[c.name] = cats[np.argmax(block, axis=1)]
        return pd.DataFrame(data, columns=self.schema.names)

    def save(self, path: str | Path) -> None:
        doc = {
            "format": TRANSFORMER_FORMAT,
            "version": TRANSFORMER_VERSION,
            "output_distribution": self.output_distribution,
            "schema": self.schema.to_dict(),
            "numeric": {
                name: {
                    "n": s.n,
                    "integer": s.integer,
                    "values": s.values.tolist(),
                    "cdf": s.cdf.tolist(),
                }
                for name, s in self.supports.items()
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> FittedTransformer:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != TRANSFORMER_FORMAT:
            raise SchemaError(f"{path}: not a transformer file")
        if doc.get("version") != TRANSFORMER_VERSION:
            raise SchemaError(f"{path}: unsupported transformer version {doc.get('version')}")
        supports = {
            name: NumericSupport(
                np.array(s["values"], dtype=np.float64),
                np.array(s["cdf"], dtype=np.float64),
                int(s["n"]),
                bool(s["integer"]),
            )
            for name, s in doc["numeric"].items()
        }
        return cls(TableSchema.from_dict(doc["schema"]), supports, doc["output_distribution"])


def fit(table: pd.DataFrame, schema: TableSchema, output_distribution: str = "uniform") -> FittedTransformer:
    """Fit quantile supports and confirm every categorical value is in the vocabulary."""
    if len(table) == 0:
        raise FitError("cannot fit a transformer on an empty table")
    missing = [n for n in schema.names if n not in table.columns]
    if missing:
        raise SchemaError(f"table lacks columns {missing}")
    supports = {}
    for c in schema.numeric_columns:
        col = table[c.name]
        if not pd.api.types.is_numeric_dtype(col.dtype) or pd.api.types.is_bool_dtype(col.dtype):
            raise SchemaError(f"column {c.name!r} is declared numeric but has dtype {col.dtype}")
        supports[c.name] = NumericSupport.fit(col.to_numpy(), integer=pd.api.types.is_integer_dtype(col.dtype))
    for c in schema.categorical_columns:
        unseen = set(_plain(v) for v in pd.unique(table[c.name])) - set(c.categories)
        if unseen:
            raise SchemaError(f"column {c.name!r}: values {sorted(map(str, unseen))} missing from vocabulary")
    fitted = FittedTransformer(schema, supports, output_distribution)
    return fitted


def encode(table: pd.DataFrame, fitted: FittedTransformer) -> np.ndarray:
    return fitted.encode(table)


def decode(batch: np.ndarray, fitted: FittedTransformer) -> pd.DataFrame:
    return fitted.decode(batch)


def transform_numeric(values: Sequence[float], support: NumericSupport) -> np.ndarray:
    return support.transform(values)


def inverse_numeric(values: Sequence[float], support: NumericSupport) -> np.ndarray:
    return support.inverse(values)
