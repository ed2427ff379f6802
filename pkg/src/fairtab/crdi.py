"""Partial disparate-impact repair of numeric attributes.

Each group's values are mapped through their own rank position ``u`` onto a
"median" quantile function and blended with the original:
``x' = (1 - lam) * F_s^-1(u) + lam * F_A^-1(u)``, where ``F_A^-1(u)`` is the
median over groups of ``F_s^-1(u)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from .autodiff import DomainError
from .fairness import FairnessSpec, UndefinedMetricError


def _rank_knots(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


@dataclass(frozen=True)
class GroupQuantiles:
    """Sorted values of one numeric column, per protected group."""

    groups: dict[Any, np.ndarray]

    @classmethod
    def from_column(cls, values: np.ndarray, groups: np.ndarray) -> GroupQuantiles:
        values = np.asarray(values, dtype=np.float64)
        out = {}
        for g in pd.unique(groups):
            out[g] = np.sort(values[groups == g])
        if not out:
            raise UndefinedMetricError("no groups to repair")
        return cls(out)

    def __post_init__(self):
        for g, v in self.groups.items():
            if len(v) == 0:
                raise UndefinedMetricError(f"group {g!r} is empty")

    def cdf(self, group: Any, x) -> np.ndarray:
        """Rank position ``(r - 0.5) / n`` of ``x`` within ``group``; ties share their midpoint rank."""
        v = self.groups[group]
        x = np.asarray(x, dtype=np.float64)
        below = np.searchsorted(v, x, side="left")
        upto = np.searchsorted(v, x, side="right")
        return ((below + 1 + upto) / 2.0 - 0.5) / len(v)

    def quantile(self, group: Any, u) -> np.ndarray:
        v = self.groups[group]
        return np.interp(u, _rank_knots(len(v)), v)

    def median_quantile(self, u) -> np.ndarray:
        return median_quantile(list(self.groups.values()), u)


def median_quantile(groups: Sequence[np.ndarray], u) -> np.ndarray | float:
    """Median across groups of each group's interpolated quantile at ``u``.

    With an even number of groups the two central values are averaged.
    ``groups`` are sorted value arrays.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any((u_arr < 0) | (u_arr > 1)) or not np.all(np.isfinite(u_arr)):
        raise DomainError("median_quantile: u must lie in [0, 1]")
    if not groups:
        raise UndefinedMetricError("median_quantile needs at least one group")
    qs = np.stack([np.interp(u_arr, _rank_knots(len(g)), g) for g in groups])
    result = np.median(qs, axis=0)
    return float(result) if result.ndim == 0 else result


def repair_column(values: np.ndarray, groups: np.ndarray, lam: float) -> np.ndarray:
    gq = GroupQuantiles.from_column(values, groups)
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    for g in gq.groups:
        mask = groups == g
        u = gq.cdf(g, values[mask])
        out[mask] = (1.0 - lam) * gq.quantile(g, u) + lam * gq.median_quantile(u)
    return out


def repair(
    table: pd.DataFrame,
    spec: FairnessSpec,
    columns: Iterable[str] | None = None,
    lam: float = 1.0,
) -> pd.DataFrame:
    """Return a copy of ``table`` with ``columns`` repaired at level ``lam``.

    ``columns`` defaults to every numeric column other than the protected
    attribute and label. Other columns are copied untouched.
    """
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"repair level must lie in [0, 1], got {lam}")
    groups = table[spec.protected].to_numpy()
    if len(pd.unique(groups)) != 2:
        raise UndefinedMetricError(f"protected column {spec.protected!r} must contain exactly two groups")
    if columns is None:
        columns = [
            c
            for c in table.columns
            if c not in (spec.protected, spec.label) and pd.api.types.is_numeric_dtype(table[c].dtype)
        ]
    out = table.copy()
    for c in columns:
        if c in (spec.protected, spec.label):
            raise ValueError(f"refusing to repair the {c!r} column")
        if not pd.api.types.is_numeric_dtype(table[c].dtype):
            raise ValueError(f"column {c!r} is not numeric")
        repaired = repair_column(table[c].to_numpy(), groups, lam)
        if pd.api.types.is_integer_dtype(table[c].dtype) and np.all(repaired == np.rint(repaired)):
            repaired = repaired.astype(table[c].dtype)
        out[c] = repaired
    return out
