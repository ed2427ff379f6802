"""Discrimination score for labelled tables and for classifiers.

``DS = P(y = favorable | s = privileged) - P(y = favorable | s = underprivileged)``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np
import pandas as pd


class UndefinedMetricError(ValueError):
    """A group needed by the metric is empty."""


@dataclass(frozen=True)
class FairnessSpec:
    protected: str
    underprivileged: Any
    label: str
    favorable: Any

    @classmethod
    def from_schema(cls, schema) -> FairnessSpec:
        if schema.protected is None or schema.label is None:
            raise ValueError("schema does not designate a protected attribute and a label")
        return cls(schema.protected, schema.underprivileged, schema.label, schema.favorable)


class Classifier(Protocol):
    def predict(self, table: pd.DataFrame) -> np.ndarray: ...


def _check_binary(values: pd.Series, name: str) -> None:
    distinct = pd.unique(values)
    if len(distinct) > 2:
        raise ValueError(f"column {name!r} must be binary, found {len(distinct)} values")


def discrimination_score(privileged: np.ndarray, favorable: np.ndarray) -> float:
    """DS from boolean group membership and boolean outcome arrays."""
    privileged = np.asarray(privileged, dtype=bool)
    favorable = np.asarray(favorable, dtype=bool)
    n_priv = int(privileged.sum())
    n_under = len(privileged) - n_priv
    if n_priv == 0 or n_under == 0:
        raise UndefinedMetricError(
            f"discrimination score needs both groups (privileged={n_priv}, underprivileged={n_under})"
        )
    return float(favorable[privileged].mean() - favorable[~privileged].mean())


def data_ds(table: pd.DataFrame, spec: FairnessSpec) -> float:
    _check_binary(table[spec.protected], spec.protected)
    _check_binary(table[spec.label], spec.label)
    return discrimination_score(
        (table[spec.protected] != spec.underprivileged).to_numpy(),
        (table[spec.label] == spec.favorable).to_numpy(),
    )


def classifier_ds(classifier: Classifier, test_table: pd.DataFrame, spec: FairnessSpec) -> float:
    """DS of the classifier's predicted labels on ``test_table``."""
    return predictions_ds(classifier.predict(test_table), test_table, spec)


def predictions_ds(predictions: np.ndarray, test_table: pd.DataFrame, spec: FairnessSpec) -> float:
    _check_binary(test_table[spec.protected], spec.protected)
    return discrimination_score(
        (test_table[spec.protected] != spec.underprivileged).to_numpy(),
        np.asarray(predictions) == spec.favorable,
    )
