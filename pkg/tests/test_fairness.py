import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtab.fairness import (
    FairnessSpec,
    UndefinedMetricError,
    classifier_ds,
    data_ds,
    discrimination_score,
    predictions_ds,
)
from fairtab.recipes import get_recipe
from fairtab.tabular import TableSchema

from oracles import ds_by_counting

SPEC = FairnessSpec("s", 0, "y", 1)


class Replay:
    """Predicts whatever is stored in a column."""

    def __init__(self, column):
        self.column = column

    def predict(self, table):
        return table[self.column].to_numpy()


class Constant:
    def __init__(self, value):
        self.value = value

    def predict(self, table):
        return np.full(len(table), self.value, dtype=object)


def test_counting_example():
    t = pd.DataFrame({"s": [1, 1, 1, 0], "y": [1, 1, 0, 0]})
    assert data_ds(t, SPEC) == pytest.approx(2 / 3)


def test_balanced_rates_give_zero():
    t = pd.DataFrame({"s": [1, 1, 0, 0], "y": [1, 0, 0, 1]})
    assert data_ds(t, SPEC) == 0.0


def test_empty_group_is_an_error():
    t = pd.DataFrame({"s": [1, 1], "y": [1, 0]})
    with pytest.raises(UndefinedMetricError):
        data_ds(t, SPEC)
    with pytest.raises(UndefinedMetricError):
        discrimination_score(np.zeros(3, bool), np.ones(3, bool))


def test_non_binary_columns_are_rejected():
    t = pd.DataFrame({"s": [0, 1, 2], "y": [1, 0, 1]})
    with pytest.raises(ValueError):
        data_ds(t, SPEC)
    with pytest.raises(ValueError):
        data_ds(pd.DataFrame({"s": [0, 1, 1], "y": [0, 1, 2]}), SPEC)


def test_adult_full_table_ds():
    recipe = get_recipe("adult")
    table, schema = recipe.ingest()
    assert data_ds(table, FairnessSpec.from_schema(schema)) == pytest.approx(0.195, abs=0.005)


def test_classifier_predicting_the_protected_attribute_is_maximal():
    t = pd.DataFrame({"s": [0, 0, 1, 1, 1], "y": [0, 1, 0, 1, 1]})
    assert classifier_ds(Replay("s"), t, SPEC) == 1.0


def test_constant_classifiers_score_zero():
    t = pd.DataFrame({"s": [0, 0, 1, 1, 1], "y": [0, 1, 0, 1, 1]})
    assert classifier_ds(Constant(1), t, SPEC) == 0.0
    assert classifier_ds(Constant(0), t, SPEC) == 0.0


def test_majority_class_classifier_scores_zero():
    t = pd.DataFrame({"s": [0, 1, 1, 0, 1, 0], "y": [0, 0, 0, 1, 1, 0]})
    majority = t["y"].mode()[0]
    assert classifier_ds(Constant(majority), t, SPEC) == 0.0


def test_classifier_needs_both_groups_in_test():
    t = pd.DataFrame({"s": [1, 1], "y": [0, 1]})
    with pytest.raises(UndefinedMetricError):
        classifier_ds(Constant(1), t, SPEC)


def test_spec_from_schema():
    t = pd.DataFrame({"g": ["a", "b"], "y": ["yes", "no"]})
    schema = TableSchema.infer(t, protected="g", underprivileged="a", label="y", favorable="yes")
    assert FairnessSpec.from_schema(schema) == FairnessSpec("g", "a", "y", "yes")
    with pytest.raises(ValueError):
        FairnessSpec.from_schema(TableSchema.infer(t))


@st.composite
def labelled(draw):
    n = draw(st.integers(2, 60))
    s = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    s[0], s[1] = True, False
    y = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return pd.DataFrame({"s": np.array(s, dtype=int), "y": np.array(y, dtype=int)})


@settings(max_examples=200, deadline=None)
@given(labelled(), st.randoms(use_true_random=False))
def test_ds_properties(t, rnd):
    ds = data_ds(t, SPEC)
    assert -1.0 <= ds <= 1.0
    assert ds == pytest.approx(ds_by_counting(t, "s", 0, "y", 1), abs=1e-12)
    order = list(range(len(t)))
    rnd.shuffle(order)
    assert data_ds(t.iloc[order], SPEC) == pytest.approx(ds, abs=1e-12)
    assert data_ds(pd.concat([t, t]), SPEC) == pytest.approx(ds, abs=1e-12)
    assert classifier_ds(Replay("y"), t, SPEC) == pytest.approx(ds, abs=1e-12)
    assert predictions_ds(t["y"].to_numpy(), t, SPEC) == pytest.approx(ds, abs=1e-12)
