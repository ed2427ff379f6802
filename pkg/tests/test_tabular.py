import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairtab.autodiff import DimensionError, DomainError
from fairtab.recipes import get_recipe
from fairtab.tabular import (
    CATEGORICAL,
    NUMERIC,
    Column,
    FitError,
    FittedTransformer,
    NumericSupport,
    SchemaError,
    TableSchema,
    decode,
    encode,
    fit,
    inverse_numeric,
    transform_numeric,
)

from oracles import midpoint_rank_cdf


def small_table():
    return pd.DataFrame(
        {
            "a": [1.0, 2.0, 3.0, 4.0],
            "b": [10, 20, 20, 40],
            "c": [0.5, -1.0, 2.5, 0.0],
            "d": ["p", "q", "r", "s"],
            "s": ["m", "f", "m", "f"],
        }
    )


def test_width_arithmetic():
    fitted = fit(small_table(), TableSchema.infer(small_table()))
    assert (fitted.n_numeric, fitted.block_widths, fitted.width) == (3, [4, 2], 9)
    assert fitted.blocks["a"] == slice(0, 1)
    assert fitted.blocks["d"] == slice(3, 7)
    assert fitted.blocks["s"] == slice(7, 9)


def test_adult_width_counts_categories():
    table, schema = get_recipe("adult").ingest()
    fitted = fit(table, schema)
    n_cat = sum(table[c].nunique() for c in table.columns if table[c].dtype == object)
    n_num = sum(1 for c in table.columns if table[c].dtype != object)
    assert fitted.width == n_num + n_cat
    assert n_num == 6


def test_empty_table_is_a_fit_error():
    t = small_table().iloc[:0]
    with pytest.raises(FitError):
        fit(t, TableSchema.infer(small_table()))


def test_schema_rejects_non_binary_protected():
    with pytest.raises(SchemaError):
        TableSchema.infer(small_table(), protected="d", underprivileged="p")


def test_schema_rejects_duplicate_names():
    with pytest.raises(SchemaError):
        TableSchema((Column("x", NUMERIC), Column("x", NUMERIC)))


def test_kind_mismatch_is_a_schema_error():
    schema = TableSchema((Column("a", NUMERIC), Column("d", CATEGORICAL, ("p", "q"))))
    with pytest.raises(SchemaError):
        fit(pd.DataFrame({"a": ["x", "y"], "d": ["p", "q"]}), schema)
    with pytest.raises(SchemaError):
        fit(pd.DataFrame({"a": [1.0, 2.0], "d": ["p", "z"]}), schema)


def test_transform_rank_oracle():
    s = NumericSupport.fit(np.array([1, 2, 3, 4, 5]))
    assert s.transform(3) == pytest.approx(0.5)
    assert s.transform(-10) == pytest.approx(0.1)
    assert s.transform(99) == pytest.approx(0.9)


def test_constant_column_maps_to_half():
    s = NumericSupport.fit(np.full(7, 3.25))
    np.testing.assert_allclose(s.transform([3.25, -1, 8]), 0.5)


def test_ties_share_midpoint_rank():
    s = NumericSupport.fit(np.array([1.0, 2.0, 2.0, 2.0, 5.0]))
    # ranks 2..4 -> midpoint 3 -> (3 - 0.5) / 5
    assert s.transform(2.0) == pytest.approx(0.5)


def test_inverse_clamps_overflow():
    s = NumericSupport.fit(np.array([4.0, 1.0, 9.0]))
    assert s.inverse(1.7) == 9.0
    assert s.inverse(-0.3) == 1.0


def test_inverse_grid_is_monotone():
    s = NumericSupport.fit(np.arange(1, 101, dtype=float))
    out = s.inverse(np.linspace(0, 1, 101))
    assert np.all(np.diff(out) >= 0)


def test_non_finite_input_is_a_domain_error():
    s = NumericSupport.fit(np.array([1.0, 2.0]))
    with pytest.raises(DomainError):
        s.transform([1.0, np.nan])


def test_one_hot_and_argmax_decoding():
    t = pd.DataFrame({"k": ["a", "b", "c", "b"]})
    fitted = fit(t, TableSchema.infer(t))
    np.testing.assert_array_equal(encode(t, fitted)[1], [0, 1, 0])
    assert decode(np.array([[0.2, 0.5, 0.3]]), fitted)["k"].tolist() == ["b"]


def test_decode_wrong_width():
    fitted = fit(small_table(), TableSchema.infer(small_table()))
    with pytest.raises(DimensionError):
        decode(np.zeros((2, fitted.width + 1)), fitted)


def test_module_level_numeric_wrappers():
    s = NumericSupport.fit(np.array([3.0, 1.0, 2.0]))
    u = transform_numeric([1.0, 2.0, 3.0], s)
    np.testing.assert_allclose(inverse_numeric(u, s), [1.0, 2.0, 3.0])


def test_integer_columns_decode_to_integers():
    t = small_table()
    fitted = fit(t, TableSchema.infer(t))
    back = decode(encode(t, fitted), fitted)
    assert back["b"].dtype == np.int64
    assert back["b"].tolist() == [10, 20, 20, 40]


def test_normal_output_distribution_round_trips():
    t = small_table()
    fitted = fit(t, TableSchema.infer(t), output_distribution="normal")
    enc = encode(t, fitted)
    assert enc[:, 0].min() < 0 < enc[:, 0].max()
    back = decode(enc, fitted)
    np.testing.assert_allclose(back["a"], t["a"], atol=1e-9)


def test_persistence_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = pd.DataFrame({"x": rng.normal(size=50), "n": rng.integers(0, 9, 50), "s": rng.choice(["u", "v"], 50)})
    fitted = fit(t, TableSchema.infer(t, protected="s", underprivileged="u"))
    fitted.save(tmp_path / "t.json")
    again = FittedTransformer.load(tmp_path / "t.json")
    assert again.schema == fitted.schema
    for name, sup in fitted.supports.items():
        np.testing.assert_array_equal(again.supports[name].values, sup.values)
        np.testing.assert_array_equal(again.supports[name].cdf, sup.cdf)
    np.testing.assert_array_equal(encode(t, again), encode(t, fitted))


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(SchemaError):
        FittedTransformer.load(tmp_path / "x.json")


@st.composite
def tables(draw):
    n = draw(st.integers(1, 30))
    n_num = draw(st.integers(0, 3))
    n_cat = draw(st.integers(0, 3))
    if n_num + n_cat == 0:
        n_num = 1
    cols = {}
    for i in range(n_num):
        values = draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=32), min_size=n, max_size=n))
        cols[f"x{i}"] = np.array(values, dtype=np.float64)
    for i in range(n_cat):
        vocab = draw(st.lists(st.text("abcdef", min_size=1, max_size=3), min_size=1, max_size=5, unique=True))
        cols[f"c{i}"] = draw(st.lists(st.sampled_from(vocab), min_size=n, max_size=n))
    return pd.DataFrame(cols)


@settings(max_examples=100, deadline=None)
@given(tables())
def test_round_trip_random_tables(t):
    fitted = fit(t, TableSchema.infer(t))
    enc = encode(t, fitted)
    assert enc.shape == (len(t), fitted.width)
    assert np.all((enc >= 0) & (enc <= 1))
    for c in fitted.schema.categorical_columns:
        np.testing.assert_array_equal(enc[:, fitted.blocks[c.name]].sum(axis=1), 1.0)
    back = decode(enc, fitted)
    for c in t.columns:
        if t[c].dtype == object:
            assert back[c].tolist() == t[c].tolist()
        else:
            np.testing.assert_allclose(back[c], t[c], rtol=0, atol=1e-9 * max(1.0, np.abs(t[c]).max()))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=25), st.floats(-150, 150))
def test_transform_matches_rank_oracle(train, x):
    s = NumericSupport.fit(np.array(train))
    assert s.transform(x) == pytest.approx(midpoint_rank_cdf(train, x), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=25), st.lists(st.floats(-150, 150), min_size=2, max_size=20))
def test_transform_is_monotone(train, probes):
    s = NumericSupport.fit(np.array(train))
    xs = np.sort(np.array(probes))
    assert np.all(np.diff(s.transform(xs)) >= 0)
    distinct = np.unique(train)
    assert np.all(np.diff(s.transform(distinct)) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=0, max_size=6), st.integers(0, 5))
def test_width_bookkeeping_over_random_schemas(vocab_sizes, n_num):
    cols = [Column(f"x{i}", NUMERIC) for i in range(n_num)]
    cols += [Column(f"c{i}", CATEGORICAL, tuple(range(k))) for i, k in enumerate(vocab_sizes)]
    if not cols:
        return
    schema = TableSchema(tuple(cols))
    table = pd.DataFrame({c.name: ([0.0, 1.0] if c.kind == NUMERIC else [0, 0]) for c in cols})
    fitted = fit(table, schema)
    assert fitted.width == n_num + sum(vocab_sizes)
    assert fitted.block_widths == vocab_sizes
    assert sum(b.stop - b.start for b in fitted.blocks.values()) == fitted.width
