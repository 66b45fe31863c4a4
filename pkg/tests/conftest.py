import numpy as np
import pandas as pd
import pytest

from fedod.data import ColumnSpec, TableSchema, TabularEncoder, encode_table


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mixed_schema():
    return TableSchema((
        ColumnSpec("x0", "numerical"),
        ColumnSpec("x1", "numerical"),
        ColumnSpec("x2", "numerical"),
        ColumnSpec("x3", "numerical"),
        ColumnSpec("color", "categorical", ("red", "green", "blue")),
        ColumnSpec("size", "categorical", ("s", "m", "l", "xl")),
    ))


def make_mixed_frame(n, rng):
    return pd.DataFrame({
        "x0": rng.normal(0, 1, n),
        "x1": rng.normal(5, 2, n),
        "x2": rng.normal(-3, 0.5, n),
        "x3": rng.uniform(0, 10, n),
        "color": rng.choice(["red", "green", "blue"], n, p=[0.6, 0.3, 0.1]),
        "size": rng.choice(["s", "m", "l", "xl"], n, p=[0.4, 0.3, 0.2, 0.1]),
    })


@pytest.fixture
def mixed_dataset(mixed_schema, rng):
    raw = make_mixed_frame(1000, rng)
    enc = TabularEncoder(mixed_schema).fit(raw)
    return encode_table(raw, enc)
