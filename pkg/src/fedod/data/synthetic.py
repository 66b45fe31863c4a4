"""Desk-scale synthetic benchmark: shifted Gaussian-mixture clients on disk."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd

from .corruption import CorruptionPlan, corrupt
from .io import export_csv
from .preprocessing import (
    CATEGORICAL,
    NUMERICAL,
    ColumnSpec,
    TableSchema,
    TabularEncoder,
    encode_table,
)

DEFAULT_METHODS = (
    "gaussian-noise",
    "high-value",
    "categorical-new-value",
    "categorical-least-frequent",
)

NUMERIC_COLUMNS = ("num0", "num1", "num2")
CATEGORY_VOCAB = {"cat0": ("a", "b", "c", "d"), "cat1": ("p", "q", "r", "s", "t")}

COMPONENT_WEIGHTS = (0.6, 0.4)
COMPONENT_MEANS = ((-1.0, -1.0, 0.0), (1.5, 1.0, 1.0))
COMPONENT_STD = 0.6
CATEGORY_PROBS = {
    "cat0": ((0.55, 0.25, 0.15, 0.05), (0.05, 0.15, 0.3, 0.5)),
    "cat1": ((0.4, 0.3, 0.15, 0.1, 0.05), (0.05, 0.1, 0.15, 0.3, 0.4)),
}


def benchmark_schema():
    cols = [ColumnSpec(c, NUMERICAL) for c in NUMERIC_COLUMNS]
    cols += [ColumnSpec(c, CATEGORICAL, v) for c, v in CATEGORY_VOCAB.items()]
    return TableSchema(tuple(cols))


def client_means(client, shift):
    """Mixture-component means of one client: the base means moved by ``shift * client``."""
    return np.asarray(COMPONENT_MEANS) + shift * client


def sample_client(n, client, shift, rng):
    comp = rng.choice(len(COMPONENT_WEIGHTS), size=n, p=COMPONENT_WEIGHTS)
    means = client_means(client, shift)
    num = means[comp] + rng.normal(0.0, COMPONENT_STD, size=(n, len(NUMERIC_COLUMNS)))
    data = {c: num[:, j] for j, c in enumerate(NUMERIC_COLUMNS)}
    for col, vocab in CATEGORY_VOCAB.items():
        values = np.empty(n, dtype=object)
        for c, probs in enumerate(CATEGORY_PROBS[col]):
            rows = np.flatnonzero(comp == c)
            # rotating the category probabilities makes each client's mix distinct
            p = np.roll(probs, client)
            values[rows] = np.array(vocab, dtype=object)[rng.choice(len(vocab), size=rows.size, p=p)]
        data[col] = values
    return pd.DataFrame(data)


@dataclass
class SyntheticBenchmark:
    paths: List[Path]
    schema: TableSchema
    meta: dict


def generate_synthetic_benchmark(out_dir, seed=0, n_clients=4, rows_per_client=2000, shift=1.0,
                                 methods: Sequence[str] = DEFAULT_METHODS,
                                 outlier_fraction=0.03, feature_fraction=0.25) -> SyntheticBenchmark:
    """Write ``client<k>.csv``, ``schema.json`` and ``benchmark.json`` to ``out_dir``.

    Inliers of client ``k`` come from the base mixture shifted by
    ``shift * k`` in every numerical column.  The encoder used for corruption
    scales is fit on the pooled clean rows; client ``k`` is then corrupted
    with ``methods[k % len(methods)]``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    data_seeds = root.spawn(n_clients)
    corrupt_seeds = np.random.SeedSequence([seed, 1]).generate_state(n_clients)
    schema = benchmark_schema()
    raws = [sample_client(rows_per_client, k, shift, np.random.default_rng(s))
            for k, s in enumerate(data_seeds)]
    encoder = TabularEncoder(schema).fit(pd.concat(raws, ignore_index=True))

    paths, plans = [], []
    for k, raw in enumerate(raws):
        plan = CorruptionPlan(methods[k % len(methods)], outlier_fraction, feature_fraction,
                              seed=int(corrupt_seeds[k]))
        ds = corrupt(encode_table(raw, encoder, name=f"client{k}"), plan)
        path = out / f"client{k}.csv"
        export_csv(ds, path)
        paths.append(path)
        plans.append(plan.to_dict())

    meta = {
        "seed": seed,
        "n_clients": n_clients,
        "rows_per_client": rows_per_client,
        "shift": shift,
        "component_means": [client_means(k, shift).tolist() for k in range(n_clients)],
        "corruption": plans,
        "files": [p.name for p in paths],
    }
    (out / "schema.json").write_text(json.dumps(schema.to_dict(), indent=2))
    (out / "benchmark.json").write_text(json.dumps(meta, indent=2))
    return SyntheticBenchmark(paths, schema, meta)
