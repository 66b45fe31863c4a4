"""Mixed-type table schema, encoder and the ``Dataset`` container."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..autoencoder import ColumnLayout
from ..exceptions import ConfigError, ContractViolation, DataFormatError

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
CORRUPT_PREFIX = "__corrupt__"
INLIER = "inlier"


def round_half_up(x):
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    vocabulary: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.vocabulary is not None:
            vocab = tuple(str(v) for v in self.vocabulary)
            if not vocab:
                raise ConfigError(f"column {self.name!r}: empty vocabulary")
            object.__setattr__(self, "vocabulary", vocab)


@dataclass(frozen=True)
class TableSchema:
    """Ordered feature columns plus an optional label column.

    Rows whose label is in ``outlier_values`` are outliers.  Vocabularies
    left as ``None`` are inferred when the encoder is fit.
    """

    columns: Tuple[ColumnSpec, ...]
    label_column: Optional[str] = None
    outlier_values: Tuple[str, ...] = ("1",)

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate column names in schema: {names}")
        if not names:
            raise ConfigError("schema has no columns")

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def numerical(self):
        return [c.name for c in self.columns if c.kind == NUMERICAL]

    @property
    def categorical(self):
        return [c.name for c in self.columns if c.kind == CATEGORICAL]

    def to_dict(self):
        return {
            "columns": [
                {"name": c.name, "kind": c.kind,
                 **({"vocabulary": list(c.vocabulary)} if c.vocabulary else {})}
                for c in self.columns
            ],
            "label_column": self.label_column,
            "outlier_values": list(self.outlier_values),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            cols = tuple(
                ColumnSpec(c["name"], c["kind"],
                           tuple(c["vocabulary"]) if c.get("vocabulary") else None)
                for c in d["columns"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schema: {exc}") from exc
        return cls(cols, d.get("label_column"),
                   tuple(str(v) for v in d.get("outlier_values", ("1",))))


class TabularEncoder(TransformerMixin, BaseEstimator):
    """One-hot encode categoricals and z-standardize numericals.

    Unknown categories raise in ``strict`` mode; otherwise, and always for
    corruption sentinels, they encode as an all-zero group.  Constant
    numerical columns get a scale of 1.
    """

    def __init__(self, schema: TableSchema, strict=True):
        self.schema = schema
        self.strict = strict

    def fit(self, X, y=None):
        df = _as_frame(X, self.schema)
        self.means_ = {}
        self.scales_ = {}
        self.categories_ = {}
        for col in self.schema.columns:
            if col.kind == NUMERICAL:
                v = df[col.name].to_numpy(dtype=np.float64)
                mu = float(v.mean())
                sd = float(v.std())
                self.means_[col.name] = mu
                self.scales_[col.name] = sd if sd > 0 else 1.0
            else:
                if col.vocabulary is not None:
                    cats = list(col.vocabulary)
                else:
                    cats = sorted(set(df[col.name].astype(str)))
                if not cats:
                    raise DataFormatError(f"column {col.name!r} has no categories to fit")
                self.categories_[col.name] = cats
        self.layout_ = self._make_layout()
        self.n_features_out_ = self.layout_.n_columns
        return self

    def _make_layout(self):
        numerical, groups = [], []
        pos = 0
        for col in self.schema.columns:
            if col.kind == NUMERICAL:
                numerical.append(pos)
                pos += 1
            else:
                width = len(self.categories_[col.name])
                groups.append((pos, pos + width, col.name))
                pos += width
        return ColumnLayout(tuple(numerical), tuple(groups))

    def transform(self, X, strict=None):
        check_is_fitted(self, "layout_")
        strict = self.strict if strict is None else strict
        df = _as_frame(X, self.schema)
        out = np.zeros((len(df), self.n_features_out_))
        pos = 0
        for col in self.schema.columns:
            if col.kind == NUMERICAL:
                v = df[col.name].to_numpy(dtype=np.float64)
                out[:, pos] = (v - self.means_[col.name]) / self.scales_[col.name]
                pos += 1
                continue
            cats = self.categories_[col.name]
            index = {c: i for i, c in enumerate(cats)}
            values = df[col.name].astype(str).to_numpy()
            for r, val in enumerate(values):
                j = index.get(val)
                if j is not None:
                    out[r, pos + j] = 1.0
                elif strict and not val.startswith(CORRUPT_PREFIX):
                    raise DataFormatError(
                        f"unknown category {val!r} in column {col.name!r} (row {r})"
                    )
            pos += len(cats)
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "layout_")
        X = np.asarray(X, dtype=np.float64)
        data = {}
        pos = 0
        for col in self.schema.columns:
            if col.kind == NUMERICAL:
                data[col.name] = X[:, pos] * self.scales_[col.name] + self.means_[col.name]
                pos += 1
                continue
            cats = self.categories_[col.name]
            block = X[:, pos:pos + len(cats)]
            names = np.array(cats, dtype=object)[block.argmax(axis=1)]
            names[block.max(axis=1) <= 0] = CORRUPT_PREFIX + col.name
            data[col.name] = names
            pos += len(cats)
        return pd.DataFrame(data, columns=self.schema.names)

    @property
    def stats(self):
        check_is_fitted(self, "layout_")
        return {name: (self.means_[name], self.scales_[name]) for name in self.means_}


def _as_frame(X, schema):
    if isinstance(X, pd.DataFrame):
        missing = [n for n in schema.names if n not in X.columns]
        if missing:
            raise DataFormatError(f"missing columns: {missing}")
        return X
    return pd.DataFrame(X, columns=schema.names)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded features with outlier labels and per-row outlier kinds.

    ``raw`` keeps the typed table the features were encoded from (``None``
    for image data) so corruption can operate in original units.
    """

    features: np.ndarray
    layout: ColumnLayout
    labels: np.ndarray
    kinds: np.ndarray
    raw: Optional[pd.DataFrame] = None
    encoder: Optional[TabularEncoder] = None
    digits: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        n = self.features.shape[0]
        if len(self.labels) != n or len(self.kinds) != n:
            raise ContractViolation("features, labels and kinds must have equal length")
        if self.raw is not None and len(self.raw) != n:
            raise ContractViolation("raw table and features differ in length")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_outliers(self):
        return int(self.labels.sum())

    @property
    def stats(self):
        return self.encoder.stats if self.encoder is not None else {}

    def subset(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.intp)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            kinds=self.kinds[idx],
            raw=None if self.raw is None else self.raw.iloc[idx].reset_index(drop=True),
            digits=None if self.digits is None else self.digits[idx],
            name=self.name if name is None else name,
        )

    def with_raw(self, raw, labels, kinds):
        """Re-encode an edited raw table with the already-fitted encoder."""
        return replace(self, features=self.encoder.transform(raw, strict=False), raw=raw,
                       labels=np.asarray(labels), kinds=np.asarray(kinds, dtype=object))


def concat(datasets: Sequence[Dataset], name=""):
    first = datasets[0]
    raw = None
    if all(d.raw is not None for d in datasets):
        raw = pd.concat([d.raw for d in datasets], ignore_index=True)
    digits = None
    if all(d.digits is not None for d in datasets):
        digits = np.concatenate([d.digits for d in datasets])
    return Dataset(
        features=np.vstack([d.features for d in datasets]),
        layout=first.layout,
        labels=np.concatenate([d.labels for d in datasets]),
        kinds=np.concatenate([d.kinds for d in datasets]),
        raw=raw,
        encoder=first.encoder,
        digits=digits,
        name=name,
    )


def encode_table(raw: pd.DataFrame, encoder: TabularEncoder, labels=None, kinds=None, name=""):
    n = len(raw)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if kinds is None:
        kinds = np.where(labels == 1, "outlier", INLIER).astype(object)
    return Dataset(encoder.transform(raw), encoder.layout_, labels,
                   np.asarray(kinds, dtype=object), raw.reset_index(drop=True), encoder, name=name)
