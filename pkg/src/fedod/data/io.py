"""CSV and IDX readers/writers."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ..autoencoder import ColumnLayout
from ..exceptions import DataFormatError
from .preprocessing import (
    CATEGORICAL,
    INLIER,
    NUMERICAL,
    Dataset,
    TableSchema,
    TabularEncoder,
    encode_table,
)

LABEL_COL = "__label__"
KIND_COL = "__kind__"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_raw_csv(path, schema: TableSchema):
    """Parse a CSV into a typed frame plus labels and kinds.

    Numerical cells must parse as floats; the error names the file line.
    Labels come from ``__label__`` if present, else from the schema's label
    column, else all rows are inliers.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    missing = [n for n in schema.names if n not in df.columns]
    if missing:
        raise DataFormatError(f"{path}: missing columns {missing}")

    raw = {}
    for col in schema.columns:
        values = df[col.name]
        if col.kind == NUMERICAL:
            parsed = pd.to_numeric(values, errors="coerce")
            bad = parsed.isna().to_numpy() | ~np.isfinite(parsed.to_numpy(dtype=np.float64))
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise DataFormatError(
                    f"{path}: line {row + 2}: column {col.name!r}: "
                    f"malformed number {values.iloc[row]!r}"
                )
            # numpy's string parser round-trips repr() exactly; pandas' fast one does not
            raw[col.name] = values.to_numpy(dtype=str).astype(np.float64)
        else:
            raw[col.name] = values.to_numpy(dtype=object)
    raw = pd.DataFrame(raw, columns=schema.names)

    if LABEL_COL in df.columns:
        labels = df[LABEL_COL].astype(int).to_numpy()
    elif schema.label_column is not None:
        labels = df[schema.label_column].isin(schema.outlier_values).astype(int).to_numpy()
    else:
        labels = np.zeros(len(df), dtype=int)
    if KIND_COL in df.columns:
        kinds = df[KIND_COL].to_numpy(dtype=object)
    else:
        kinds = np.where(labels == 1, "outlier", INLIER).astype(object)
    return raw, labels.astype(np.int64), kinds


def load_csv(path, schema: TableSchema, encoder: Optional[TabularEncoder] = None, strict=True):
    """Load one CSV; fits the encoder on its inlier rows unless one is given."""
    raw, labels, kinds = read_raw_csv(path, schema)
    if encoder is None:
        encoder = TabularEncoder(schema, strict=strict).fit(raw[labels == 0])
    return encode_table(raw, encoder, labels, kinds, name=Path(path).stem)


def load_client_csvs(paths: Sequence, schema: TableSchema, strict=True):
    """Load per-client CSVs with one encoder fit on the pooled inlier rows."""
    parsed = [read_raw_csv(p, schema) for p in paths]
    pool = pd.concat([raw[labels == 0] for raw, labels, _ in parsed], ignore_index=True)
    encoder = TabularEncoder(schema, strict=strict).fit(pool)
    return [
        encode_table(raw, encoder, labels, kinds, name=Path(p).stem)
        for p, (raw, labels, kinds) in zip(paths, parsed)
    ]


def export_csv(ds: Dataset, path):
    """Write the raw table with ``__label__`` and ``__kind__`` audit columns."""
    if ds.raw is None:
        raise DataFormatError("dataset has no raw table to export")
    out = ds.raw.copy()
    out[LABEL_COL] = ds.labels
    out[KIND_COL] = ds.kinds
    out.to_csv(path, index=False)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path):
    """Read an unsigned-byte IDX file (images ``0x803`` or labels ``0x801``)."""
    with _open(path) as f:
        buf = f.read()
    if len(buf) < 4:
        raise DataFormatError(f"{path}: truncated header at offset 0")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{path}: truncated header at offset {len(buf)}")
    dims = struct.unpack(">" + "I" * ndim, buf[4:header])
    size = int(np.prod(dims))
    if len(buf) - header < size:
        raise DataFormatError(
            f"{path}: truncated payload at offset {len(buf)}, expected {header + size} bytes"
        )
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 3:
        magic = IDX_IMAGES_MAGIC
    elif array.ndim == 1:
        magic = IDX_LABELS_MAGIC
    else:
        raise DataFormatError("IDX writer supports 1-D labels or 3-D images")
    header = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def pixels_to_features(images):
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(images.shape[0], -1) / 127.5 - 1.0


def features_to_pixels(features, shape=(28, 28)):
    pix = np.rint((np.asarray(features) + 1.0) * 127.5)
    return np.clip(pix, 0, 255).astype(np.uint8).reshape(-1, *shape)


def load_idx_images(path, labels_path=None):
    """Flattened images scaled to [-1, 1]; digit labels are optional."""
    images = read_idx(path)
    if images.ndim != 3:
        raise DataFormatError(f"{path}: expected 3-D image tensor, got {images.ndim}-D")
    features = pixels_to_features(images)
    n = features.shape[0]
    digits = None
    if labels_path is not None:
        digits = read_idx(labels_path).astype(np.int64)
        if digits.shape != (n,):
            raise DataFormatError(f"{labels_path}: {digits.shape[0]} labels for {n} images")
    return Dataset(
        features=features,
        layout=ColumnLayout.all_numerical(features.shape[1], numeric_head="tanh"),
        labels=np.zeros(n, dtype=np.int64),
        kinds=np.full(n, INLIER, dtype=object),
        digits=digits,
        name=Path(path).stem,
    )
