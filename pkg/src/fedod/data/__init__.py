from .corruption import (
    CATEGORICAL_METHODS,
    METHODS,
    NUMERICAL_METHODS,
    CorruptionPlan,
    corrupt,
    corrupt_categorical_least_frequent,
    corrupt_categorical_new_value,
    corrupt_numerical_high_value,
    corrupt_numerical_noise,
)
from .io import (
    export_csv,
    load_client_csvs,
    load_csv,
    load_idx_images,
    read_idx,
    write_idx,
)
from .partition import build_image_clients, partition_clients, train_test_split
from .preprocessing import ColumnSpec, Dataset, TableSchema, TabularEncoder, concat, encode_table
from .synthetic import generate_synthetic_benchmark

__all__ = [
    "CATEGORICAL_METHODS",
    "METHODS",
    "NUMERICAL_METHODS",
    "ColumnSpec",
    "CorruptionPlan",
    "Dataset",
    "TableSchema",
    "TabularEncoder",
    "build_image_clients",
    "concat",
    "corrupt",
    "corrupt_categorical_least_frequent",
    "corrupt_categorical_new_value",
    "corrupt_numerical_high_value",
    "corrupt_numerical_noise",
    "encode_table",
    "export_csv",
    "generate_synthetic_benchmark",
    "load_client_csvs",
    "load_csv",
    "load_idx_images",
    "partition_clients",
    "read_idx",
    "train_test_split",
    "write_idx",
]
