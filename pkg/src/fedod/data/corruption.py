"""Seeded operators that turn clean rows into labeled synthetic outliers.

Each operator flips ``max(1, round(outlier_fraction * N))`` inlier rows
(none when the fraction is 0) and, in each flipped row, corrupts
``max(1, round(feature_fraction * d))`` columns of the relevant type, where
``d`` is the number of numerical or categorical columns.  Work happens on the
raw table; the fitted encoder is reused, never refit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..exceptions import ConfigError, ContractViolation
from .preprocessing import CORRUPT_PREFIX, Dataset, round_half_up

NOISE_METHODS = ("gaussian-noise", "laplace-noise", "lognormal-noise")
NUMERICAL_METHODS = NOISE_METHODS + ("high-value",)
CATEGORICAL_METHODS = ("categorical-new-value", "categorical-least-frequent")
METHODS = NUMERICAL_METHODS + CATEGORICAL_METHODS


@dataclass(frozen=True)
class CorruptionPlan:
    method: str
    outlier_fraction: float = 0.03
    feature_fraction: float = 0.25
    gamma_range: Tuple[float, float] = (3.0, 5.0)
    high_value_range: Tuple[float, float] = (8.0, 12.0)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown corruption method {self.method!r}; choose from {METHODS}")
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError("outlier_fraction must lie in [0, 1)")
        if not 0 < self.feature_fraction <= 1:
            raise ConfigError("feature_fraction must lie in (0, 1]")

    def to_dict(self):
        return {
            "method": self.method,
            "outlier_fraction": self.outlier_fraction,
            "feature_fraction": self.feature_fraction,
            "gamma_range": list(self.gamma_range),
            "high_value_range": list(self.high_value_range),
            "seed": self.seed,
        }


def n_outlier_rows(n, fraction):
    if fraction <= 0:
        return 0
    return max(1, round_half_up(fraction * n))


def n_corrupt_features(d, fraction):
    return max(1, round_half_up(fraction * d))


def _select_rows(ds: Dataset, plan: CorruptionPlan, rng):
    candidates = np.flatnonzero(ds.labels == 0)
    k = n_outlier_rows(len(ds), plan.outlier_fraction)
    if k > candidates.size:
        raise ContractViolation(f"need {k} inlier rows to corrupt, only {candidates.size} available")
    return np.sort(rng.choice(candidates, size=k, replace=False))


def _flip(ds, raw, rows, method):
    labels = ds.labels.copy()
    kinds = ds.kinds.copy()
    labels[rows] = 1
    kinds[rows] = method
    return ds.with_raw(raw, labels, kinds)


def sample_noise(rng, distribution, sigma, size=None):
    """Zero-mean noise with standard deviation ``sigma``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if distribution == "gaussian":
        return rng.normal(0.0, sigma, size)
    if distribution == "laplace":
        return rng.laplace(0.0, sigma / np.sqrt(2.0), size)
    if distribution == "lognormal":
        # pick s so that Var[LogNormal(0, s)] = sigma^2, then remove the mean
        u = (1.0 + np.sqrt(1.0 + 4.0 * sigma * sigma)) / 2.0
        s = np.sqrt(np.log(u))
        return rng.lognormal(0.0, s, size) - np.exp(s * s / 2.0)
    raise ConfigError(f"unknown noise distribution {distribution!r}")


def _numerical_setup(ds, plan):
    if ds.raw is None or ds.encoder is None:
        raise ContractViolation("corruption needs a dataset with a raw table and encoder")
    cols = ds.encoder.schema.numerical
    if not cols:
        raise ContractViolation("dataset has no numerical columns to corrupt")
    return cols


def corrupt_numerical_noise(ds: Dataset, plan: CorruptionPlan) -> Dataset:
    """Add zero-mean noise with std ``sigma_d * gamma``, ``gamma ~ U(gamma_range)``."""
    if plan.method not in NOISE_METHODS:
        raise ContractViolation(f"{plan.method!r} is not a noise method")
    cols = _numerical_setup(ds, plan)
    rng = np.random.default_rng(plan.seed)
    rows = _select_rows(ds, plan, rng)
    raw = ds.raw.copy()
    k = n_corrupt_features(len(cols), plan.feature_fraction)
    dist = plan.method.split("-")[0]
    for r in rows:
        for j in rng.choice(len(cols), size=k, replace=False):
            name = cols[j]
            gamma = rng.uniform(*plan.gamma_range)
            sigma = ds.encoder.scales_[name] * gamma
            raw.at[r, name] = raw.at[r, name] + float(sample_noise(rng, dist, sigma))
    return _flip(ds, raw, rows, plan.method)


def corrupt_numerical_high_value(ds: Dataset, plan: CorruptionPlan) -> Dataset:
    """Shift cells by ``±U(lo, hi) * sigma_d`` to mimic gross entry errors."""
    cols = _numerical_setup(ds, plan)
    rng = np.random.default_rng(plan.seed)
    rows = _select_rows(ds, plan, rng)
    raw = ds.raw.copy()
    k = n_corrupt_features(len(cols), plan.feature_fraction)
    lo, hi = plan.high_value_range
    for r in rows:
        for j in rng.choice(len(cols), size=k, replace=False):
            name = cols[j]
            sign = 1.0 if rng.random() < 0.5 else -1.0
            delta = sign * rng.uniform(lo, hi) * ds.encoder.scales_[name]
            raw.at[r, name] = raw.at[r, name] + delta
    return _flip(ds, raw, rows, "high-value")


def _categorical_setup(ds):
    if ds.raw is None or ds.encoder is None:
        raise ContractViolation("corruption needs a dataset with a raw table and encoder")
    cols = ds.encoder.schema.categorical
    if not cols:
        raise ContractViolation("dataset has no categorical columns to corrupt")
    return cols


def corrupt_categorical_new_value(ds: Dataset, plan: CorruptionPlan) -> Dataset:
    """Replace cells with a sentinel outside the vocabulary (all-zero one-hot)."""
    cols = _categorical_setup(ds)
    rng = np.random.default_rng(plan.seed)
    rows = _select_rows(ds, plan, rng)
    raw = ds.raw.copy()
    k = n_corrupt_features(len(cols), plan.feature_fraction)
    for r in rows:
        for j in rng.choice(len(cols), size=k, replace=False):
            raw.at[r, cols[j]] = CORRUPT_PREFIX + cols[j]
    return _flip(ds, raw, rows, "categorical-new-value")


def least_frequent_order(ds: Dataset, column):
    """Vocabulary values sorted by (count, value), counts taken from ``ds``."""
    counts = ds.raw[column].astype(str).value_counts().to_dict()
    vocab = ds.encoder.categories_[column]
    return sorted(vocab, key=lambda v: (counts.get(v, 0), v))


def corrupt_categorical_least_frequent(ds: Dataset, plan: CorruptionPlan) -> Dataset:
    """Replace cells with the column's rarest value, or the next rarest on collision."""
    cols = _categorical_setup(ds)
    order = {c: least_frequent_order(ds, c) for c in cols}
    usable = [c for c in cols if len(order[c]) >= 2]
    if not usable:
        raise ContractViolation("no categorical column has two or more values")
    rng = np.random.default_rng(plan.seed)
    rows = _select_rows(ds, plan, rng)
    raw = ds.raw.copy()
    k = n_corrupt_features(len(usable), plan.feature_fraction)
    for r in rows:
        for j in rng.choice(len(usable), size=k, replace=False):
            name = usable[j]
            rarest, second = order[name][0], order[name][1]
            raw.at[r, name] = second if str(raw.at[r, name]) == rarest else rarest
    return _flip(ds, raw, rows, "categorical-least-frequent")


_DISPATCH = {
    "gaussian-noise": corrupt_numerical_noise,
    "laplace-noise": corrupt_numerical_noise,
    "lognormal-noise": corrupt_numerical_noise,
    "high-value": corrupt_numerical_high_value,
    "categorical-new-value": corrupt_categorical_new_value,
    "categorical-least-frequent": corrupt_categorical_least_frequent,
}


def corrupt(ds: Dataset, plan: CorruptionPlan) -> Dataset:
    return _DISPATCH[plan.method](ds, plan)
