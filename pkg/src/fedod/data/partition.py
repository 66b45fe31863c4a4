"""Client partitioning, train/test splits and the image-client builder."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from ..exceptions import ContractViolation
from .preprocessing import Dataset, concat, round_half_up


def partition_indices(n, n_clients, overlap_fraction, seed):
    """Row indices per client: a shared pool plus a disjoint share each."""
    if n_clients < 2:
        raise ContractViolation("need at least two clients")
    if not 0 <= overlap_fraction <= 1:
        raise ContractViolation("overlap_fraction must lie in [0, 1]")
    if n_clients > n:
        raise ContractViolation(f"{n_clients} clients but only {n} rows")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_shared = round_half_up(overlap_fraction * n)
    shared, rest = perm[:n_shared], perm[n_shared:]
    if rest.size and rest.size < n_clients:
        raise ContractViolation(f"{rest.size} unshared rows cannot cover {n_clients} clients")
    parts = np.array_split(rest, n_clients)
    return [np.sort(np.concatenate([shared, p])) for p in parts]


def partition_clients(clean: Dataset, n_clients: int, overlap_fraction: float, seed) -> List[Dataset]:
    idx = partition_indices(len(clean), n_clients, overlap_fraction, seed)
    return [clean.subset(i, name=f"client{k}") for k, i in enumerate(idx)]


def train_test_split(ds: Dataset, test_fraction=0.3, seed=0):
    """Split stratified on the outlier label."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in (0, 1):
        rows = np.flatnonzero(ds.labels == label)
        rows = rng.permutation(rows)
        n_test = round_half_up(test_fraction * rows.size)
        test.append(rows[:n_test])
        train.append(rows[n_test:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


def outlier_count_for(n_inliers, fraction):
    """Outliers to add so they make up ``fraction`` of the combined set."""
    return round_half_up(fraction / (1.0 - fraction) * n_inliers)


def build_image_clients(mnist: Dataset, inlier_digit=0, outlier_digits: Sequence[int] = (3, 4, 6, 8),
                        n_clients=4, fraction=0.03, overlap_fraction=0.1, seed=0) -> List[Dataset]:
    """Digit-``inlier_digit`` clients, each polluted by one outlier digit."""
    if mnist.digits is None:
        raise ContractViolation("image dataset carries no digit labels")
    if n_clients > len(outlier_digits):
        raise ContractViolation(f"{n_clients} clients but only {len(outlier_digits)} outlier digits")
    if len(set(outlier_digits[:n_clients])) != n_clients:
        raise ContractViolation("outlier digits must be distinct across clients")
    rng = np.random.default_rng(seed)
    inliers = mnist.subset(np.flatnonzero(mnist.digits == inlier_digit))
    pools = partition_indices(len(inliers), n_clients, overlap_fraction, rng.integers(2**32))
    clients = []
    for k in range(n_clients):
        digit = outlier_digits[k]
        base = inliers.subset(pools[k])
        available = np.flatnonzero(mnist.digits == digit)
        need = outlier_count_for(len(base), fraction)
        if need > available.size:
            raise ContractViolation(
                f"client {k}: need {need} images of digit {digit}, only {available.size} available"
            )
        picked = mnist.subset(np.sort(rng.choice(available, size=need, replace=False)))
        picked = Dataset(
            features=picked.features,
            layout=picked.layout,
            labels=np.ones(need, dtype=np.int64),
            kinds=np.full(need, f"digit-{digit}", dtype=object),
            digits=picked.digits,
        )
        clients.append(concat([base, picked], name=f"client{k}"))
    return clients
