"""Supervised outlier detectors that consume latent codes.

Both detectors treat outliers as the positive class and, by default, weight
positives by ``n_neg / n_pos`` to offset the heavy class imbalance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractViolation
from .nn import AdamState, adam_step, backward, build_layers, forward, init_params, sigmoid

PROB_CLIP = 1e-7


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64).ravel()
    if X.ndim != 2:
        raise ContractViolation(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ContractViolation(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.isin(y, (0, 1)).all():
        raise ContractViolation("labels must be 0 (inlier) or 1 (outlier)")
    if np.unique(y).size < 2:
        raise ContractViolation(
            "training set contains a single class; detectors need both inliers and outliers"
        )
    return X, y


def class_weights(y, mode):
    """Per-sample weights: positives get ``n_neg / n_pos`` when ``mode == 'balanced'``."""
    w = np.ones(y.shape[0])
    if mode == "balanced":
        n_pos = int(y.sum())
        w[y == 1] = (y.shape[0] - n_pos) / n_pos
    elif mode is not None:
        raise ContractViolation(f"unknown class_weight {mode!r}")
    return w


@dataclass
class DecisionTree:
    """Array-backed binary tree; leaves carry the outlier probability.

    Internal nodes send ``x[feature] <= threshold`` left.  Leaves have
    ``feature == -1``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    @property
    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def predict_proba(self, X):
        """Outlier probability of each row."""
        return self.value[self.apply(X)]


def weighted_gini(pos, neg):
    total = pos + neg
    if total <= 0:
        return 0.0
    return 1.0 - (pos / total) ** 2 - (neg / total) ** 2


def best_split_on_feature(x, y, w):
    """Lowest weighted child impurity over all thresholds of one feature.

    Returns ``(child_impurity, threshold)`` where child impurity is
    ``W_left * gini_left + W_right * gini_right``, or ``None`` if ``x`` is
    constant.
    """
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    wpos = np.cumsum(ws * ys)
    wall = np.cumsum(ws)
    tpos, tall = wpos[-1], wall[-1]
    lpos, lall = wpos[:-1], wall[:-1]
    lneg = lall - lpos
    rpos, rall = tpos - lpos, tall - lall
    rneg = rall - rpos
    with np.errstate(divide="ignore", invalid="ignore"):
        child = (lall - (lpos ** 2 + lneg ** 2) / lall) + (rall - (rpos ** 2 + rneg ** 2) / rall)
    child = np.where(valid & (lall > 0) & (rall > 0), child, np.inf)
    i = int(np.argmin(child))
    if not np.isfinite(child[i]):
        return None
    lo, hi = xs[i], xs[i + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(child[i]), float(thr)


def grow_tree(X, y, w, max_depth=None, min_samples_split=2, max_features=None, rng=None) -> DecisionTree:
    """Greedy CART growth with weighted Gini impurity.

    Rows with zero weight are ignored.  At each node features are visited in
    random order until ``max_features`` non-constant ones have been scored.
    """
    n, d = X.shape
    rng = rng if rng is not None else np.random.default_rng(0)
    max_features = d if max_features is None else max(1, min(int(max_features), d))
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        pos = float(np.sum(w[rows] * y[rows]))
        tot = float(np.sum(w[rows]))
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(pos / tot)
        return len(feature) - 1

    root_rows = np.flatnonzero(w > 0)
    stack = [(new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if value[node] in (0.0, 1.0):
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if rows.size < min_samples_split:
            continue
        best = None
        scored = 0
        for f in rng.permutation(d):
            res = best_split_on_feature(X[rows, f], y[rows], w[rows])
            if res is None:
                continue
            scored += 1
            if best is None or res[0] < best[0]:
                best = (res[0], res[1], int(f))
            if scored >= max_features:
                break
        if best is None:
            continue
        _, thr, f = best
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))

    return DecisionTree(
        np.array(feature, dtype=np.intp),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value, dtype=np.float64),
    )


def _resolve_max_features(max_features, d):
    if max_features == "sqrt":
        return max(1, int(np.sqrt(d)))
    if max_features is None:
        return d
    if isinstance(max_features, float):
        return max(1, int(max_features * d))
    return int(max_features)


class RandomForestDetector(ClassifierMixin, BaseEstimator):
    """Bagged Gini trees; the outlier score is the mean leaf probability.

    Parameters
    ----------
    n_estimators : int
    max_depth : int or None
        ``None`` grows until leaves are pure.
    min_samples_split : int
    max_features : "sqrt", int, float or None
    bootstrap : bool
    class_weight : "balanced" or None
    random_state : int
    """

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2,
                 max_features="sqrt", bootstrap=True, class_weight="balanced", random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, d = X.shape
        base_w = class_weights(y, self.class_weight)
        k = _resolve_max_features(self.max_features, d)
        self.trees_: List[DecisionTree] = []
        for child in np.random.SeedSequence(self.random_state).spawn(self.n_estimators):
            rng = np.random.default_rng(child)
            w = base_w
            if self.bootstrap:
                w = base_w * np.bincount(rng.integers(0, n, n), minlength=n)
            self.trees_.append(grow_tree(X, y, w, self.max_depth, self.min_samples_split, k, rng))
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ContractViolation(
                f"expected {self.n_features_in_} features, got shape {X.shape}"
            )
        return X

    def score_samples(self, X):
        """Outlier score in [0, 1]: mean over trees of the leaf outlier probability."""
        X = self._check_X(X)
        return np.mean([t.predict_proba(X) for t in self.trees_], axis=0)

    def predict_proba(self, X):
        s = self.score_samples(X)
        return np.column_stack([1.0 - s, s])

    def predict(self, X):
        return (self.score_samples(X) >= 0.5).astype(np.int64)


class MLPDetector(ClassifierMixin, BaseEstimator):
    """One-hidden-layer classifier trained with weighted BCE and Adam.

    Inputs are standardized with statistics of the training matrix.
    """

    def __init__(self, hidden_dims=(64,), alpha=0.4, epochs=200, batch_size=128,
                 learning_rate=1e-3, class_weight="balanced", random_state=0):
        self.hidden_dims = hidden_dims
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, d = X.shape
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        Z = (X - self.mean_) / self.scale_
        sw = class_weights(y, self.class_weight)
        init_seed, train_seed = np.random.SeedSequence(self.random_state).spawn(2)
        dims = [d, *self.hidden_dims, 1]
        self.activations_ = ["leaky_relu"] * len(self.hidden_dims) + ["identity"]
        params = init_params(dims, np.random.default_rng(init_seed))
        state = AdamState.for_params(params, lr=self.learning_rate)
        rng = np.random.default_rng(train_seed)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                b = order[start:start + self.batch_size]
                layers = build_layers(params, self.activations_, self.alpha)
                logits, cache = forward(layers, Z[b])
                p = sigmoid(logits[:, 0])
                pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
                t, wb = y[b], sw[b]
                total += float(-np.sum(wb * (t * np.log(pc) + (1 - t) * np.log(1 - pc))))
                grad = (wb * (p - t) / b.size)[:, None]
                params = adam_step(params, backward(layers, cache, grad), state)
            self.loss_curve_.append(total / n)
        self.params_ = params
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def score_samples(self, X):
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ContractViolation(
                f"expected {self.n_features_in_} features, got shape {X.shape}"
            )
        layers = build_layers(self.params_, self.activations_, self.alpha)
        logits, _ = forward(layers, (X - self.mean_) / self.scale_)
        return np.clip(sigmoid(logits[:, 0]), PROB_CLIP, 1.0 - PROB_CLIP)

    def predict_proba(self, X):
        s = self.score_samples(X)
        return np.column_stack([1.0 - s, s])

    def predict(self, X):
        return (self.score_samples(X) >= 0.5).astype(np.int64)


def rf_train(latent, labels, cfg: Optional[dict] = None, seed=0) -> RandomForestDetector:
    return RandomForestDetector(**(cfg or {}), random_state=seed).fit(latent, labels)


def rf_score(model: RandomForestDetector, latent):
    return model.score_samples(latent)


def mlp_train(latent, labels, cfg: Optional[dict] = None, seed=0) -> MLPDetector:
    return MLPDetector(**(cfg or {}), random_state=seed).fit(latent, labels)


def mlp_score(model: MLPDetector, latent):
    return model.score_samples(latent)


DETECTORS = {"RF": RandomForestDetector, "MLP": MLPDetector}
