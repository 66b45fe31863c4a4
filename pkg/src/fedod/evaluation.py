"""Ranking metrics, the known/unknown cross-client protocol, and PCA export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractViolation

METRICS = ("ap", "f1", "pr_auc", "roc_auc")
BLOCKS = ("known", "unknown")


def _check_scored(y_true, y_score, need_negative=False):
    y = np.asarray(y_true).astype(np.int64).ravel()
    s = np.asarray(y_score, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ContractViolation(f"{y.size} labels but {s.size} scores")
    if not np.isin(y, (0, 1)).all():
        raise ContractViolation("labels must be 0 or 1")
    if y.sum() == 0:
        raise ContractViolation("metric undefined without positive labels")
    if need_negative and y.sum() == y.size:
        raise ContractViolation("metric undefined without negative labels")
    return y, s


def pr_points(y_true, y_score):
    """Precision and recall at every distinct score threshold, descending.

    Rows with equal scores enter together, so ties form a single threshold.
    """
    y, s = _check_scored(y_true, y_score)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return precision, recall, s[last]


def average_precision(y_true, y_score):
    """Sum over thresholds of (recall gain) x (precision at that threshold)."""
    precision, recall, _ = pr_points(y_true, y_score)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def pr_auc(y_true, y_score):
    """Step-integrated area under the interpolated precision-recall curve.

    Precision at each recall level is the best precision reachable at that
    recall or higher, which removes the saw-tooth of the raw curve.
    """
    precision, recall, _ = pr_points(y_true, y_score)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * envelope))


def roc_auc(y_true, y_score):
    """Mann-Whitney rank statistic; tied pairs count one half."""
    y, s = _check_scored(y_true, y_score, need_negative=True)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_at(y_true, y_score, threshold=0.5):
    y, s = _check_scored(y_true, y_score)
    pred = s >= threshold
    tp = float(np.sum(pred & (y == 1)))
    fp = float(np.sum(pred & (y == 0)))
    fn = float(np.sum(~pred & (y == 1)))
    if tp == 0:
        return 0.0
    p, r = tp / (tp + fp), tp / (tp + fn)
    return 2 * p * r / (p + r)


METRIC_FUNCS: Dict[str, Callable] = {
    "ap": average_precision,
    "f1": f1_at,
    "pr_auc": pr_auc,
    "roc_auc": roc_auc,
}


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    kinds: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise ContractViolation("scores and labels differ in length")
        if self.kinds is not None and len(self.kinds) != len(self.labels):
            raise ContractViolation("kinds and labels differ in length")

    def metric(self, name):
        return METRIC_FUNCS[name](self.labels, self.scores)

    @classmethod
    def concat(cls, sets):
        kinds = None
        if all(s.kinds is not None for s in sets):
            kinds = np.concatenate([s.kinds for s in sets])
        return cls(np.concatenate([s.scores for s in sets]),
                   np.concatenate([s.labels for s in sets]), kinds)


def cross_client_evaluate(detectors: Sequence, encoders: Sequence[Optional[Callable]], test_sets,
                          metrics: Sequence[str] = METRICS, unknown_mode="mean"):
    """Known and unknown scores of every client's detector.

    ``encoders[k]`` maps raw features to client ``k``'s latent space (``None``
    for the identity).  The known block uses client ``k``'s own test split;
    the unknown block uses every other client's split, either averaged per
    foreign client (``"mean"``) or concatenated (``"pooled"``).

    Returns a list of ``{"client", "block", "metric", "value"}`` rows;
    ``value`` is ``None`` when a block is not applicable.
    """
    if not (len(detectors) == len(encoders) == len(test_sets)):
        raise ContractViolation("detectors, encoders and test sets must align per client")
    if unknown_mode not in ("mean", "pooled"):
        raise ContractViolation(f"unknown_mode must be 'mean' or 'pooled', got {unknown_mode!r}")
    K = len(detectors)
    rows = []
    for k in range(K):
        enc = encoders[k] or (lambda X: X)
        scored = []
        for i in range(K):
            latent = enc(test_sets[i].features)
            if latent.shape[1] != detectors[k].n_features_in_:
                raise ContractViolation(
                    f"client {k}: encoder gives {latent.shape[1]} columns, "
                    f"detector expects {detectors[k].n_features_in_}"
                )
            scored.append(ScoredSet(detectors[k].score_samples(latent), test_sets[i].labels,
                                    test_sets[i].kinds))
        foreign = [scored[i] for i in range(K) if i != k]
        for m in metrics:
            rows.append({"client": k, "block": "known", "metric": m, "value": scored[k].metric(m)})
            if not foreign:
                value = None
            elif unknown_mode == "pooled":
                value = ScoredSet.concat(foreign).metric(m)
            else:
                value = float(np.mean([s.metric(m) for s in foreign]))
            rows.append({"client": k, "block": "unknown", "metric": m, "value": value})
    return rows


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    return float(np.mean(values)), float(np.std(values))


@dataclass
class EvaluationReport:
    """Per-seed metric rows plus seed-level summaries.

    ``rows`` entries carry ``seed, model, client, metric, block, value``.
    The summary averages over clients within a seed, then reports mean and
    standard deviation across seeds.
    """

    pipeline: str
    config: dict
    rows: List[dict] = field(default_factory=list)

    def add(self, seed, model, rows):
        for r in rows:
            self.rows.append({"seed": seed, "model": model, **r})

    @property
    def models(self):
        return sorted({r["model"] for r in self.rows})

    def values(self, model, metric, block, client=None):
        out = {}
        for r in self.rows:
            if r["model"] != model or r["metric"] != metric or r["block"] != block:
                continue
            if client is not None and r["client"] != client:
                continue
            out.setdefault(r["seed"], []).append(r["value"])
        return out

    def seed_means(self, model, metric, block):
        """Client-averaged value for each seed."""
        per_seed = self.values(model, metric, block)
        return {s: _mean_std(v)[0] for s, v in sorted(per_seed.items())}

    def summary(self):
        out = []
        metrics = sorted({r["metric"] for r in self.rows})
        for model in self.models:
            for metric in metrics:
                for block in BLOCKS:
                    mean, std = _mean_std(list(self.seed_means(model, metric, block).values()))
                    out.append({"model": model, "metric": metric, "block": block,
                                "mean": mean, "std": std})
        return out

    def client_summary(self):
        out = []
        clients = sorted({r["client"] for r in self.rows})
        metrics = sorted({r["metric"] for r in self.rows})
        for model in self.models:
            for client in clients:
                for metric in metrics:
                    for block in BLOCKS:
                        per_seed = self.values(model, metric, block, client)
                        mean, std = _mean_std([v[0] for v in per_seed.values()])
                        out.append({"model": model, "client": client, "metric": metric,
                                    "block": block, "mean": mean, "std": std,
                                    "applicable": mean is not None})
        return out

    def lookup(self, model, metric, block):
        for r in self.summary():
            if (r["model"], r["metric"], r["block"]) == (model, metric, block):
                return r
        raise KeyError((model, metric, block))

    def to_dict(self):
        return {
            "pipeline": self.pipeline,
            "config": self.config,
            "summary": self.summary(),
            "clients": self.client_summary(),
            "rows": self.rows,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        fields = ["model", "client", "metric", "block", "mean", "std", "applicable"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in self.client_summary():
            writer.writerow(r)
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d):
        return cls(d["pipeline"], d["config"], list(d["rows"]))

    @classmethod
    def merge(cls, reports, pipeline="merged"):
        """Combine reports; models keep their names, configs are kept per source."""
        merged = cls(pipeline, {"sources": [r.config for r in reports]})
        for r in reports:
            merged.rows.extend(r.rows)
        return merged


class PowerPCA(TransformerMixin, BaseEstimator):
    """PCA via power iteration with deflation on the sample covariance.

    Each component is oriented so its largest-magnitude loading is positive,
    which fixes the sign across runs.
    """

    def __init__(self, n_components=2, max_iter=20000, tol=1e-13, random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ContractViolation(f"X must be 2-D, got shape {X.shape}")
        n, d = X.shape
        k = self.n_components
        if k > d:
            raise ContractViolation(f"n_components {k} exceeds {d} columns")
        if k > n:
            raise ContractViolation(f"n_components {k} exceeds {n} rows")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        cov = Xc.T @ Xc / max(n - 1, 1)
        total = float(np.trace(cov))
        rng = np.random.default_rng(self.random_state)
        comps, variances = [], []
        work = cov.copy()
        for _ in range(k):
            v = self._power(work, comps, rng)
            lam = float(v @ cov @ v)
            comps.append(v)
            variances.append(max(lam, 0.0))
            work = work - lam * np.outer(v, v)
        self.components_ = np.array(comps)
        self.explained_variance_ = np.array(variances)
        self.explained_variance_ratio_ = (
            self.explained_variance_ / total if total > 0 else np.zeros(k)
        )
        self.n_features_in_ = d
        return self

    def _power(self, mat, previous, rng):
        d = mat.shape[0]
        v = rng.normal(size=d)
        v = self._orthonormal(v, previous)
        for _ in range(self.max_iter):
            w = self._orthonormal(mat @ v, previous)
            if w is None:
                break
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < self.tol
            v = w
            if done:
                break
        if v is None:
            v = self._orthonormal(rng.normal(size=d), previous)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        return v

    @staticmethod
    def _orthonormal(v, previous):
        for p in previous:
            v = v - (v @ p) * p
        norm = np.linalg.norm(v)
        if norm == 0:
            return None
        return v / norm

    def transform(self, X):
        check_is_fitted(self, "components_")
        return (np.asarray(X, dtype=np.float64) - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z) @ self.components_ + self.mean_


def pca_project(latent, dims=2, random_state=0):
    pca = PowerPCA(dims, random_state=random_state).fit(latent)
    return pca.transform(latent), pca.explained_variance_.tolist()


def pca_csv(projection, labels, kinds, clients):
    """CSV rows ``x, y, label, kind, client`` for external plotting."""
    clients = np.broadcast_to(np.asarray(clients), (len(labels),))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "label", "kind", "client"])
    for (x, y), lab, kind, c in zip(projection[:, :2], labels, kinds, clients):
        writer.writerow([repr(float(x)), repr(float(y)), int(lab), kind, int(c)])
    return buf.getvalue()
