"""Experiment configuration and the baseline / federated / raw pipelines."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .autoencoder import AutoencoderSpec, encode, train_local
from .data import (
    CorruptionPlan,
    TableSchema,
    build_image_clients,
    corrupt,
    generate_synthetic_benchmark,
    load_client_csvs,
    load_csv,
    load_idx_images,
    partition_clients,
    train_test_split,
)
from .data.synthetic import DEFAULT_METHODS
from .detection import DETECTORS
from .evaluation import METRICS, EvaluationReport, cross_client_evaluate, pca_csv, pca_project
from .exceptions import ConfigError
from .federation import FEDAVG, FEDPROX, FederationConfig, client_stream, init_global, run_federation

log = logging.getLogger(__name__)

DEFAULTS = {
    "source": {
        "type": "synthetic",
        "seed": 0,
        "rows_per_client": 2000,
        "shift": 1.0,
        "methods": list(DEFAULT_METHODS),
    },
    "n_clients": 4,
    "autoencoder": {
        "hidden_dims": [32],
        "latent_dim": 8,
        "hidden_activation": "leaky_relu",
        "alpha": 0.4,
        "cat_weight": 1.0,
        "num_weight": 1.0,
    },
    "federation": {
        "fraction": 1.0,
        "rounds": 20,
        "local_epochs": 20,
        "batch_size": 128,
        "lr": 1e-3,
        "method": FEDAVG,
        "mu": 0.01,
    },
    "baseline_epochs": None,
    "detectors": {
        "RF": {"n_estimators": 100, "max_depth": None, "min_samples_split": 2,
               "max_features": "sqrt", "bootstrap": True, "class_weight": "balanced"},
        "MLP": {"hidden_dims": [64], "alpha": 0.4, "epochs": 200, "batch_size": 128,
                "learning_rate": 1e-3, "class_weight": "balanced"},
    },
    "metrics": list(METRICS),
    "unknown_mode": "mean",
    "test_fraction": 0.3,
    "seeds": [0, 1, 2, 3, 4],
    "pca": True,
    "n_jobs": 1,
    "output_dir": "runs/latest",
}

PROFILES = {
    "desk": {},
    "full": {
        "autoencoder": {"hidden_dims": [128], "latent_dim": 64},
        "federation": {"rounds": 100, "local_epochs": 500},
    },
    "mnist": {
        "source": {"type": "idx", "images": "train-images-idx3-ubyte",
                   "labels": "train-labels-idx1-ubyte", "inlier_digit": 0,
                   "outlier_digits": [3, 4, 6, 8], "fraction": 0.03, "overlap": 0.1, "seed": 0},
        "autoencoder": {"hidden_dims": [1024], "latent_dim": 256, "hidden_activation": "tanh"},
        "federation": {"rounds": 100, "local_epochs": 300},
    },
}


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "detectors":
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(user: Optional[dict] = None, profile="desk") -> dict:
    """Defaults, then a named profile, then the user's values."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    user = dict(user or {})
    src = user.get("source")
    base = deep_merge(DEFAULTS, PROFILES[profile])
    # switching source type discards the other type's defaults
    if src and "type" in src and src["type"] != base["source"].get("type"):
        base["source"] = {}
    cfg = deep_merge(base, user)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if not cfg["seeds"]:
        raise ConfigError("seeds must be a nonempty list")
    if cfg["n_clients"] < 1:
        raise ConfigError("n_clients must be >= 1")
    unknown = [d for d in cfg["detectors"] if d not in DETECTORS]
    if unknown:
        raise ConfigError(f"unknown detectors {unknown}; choose from {sorted(DETECTORS)}")
    bad = [m for m in cfg["metrics"] if m not in METRICS]
    if bad:
        raise ConfigError(f"unknown metrics {bad}")
    if cfg["unknown_mode"] not in ("mean", "pooled"):
        raise ConfigError("unknown_mode must be 'mean' or 'pooled'")
    if not 0 < cfg["test_fraction"] < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    src = cfg["source"]
    kind = src.get("type")
    paths = []
    if kind == "csv":
        paths = list(src.get("files", []))
        if len(paths) != cfg["n_clients"]:
            raise ConfigError(f"csv source lists {len(paths)} files for {cfg['n_clients']} clients")
    elif kind == "csv_pool":
        paths = [src.get("file")]
    elif kind == "idx":
        paths = [src.get("images"), src.get("labels")]
    elif kind != "synthetic":
        raise ConfigError(f"unknown source type {kind!r}")
    for p in paths:
        if p is None or not Path(p).exists():
            raise ConfigError(f"referenced path does not exist: {p}")
    if kind in ("csv", "csv_pool") and "schema" not in src and "schema_path" not in src:
        raise ConfigError("csv sources need 'schema' or 'schema_path'")
    if "schema_path" in src and not Path(src["schema_path"]).exists():
        raise ConfigError(f"referenced path does not exist: {src['schema_path']}")
    FederationConfig(n_clients=cfg["n_clients"], **cfg["federation"])


def _schema(src):
    if "schema" in src:
        return TableSchema.from_dict(src["schema"])
    return TableSchema.from_dict(json.loads(Path(src["schema_path"]).read_text()))


def load_clients(cfg, data_dir=None):
    """Materialize the per-client datasets named by ``cfg['source']``."""
    src = cfg["source"]
    K = cfg["n_clients"]
    kind = src["type"]
    if kind == "synthetic":
        data_dir = Path(data_dir or Path(cfg["output_dir"]) / "data")
        bench = generate_synthetic_benchmark(
            data_dir, seed=src.get("seed", 0), n_clients=K,
            rows_per_client=src.get("rows_per_client", 2000), shift=src.get("shift", 1.0),
            methods=src.get("methods", DEFAULT_METHODS))
        return load_client_csvs(bench.paths, bench.schema)
    if kind == "csv":
        return load_client_csvs(src["files"], _schema(src))
    if kind == "csv_pool":
        pool = load_csv(src["file"], _schema(src))
        clean = pool.subset(np.flatnonzero(pool.labels == 0))
        seed = src.get("seed", 0)
        clients = partition_clients(clean, K, src.get("overlap", 0.1), seed)
        methods = src.get("methods", DEFAULT_METHODS)
        out = []
        for k, ds in enumerate(clients):
            plan = CorruptionPlan(methods[k % len(methods)], src.get("outlier_fraction", 0.03),
                                  src.get("feature_fraction", 0.25), seed=seed * 1000 + k)
            out.append(corrupt(ds, plan))
        return out
    if kind == "idx":
        mnist = load_idx_images(src["images"], src["labels"])
        return build_image_clients(mnist, src.get("inlier_digit", 0),
                                   src.get("outlier_digits", (3, 4, 6, 8)), K,
                                   src.get("fraction", 0.03), src.get("overlap", 0.1),
                                   src.get("seed", 0))
    raise ConfigError(f"unknown source type {kind!r}")


def autoencoder_spec(cfg, input_dim):
    ae = cfg["autoencoder"]
    return AutoencoderSpec(input_dim, tuple(ae["hidden_dims"]), ae["latent_dim"],
                           ae["hidden_activation"], ae["alpha"])


def federation_config(cfg, seed, method=None):
    fed = dict(cfg["federation"])
    if method is not None:
        fed["method"] = method
    return FederationConfig(n_clients=cfg["n_clients"], seed=seed, **fed)


def model_name(pipeline, detector, method=FEDAVG):
    if pipeline == "baseline":
        return f"Baseline_{detector}"
    if pipeline == "raw":
        return detector
    return ("Fed_Prox+" if method == FEDPROX else "Fed_Avg+") + detector


def _splits(clients, cfg, seed):
    pairs = []
    for k, ds in enumerate(clients):
        split_seed = np.random.SeedSequence([seed, k, 7])
        pairs.append(train_test_split(ds, cfg["test_fraction"], split_seed))
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _detector_seed(seed, client, name):
    return int(np.random.SeedSequence([seed, client, sum(map(ord, name))]).generate_state(1)[0])


def _evaluate(report, pipeline, cfg, seed, encoders, trains, tests, method=FEDAVG):
    for name, params in cfg["detectors"].items():
        detectors = []
        for k, train in enumerate(trains):
            enc = encoders[k] or (lambda X: X)
            det = DETECTORS[name](**params, random_state=_detector_seed(seed, k, name))
            detectors.append(det.fit(enc(train.features), train.labels))
        rows = cross_client_evaluate(detectors, encoders, tests, cfg["metrics"], cfg["unknown_mode"])
        report.add(seed, model_name(pipeline, name, method), rows)


def _pca_exports(encoders, tests):
    files = {}
    for k, enc in enumerate(encoders):
        enc = enc or (lambda X: X)
        latent = np.vstack([enc(t.features) for t in tests])
        proj, _ = pca_project(latent, 2)
        labels = np.concatenate([t.labels for t in tests])
        kinds = np.concatenate([t.kinds for t in tests])
        origin = np.concatenate([np.full(len(t), i) for i, t in enumerate(tests)])
        files[f"pca_{k}.csv"] = pca_csv(proj, labels, kinds, origin)
    return files


def _encoder(params, spec):
    return lambda X: encode(params, spec, X)


@dataclass
class RunResult:
    report: EvaluationReport
    round_logs: List[dict] = field(default_factory=list)
    pca: Dict[str, str] = field(default_factory=dict)


def public_config(cfg):
    """Config as echoed into reports (minus where the files were written)."""
    return {k: v for k, v in cfg.items() if k != "output_dir"}


def run_baseline(cfg, clients=None) -> RunResult:
    """Each client trains its own autoencoder; no parameters are exchanged.

    Every client starts from the same seeded initial model the federated
    server would broadcast, and trains for ``baseline_epochs`` (default
    ``rounds * local_epochs``) epochs.
    """
    clients = clients if clients is not None else load_clients(cfg)
    report = EvaluationReport("baseline", public_config(cfg))
    result = RunResult(report)
    fed = cfg["federation"]
    epochs = cfg["baseline_epochs"] or fed["rounds"] * fed["local_epochs"]
    for seed in cfg["seeds"]:
        trains, tests = _splits(clients, cfg, seed)
        spec = autoencoder_spec(cfg, trains[0].features.shape[1])
        w0 = init_global(spec, seed)
        encoders = []
        for k, train in enumerate(trains):
            params, _ = train_local(w0, train.features, spec, train.layout, epochs,
                                    fed["batch_size"], fed["lr"], client_stream(seed, 0, k),
                                    cat_weight=cfg["autoencoder"]["cat_weight"],
                                    num_weight=cfg["autoencoder"]["num_weight"])
            encoders.append(_encoder(params, spec))
        log.info("baseline seed %s: autoencoders trained", seed)
        _evaluate(report, "baseline", cfg, seed, encoders, trains, tests)
        if cfg["pca"] and seed == cfg["seeds"][0]:
            result.pca = _pca_exports(encoders, tests)
    return result


def run_federated(cfg, clients=None, method=None) -> RunResult:
    """Federated autoencoder training, then per-client detectors on its codes."""
    clients = clients if clients is not None else load_clients(cfg)
    method = method or cfg["federation"]["method"]
    report = EvaluationReport("federate", public_config(cfg))
    result = RunResult(report)
    for seed in cfg["seeds"]:
        trains, tests = _splits(clients, cfg, seed)
        spec = autoencoder_spec(cfg, trains[0].features.shape[1])
        fcfg = federation_config(cfg, seed, method)
        _, per_client, logs = run_federation(trains, spec, fcfg, n_jobs=cfg["n_jobs"])
        for entry in logs:
            result.round_logs.append({"seed": seed, "method": method, **entry.to_dict()})
        log.info("federated seed %s: %d rounds done", seed, len(logs))
        encoders = [_encoder(p, spec) for p in per_client]
        _evaluate(report, "federate", cfg, seed, encoders, trains, tests, method)
        if cfg["pca"] and seed == cfg["seeds"][0]:
            result.pca = _pca_exports(encoders, tests)
    return result


def run_raw_detector(cfg, clients=None) -> RunResult:
    """Detectors trained directly on the encoded features, no autoencoder."""
    clients = clients if clients is not None else load_clients(cfg)
    report = EvaluationReport("raw", public_config(cfg))
    result = RunResult(report)
    for seed in cfg["seeds"]:
        trains, tests = _splits(clients, cfg, seed)
        encoders = [None] * len(trains)
        _evaluate(report, "raw", cfg, seed, encoders, trains, tests)
        if cfg["pca"] and seed == cfg["seeds"][0]:
            result.pca = _pca_exports(encoders, tests)
    return result


def write_outputs(result: RunResult, cfg, out_dir=None):
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report.to_json())
    (out / "report.csv").write_text(result.report.to_csv())
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    if result.round_logs:
        with open(out / "rounds.jsonl", "w") as f:
            for entry in result.round_logs:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    for name, text in result.pca.items():
        (out / name).write_text(text)
    return out
