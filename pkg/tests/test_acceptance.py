"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when output capture is on.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fedod.autoencoder import AutoencoderSpec, ColumnLayout, init_autoencoder, loss_and_grads
from fedod.data import ColumnSpec, CorruptionPlan, TableSchema, TabularEncoder, corrupt, encode_table
from fedod.data import METHODS, build_image_clients, load_idx_images, read_idx, write_idx
from fedod.data.preprocessing import Dataset, round_half_up
from fedod.evaluation import PowerPCA, average_precision, f1_at, pr_auc, roc_auc
from fedod.experiment import DEFAULTS, resolve_config, run_baseline, run_federated, load_clients
from fedod.federation import (
    Client,
    FederationConfig,
    aggregation_weights,
    fedavg_aggregate,
    run_federation,
)
from oracles import ap_oracle, f1_oracle, pr_auc_oracle, random_instance, roc_oracle

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


def test_metric_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {"ap": 0.0, "roc_auc": 0.0, "pr_auc": 0.0, "f1": 0.0}
    for _ in range(1000):
        y, s = random_instance(rng)
        worst["ap"] = max(worst["ap"], abs(average_precision(y, s) - ap_oracle(y, s)))
        worst["roc_auc"] = max(worst["roc_auc"], abs(roc_auc(y, s) - roc_oracle(y, s)))
        worst["pr_auc"] = max(worst["pr_auc"], abs(pr_auc(y, s) - pr_auc_oracle(y, s)))
        worst["f1"] = max(worst["f1"], abs(f1_at(y, s) - f1_oracle(y, s)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-9 and elapsed < 30
    verdict("metric oracle equivalence", ok,
            f"max |diff| {max(worst.values()):.2e} over 1000 instances in {elapsed:.1f}s "
            f"(limit 1e-9, 30s)")


def test_gradient_correctness(verdict):
    spec = AutoencoderSpec(6, (4,), 2)
    assert spec.layer_dims == [6, 4, 2, 4, 6]
    # two numerical columns plus two binary one-hot groups
    layout = ColumnLayout(numerical=(0, 1), categorical_groups=((2, 4, "u"), (4, 6, "v")))
    rng = np.random.default_rng(11)
    h, floor = 1e-5, 1e-6
    worst = 0.0
    start = time.perf_counter()
    for trial in range(50):
        params = init_autoencoder(spec, trial)
        x = np.column_stack([rng.normal(size=(8, 2)), np.eye(2)[rng.integers(0, 2, 8)],
                             np.eye(2)[rng.integers(0, 2, 8)]])
        _, grads = loss_and_grads(params, spec, layout, x)
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_and_grads(params, spec, layout, x)[0]
                p[idx] = old - h
                down = loss_and_grads(params, spec, layout, x)[0]
                p[idx] = old
                num = (up - down) / (2 * h)
                worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), floor))
    elapsed = time.perf_counter() - start
    verdict("gradient correctness", worst < 1e-4 and elapsed < 60,
            f"max relative error {worst:.2e} over 50 trials of a 6-4-2-4-6 mixed-head "
            f"autoencoder in {elapsed:.1f}s (limit 1e-4, 60s)")


def test_aggregation_algebra(verdict):
    rng = np.random.default_rng(5)
    shapes = [(6, 4), (1, 4), (4, 2), (1, 2)]
    same = [rng.normal(size=s) for s in shapes]
    fixed = fedavg_aggregate([(same, n) for n in (5, 17, 1, 300)])
    exact = all(a.tobytes() == b.tobytes() for a, b in zip(same, fixed))

    counts = [int(n) for n in rng.integers(1, 1000, 6)]
    updates = [([rng.normal(size=s) for s in shapes], n) for n in counts]
    out = fedavg_aggregate(updates)
    total = sum(counts)
    err = 0.0
    for i, p in enumerate(out):
        for idx in np.ndindex(p.shape):
            ref = sum(n / total * params[i][idx] for params, n in updates)
            err = max(err, abs(p[idx] - ref))
    wsum = float(aggregation_weights(counts).sum())
    ok = exact and err <= 1e-12 and abs(wsum - 1.0) <= 1e-12
    verdict("aggregation algebra", ok,
            f"fixed point exact={exact}, weighted-mean error {err:.1e} (limit 1e-12), "
            f"weights sum {wsum!r}")


def test_fedprox_degeneracy(verdict):
    spec = AutoencoderSpec(5, (4,), 2)
    layout = ColumnLayout.all_numerical(5)
    data = [np.random.default_rng(k).normal(k * 0.5, 1, (60, 5)) for k in range(3)]
    runs = {}
    for method in ("fedavg", "fedprox"):
        cfg = FederationConfig(n_clients=3, rounds=4, local_epochs=3, batch_size=16, lr=1e-2,
                               method=method, mu=0.0, seed=21)
        final, _, logs = run_federation([Client(k, d, layout) for k, d in enumerate(data)], spec, cfg)
        runs[method] = (final, [log.to_dict() for log in logs])
    same_logs = runs["fedavg"][1] == runs["fedprox"][1]
    same_final = all(a.tobytes() == b.tobytes() for a, b in zip(runs["fedavg"][0], runs["fedprox"][0]))
    verdict("FedProx degeneracy", same_logs and same_final,
            f"mu=0 per-round checksums equal={same_logs}, final parameters bitwise equal={same_final}")


def test_corruption_rate_conformance(verdict):
    n = 1000
    rng = np.random.default_rng(0)
    num_cols = [f"x{j}" for j in range(8)]
    cat_cols = [f"c{j}" for j in range(4)]
    schema = TableSchema(tuple([ColumnSpec(c, "numerical") for c in num_cols]
                               + [ColumnSpec(c, "categorical", ("a", "b", "c")) for c in cat_cols]))
    raw = pd.DataFrame({**{c: rng.normal(size=n) for c in num_cols},
                        **{c: rng.choice(["a", "b", "c"], n, p=[0.6, 0.3, 0.1]) for c in cat_cols}})
    clean = encode_table(raw, TabularEncoder(schema).fit(raw))
    want_rows = round_half_up(0.03 * n)
    want_num = max(1, round_half_up(0.25 * len(num_cols)))
    want_cat = max(1, round_half_up(0.25 * len(cat_cols)))
    bad = []
    for run in range(100):
        method = METHODS[run % len(METHODS)]
        out = corrupt(clean, CorruptionPlan(method, 0.03, 0.25, seed=run))
        cols = cat_cols if method.startswith("categorical") else num_cols
        want = want_cat if method.startswith("categorical") else want_num
        changed = (out.raw[cols] != raw[cols]).sum(axis=1).to_numpy()
        flipped = out.labels == 1
        if flipped.sum() != want_rows or not (changed[flipped] == want).all() or changed[~flipped].any():
            bad.append((run, method))
    verdict("corruption-rate conformance", not bad,
            f"100 runs on N={n}: rows flipped == {want_rows}, features per row == "
            f"{want_num} numerical / {want_cat} categorical; violations {bad}")


def test_directional_reproduction(verdict, tmp_path):
    cfg = resolve_config({
        "detectors": {"RF": DEFAULTS["detectors"]["RF"]},
        "metrics": ["ap"],
        "pca": False,
        "output_dir": str(tmp_path),
    })
    assert cfg["seeds"] == [0, 1, 2, 3, 4]
    assert cfg["source"]["rows_per_client"] == 2000
    assert (cfg["federation"]["rounds"], cfg["federation"]["local_epochs"]) == (20, 20)
    start = time.perf_counter()
    clients = load_clients(cfg)
    base = run_baseline(cfg, clients).report
    fed = run_federated(cfg, clients).report
    elapsed = time.perf_counter() - start
    b_known = base.lookup("Baseline_RF", "ap", "known")["mean"]
    b_unknown = base.lookup("Baseline_RF", "ap", "unknown")["mean"]
    f_known = fed.lookup("Fed_Avg+RF", "ap", "known")["mean"]
    f_unknown = fed.lookup("Fed_Avg+RF", "ap", "unknown")["mean"]
    gain, drop = f_unknown - b_unknown, b_known - f_known
    ok = gain > 0.05 and drop < 0.05 and elapsed < 15 * 60
    verdict("directional reproduction", ok,
            f"unknown AP {b_unknown:.3f} -> {f_unknown:.3f} (gain {gain:+.3f}, need > 0.05); "
            f"known AP {b_known:.3f} -> {f_known:.3f} (drop {drop:+.3f}, need < 0.05); "
            f"{elapsed:.0f}s (limit 900s)")


def test_federate_determinism(verdict, tmp_path):
    args = ["--seeds", "0,1", "--rounds", "3", "--epochs", "2", "--detectors", "RF,MLP",
            "--set", "source.rows_per_client=400", "--set", "detectors.RF.n_estimators=20",
            "--set", "detectors.MLP.epochs=20"]
    for name in ("a", "b"):
        proc = subprocess.run([sys.executable, "-m", "fedod", "federate", "--out",
                               str(tmp_path / name), *args], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("report.json", "rounds.jsonl")}
    verdict("federate determinism", all(same.values()),
            f"two separate processes, byte-identical: {same}")


def test_pca_sanity(verdict):
    rng = np.random.default_rng(8)
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0]
    X = (rng.normal(size=(500, 2)) * [5.0, 2.0]) @ basis.T + rng.normal(size=10)
    pca = PowerPCA(2).fit(X)
    err = float(np.max(np.abs(pca.inverse_transform(pca.transform(X)) - X)))
    full = PowerPCA(5).fit(rng.normal(size=(300, 5)) * [3, 2.5, 2, 1, 0.5])
    ev = full.explained_variance_
    non_increasing = bool(np.all(np.diff(ev) <= 1e-12))
    verdict("PCA sanity", err < 1e-8 and non_increasing,
            f"rank-2 reconstruction error {err:.1e} (limit 1e-8); explained variance "
            f"non-increasing={non_increasing}")


def test_real_format_smoke(verdict, tmp_path):
    images = read_idx(FIXTURES / "ten-images-idx3-ubyte")
    expected = np.array([[[(i * 25 + r * 3 + c) % 256 for c in range(28)] for r in range(28)]
                         for i in range(10)], dtype=np.uint8)
    write_idx(tmp_path / "copy", images)
    roundtrip = (np.array_equal(images, expected)
                 and (tmp_path / "copy").read_bytes() == (FIXTURES / "ten-images-idx3-ubyte").read_bytes())
    ds = load_idx_images(FIXTURES / "ten-images-idx3-ubyte", FIXTURES / "ten-labels-idx1-ubyte")
    roundtrip = roundtrip and ds.features.shape == (10, 784) and ds.digits.tolist() == list(range(10))

    # a digit-labelled pool large enough for four clients
    digits = np.repeat(np.arange(10), 600)
    feats = np.random.default_rng(0).uniform(-1, 1, (digits.size, 784))
    pool = Dataset(feats, ds.layout, np.zeros(digits.size, int),
                   np.full(digits.size, "inlier", dtype=object), digits=digits)
    clients = build_image_clients(pool, seed=3)
    per_client = []
    ok_rates = True
    for c in clients:
        n_in = int((c.labels == 0).sum())
        out_digits = sorted(set(c.digits[c.labels == 1].tolist()))
        per_client.append(out_digits)
        ok_rates &= c.n_outliers == round_half_up(0.03 / 0.97 * n_in)
        ok_rates &= abs(c.n_outliers / len(c) - 0.03) < 0.002
        ok_rates &= bool((c.digits[c.labels == 0] == 0).all())
    one_each = sorted(d for ds_ in per_client for d in ds_) == [3, 4, 6, 8] and all(
        len(d) == 1 for d in per_client)
    verdict("real-format smoke", roundtrip and ok_rates and one_each,
            f"IDX 10-image round trip={roundtrip}; 3% outliers per client={ok_rates}; "
            f"outlier digits per client {per_client}")
