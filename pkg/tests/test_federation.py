import numpy as np
import pytest

from fedod.autoencoder import AutoencoderSpec, ColumnLayout, init_autoencoder, train_local
from fedod.exceptions import ConfigError, ContractViolation
from fedod.federation import (
    Client,
    FederationConfig,
    Server,
    aggregation_weights,
    client_stream,
    client_update,
    fedavg_aggregate,
    fedprox_client_update,
    init_global,
    run_federation,
)
from fedod.nn import glorot_bound

SPEC = AutoencoderSpec(5, (4,), 2)
LAYOUT = ColumnLayout.all_numerical(5)


def client_data(k, n=40):
    return np.random.default_rng(100 + k).normal(loc=0.3 * k, size=(n, 5))


def test_fixed_point_is_exact(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=(1, 2))]
    out = fedavg_aggregate([(params, 7), (params, 1), (params, 13)])
    for a, b in zip(params, out):
        assert a.tobytes() == b.tobytes()


def test_weighted_scalar_mean():
    out = fedavg_aggregate([([np.array([[1.0]])], 1), ([np.array([[3.0]])], 3)])
    assert out[0][0, 0] == 2.5


def test_weighted_mean_matches_elementwise_oracle(rng):
    updates = [([rng.normal(size=(4, 3)), rng.normal(size=(1, 3))], int(n))
               for n in rng.integers(1, 500, size=5)]
    total = sum(n for _, n in updates)
    out = fedavg_aggregate(updates)
    for i, p in enumerate(out):
        for idx in np.ndindex(p.shape):
            ref = sum(n / total * params[i][idx] for params, n in updates)
            assert abs(p[idx] - ref) < 1e-12


def test_equal_counts_give_arithmetic_mean(rng):
    updates = [([rng.normal(size=(6, 6))], 10) for _ in range(4)]
    expected = np.mean([u[0][0] for u in updates], axis=0)
    assert np.max(np.abs(fedavg_aggregate(updates)[0] - expected)) < 1e-12


def test_weights_sum_to_one():
    w = aggregation_weights([3, 1, 7, 11])
    assert abs(w.sum() - 1.0) < 1e-15
    np.testing.assert_allclose(w, np.array([3, 1, 7, 11]) / 22)
    with pytest.raises(ContractViolation):
        aggregation_weights([3, 0])


def test_aggregate_rejects_mismatched_shapes():
    with pytest.raises(ContractViolation):
        fedavg_aggregate([([np.zeros((2, 2))], 1), ([np.zeros((2, 3))], 1)])


def test_fedprox_zero_mu_is_bitwise_fedavg():
    w0 = init_global(SPEC, 0)
    data = client_data(0)
    a, ta = client_update(w0, data, SPEC, LAYOUT, 5, 8, 1e-2, client_stream(0, 1, 0))
    b, tb = fedprox_client_update(w0, data, SPEC, LAYOUT, 0.0, 5, 8, 1e-2, client_stream(0, 1, 0))
    assert ta == tb
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_fedprox_large_mu_stays_at_global():
    w0 = init_global(SPEC, 1)
    out, _ = fedprox_client_update(w0, client_data(1), SPEC, LAYOUT, 1e6, 3, 8, 1e-4, seed=0)
    for a, b in zip(w0, out):
        assert np.max(np.abs(a - b)) < 1e-3


def test_proximal_gradient_zero_at_center():
    # one step with zero learning rate and prox at its own center leaves the model alone
    w0 = init_global(SPEC, 2)
    out, _ = fedprox_client_update(w0, client_data(0), SPEC, LAYOUT, 5.0, 1, 40, 0.0, seed=0)
    for a, b in zip(w0, out):
        np.testing.assert_array_equal(a, b)


def test_single_client_single_round_equals_local_training():
    cfg = FederationConfig(n_clients=1, rounds=1, local_epochs=3, batch_size=8, lr=1e-2, seed=5)
    data = client_data(0)
    final, per_client, logs = run_federation([Client(0, data, LAYOUT)], SPEC, cfg)
    ref, _ = train_local(init_global(SPEC, 5), data, SPEC, LAYOUT, 3, 8, 1e-2, client_stream(5, 1, 0))
    for a, b in zip(final, ref):
        assert a.tobytes() == b.tobytes()
    assert len(per_client) == 1 and len(logs) == 1


def test_zero_lr_keeps_initial_model():
    cfg = FederationConfig(n_clients=3, rounds=4, local_epochs=2, batch_size=16, lr=0.0, seed=1)
    final, _, _ = run_federation([Client(k, client_data(k), LAYOUT) for k in range(3)], SPEC, cfg)
    for a, b in zip(final, init_global(SPEC, 1)):
        np.testing.assert_array_equal(a, b)


def test_runs_are_deterministic_and_order_free():
    cfg = FederationConfig(n_clients=4, rounds=3, local_epochs=2, batch_size=16, lr=1e-2, seed=9)
    clients = [Client(k, client_data(k), LAYOUT) for k in range(4)]
    f1, _, l1 = run_federation(clients, SPEC, cfg)
    f2, _, l2 = run_federation(clients, SPEC, cfg, n_jobs=4)
    assert [x.to_dict() for x in l1] == [x.to_dict() for x in l2]
    for a, b in zip(f1, f2):
        assert a.tobytes() == b.tobytes()


def test_client_sampling_fraction():
    cfg = FederationConfig(n_clients=10, fraction=0.25, rounds=1, seed=0)
    server = Server(SPEC, cfg)
    assert cfg.n_sampled == 3
    picks = server.sample_clients(1)
    assert len(picks) == 3 and len(set(picks)) == 3
    assert FederationConfig(n_clients=10, fraction=0.01).n_sampled == 1
    assert server.sample_clients(1) == picks


def test_partial_participation_logs():
    cfg = FederationConfig(n_clients=4, fraction=0.5, rounds=3, local_epochs=1, batch_size=16, seed=2)
    _, per_client, logs = run_federation([Client(k, client_data(k), LAYOUT) for k in range(4)], SPEC, cfg)
    assert all(len(log.sampled) == 2 for log in logs)
    assert all(set(log.n_samples) == set(log.sampled) for log in logs)
    assert len(per_client) == 4


def test_init_global_determinism_and_bounds():
    a, b, c = init_global(SPEC, 3), init_global(SPEC, 3), init_global(SPEC, 4)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))
    dims = SPEC.layer_dims
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        assert np.all(np.abs(a[2 * i]) <= glorot_bound(fi, fo))


def test_config_validation():
    with pytest.raises(ConfigError):
        FederationConfig(method="fedsgd")
    with pytest.raises(ConfigError):
        FederationConfig(fraction=0.0)
    cfg = FederationConfig(n_clients=2)
    with pytest.raises(ContractViolation):
        run_federation([Client(0, client_data(0), LAYOUT)], SPEC, cfg)


def test_client_exposes_only_parameters():
    c = Client(0, client_data(0), LAYOUT)
    params, n, loss = c.update(init_global(SPEC, 0), SPEC, FederationConfig(local_epochs=1), 1)
    assert n == 40 and np.isfinite(loss)
    assert [p.shape for p in params] == [p.shape for p in init_autoencoder(SPEC, 0)]
