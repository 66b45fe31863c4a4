import numpy as np
import pytest

from fedod.autoencoder import (
    Autoencoder,
    AutoencoderSpec,
    ColumnLayout,
    apply_heads,
    encode,
    init_autoencoder,
    load_params,
    loss_and_grads,
    reconstruction_loss,
    save_params,
    train_local,
)
from fedod.exceptions import ContractViolation, DataFormatError


def mixed_6_layout():
    # two numerical slots, a 3-way and a binary-as-one-column group
    return ColumnLayout(numerical=(0, 1), categorical_groups=((2, 5, "c"), (5, 6, "b")))


def test_perfect_numerical_reconstruction_has_zero_loss(rng):
    x = rng.normal(size=(5, 3))
    loss, grad = reconstruction_loss(x, x, ColumnLayout.all_numerical(3))
    assert loss == 0.0 and not grad.any()


def test_single_squared_error_term():
    loss, _ = reconstruction_loss([[0.0]], [[2.0]], ColumnLayout.all_numerical(1))
    assert loss == 4.0


def test_mixed_loss_matches_elementwise_reference(rng):
    layout = ColumnLayout(numerical=(0,), categorical_groups=((1, 3, "flag"),))
    x = np.array([[0.3, 1.0, 0.0], [-1.2, 0.0, 1.0], [2.0, 1.0, 0.0]])
    x_hat = np.column_stack([rng.normal(size=3), rng.uniform(0.05, 0.95, size=(3, 2))])
    ref = 0.0
    for i in range(3):
        ref += (x_hat[i, 0] - x[i, 0]) ** 2
        for j in (1, 2):
            t, p = x[i, j], x_hat[i, j]
            ref += -(t * np.log(p) + (1 - t) * np.log(1 - p))
    loss, _ = reconstruction_loss(x, x_hat, layout)
    assert abs(loss - ref / 3) < 1e-12


def test_layout_validation_catches_gaps_and_overlaps():
    with pytest.raises(ContractViolation, match="gap"):
        ColumnLayout(numerical=(0,)).validate(2)
    with pytest.raises(ContractViolation, match="overlap"):
        ColumnLayout(numerical=(0, 1), categorical_groups=((1, 2, "c"),)).validate(2)


def test_spec_requires_bottleneck():
    with pytest.raises(ContractViolation):
        AutoencoderSpec(4, (), 4)
    spec = AutoencoderSpec(6, (4,), 2)
    assert spec.layer_dims == [6, 4, 2, 4, 6]
    assert spec.activations[-1] == "identity"


def test_mixed_head_gradients_finite_difference():
    layout = mixed_6_layout()
    spec = AutoencoderSpec(6, (4,), 2)
    r = np.random.default_rng(3)
    worst = 0.0
    for trial in range(10):
        params = init_autoencoder(spec, trial)
        x = np.column_stack([r.normal(size=(4, 2)), np.eye(3)[r.integers(0, 3, 4)],
                             r.integers(0, 2, (4, 1))])
        _, grads = loss_and_grads(params, spec, layout, x)
        h = 1e-5
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_and_grads(params, spec, layout, x)[0]
                p[idx] = old - h
                down = loss_and_grads(params, spec, layout, x)[0]
                p[idx] = old
                num = (up - down) / (2 * h)
                worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
    assert worst < 1e-4


def test_heads_apply_sigmoid_and_tanh():
    z = np.array([[0.0, 0.0, 0.0]])
    out = apply_heads(z, ColumnLayout(numerical=(0,), categorical_groups=((1, 3, "c"),)))
    np.testing.assert_array_equal(out, [[0.0, 0.5, 0.5]])
    tanh_out = apply_heads(np.array([[10.0]]), ColumnLayout.all_numerical(1, "tanh"))
    assert tanh_out[0, 0] == pytest.approx(np.tanh(10.0))


def test_zero_learning_rate_keeps_params(rng):
    spec = AutoencoderSpec(3, (2,), 1)
    params = init_autoencoder(spec, 0)
    out, _ = train_local(params, rng.normal(size=(10, 3)), spec, ColumnLayout.all_numerical(3),
                         epochs=1, batch_size=4, lr=0.0, seed=0)
    for a, b in zip(params, out):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ContractViolation):
        train_local(params, rng.normal(size=(10, 3)), spec, ColumnLayout.all_numerical(3),
                    epochs=0, batch_size=4, lr=0.1, seed=0)


def test_training_decreases_loss(rng):
    data = rng.multivariate_normal([0, 0], [[1, 0.9], [0.9, 1]], size=50)
    spec = AutoencoderSpec(2, (4,), 1)
    layout = ColumnLayout.all_numerical(2)
    params = init_autoencoder(spec, 1)
    initial, _ = loss_and_grads(params, spec, layout, data)
    trained, trace = train_local(params, data, spec, layout, epochs=200, batch_size=16,
                                 lr=1e-2, seed=2)
    final, _ = loss_and_grads(trained, spec, layout, data)
    assert final < initial
    assert trace[-1] < trace[0]


def test_training_is_deterministic(rng):
    data = rng.normal(size=(40, 4))
    spec = AutoencoderSpec(4, (3,), 2)
    layout = ColumnLayout.all_numerical(4)
    params = init_autoencoder(spec, 0)
    a, _ = train_local(params, data, spec, layout, 3, 8, 1e-2, seed=9)
    b, _ = train_local(params, data, spec, layout, 3, 8, 1e-2, seed=9)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_encode_shapes_and_identity_encoder(rng):
    spec = AutoencoderSpec(5, (4,), 2)
    params = init_autoencoder(spec, 0)
    x = rng.normal(size=(7, 5))
    h = encode(params, spec, x)
    assert h.shape == (7, 2)
    np.testing.assert_array_equal(h, encode(params, spec, x))

    flat = AutoencoderSpec(3, (), 2, hidden_activation="identity")
    params = init_autoencoder(flat, 0)
    params[0] = np.eye(3)[:, :2]
    params[1] = np.zeros((1, 2))
    np.testing.assert_array_equal(encode(params, flat, x[:, :3]), x[:, :2])


def test_params_roundtrip(tmp_path):
    spec = AutoencoderSpec(6, (4,), 2)
    params = init_autoencoder(spec, 4)
    save_params(tmp_path / "p.json", params, spec, mixed_6_layout())
    loaded, spec2, layout2 = load_params(tmp_path / "p.json")
    assert spec2 == spec and layout2 == mixed_6_layout()
    for a, b in zip(params, loaded):
        assert a.tobytes() == b.tobytes()
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(DataFormatError):
        load_params(tmp_path / "bad.json")


def test_estimator_api(rng):
    x = rng.normal(size=(60, 5))
    ae = Autoencoder(hidden_dims=(4,), latent_dim=2, epochs=5, batch_size=16, random_state=0)
    assert ae.get_params()["latent_dim"] == 2
    z = ae.fit_transform(x)
    assert z.shape == (60, 2)
    assert ae.score_samples(x).shape == (60,)
    again = Autoencoder(**ae.get_params()).fit(x)
    np.testing.assert_array_equal(again.transform(x), z)
