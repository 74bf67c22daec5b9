import numpy as np
import pytest

from gradcheck import analytic_grad, fd_grad, relative_error
from mechspace import nn
from mechspace.bank import frozen_buffer, init_learnable_bank, kmeans_prototypes
from mechspace.errors import ConfigurationError
from mechspace.models import (Standardizer, build_model, direct_forecast, full_forecast, lstm_forecast,
                              nobank_forecast, node_forecast, nvar_feature_length, nvar_features, nvar_fit,
                              rcesn_fit, rescale_spectral_radius, reservoir_update, retrieve, spectral_radius)
from mechspace.systems import rk4_step
from mechspace.training import TrainConfig, train_model

H, D = 3, 4
SMALL = {
    "Direct": {"enc_widths": [6], "z_dim": 5, "pred_widths": [6]},
    "NoBank": {"enc_widths": [6], "z_dim": 5, "pred_widths": [6], "head_widths": [4], "d_m": 3},
    "Full": {"enc_widths": [6], "z_dim": 5, "pred_widths": [6], "key_dim": 2},
    "LSTM": {"hidden": 4},
    "NODE": {"field_widths": [5], "substeps": 2, "interval": 0.5},
}


def small_model(variant, seed=0, **extra):
    hyper = {"h": H, "state_dim": D, **SMALL[variant], **extra}
    bank = init_learnable_bank(5, 3, seed=seed, scale=1.0, key_dim=2) if variant == "Full" else None
    return build_model(variant, hyper, seed=seed, bank=bank)


def _zero_last(model, prefix, bias):
    n_layers = sum(1 for k in model.params.names() if k.startswith(prefix + ".W"))
    model.params[f"{prefix}.W{n_layers - 1}"].data[...] = 0.0
    model.params[f"{prefix}.b{n_layers - 1}"].data[...] = bias


def test_direct_zero_final_layer_gives_bias(rng):
    m = small_model("Direct")
    bias = rng.standard_normal(D)
    _zero_last(m, "G", bias)
    for _ in range(3):
        np.testing.assert_allclose(direct_forecast(m, rng.standard_normal((H, D))).prediction, bias, atol=1e-15)


def test_lstm_zero_head_gives_bias(rng):
    m = small_model("LSTM")
    bias = rng.standard_normal(D)
    _zero_last(m, "head", bias)
    np.testing.assert_allclose(lstm_forecast(m, rng.standard_normal((H, D))).prediction, bias, atol=1e-15)


def test_forecasts_are_deterministic(rng):
    hist = rng.standard_normal((H, D))
    for fn, variant in ((direct_forecast, "Direct"), (full_forecast, "Full"), (nobank_forecast, "NoBank"),
                        (lstm_forecast, "LSTM"), (node_forecast, "NODE")):
        m = small_model(variant)
        a, b = fn(m, hist), fn(m, hist)
        assert np.array_equal(a.prediction, b.prediction)
        assert a.prediction.shape == (D,)


def test_node_zero_params_returns_last_state(rng):
    m = small_model("NODE")
    for _, t in m.params.items():
        t.data[...] = 0.0
    hist = rng.standard_normal((H, D))
    np.testing.assert_array_equal(node_forecast(m, hist).prediction, hist[-1])


def test_node_one_substep_matches_rk4(rng):
    m = small_model("NODE", substeps=1, interval=0.3)
    hist = rng.standard_normal((H, D))
    spec = nn.MLPSpec((D, 5, D))
    f = lambda x: nn.mlp_forward(m.params, spec, x, "f").data
    np.testing.assert_allclose(node_forecast(m, hist).prediction, rk4_step(f, hist[-1], 0.3), rtol=1e-13, atol=1e-14)


def test_full_k1_bank_gives_fixed_mechanism(rng):
    bank = init_learnable_bank(1, 3, seed=0, scale=1.0, key_dim=2)
    m = build_model("Full", {"h": H, "state_dim": D, **SMALL["Full"]}, bank=bank)
    p1 = m.params["bank.values"].data[0]
    for _ in range(3):
        out = full_forecast(m, rng.standard_normal((H, D)))
        np.testing.assert_allclose(out.mechanism, p1, atol=1e-15)
        np.testing.assert_array_equal(out.weights, [1.0])


def test_full_mechanism_matches_retrieval(rng):
    m = small_model("Full")
    X = rng.standard_normal((6, H, D))
    core = m.core(X)
    from mechspace.models import _encode
    z, _ = _encode(m, X)
    alpha, theta = retrieve(m, z)
    np.testing.assert_array_equal(core.weights.data, alpha.data)
    np.testing.assert_array_equal(core.mechanism.data, theta.data)
    assert np.all(core.mechanism.data >= m.params["bank.values"].data.min(0) - 1e-9)
    assert np.all(core.mechanism.data <= m.params["bank.values"].data.max(0) + 1e-9)


def test_nobank_zero_head_gives_bias(rng):
    m = small_model("NoBank")
    bias = rng.standard_normal(3)
    _zero_last(m, "H", bias)
    out = nobank_forecast(m, rng.standard_normal((H, D)))
    np.testing.assert_allclose(out.mechanism, bias, atol=1e-15)


def test_nobank_full_share_predictor(rng):
    full = small_model("Full")
    nob = small_model("NoBank")
    for name in full.params.names():
        if name.startswith(("E.", "G.")):
            nob.params[name].data[...] = full.params[name].data
    X = rng.standard_normal((4, H, D))
    out = full.core(X)
    # force NoBank's head to emit Full's retrieved mechanism row by row
    for i in range(4):
        _zero_last(nob, "H", out.mechanism.data[i])
        np.testing.assert_allclose(nob.core(X[i:i + 1]).pred.data[0], out.pred.data[i], rtol=1e-13, atol=1e-14)


def test_nobank_mechanism_leaves_bank_hull(rng):
    full = small_model("Full")
    nob = small_model("NoBank")
    nob.params["H.b1"].data[...] = 10.0 * np.abs(full.params["bank.values"].data).max()
    theta = nobank_forecast(nob, rng.standard_normal((H, D))).mechanism
    assert np.any(theta > full.params["bank.values"].data.max(0))


@pytest.mark.parametrize("variant", ["Direct", "NoBank", "Full", "LSTM", "NODE"])
def test_gradient_matches_finite_differences(variant, rng):
    m = small_model(variant, seed=1)
    X = rng.standard_normal((5, H, D))
    Y = rng.standard_normal((5, D))
    g = analytic_grad(m, X, Y)
    coords = np.arange(len(g))
    assert relative_error(g, fd_grad(m, X, Y, coords)) <= 1e-4


def test_node_gradient_two_substeps_four_dims(rng):
    m = build_model("NODE", {"h": 1, "state_dim": 4, "field_widths": [6], "substeps": 2, "interval": 1.0}, seed=2)
    X = rng.standard_normal((3, 1, 4))
    Y = rng.standard_normal((3, 4))
    g = analytic_grad(m, X, Y)
    assert relative_error(g, fd_grad(m, X, Y, np.arange(len(g)))) <= 1e-4


def test_shape_mismatch_rejected(rng):
    m = small_model("Direct")
    with pytest.raises(ConfigurationError):
        m.core(rng.standard_normal((2, H, D + 1)))


def test_full_needs_bank():
    with pytest.raises(ConfigurationError):
        build_model("Full", {"h": H, "state_dim": D})
    with pytest.raises(ConfigurationError):
        build_model("Direct", {"h": H, "state_dim": D}, bank=init_learnable_bank(2, 2))


def test_frozen_bank_unchanged_by_training(rng):
    X = rng.standard_normal((64, 2, 5))
    Y = rng.standard_normal((64, 1))
    bank = kmeans_prototypes(rng.standard_normal((40, 11)), 6, seed=0)
    before = bank.prototypes.copy()
    checksum = bank.checksum()
    hyper = {"kind": "local_field", "h": 2, "state_dim": 16, "spatial_width": 5, "enc_widths": [8], "z_dim": 4,
             "pred_widths": [8], "local_rule": True}
    m = build_model("Full", hyper, seed=0, bank=bank)
    train_model(m, (X, Y), (X[:16], Y[:16]), TrainConfig(epochs=2, batch_size=16))
    assert bank.checksum() == checksum
    assert np.array_equal(m.bank.prototypes, before)


def test_spectral_radius_rescaling():
    A = rescale_spectral_radius(np.diag([2.0, 1.0]), 0.9)
    np.testing.assert_allclose(A, np.diag([0.9, 0.45]), atol=1e-12)


def test_spectral_radius_large_matches_dense(rng):
    A = rng.standard_normal((120, 120)) * (rng.random((120, 120)) < 0.1)
    exact = np.max(np.abs(np.linalg.eigvals(A)))
    assert spectral_radius(A) == pytest.approx(exact, rel=1e-8)


def _esn_series(rng, T=400):
    return np.sin(np.arange(T)[:, None] * np.array([[0.11, 0.23, 0.05]])) + 0.01 * rng.standard_normal((T, 3))


def test_esn_state_decays_without_input(rng):
    m = rcesn_fit(_esn_series(rng), {"reservoir_size": 80, "washout": 20, "sync": 10, "seed": 1})
    r = rng.uniform(-1, 1, (1, 80))
    start = np.linalg.norm(r)
    for _ in range(300):
        r = reservoir_update(m, r, np.zeros((1, 3)))
    assert np.linalg.norm(r) < 1e-3 * start
    assert np.all(reservoir_update(m, np.zeros((1, 80)), np.zeros((1, 3))) == 0.0)


def test_esn_deterministic_per_seed(rng):
    s = _esn_series(rng)
    hyper = {"reservoir_size": 60, "washout": 20, "sync": 10, "seed": 4}
    assert np.array_equal(rcesn_fit(s, hyper).readout, rcesn_fit(s, hyper).readout)


def test_nvar_features_hand_enumeration():
    np.testing.assert_array_equal(nvar_features(np.array([[1.0], [2.0]])), [1, 2, 1, 4, 2, 1])
    assert nvar_feature_length(16, 4) == 2145
    assert len(nvar_features(np.zeros((4, 16)))) == 2145
    zero = nvar_features(np.zeros((2, 3)))
    assert zero[0] == 1.0 and np.all(zero[1:] == 0.0)


def _linear_pairs(rng, k=2, T=300):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    M = 0.97 * Q
    x = np.empty((T, 3))
    x[0] = rng.standard_normal(3)
    for t in range(T - 1):
        x[t + 1] = M @ x[t]
    X = np.stack([x[t - k + 1:t + 1] for t in range(k - 1, T - 1)])
    return X, x[k:]


def test_nvar_recovers_linear_map(rng):
    # k = 1 keeps the delay coordinates linearly independent
    X, Y = _linear_pairs(rng, k=1)
    m = nvar_fit((X, Y), {"k": 1, "lam": 1e-12})
    pred, _, _ = m.predict_batch(X)
    assert np.sqrt(np.mean((pred - Y) ** 2)) <= 1e-8


def test_nvar_duplicate_data_and_shrinkage(rng):
    X, Y = _linear_pairs(rng)
    norm = Standardizer.fit(X)
    a = nvar_fit((X, Y), {"k": 2, "lam": 1e-6}, norm=norm)
    b = nvar_fit((X.copy(), Y.copy()), {"k": 2, "lam": 1e-6}, norm=norm)
    assert np.array_equal(a.readout, b.readout)
    big = nvar_fit((X, Y), {"k": 2, "lam": 1e12})
    assert np.max(np.abs(big.readout)) < 1e-6


def test_uniform_interface(rng):
    hist = rng.standard_normal((5, H, D))
    for variant in SMALL:
        pred, _, _ = small_model(variant).predict_batch(hist)
        assert pred.shape == (5, D)
