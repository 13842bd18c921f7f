import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvexplore.nnet import (
    Adam,
    Mlp,
    TargetPair,
    categorical_head,
    load_arrays,
    log_prob_grad,
    log_softmax,
    one_hot_blocks,
    polyak,
    save_arrays,
    softmax,
)


def fd_grad(f, params, idx, h=1e-6):
    out = []
    for i in idx:
        p = params.copy()
        p[i] += h
        up = f(p)
        p[i] -= 2 * h
        out.append((up - f(p)) / (2 * h))
    return np.array(out)


def test_forward_shapes_and_param_count():
    net = Mlp([5, 8, 8, 3], np.random.default_rng(0))
    assert net.n_params == 5 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3
    assert net(np.zeros((7, 5))).shape == (7, 3)


def test_layers_are_views_of_flat_params():
    net = Mlp([2, 3, 1], np.random.default_rng(0))
    net.params[:] = 0.0
    assert all((W == 0).all() and (b == 0).all() for W, b in net.layers)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    net = Mlp([6, 16, 16, 4], rng)
    x = rng.normal(size=(10, 6))
    w = rng.normal(size=(10, 4))
    f = lambda p: float(np.sum(net(x, p) * w))
    out, cache = net.forward(x)
    grad, gx = net.backward(cache, w)
    idx = rng.choice(net.n_params, 60, replace=False)
    assert np.allclose(grad[idx], fd_grad(f, net.params, idx), rtol=1e-5, atol=1e-8)
    # input gradient
    fx = lambda v: float(np.sum(net(v.reshape(10, 6)) * w))
    assert np.allclose(gx.ravel()[:12], fd_grad(fx, x.ravel().copy(), range(12)), rtol=1e-5, atol=1e-8)


def test_log_softmax_stable_and_normalised():
    logits = np.array([[1000.0, 0.0, -1000.0], [0.0, 0.0, 0.0]])
    lp = log_softmax(logits)
    assert np.all(np.isfinite(lp))
    assert np.allclose(np.exp(lp).sum(axis=1), 1.0)
    assert np.allclose(softmax(logits[1]), 1 / 3)
    probs, logp = categorical_head(logits)
    assert np.allclose(np.log(probs[1]), logp[1])


def test_log_prob_grad():
    z = np.array([0.3, -1.0, 2.0])
    k = 2
    f = lambda v: float(log_softmax(v)[k])
    assert np.allclose(log_prob_grad(z, k), fd_grad(f, z, range(3)), atol=1e-8)
    batch = np.stack([z, -z])
    g = log_prob_grad(batch, np.array([0, 1]))
    assert g.shape == (2, 3) and np.allclose(g.sum(axis=1), 0.0)


def test_one_hot_blocks():
    x = one_hot_blocks(np.array([[1, 0], [2, 1]]), (3, 2))
    assert x.tolist() == [[0, 1, 0, 1, 0], [0, 0, 1, 0, 1]]


@settings(max_examples=30)
@given(st.floats(0.01, 1.0), st.integers(0, 1000))
def test_polyak_is_convex_combination(tau, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=10), rng.normal(size=10)
    t = a.copy()
    polyak(t, b, tau)
    assert np.allclose(t, (1 - tau) * a + tau * b)


def test_target_pair_full_copy_and_validation():
    net = Mlp([2, 4, 1], np.random.default_rng(0))
    pair = TargetPair(net, 1.0)
    net.params += 1.0
    pair.update()
    assert np.array_equal(pair.target.params, net.params)
    with pytest.raises(ValueError):
        TargetPair(net, 0.0)


def test_adam_minimises_quadratic():
    x = np.array([3.0, -2.0])
    opt = Adam(0.1)
    for _ in range(500):
        opt.step(x, 2 * x)
    assert np.abs(x).max() < 1e-2


def test_checkpoint_round_trip(tmp_path):
    net = Mlp([3, 5, 2], np.random.default_rng(2))
    path = tmp_path / "net.bin"
    save_arrays(path, {"w": net.params, "m": np.arange(6.0).reshape(2, 3)}, {"note": "x"})
    arrays, meta = load_arrays(path)
    assert meta == {"note": "x"}
    assert np.array_equal(arrays["w"], net.params)
    assert arrays["m"].shape == (2, 3)
    restored = Mlp([3, 5, 2], params=arrays["w"])
    x = np.ones((1, 3))
    assert np.array_equal(restored(x), net(x))


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        load_arrays(path)
