import math

import numpy as np
import pytest

from rise import autodiff as ad
from rise.autodiff import ParameterStore, Tensor
from rise.cells import add_gru_layer, gru_step, init_params, stack_step, zero_state
from rise.errors import DimensionError


def gru_scalar_oracle(W, U, b, x, h):
    """Cho-style GRU written one unit at a time with plain floats."""
    d_h = U.shape[1]

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    z, r = [], []
    for j in range(d_h):
        az = b[j] + sum(W[j, k] * x[k] for k in range(len(x))) + sum(U[j, k] * h[k] for k in range(d_h))
        ar = b[d_h + j] + sum(W[d_h + j, k] * x[k] for k in range(len(x))) + sum(U[d_h + j, k] * h[k] for k in range(d_h))
        z.append(sig(az))
        r.append(sig(ar))
    out = []
    for j in range(d_h):
        row = 2 * d_h + j
        an = b[row] + sum(W[row, k] * x[k] for k in range(len(x))) + sum(U[row, k] * r[k] * h[k] for k in range(d_h))
        n = math.tanh(an)
        out.append(z[j] * h[j] + (1 - z[j]) * n)
    return np.array(out)


def layer(rng, d_in, d_h):
    store = ParameterStore()
    params = add_gru_layer(store, "g", d_in, d_h, seed=int(rng.integers(1000)))
    params.b.data = rng.normal(size=params.b.shape)
    return store, params


def test_gru_step_matches_scalar_oracle(rng):
    _, p = layer(rng, 3, 5)
    x, h = rng.normal(size=3), rng.normal(size=5)
    expected = gru_scalar_oracle(p.W.data, p.U.data, p.b.data, x, h)
    np.testing.assert_allclose(gru_step(p, x, h).data, expected, rtol=0, atol=1e-12)


def test_gru_step_batched_rows_are_independent(rng):
    _, p = layer(rng, 3, 4)
    X, H = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
    batched = gru_step(p, X, H).data
    for i in range(6):
        np.testing.assert_allclose(batched[i], gru_step(p, X[i], H[i]).data, rtol=0, atol=1e-15)


def test_gru_step_matches_unfused_composition(rng):
    store, p = layer(rng, 3, 4)
    x, h = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4))
    d = 4

    def unfused():
        W, U, b = p.W, p.U, p.b
        a = ad.add(ad.linear(x, W, b), ad.concat([ad.linear(h, ad.index(U, slice(0, 2 * d))), Tensor(np.zeros(d))], axis=0))
        z = ad.sigmoid(ad.index(a, slice(0, d)))
        r = ad.sigmoid(ad.index(a, slice(d, 2 * d)))
        n = ad.tanh(ad.add(ad.index(a, slice(2 * d, 3 * d)), ad.linear(ad.mul(r, h), ad.index(U, slice(2 * d, 3 * d)))))
        return ad.add(ad.mul(z, h), ad.mul(ad.sub(1.0, z), n))

    np.testing.assert_allclose(gru_step(p, x, h).data, unfused().data, rtol=1e-13)
    w = rng.normal(size=4)
    fused_grads, unfused_grads = {}, {}
    for fn, out in ((lambda: gru_step(p, x, h), fused_grads), (unfused, unfused_grads)):
        store.zero_grad()
        ad.backward(ad.sum(ad.mul(fn(), w)))
        out.update({k: v.grad.copy() for k, v in store.items()})
    for k in fused_grads:
        np.testing.assert_allclose(fused_grads[k], unfused_grads[k], rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_gru_gradients_including_inputs(seed):
    rng = np.random.default_rng(seed)
    store, p = layer(rng, 3, 4)
    store.add("x", rng.normal(size=(2, 3)))
    store.add("h", rng.normal(size=(2, 4)))
    w = rng.normal(size=(2, 4))

    def f():
        h1 = gru_step(p, store["x"], store["h"])
        return ad.sum(ad.mul(gru_step(p, store["x"], h1), w))

    assert ad.grad_check(f, store) < 1e-7


def test_stack_two_layers_feed_forward(rng):
    store = ParameterStore()
    layers = init_params(3, 4, 2, rng_seed=0, store=store)
    x = rng.normal(size=3)
    state = stack_step(layers, x, zero_state(layers))
    first = gru_step(layers[0], x, np.zeros(4)).data
    np.testing.assert_array_equal(state.h[0].data, first)
    np.testing.assert_array_equal(state.h[1].data, gru_step(layers[1], first, np.zeros(4)).data)
    assert store.names() == ["gru.0.W", "gru.0.U", "gru.0.b", "gru.1.W", "gru.1.U", "gru.1.b"]


def test_init_statistics_and_determinism():
    a = init_params(64, 128, 1, rng_seed=3)[0]
    b = init_params(64, 128, 1, rng_seed=3)[0]
    np.testing.assert_array_equal(a.W.data, b.W.data)
    assert np.all(a.b.data == 0)
    w_z = a.gate("z")[0]
    limit = math.sqrt(6.0 / (64 + 128))
    assert np.abs(w_z).max() < limit
    assert w_z.var() == pytest.approx(limit**2 / 3, rel=0.05)
    assert not np.array_equal(a.gate("z")[0], a.gate("r")[0])


def test_dimension_errors(rng):
    _, p = layer(rng, 3, 4)
    with pytest.raises(DimensionError):
        gru_step(p, np.zeros(2), np.zeros(4))
    with pytest.raises(DimensionError):
        gru_step(p, np.zeros((2, 3)), np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        init_params(3, 4, 0, rng_seed=0)
