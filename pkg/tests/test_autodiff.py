"""Tape engine: backward passes against finite differences and
hand-rolled recomputations."""

import numpy as np
import pytest

from relground import autodiff as ad


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


def finite_diff(loss_fn, param, eps=1e-6):
    """Plain central differences on one parameter tensor."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        plus = loss_fn().item()
        flat[i] = keep - eps
        minus = loss_fn().item()
        flat[i] = keep
        grad[i] = (plus - minus) / (2 * eps)
    return out


def check_op(build, params, tol=1e-6):
    """Backward of a scalar graph vs finite differences on every param."""
    for p in params:
        p.grad = None
    loss = build()
    ad.backward(loss)
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = finite_diff(build, p)
        np.testing.assert_allclose(analytic, numeric, rtol=tol, atol=tol)


# -- basics ----------------------------------------------------------------

def test_constant_promotes_vector_to_row():
    t = ad.constant(np.array([1.0, 2.0, 3.0]))
    assert t.data.shape == (1, 3)


def test_tensor_requires_2d():
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_backward_needs_scalar():
    t = ad.constant(np.ones((2, 2)))
    with pytest.raises(ad.ShapeMismatch):
        ad.backward(t)


def test_relu_and_sigmoid_values():
    x = ad.constant(np.array([[-2.0, 0.0, 2.0]]))
    assert ad.relu(x).data.tolist() == [[0.0, 0.0, 2.0]]
    assert ad.sigmoid(ad.constant(np.array([[0.0]]))).data[0, 0] == 0.5


def test_softmax_uniform_on_equal_scores():
    row = ad.softmax(ad.constant(np.zeros((1, 3))))
    np.testing.assert_allclose(row.data, np.full((1, 3), 1 / 3))


@pytest.mark.parametrize("scale", [1.0, 1e3])
def test_softmax_rows_normalized_at_any_scale(scale):
    rng = rng_for(0)
    x = ad.constant(rng.normal(size=(7, 5)) * scale)
    out = ad.softmax_rows(x).data
    assert np.all(out >= 0.0) and np.all(out <= 1.0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_shift_invariance():
    rng = rng_for(1)
    x = rng.normal(size=(1, 6))
    a = ad.softmax(ad.constant(x)).data
    b = ad.softmax(ad.constant(x + 100.0)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- backward passes vs finite differences ---------------------------------

def test_affine_matmul_backward():
    rng = rng_for(2)
    x = ad.Tensor(rng.normal(size=(4, 3)))
    W = ad.Tensor(rng.normal(size=(3, 5)))
    b = ad.Tensor(rng.normal(size=(1, 5)))
    check_op(lambda: ad.mean_rows(ad.reshape(ad.affine(x, W, b), (20, 1))),
             [x, W, b])


def test_mul_add_scale_rows_backward():
    rng = rng_for(3)
    a = ad.Tensor(rng.normal(size=(3, 4)))
    b = ad.Tensor(rng.normal(size=(3, 4)))
    v = ad.Tensor(rng.normal(size=(1, 3)))

    def build():
        return ad.mean_rows(ad.reshape(
            ad.scale_rows(ad.add(ad.mul(a, b), b), v), (12, 1)))

    check_op(build, [a, b, v])


def test_concat_slice_select_tile_backward():
    rng = rng_for(4)
    x = ad.Tensor(rng.normal(size=(3, 4)))
    y = ad.Tensor(rng.normal(size=(3, 2)))

    def build():
        joined = ad.concat_cols(x, y)         # (3, 6)
        stacked = ad.concat_rows([joined, joined])  # (6, 6)
        picked = ad.select_rows(stacked, [0, 0, 5, 2])  # repeats accumulate
        window = ad.slice_cols(picked, 1, 4)
        tiled = ad.tile_rows(ad.select_rows(window, [1]), 4)
        return ad.mean_rows(ad.reshape(ad.add(window, tiled), (12, 1)))

    check_op(build, [x, y])


def test_activations_backward():
    rng = rng_for(5)
    x = ad.Tensor(rng.normal(size=(4, 4)))
    for kind in ("tanh", "sigmoid"):
        check_op(lambda k=kind: ad.mean_rows(ad.reshape(
            ad.activate(x, k), (16, 1))), [x])


def test_relu_backward_away_from_kink():
    x = ad.Tensor(np.array([[-1.5, -0.5, 0.5, 1.5]]))
    check_op(lambda: ad.mean_rows(ad.reshape(ad.relu(x), (4, 1))), [x])


def test_softmax_rows_backward():
    rng = rng_for(6)
    x = ad.Tensor(rng.normal(size=(3, 5)))
    w = ad.constant(rng.normal(size=(3, 5)))

    def build():
        return ad.mean_rows(ad.reshape(
            ad.mul(ad.softmax_rows(x), w), (15, 1)))

    check_op(build, [x])


def test_pool_regions_matches_manual_blocks():
    rng = rng_for(7)
    weights = ad.Tensor(np.abs(rng.normal(size=(2, 3))))
    feats = ad.Tensor(rng.normal(size=(6, 4)))
    pooled = ad.pool_regions(weights, feats, 3)
    expect = np.stack([weights.data[i] @ feats.data[3 * i:3 * i + 3]
                       for i in range(2)])
    np.testing.assert_allclose(pooled.data, expect, atol=1e-12)
    check_op(lambda: ad.mean_rows(ad.reshape(
        ad.pool_regions(weights, feats, 3), (8, 1))), [weights, feats])


def test_cross_entropy_rows_matches_manual():
    rng = rng_for(8)
    logits = ad.Tensor(rng.normal(size=(4, 6)))
    targets = [1, 0, 5, 2]
    loss = ad.cross_entropy_rows(logits, targets)
    z = logits.data
    logp = z - np.log(np.exp(z - z.max(axis=1, keepdims=True)).sum(axis=1,
                      keepdims=True)) - z.max(axis=1, keepdims=True)
    expect = -np.mean([logp[i, t] for i, t in enumerate(targets)])
    np.testing.assert_allclose(loss.item(), expect, atol=1e-12)
    check_op(lambda: ad.cross_entropy_rows(logits, targets), [logits])


def test_cross_entropy_strictly_positive():
    # 30 keeps the correct-class residual e^-30 representable in float64
    logits = ad.Tensor(np.array([[30.0, 0.0], [0.0, 30.0]]))
    loss = ad.cross_entropy_rows(logits, [0, 1]).item()
    assert 0.0 < loss < 1e-12


def test_dropout_inverted_scaling_and_identity():
    x = ad.Tensor(np.ones((100, 10)))
    assert ad.dropout(x, 0.0, rng_for(0)) is x
    out = ad.dropout(x, 0.5, rng_for(0))
    kept = out.data[out.data != 0.0]
    np.testing.assert_allclose(kept, 2.0)
    assert 0.3 < (out.data != 0).mean() < 0.7


def test_mean_rows_backward():
    rng = rng_for(9)
    x = ad.Tensor(rng.normal(size=(5, 1)))
    check_op(lambda: ad.mean_rows(x), [x])


# -- lstm cell -------------------------------------------------------------

def test_lstm_step_matches_hand_rolled():
    rng = rng_for(10)
    din, k = 3, 4
    x = ad.constant(rng.normal(size=(1, din)))
    h = ad.constant(rng.normal(size=(1, k)))
    c = ad.constant(rng.normal(size=(1, k)))
    Wx = ad.Tensor(rng.normal(size=(din, 4 * k)))
    Wh = ad.Tensor(rng.normal(size=(k, 4 * k)))
    b = ad.Tensor(rng.normal(size=(1, 4 * k)))
    h2, c2 = ad.lstm_step(x, h, c, Wx, Wh, b)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    pre = x.data @ Wx.data + h.data @ Wh.data + b.data
    i, f, g, o = (pre[:, j * k:(j + 1) * k] for j in range(4))
    c_ref = sig(f) * c.data + sig(i) * np.tanh(g)
    h_ref = sig(o) * np.tanh(c_ref)
    np.testing.assert_allclose(c2.data, c_ref, atol=1e-12)
    np.testing.assert_allclose(h2.data, h_ref, atol=1e-12)


def test_lstm_gate_bias_fills_forget_block():
    b = ad.lstm_gate_bias(3)
    np.testing.assert_array_equal(
        b, [[0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0]])


def test_lstm_step_backward():
    rng = rng_for(11)
    k = 3
    x = ad.Tensor(rng.normal(size=(1, 2)))
    Wx = ad.Tensor(rng.normal(size=(2, 4 * k)))
    Wh = ad.Tensor(rng.normal(size=(k, 4 * k)))
    b = ad.Tensor(rng.normal(size=(1, 4 * k)))

    def build():
        h = ad.constant(np.zeros((1, k)))
        c = ad.constant(np.zeros((1, k)))
        for _ in range(3):
            h, c = ad.lstm_step(x, h, c, Wx, Wh, b)
        return ad.mean_rows(ad.reshape(h, (k, 1)))

    check_op(build, [x, Wx, Wh, b])


# -- parameter store / adam ------------------------------------------------

def test_store_create_and_uniform_init_bounds():
    store = ad.ParameterStore()
    W = store.create("lin.W", (50, 20), rng_for(12))
    bound = 1.0 / np.sqrt(50)
    assert np.all(np.abs(W.data) <= bound)
    assert store["lin.W"] is W
    with pytest.raises(KeyError):
        store["missing"]
    with pytest.raises(ValueError):
        store.create("lin.W", (1, 1))


def test_clip_grad_norm_rescales_to_max():
    store = ad.ParameterStore()
    t = store.create("w", (1, 4))
    t.grad = np.array([[3.0, 4.0, 0.0, 0.0]])
    store.clip_grad_norm(2.5)
    np.testing.assert_allclose(store.grad_norm(), 2.5)
    t.grad = np.array([[0.3, 0.4, 0.0, 0.0]])
    store.clip_grad_norm(2.5)  # already inside the ball: untouched
    np.testing.assert_allclose(t.grad, [[0.3, 0.4, 0.0, 0.0]])


def test_load_arrays_strict_errors():
    store = ad.ParameterStore()
    store.create("w", (2, 2))
    with pytest.raises(KeyError):
        store.load_arrays({}, strict=True)
    with pytest.raises(KeyError):
        store.load_arrays({"w": np.zeros((2, 2)), "extra": np.zeros((1, 1))},
                          strict=True)
    with pytest.raises(ad.ShapeMismatch):
        store.load_arrays({"w": np.zeros((3, 2))})


def test_adam_first_step_magnitude_is_lr():
    store = ad.ParameterStore()
    t = store.create("w", (1, 3))
    t.data = np.array([[1.0, -2.0, 0.5]])
    t.grad = np.array([[0.3, -0.7, 2.0]])
    state = ad.AdamState(lr=1e-2)
    before = t.data.copy()
    ad.adam_step(store, state)
    step = t.data - before
    np.testing.assert_allclose(step, -1e-2 * np.sign(t.grad), rtol=1e-6)


def test_adam_zero_grad_decays_moments_only():
    store = ad.ParameterStore()
    t = store.create("w", (1, 2))
    t.data = np.array([[1.0, 2.0]])
    t.grad = np.zeros((1, 2))
    ad.adam_step(store, ad.AdamState())
    np.testing.assert_array_equal(t.data, [[1.0, 2.0]])


def test_adam_rejects_non_finite_gradient():
    store = ad.ParameterStore()
    t = store.create("w", (1, 1))
    t.grad = np.array([[np.nan]])
    state = ad.AdamState()
    with pytest.raises(FloatingPointError):
        ad.adam_step(store, state)
    assert state.t == 0  # rejected before the step counter moved


def test_adam_descends_quadratic():
    store = ad.ParameterStore()
    t = store.create("theta", (1, 1))
    t.data = np.array([[1.0]])
    state = ad.AdamState(lr=0.1)
    values = []
    for _ in range(3):
        values.append(t.data[0, 0] ** 2)
        t.grad = 2.0 * t.data
        ad.adam_step(store, state)
    values.append(t.data[0, 0] ** 2)
    assert all(b < a for a, b in zip(values, values[1:]))


# -- grad_check ------------------------------------------------------------

def test_grad_check_linear_is_exact():
    store = ad.ParameterStore()
    theta = store.create("theta", (1, 4), rng_for(13))
    v = ad.constant(np.array([[0.3], [-1.2], [2.0], [0.7]]).T)

    def loss_fn():
        return ad.mean_rows(ad.reshape(ad.mul(theta, v), (4, 1)))

    assert ad.grad_check(loss_fn, store) < 1e-10


def test_grad_check_quadratic():
    store = ad.ParameterStore()
    theta = store.create("theta", (1, 3), rng_for(14))

    def loss_fn():
        return ad.mean_rows(ad.reshape(ad.mul(theta, theta), (3, 1)))

    assert ad.grad_check(loss_fn, store, eps=1e-5) < 1e-8


def test_grad_check_rejects_nondeterministic_loss():
    store = ad.ParameterStore()
    store.create("theta", (1, 2))
    rng = rng_for(15)

    def loss_fn():
        return ad.constant(np.array([[rng.normal()]]))

    with pytest.raises(RuntimeError):
        ad.grad_check(loss_fn, store)


def test_grad_check_catches_wrong_gradient():
    store = ad.ParameterStore()
    theta = store.create("theta", (1, 2), rng_for(16))

    def loss_fn():
        # correct forward, sabotaged backward
        out = ad.mean_rows(ad.reshape(ad.mul(theta, theta), (2, 1)))
        real = out._backward

        def wrong(g):
            real(2.0 * g)
        out._backward = wrong
        return out

    assert ad.grad_check(loss_fn, store) > 0.1


def test_forward_determinism():
    rng = rng_for(17)
    x = ad.Tensor(rng.normal(size=(3, 3)))
    a = ad.softmax_rows(ad.tanh(x)).data
    b = ad.softmax_rows(ad.tanh(x)).data
    np.testing.assert_array_equal(a, b)
