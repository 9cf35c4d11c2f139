from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advhedge import autodiff as ad
from oracles import mlp_forward


def _scalar_grad(fn, x0):
    store = ad.ParamStore()
    store.add("x", x0)
    tape = ad.record(lambda t: fn(t.param(store, "x")))
    grads = ad.backward(tape, store)
    return float(np.asarray(tape.output.value)), grads.copy()


def test_square_value_and_derivative():
    value, grad = _scalar_grad(lambda x: x * x, 3.0)
    assert value == 9.0
    assert grad[0] == 6.0


def test_exp_at_zero():
    value, grad = _scalar_grad(lambda x: ad.exp(x), 0.0)
    assert value == 1.0 and grad[0] == 1.0


def test_constant_has_zero_gradient():
    store = ad.ParamStore()
    store.add("x", 2.0)
    tape = ad.Tape()
    tape.param(store, "x")
    tape.finalize(tape.constant(5.0) * 2.0)
    assert ad.backward(tape, store)[0] == 0.0


@pytest.mark.parametrize("fn,deriv,x", [
    (lambda x: ad.log(x), lambda x: 1 / x, 1.7),
    (lambda x: ad.sqrt(x), lambda x: 0.5 / np.sqrt(x), 2.3),
    (lambda x: ad.tanh(x), lambda x: 1 - np.tanh(x) ** 2, -0.4),
    (lambda x: ad.sigmoid(x), lambda x: np.exp(-x) / (1 + np.exp(-x)) ** 2, 0.9),
    (lambda x: ad.relu(x), lambda x: 1.0, 0.8),
    (lambda x: ad.absolute(x), lambda x: -1.0, -0.8),
    (lambda x: 1.0 / x, lambda x: -1 / x**2, 0.6),
    (lambda x: 2.0 - x, lambda x: -1.0, 0.6),
    (lambda x: ad.norm_cdf(x), lambda x: np.exp(-x * x / 2) / np.sqrt(2 * np.pi), 0.3),
])
def test_unary_derivatives(fn, deriv, x):
    _, grad = _scalar_grad(fn, x)
    assert grad[0] == pytest.approx(deriv(x), rel=1e-12)


def test_kink_conventions():
    assert _scalar_grad(lambda x: ad.relu(x), 0.0)[1][0] == 0.0
    assert _scalar_grad(lambda x: ad.absolute(x), 0.0)[1][0] == 0.0
    # ties in maximum send the adjoint to the first argument
    assert _scalar_grad(lambda x: ad.maximum(x, 1.0), 1.0)[1][0] == 1.0
    assert _scalar_grad(lambda x: ad.maximum(1.0, x), 1.0)[1][0] == 0.0


def test_log_of_negative_is_domain_error_with_node_index():
    store = ad.ParamStore()
    store.add("x", -1.0)
    tape = ad.Tape()
    x = tape.param(store, "x")
    with pytest.raises(ad.DomainError) as err:
        ad.log(x)
    # the index is the one the failing node would have occupied
    assert err.value.node_index == x.index + 1
    with pytest.raises(ad.DomainError):
        ad.sqrt(x)


def test_unsupported_primitives_raise():
    tape = ad.Tape()
    x = tape.constant(np.array([1.0, 2.0]))
    with pytest.raises(ad.UnsupportedPrimitiveError):
        x ** 2
    with pytest.raises(ad.UnsupportedPrimitiveError):
        np.sin(x)
    with pytest.raises(ad.UnsupportedPrimitiveError):
        np.linalg.norm(x)


def test_backward_requires_finalized_scalar_tape():
    tape = ad.Tape()
    tape.constant(1.0)
    with pytest.raises(ad.TapeUsageError):
        ad.backward(tape)
    with pytest.raises(ad.TapeUsageError):
        ad.Tape().finalize(ad.Tape().constant(np.ones(3)))


def test_backward_accumulates():
    store = ad.ParamStore()
    store.add("x", 3.0)
    tape = ad.record(lambda t: t.param(store, "x") * t.param(store, "x"))
    ad.backward(tape, store)
    ad.backward(tape, store)
    assert store.grads[0] == 12.0


def _mlp_store(rng, sizes):
    store = ad.ParamStore()
    for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
        store.add(f"w{k}", rng.normal(size=(i, o)) / np.sqrt(i))
        store.add(f"b{k}", rng.normal(size=o) * 0.1)
    return store


def _mlp_loss(store, x, tape=None, activation="tanh"):
    h = x
    layers = len(store.names()) // 2
    for k in range(layers):
        w = store.get(f"w{k}") if tape is None else tape.param(store, f"w{k}")
        b = store.get(f"b{k}") if tape is None else tape.param(store, f"b{k}")
        h = ad.matmul(h, w) + b
        if k < layers - 1:
            h = ad.tanh(h) if activation == "tanh" else ad.relu(h)
    return ad.vmean(ad.exp(-ad.reshape(h, (x.shape[0],))))


def test_mlp_forward_matches_straight_line():
    rng = np.random.default_rng(1)
    store = _mlp_store(rng, [3, 5, 1])
    x = rng.normal(size=(7, 3))
    tape = ad.Tape()
    h = ad.tanh(ad.matmul(x, tape.param(store, "w0")) + tape.param(store, "b0"))
    out = ad.matmul(h, tape.param(store, "w1")) + tape.param(store, "b1")
    expected = np.tanh(x @ store.get("w0") + store.get("b0")) @ store.get("w1") + store.get("b1")
    np.testing.assert_allclose(out.value, expected, rtol=0, atol=1e-15)


def test_relu_mlp_against_reference_forward():
    rng = np.random.default_rng(3)
    store = _mlp_store(rng, [3, 6, 6, 1])
    x = rng.normal(size=(11, 3))
    got = ad.reshape(
        ad.matmul(ad.relu(ad.matmul(ad.relu(ad.matmul(x, store.get("w0")) + store.get("b0")), store.get("w1"))
                          + store.get("b1")), store.get("w2")) + store.get("b2"), (11,))
    ref = mlp_forward(x, [store.get(f"w{k}") for k in range(3)], [store.get(f"b{k}") for k in range(3)])
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-14)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    store = _mlp_store(rng, [3, 8, 8, 1])
    x = rng.normal(size=(16, 3))
    tape = ad.Tape()
    tape.finalize(_mlp_loss(store, x, tape))
    g = ad.backward(tape, store).copy()
    h = 1e-5
    for i in range(len(store)):
        orig = store.params[i]
        store.params[i] = orig + h
        up = float(_mlp_loss(store, x))
        store.params[i] = orig - h
        down = float(_mlp_loss(store, x))
        store.params[i] = orig
        fd = (up - down) / (2 * h)
        assert abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-6) <= 1e-5, store.name_at(i)


def test_replay_reproduces_forward_values():
    rng = np.random.default_rng(4)
    store = _mlp_store(rng, [2, 4, 1])
    x = rng.normal(size=(5, 2))
    tape = ad.Tape()
    tape.finalize(_mlp_loss(store, x, tape))
    replayed = tape.replay()
    for a, b in zip(replayed, tape.values):
        np.testing.assert_array_equal(a, b)


def test_gradients_are_deterministic():
    rng = np.random.default_rng(5)
    store = _mlp_store(rng, [3, 4, 1])
    x = rng.normal(size=(9, 3))
    grads = []
    for _ in range(2):
        store.zero_grad()
        tape = ad.Tape()
        tape.finalize(_mlp_loss(store, x, tape))
        grads.append(ad.backward(tape, store).copy())
    assert grads[0].tobytes() == grads[1].tobytes()


def test_broadcast_and_structural_ops():
    store = ad.ParamStore()
    store.add("v", np.array([1.0, 2.0, 3.0]))
    store.add("s", 2.0)
    tape = ad.Tape()
    v, s = tape.param(store, "v"), tape.param(store, "s")
    stacked = ad.stack([v * s, v], axis=1)           # (3, 2)
    total = ad.vsum(stacked[:, 0]) + ad.vsum(ad.reshape(stacked, (6,)))
    tape.finalize(total)
    ad.backward(tape, store)
    # total = 2 s sum(v) + sum(v)
    np.testing.assert_allclose(store.grad("v"), np.full(3, 2 * 2.0 + 1.0))
    assert store.grad("s")[()] == pytest.approx(2 * 6.0)


def test_sgd_step_definition():
    store = ad.ParamStore()
    store.add("p", 1.0)
    store.grads[:] = 1.0
    ad.sgd_step(store, 0.1)
    assert store.params[0] == pytest.approx(0.9)


def test_zero_gradient_leaves_params():
    store = ad.ParamStore()
    store.add("p", np.array([1.0, -2.0]))
    before = store.params.copy()
    ad.sgd_step(store, 0.5)
    ad.adam_step(store, 0.5, ad.AdamState())
    np.testing.assert_array_equal(store.params, before)


def test_adam_quadratic_bowl_matches_independent_recursion():
    store = ad.ParamStore()
    store.add("p", 0.0)
    state = ad.AdamState()
    p, m, v = 0.0, 0.0, 0.0
    for t in range(1, 201):
        store.zero_grad()
        tape = ad.Tape()
        x = tape.param(store, "p")
        tape.finalize((x - 2.0) * (x - 2.0))
        ad.backward(tape, store)
        ad.adam_step(store, 0.1, state)
        g = 2 * (p - 2.0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert store.params[0] == pytest.approx(p, abs=1e-12)
    assert abs(store.params[0] - 2.0) < 1e-2


def test_non_finite_gradient_names_parameter():
    store = ad.ParamStore()
    store.add("layer.w", np.array([1.0, 2.0]))
    store.grads[1] = np.nan
    with pytest.raises(ad.TrainingError, match="layer.w"):
        ad.adam_step(store, 0.1, ad.AdamState())
    with pytest.raises(ad.TrainingError, match="layer.w"):
        ad.sgd_step(store, 0.1)


def test_clip_grad_norm():
    store = ad.ParamStore()
    store.add("p", np.array([3.0, 4.0]))
    store.grads[:] = [3.0, 4.0]
    norm = ad.clip_grad_norm(store, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(store.grads) == pytest.approx(1.0)


def test_param_store_registry():
    store = ad.ParamStore()
    store.add("a", np.zeros((2, 3)))
    store.add("b", np.ones(4))
    assert len(store) == 10
    assert store.names() == ["a", "b"]
    assert store.name_at(7) == "b"
    with pytest.raises(KeyError):
        store.add("a", 1.0)
    copy = store.copy()
    copy.set("b", np.full(4, 5.0))
    np.testing.assert_array_equal(store.get("b"), np.ones(4))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_product_rule_property(a, b):
    store = ad.ParamStore()
    store.add("a", a)
    store.add("b", b)
    tape = ad.Tape()
    x, y = tape.param(store, "a"), tape.param(store, "b")
    tape.finalize(x * y + ad.exp(x) - y)
    g = ad.backward(tape, store)
    assert g[0] == pytest.approx(b + np.exp(a))
    assert g[1] == pytest.approx(a - 1.0)
