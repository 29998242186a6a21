import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycle_el import autodiff as ad


def test_add_broadcast_grad():
    a = ad.Tensor(np.ones((3, 4)), requires_grad=True)
    b = ad.Tensor(np.ones((4,)), requires_grad=True)
    out = ad.sum_(ad.add(a, b))
    ad.backward(out)
    assert np.allclose(a.grad, np.ones((3, 4)))
    assert np.allclose(b.grad, np.full((4,), 3.0))


def test_matmul_requires_2d():
    a = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.AutodiffError):
        ad.matmul(a, a)


def test_shared_node_accumulates():
    a = ad.Tensor(np.array([[2.0]]), requires_grad=True)
    out = ad.sum_(ad.add(ad.mul(a, a), a))  # d/da (a^2 + a) = 2a + 1
    ad.backward(out)
    assert np.allclose(a.grad, [[5.0]])


def test_gather_rows_scatters_gradient():
    a = ad.Tensor(np.arange(6, dtype=float).reshape(3, 2), requires_grad=True)
    out = ad.sum_(ad.gather_rows(a, np.array([0, 0, 2])))
    ad.backward(out)
    assert np.allclose(a.grad, [[2, 2], [0, 0], [1, 1]])


def test_l2_normalize_zero_row():
    a = ad.Tensor(np.array([[3.0, 4.0], [0.0, 0.0]]), requires_grad=True)
    out = ad.l2_normalize_rows(a)
    assert np.allclose(out.values[0], [0.6, 0.8])
    assert np.allclose(out.values[1], 0.0)
    ad.backward(ad.sum_(out))
    assert np.allclose(a.grad[1], 0.0)  # zero rows get zero gradient


def test_logsumexp_rows_matches_scipy_style():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 5))
    out = ad.logsumexp_rows(ad.constant(x))
    ref = np.log(np.exp(x).sum(axis=1))
    assert np.allclose(out.values, ref)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=-50, max_value=50))
def test_logsumexp_shift_invariance(shift):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 6))
    base = ad.logsumexp_rows(ad.constant(x)).values
    shifted = ad.logsumexp_rows(ad.constant(x + shift)).values
    assert np.allclose(shifted, base + shift, atol=1e-9)


def test_nonfinite_loss_names_op():
    a = ad.Tensor(np.array([[-1.0]]), requires_grad=True)
    loss = ad.sum_(ad.log(a))
    with pytest.raises(ad.AutodiffError, match="log"):
        ad.backward(loss)


def test_grad_check_passes_on_simple_fn():
    rng = np.random.default_rng(3)
    a = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    report = ad.grad_check(lambda: ad.sum_(ad.mul(ad.tanh(a), a)), [a])
    assert report.passed
    assert report.max_rel_error < 1e-6


def test_grad_check_catches_wrong_gradient():
    a = ad.Tensor(np.array([[0.5, -0.3]]), requires_grad=True)

    def broken():
        out = ad.exp(a)
        out._backward = lambda g: ad._accum(a, g * 0.5)  # deliberately wrong
        return ad.sum_(out)

    report = ad.grad_check(broken, [a])
    assert not report.passed


def test_parameter_store_roundtrip():
    rng = np.random.default_rng(0)
    store = ad.ParameterStore()
    store.add("w", (4, 3), rng)
    store.add("b", (3,), rng, init="zeros")
    state = store.state_dict()
    other = ad.ParameterStore()
    other.add("w", (4, 3), np.random.default_rng(99))
    other.add("b", (3,), np.random.default_rng(99), init="zeros")
    other.load_state_dict(state)
    assert np.array_equal(other["w"].values, store["w"].values)


def test_adam_step_moves_against_gradient():
    rng = np.random.default_rng(0)
    store = ad.ParameterStore()
    store.add("w", (2, 2), rng)
    before = store["w"].values.copy()
    state = ad.AdamState.fresh(store)
    ad.adam_step(store, {"w": np.ones((2, 2))}, 0.1, state)
    assert np.all(store["w"].values < before)


def test_adam_shape_mismatch_raises():
    rng = np.random.default_rng(0)
    store = ad.ParameterStore()
    store.add("w", (2, 2), rng)
    state = ad.AdamState.fresh(store)
    with pytest.raises(ad.AutodiffError):
        ad.adam_step(store, {"w": np.ones((3, 3))}, 0.1, state)


def test_tensor_container_roundtrip():
    rng = np.random.default_rng(1)
    tensors = {"a.b": rng.normal(size=(3, 4)), "scalars": np.array(2.5),
               "vec": rng.normal(size=7)}
    buf = io.BytesIO()
    ad.write_tensors(buf, tensors)
    buf.seek(0)
    out = ad.read_tensors(buf)
    assert set(out) == set(tensors)
    for k in tensors:
        assert np.array_equal(out[k], tensors[k])


def test_tensor_container_rejects_bad_version():
    buf = io.BytesIO(bytes([99]) + b"\x00" * 10)
    with pytest.raises(ad.AutodiffError):
        ad.read_tensors(buf)


def test_elu_matches_definition():
    x = np.array([[-2.0, 0.0, 1.5]])
    out = ad.elu(ad.constant(x)).values
    ref = np.where(x > 0, x, np.exp(x) - 1.0)
    assert np.allclose(out, ref)


def test_leaky_relu_slope():
    x = np.array([[-10.0, 10.0]])
    out = ad.leaky_relu(ad.constant(x), 0.2).values
    assert np.allclose(out, [[-2.0, 10.0]])
