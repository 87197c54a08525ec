"""Tests for flowmix.model.autodiff"""

import math

import numpy as np
import pytest

from flowmix.exceptions import ContractViolation, DivergedError
from flowmix.model import autodiff as ad
from flowmix.model.autodiff import Node, ParamSet


def _numeric_grad(fn, node: Node, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of ``node.value``."""
    grad = np.zeros(node.shape)
    flat = node.value.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = fn()
        flat[i] = saved - h
        down = fn()
        flat[i] = saved
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def _check_gradient(build, params: ParamSet):
    """Compare reverse-mode gradients of ``build()`` with finite differences."""
    params.zero_grad()
    ad.backward(build())
    for name, node in params.items():
        analytic = node.grad.copy()
        numeric = _numeric_grad(lambda: build().item(), node)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7, err_msg=name)


@pytest.fixture
def params64(np_rng) -> ParamSet:
    params = ParamSet(dtype=np.float64)
    params.add("a", np_rng.normal(size=(3, 4)))
    params.add("b", np_rng.normal(size=(4,)))
    params.add("pos", np_rng.uniform(0.5, 2.0, size=(3, 4)))
    return params


# ── forward ops ───────────────────────────────────────────────────────

class TestForwardOps:

    def test_softmax_symmetric(self):
        np.testing.assert_allclose(ad.softmax(np.zeros(2)).value, [0.5, 0.5])

    def test_log_sum_exp_no_overflow(self):
        out = ad.log_sum_exp(np.array([1000.0, 1000.0])).item()
        assert out == pytest.approx(1000.0 + math.log(2.0), abs=1e-12)

    def test_log_sum_exp_keepdims(self):
        out = ad.log_sum_exp(np.zeros((3, 4)), keepdims=True)
        assert out.shape == (3, 1)

    def test_matmul_matches_triple_loop(self, np_rng):
        a = np_rng.normal(size=(2, 3))
        b = np_rng.normal(size=(3, 2))
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(ad.matmul(a, b).value, expected, atol=1e-12)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(ContractViolation):
            ad.add(np.zeros((2, 3)), np.zeros((4,)))

    def test_add_broadcasts_over_batch(self):
        out = ad.add(np.zeros((4, 3)), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out.value, np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_relu_and_softplus(self):
        x = np.array([-2.0, 0.5])
        np.testing.assert_allclose(ad.relu(x).value, [0.0, 0.5])
        np.testing.assert_allclose(ad.softplus(x).value, np.log1p(np.exp(x)))

    def test_ndarray_on_the_left(self):
        node = Node(np.array([1.0, 2.0]))
        out = np.array([3.0, 3.0]) - node
        assert isinstance(out, Node)
        np.testing.assert_allclose(out.value, [2.0, 1.0])

    @pytest.mark.filterwarnings("error::DeprecationWarning")
    @pytest.mark.parametrize("value", [np.array(0.75), np.array([0.75]), np.array([[0.75]])])
    def test_item_of_single_element(self, value):
        assert Node(value).item() == 0.75

    def test_item_of_many_elements(self):
        with pytest.raises(ValueError):
            Node(np.zeros(2)).item()


# ── backward ──────────────────────────────────────────────────────────

class TestBackward:

    def test_sum_of_squares(self):
        params = ParamSet(dtype=np.float64)
        x = params.add("x", [1.0, 2.0, 3.0])
        ad.backward(ad.sum(ad.square(x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_constant_loss_gives_zero_gradients(self):
        params = ParamSet(dtype=np.float64)
        x = params.add("x", [1.0, 2.0])
        ad.backward(ad.sum(ad.constant(np.array([5.0, 6.0]))))
        np.testing.assert_allclose(x.grad, [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        params = ParamSet(dtype=np.float64)
        x = params.add("x", [1.0, 2.0])
        with pytest.raises(ContractViolation):
            ad.backward(ad.square(x))

    def test_repeated_backward_accumulates(self):
        params = ParamSet(dtype=np.float64)
        x = params.add("x", [1.0, -1.0])
        ad.backward(ad.sum(x * 3.0))
        ad.backward(ad.sum(x * 3.0))
        np.testing.assert_allclose(x.grad, [6.0, 6.0])

    def test_shared_subexpression(self):
        params = ParamSet(dtype=np.float64)
        x = params.add("x", [2.0])
        y = x * x
        ad.backward(ad.sum(y + y))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_detach_blocks_gradient(self):
        params = ParamSet(dtype=np.float64)
        x = params.add("x", [2.0])
        ad.backward(ad.sum(x * ad.detach(x)))
        np.testing.assert_allclose(x.grad, [2.0])

    def test_two_layer_mlp_finite_differences(self, np_rng):
        params = ParamSet(dtype=np.float64)
        params.add("w1", np_rng.normal(size=(3, 5)) * 0.5)
        params.add("b1", np_rng.normal(size=(5,)) * 0.1)
        params.add("w2", np_rng.normal(size=(5, 2)) * 0.5)
        params.add("b2", np_rng.normal(size=(2,)) * 0.1)
        x = np_rng.normal(size=(4, 3))
        target = np_rng.normal(size=(4, 2))

        def build():
            h = ad.tanh(x @ params["w1"] + params["b1"])
            out = h @ params["w2"] + params["b2"]
            return ad.mean(ad.square(out - target))

        _check_gradient(build, params)


class TestCompositeGradients:
    """Finite-difference checks for every op on randomized inputs."""

    @pytest.mark.parametrize("op", [
        lambda p: ad.sum(ad.exp(p["a"])),
        lambda p: ad.sum(ad.log(p["pos"])),
        lambda p: ad.sum(ad.tanh(p["a"]) * p["b"]),
        lambda p: ad.sum(ad.softplus(p["a"])),
        lambda p: ad.sum(ad.square(ad.softmax(p["a"]))),
        lambda p: ad.sum(ad.log_sum_exp(p["a"] * 2.0)),
        lambda p: ad.sum(ad.log_sum_exp(p["a"], keepdims=True) * p["pos"]),
        lambda p: ad.mean(ad.square(p["a"] - p["b"])),
        lambda p: ad.sum(ad.mean(p["a"] * p["pos"], axis=0)),
        lambda p: ad.sum(ad.sum(p["a"], axis=1, keepdims=True) * p["pos"]),
        lambda p: ad.sum(ad.square(-p["a"] + 1.0)),
        lambda p: ad.sum(ad.square(ad.reshape(p["a"], (4, 3)) @ p["pos"])),
        lambda p: ad.sum(ad.square(p["a"][:, 1:3])),
        lambda p: ad.sum(ad.square(p["a"][[0, 0, 2]])),
        lambda p: ad.sum(ad.promote(p["b"]) * 3.0),
    ])
    def test_matches_finite_differences(self, params64, op):
        _check_gradient(lambda: op(params64), params64)

    def test_relu_away_from_kink(self):
        params = ParamSet(dtype=np.float64)
        params.add("x", [-1.5, -0.2, 0.3, 2.0])
        _check_gradient(lambda: ad.sum(ad.square(ad.relu(params["x"]))), params)


# ── adam_step ─────────────────────────────────────────────────────────

class TestAdamStep:

    def test_zero_gradient_leaves_parameters(self):
        params = ParamSet(dtype=np.float64)
        w = params.add("w", [1.0, -2.0])
        ad.adam_step(params)
        np.testing.assert_array_equal(w.value, [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        params = ParamSet(dtype=np.float64)
        w = params.add("w", [0.0])
        ad.backward(ad.sum(w))
        ad.adam_step(params, lr=0.01)
        assert w.value[0] == pytest.approx(-0.01, rel=1e-6)

    def test_quadratic_descent(self):
        params = ParamSet(dtype=np.float64)
        w = params.add("w", [1.0])
        previous = 1.0
        for _ in range(10):
            ad.backward(ad.sum(ad.square(w)))
            ad.adam_step(params, lr=0.1)
            assert abs(w.value[0]) < previous
            previous = abs(w.value[0])

    def test_step_counter_and_moments(self):
        params = ParamSet()
        w = params.add("w", np.ones((2, 3)))
        for expected in (1, 2, 3):
            ad.backward(ad.sum(w))
            ad.adam_step(params)
            assert params.step == expected
        first, second = params.moments("w")
        assert first.shape == w.shape
        assert second.shape == w.shape

    def test_gradients_zeroed_after_step(self):
        params = ParamSet(dtype=np.float64)
        w = params.add("w", [1.0])
        ad.backward(ad.sum(w))
        ad.adam_step(params)
        assert w.grad.tolist() == [0.0]

    def test_float32_storage(self):
        params = ParamSet()
        w = params.add("w", [1.0])
        ad.backward(ad.sum(w))
        ad.adam_step(params)
        assert w.value.dtype == np.float32

    def test_nan_gradient_aborts(self):
        params = ParamSet(dtype=np.float64)
        w = params.add("w", [1.0, 2.0])
        w.grad[0] = np.nan
        with pytest.raises(DivergedError):
            ad.adam_step(params)
        np.testing.assert_array_equal(w.value, [1.0, 2.0])
        assert params.step == 0


class TestParamSet:

    def test_duplicate_name_rejected(self):
        params = ParamSet()
        params.add("w", [1.0])
        with pytest.raises(ContractViolation):
            params.add("w", [2.0])

    def test_assign_checks_shape(self):
        params = ParamSet()
        params.add("w", [1.0, 2.0])
        with pytest.raises(ContractViolation):
            params.assign("w", [1.0])

    def test_arrays_are_copies(self):
        params = ParamSet()
        w = params.add("w", [1.0])
        arrays = params.arrays()
        arrays["w"][0] = 9.0
        assert w.value[0] == 1.0
