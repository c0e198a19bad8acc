import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slpt.diffcore import (
    AdamConfig, ContractViolation, NumericalError, ParamStore, Tensor,
    backward, gradcheck, precision,
)
from slpt.diffcore import ops
from slpt.diffcore.gradcheck import check_registered_op
from slpt.diffcore.ops import REGISTRY


class TestBackward:
    def test_sum_gradient_is_ones(self):
        theta = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(ops.sum_(theta))
        np.testing.assert_array_equal(theta.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares_gradient(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.sum_(ops.square(theta)))
        np.testing.assert_array_equal(theta.grad, [2.0, 4.0])

    def test_shared_subexpression_accumulates(self):
        # y = h + h with h shared must equal y = 2h built without sharing.
        x1 = Tensor([1.5, -0.5], requires_grad=True)
        h = ops.mul(x1, x1)
        backward(ops.sum_(ops.add(h, h)))
        x2 = Tensor([1.5, -0.5], requires_grad=True)
        backward(ops.sum_(ops.scale(ops.mul(x2, x2), 2.0)))
        np.testing.assert_allclose(x1.grad, x2.grad, rtol=0, atol=0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractViolation):
            backward(ops.square(x))

    def test_tape_cleared_after_backward(self):
        x = Tensor([1.0], requires_grad=True)
        y = ops.sum_(ops.square(x))
        backward(y)
        with pytest.raises(ContractViolation):
            backward(y)

    def test_nonfinite_forward_is_hard_error(self):
        with pytest.raises(NumericalError, match="log"):
            ops.log(Tensor([-1.0]))

    def test_gradient_flows_through_multiple_paths(self):
        x = Tensor([2.0], requires_grad=True)
        y = ops.add(ops.square(x), ops.scale(x, 3.0))  # x^2 + 3x
        backward(ops.sum_(y))
        np.testing.assert_allclose(x.grad, [7.0])


class TestGradcheck:
    def test_bilinear_product_is_exact(self):
        x = Tensor([2.0], requires_grad=True)
        y = Tensor([3.0], requires_grad=True)
        errs = gradcheck(lambda a, b: ops.sum_(ops.mul(a, b)), [x, y], h=1e-5)
        assert max(errs) < 1e-9

    def test_exp_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        errs = gradcheck(lambda a: ops.sum_(ops.exp(a)), [x], h=1e-5)
        assert max(errs) < 1e-9
        # analytic derivative of exp at 0 is exactly 1
        x2 = Tensor([0.0], requires_grad=True)
        backward(ops.sum_(ops.exp(x2)))
        np.testing.assert_allclose(x2.grad, [1.0])

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_registered_op(self, name):
        assert check_registered_op(name, seed=0) < 1e-4

    def test_rejects_nondeterministic_target(self):
        rng = np.random.default_rng(0)
        x = Tensor([1.0], requires_grad=True)

        def noisy(a):
            return ops.sum_(ops.mul(a, Tensor(rng.standard_normal(1))))

        with pytest.raises(ContractViolation):
            gradcheck(noisy, [x])


class TestDeterminism:
    def test_ops_bit_identical_across_runs(self):
        def run():
            rng = np.random.default_rng(42)
            x = Tensor(rng.standard_normal((8, 5)), requires_grad=True)
            w = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
            y = ops.sum_(ops.tanh(ops.matmul(x, w)))
            backward(y)
            return y.data.copy(), x.grad.copy(), w.grad.copy()

        a, b = run(), run()
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_precision_switch(self):
        with precision(np.float32):
            assert Tensor([1.0]).dtype == np.float32
        assert Tensor([1.0]).dtype == np.float64


class TestAdam:
    def test_first_step_magnitude(self):
        # Hand-computed: m_hat = g, v_hat = g^2 on step 1, so the update is
        # -lr * g / (|g| + eps) ~ -lr for g = 1.
        store = ParamStore()
        p = store.create("w", np.array([0.5]))
        p.grad = np.array([1.0])
        store.adam_step(AdamConfig(lr=1e-3, eps=1e-8))
        delta = p.data[0] - 0.5
        assert abs(delta + 1e-3) < 1e-9

    def test_zero_gradient_leaves_parameters(self):
        store = ParamStore()
        p = store.create("w", np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        store.adam_step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_constant_gradient_steps_match_within_1pct(self):
        # With constant g, bias correction keeps m_hat = g and v_hat = g^2
        # at every step, so consecutive updates have equal magnitude.
        store = ParamStore()
        p = store.create("w", np.array([0.0]))
        p.grad = np.array([0.7])
        store.adam_step()
        d1 = abs(p.data[0])
        prev = p.data[0]
        p.grad = np.array([0.7])
        store.adam_step()
        d2 = abs(p.data[0] - prev)
        assert abs(d1 - d2) / d1 < 0.01

    def test_missing_gradient_is_contract_violation(self):
        store = ParamStore()
        store.create("w", np.array([1.0]))
        with pytest.raises(ContractViolation):
            store.adam_step()

    def test_gradients_zeroed_and_step_incremented(self):
        store = ParamStore()
        p = store.create("w", np.array([1.0]))
        p.grad = np.array([0.3])
        store.adam_step()
        assert p.grad is None
        assert store.params["w"].t == 1

    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.create("w", np.array([1.0]))
        with pytest.raises(ContractViolation):
            store.create("w", np.array([2.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gradcheck_random_mlp(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)) * 0.7, requires_grad=True)
    b = Tensor(rng.standard_normal(2) * 0.3, requires_grad=True)

    def fn(xx, ww, bb):
        return ops.mean(ops.square(ops.tanh(ops.linear(xx, ww, bb))))

    assert max(gradcheck(fn, [x, w, b])) < 1e-6
