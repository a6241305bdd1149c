"""Reverse-mode engine: every op checked against central finite differences."""

import numpy as np
import pytest

from videosg.autodiff import Tensor, backward, concat, no_grad, stack


def fd_check(fn, arrays, h=1e-6, tol=1e-6, seed=0):
    """Compare analytic gradients of scalar fn(*tensors) to central FD."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    backward(loss)
    for pos, (t, a) in enumerate(zip(tensors, arrays)):
        assert t.grad is not None, "missing gradient"
        assert t.grad.shape == a.shape
        # probe a handful of coordinates per input
        flat = a.ravel()
        idxs = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in idxs:
            ap = a.copy().ravel()
            am = a.copy().ravel()
            ap[i] += h
            am[i] -= h
            args_p = [x.copy() for x in arrays]
            args_m = [x.copy() for x in arrays]
            args_p[pos] = ap.reshape(a.shape)
            args_m[pos] = am.reshape(a.shape)
            with no_grad():
                fp = fn(*[Tensor(x) for x in args_p]).item()
                fm = fn(*[Tensor(x) for x in args_m]).item()
            num = (fp - fm) / (2 * h)
            ana = t.grad.ravel()[i]
            scale = max(1.0, abs(num), abs(ana))
            assert abs(num - ana) / scale < tol, f"grad mismatch at {i}: {ana} vs {num}"


class TestBasics:
    def test_wraps_to_float64(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,)
        assert not t.requires_grad

    def test_item_requires_scalar(self):
        assert Tensor(2.5).item() == 2.5
        with pytest.raises(TypeError):
            Tensor([1.0, 2.0]).item()

    def test_backward_requires_scalar(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            backward(t * 2.0)

    def test_second_backward_raises(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        loss = (t * t).sum()
        backward(loss)
        with pytest.raises(RuntimeError):
            backward(loss)

    def test_detach_cuts_graph(self):
        t = Tensor([3.0], requires_grad=True)
        loss = (t.detach() * t).sum()
        backward(loss)
        np.testing.assert_allclose(t.grad, [3.0])

    def test_no_grad_blocks_taping(self):
        t = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = t * 2.0
        assert not out.requires_grad

    def test_grad_accumulates_over_reuse(self):
        t = Tensor([2.0], requires_grad=True)
        loss = (t * 3.0 + t * 4.0).sum()
        backward(loss)
        np.testing.assert_allclose(t.grad, [7.0])


class TestArithmeticGrads:
    def test_add_mul_sub_div(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4)) + 3.0  # keep divisor away from 0
        fd_check(lambda x, y: ((x + y) * (x - y) / y).sum(), [a, b])

    def test_broadcasting(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,))
        c = rng.normal(size=(3, 1))
        fd_check(lambda x, y, z: ((x + y) * z).sum(), [a, b, c])

    def test_scalar_operands(self):
        a = np.array([[1.0, -2.0], [0.5, 3.0]])
        fd_check(lambda x: (2.0 * x + 1.0 - x / 4.0).sum(), [a])

    def test_power(self):
        a = np.abs(np.random.default_rng(3).normal(size=(5,))) + 0.5
        fd_check(lambda x: x.power(3.0).sum(), [a])
        fd_check(lambda x: x.power(0.5).sum(), [a], tol=1e-5)

    def test_neg(self):
        a = np.array([1.0, -2.0])
        t = Tensor(a, requires_grad=True)
        backward((-t).sum())
        np.testing.assert_allclose(t.grad, [-1.0, -1.0])


class TestMatmul:
    def test_plain(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 5))
        b = rng.normal(size=(5, 2))
        fd_check(lambda x, y: (x @ y).sum(), [a, b])

    def test_batched_with_broadcast(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 6))  # broadcast across the batch dim
        fd_check(lambda x, y: (x @ y).sum(), [a, b])

    def test_values(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose((a @ b).data, a.data)


class TestNonlinearities:
    def test_exp_log(self):
        a = np.abs(np.random.default_rng(6).normal(size=(4,))) + 0.5
        fd_check(lambda x: (x.exp() + x.log()).sum(), [a])

    def test_relu_away_from_kink(self):
        a = np.array([1.0, -1.0, 2.0, -2.0, 0.5])
        fd_check(lambda x: x.relu().sum(), [a])
        t = Tensor(a, requires_grad=True)
        backward(t.relu().sum())
        np.testing.assert_allclose(t.grad, [1.0, 0.0, 1.0, 0.0, 1.0])

    def test_sigmoid_tanh(self):
        a = np.random.default_rng(7).normal(size=(6,))
        fd_check(lambda x: (x.sigmoid() * x.tanh()).sum(), [a])

    def test_sigmoid_values(self):
        t = Tensor([0.0])
        np.testing.assert_allclose(t.sigmoid().data, [0.5])


class TestSoftmax:
    def test_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(8).normal(size=(3, 5)) * 10)
        s = x.softmax(axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        x = np.random.default_rng(9).normal(size=(2, 4))
        a = Tensor(x).softmax().data
        b = Tensor(x + 100.0).softmax().data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self):
        x = np.random.default_rng(10).normal(size=(3, 4))
        ls = Tensor(x).log_softmax().data
        np.testing.assert_allclose(ls, np.log(Tensor(x).softmax().data), atol=1e-12)

    def test_softmax_grad(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        fd_check(lambda x: (x.softmax(axis=-1) * Tensor(w)).sum(), [a])

    def test_log_softmax_grad(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=(2, 5))
        w = rng.normal(size=(2, 5))
        fd_check(lambda x: (x.log_softmax(axis=-1) * Tensor(w)).sum(), [a])

    def test_extreme_logits_stay_finite(self):
        x = Tensor(np.array([[1000.0, -1000.0, 0.0]]), requires_grad=True)
        out = x.log_softmax()
        assert np.all(np.isfinite(out.data))
        backward(out.sum())
        assert np.all(np.isfinite(x.grad))


class TestReductions:
    def test_sum_axis_keepdims(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(2, 3, 4))
        fd_check(lambda x: x.sum(axis=1).sum(), [a])
        t = Tensor(a)
        assert t.sum(axis=1, keepdims=True).shape == (2, 1, 4)
        assert t.sum().shape == ()

    def test_mean(self):
        rng = np.random.default_rng(14)
        a = rng.normal(size=(3, 4))
        fd_check(lambda x: x.mean(), [a])
        fd_check(lambda x: x.mean(axis=0).sum(), [a])
        t = Tensor(a, requires_grad=True)
        backward(t.mean())
        np.testing.assert_allclose(t.grad, np.full((3, 4), 1.0 / 12.0))


class TestShapeOps:
    def test_reshape(self):
        rng = np.random.default_rng(15)
        a = rng.normal(size=(2, 6))
        w = rng.normal(size=(3, 4))
        fd_check(lambda x: (x.reshape(3, 4) * Tensor(w)).sum(), [a])

    def test_transpose(self):
        rng = np.random.default_rng(16)
        a = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(4, 2, 3))
        fd_check(lambda x: (x.transpose((2, 0, 1)) * Tensor(w)).sum(), [a])

    def test_narrow(self):
        rng = np.random.default_rng(17)
        a = rng.normal(size=(4, 6))
        fd_check(lambda x: x.narrow(1, 2, 3).sum(), [a])
        t = Tensor(a, requires_grad=True)
        backward(t.narrow(0, 1, 2).sum())
        expected = np.zeros((4, 6))
        expected[1:3] = 1.0
        np.testing.assert_allclose(t.grad, expected)

    def test_take_rows(self):
        rng = np.random.default_rng(18)
        a = rng.normal(size=(5, 3))
        idx = np.array([0, 2, 2, 4])
        t = Tensor(a, requires_grad=True)
        out = t.take(idx)
        assert out.shape == (4, 3)
        backward(out.sum())
        counts = np.zeros((5, 1))
        counts[[0, 4]] = 1.0
        counts[2] = 2.0  # duplicated index accumulates
        np.testing.assert_allclose(t.grad, counts * np.ones((5, 3)))

    def test_take_nd_index(self):
        a = np.arange(12.0).reshape(4, 3)
        idx = np.array([[0, 1], [3, 3]])
        out = Tensor(a).take(idx)
        assert out.shape == (2, 2, 3)
        np.testing.assert_allclose(out.data[1, 1], a[3])


class TestConcatStack:
    def test_concat_grad(self):
        rng = np.random.default_rng(19)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 5))
        fd_check(lambda x, y: concat([x, y], axis=1).sum(), [a, b])

    def test_concat_values(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.zeros((2, 1)))
        out = concat([a, b], axis=1)
        assert out.shape == (2, 3)
        np.testing.assert_allclose(out.data[:, 2], 0.0)

    def test_stack_grad(self):
        rng = np.random.default_rng(20)
        a = rng.normal(size=(3,))
        b = rng.normal(size=(3,))
        w = rng.normal(size=(2, 3))
        fd_check(lambda x, y: (stack([x, y], axis=0) * Tensor(w)).sum(), [a, b], seed=20)

    def test_stack_shape(self):
        out = stack([Tensor(np.zeros((4,))), Tensor(np.ones((4,)))], axis=0)
        assert out.shape == (2, 4)


class TestCompositeGraph:
    def test_two_layer_mlp_gradient(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(5, 4))
        w1 = rng.normal(size=(4, 8)) * 0.5
        b1 = rng.normal(size=(8,)) * 0.1 + 1.0  # bias away from relu kinks
        w2 = rng.normal(size=(8, 3)) * 0.5
        y = rng.integers(0, 3, size=5)
        onehot = np.eye(3)[y]

        def loss_fn(xv, w1v, b1v, w2v):
            h = (xv @ w1v + b1v).relu()
            logits = h @ w2v
            return -(logits.log_softmax() * Tensor(onehot)).sum()

        fd_check(loss_fn, [x, w1, b1, w2], tol=1e-5)

    def test_gradients_flow_to_intermediates(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        mid = t * 3.0
        backward(mid.sum())
        assert mid.grad is not None
        np.testing.assert_allclose(mid.grad, [1.0, 1.0])
