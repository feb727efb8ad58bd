import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermocast import tensor as T
from thermocast.errors import ContractError, ShapeError
from thermocast.tensor import Tensor

from conftest import central_diff


def leaf(x):
    return Tensor(x, requires_grad=True)


class TestElementwise:
    def test_add(self):
        assert T.add(Tensor([1, 2]), Tensor([3, 4])).data.tolist() == [4, 6]

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data.tolist() == [0.5]

    def test_square_derivative(self):
        x = leaf([3.0])
        T.backward(T.reduce_sum(x * x))
        assert x.grad.tolist() == [6.0]

    def test_last_axis_broadcast(self):
        a = leaf(np.ones((2, 3)))
        b = leaf([1.0, 2.0, 3.0])
        T.backward(T.reduce_sum(a * b))
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(a.grad, [[1, 2, 3], [1, 2, 3]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match="does not broadcast"):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_relu_subgradient_at_zero(self):
        x = leaf([0.0, 1.0, -1.0])
        T.backward(T.reduce_sum(T.relu(x)))
        assert x.grad.tolist() == [0.0, 1.0, 0.0]

    @pytest.mark.parametrize("kind", ["sigmoid", "tanh", "relu", "abs"])
    def test_unary_gradients(self, kind, rng):
        x0 = rng.uniform(-2, 2, 7)
        x0[np.abs(x0) < 1e-2] = 0.5
        x = leaf(x0)
        T.backward(T.reduce_sum(T.elementwise(kind, x)))
        ref = central_diff(lambda v: T.reduce_sum(T.elementwise(kind, Tensor(v))).item(), x0)
        np.testing.assert_allclose(x.grad, ref, rtol=1e-4, atol=1e-9)

    def test_sigmoid_saturates_without_overflow(self):
        with np.errstate(all="raise"):
            out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(out))

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            T.elementwise("cube", Tensor([1.0]))


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1, 2], [3, 4]])
        np.testing.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])

    def test_small_product(self):
        out = T.matmul(Tensor([[1, 0], [0, 0]]), Tensor([[0], [5]]))
        np.testing.assert_array_equal(out.data, [[0], [0]])

    def test_inner_dimension_error(self):
        with pytest.raises(ShapeError, match="inner dimensions"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_matches_finite_differences(self, rng):
        a0, b0 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        a, b = leaf(a0), leaf(b0)
        T.backward(T.reduce_sum(T.matmul(a, b)))
        ref = central_diff(lambda v: float((v @ b0).sum()), a0)
        np.testing.assert_allclose(a.grad, ref, rtol=1e-5)
        ref_b = central_diff(lambda v: float((a0 @ v).sum()), b0)
        np.testing.assert_allclose(b.grad, ref_b, rtol=1e-5)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_inputs(self):
        with np.errstate(over="raise"):
            np.testing.assert_array_equal(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_log_three(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], rtol=1e-15)

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor([1.0, 2.0]), axis=1)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (3, 5), elements=st.floats(-50, 50)),
        st.floats(-100, 100),
    )
    def test_shift_invariance(self, x, c):
        a = T.softmax(Tensor(x), -1).data
        b = T.softmax(Tensor(x + c), -1).data
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-12)


class TestShapeOps:
    def test_concat(self):
        assert T.concat([Tensor([1, 2]), Tensor([3])], axis=0).data.tolist() == [1, 2, 3]

    def test_split(self):
        a, b = T.split(Tensor([1, 2, 3, 4]), 2)
        assert a.data.tolist() == [1, 2] and b.data.tolist() == [3, 4]

    def test_flatten_row_major(self):
        x = Tensor(np.arange(6).reshape(2, 3))
        assert T.flatten(x).data.tolist() == [0, 1, 2, 3, 4, 5]

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 3)))], axis=0)

    def test_uneven_split(self):
        with pytest.raises(ShapeError):
            T.split(Tensor([1, 2, 3]), 2)

    def test_gradients_route_back(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0])
        out = T.concat([a, b], 0) * Tensor([10.0, 20.0, 30.0])
        T.backward(T.reduce_sum(out))
        assert a.grad.tolist() == [10.0, 20.0] and b.grad.tolist() == [30.0]

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-1e6, 1e6)))
    def test_bijections(self, x):
        t = Tensor(x)
        np.testing.assert_array_equal(T.transpose_last_two(T.transpose_last_two(t)).data, x)
        np.testing.assert_array_equal(T.reshape(T.flatten(t), x.shape).data, x)
        parts = T.split(t, [1], axis=2)
        np.testing.assert_array_equal(T.concat(parts, axis=2).data, x)


class TestReduce:
    def test_mean(self):
        assert T.reduce_mean(Tensor([1.0, 2.0, 3.0])).item() == 2.0

    def test_l2norm(self):
        assert abs(T.l2norm(Tensor([3.0, 4.0])).item() - 5.0) < 1e-8

    def test_sum_gradient_is_one(self):
        x = leaf(np.arange(5.0))
        T.backward(T.reduce_sum(x))
        assert x.grad.tolist() == [1.0] * 5

    def test_l2norm_gradient_finite_at_zero(self):
        x = leaf(np.zeros(4))
        T.backward(T.l2norm(x))
        assert np.all(np.isfinite(x.grad))

    def test_reduce_dispatch(self):
        assert T.reduce("sum", Tensor([[1.0, 2.0], [3.0, 4.0]]), axis=0).data.tolist() == [4.0, 6.0]


class TestBackward:
    def test_linear(self):
        x = leaf([2.0])
        T.backward(T.reduce_sum(x * 3.0))
        assert x.grad.tolist() == [3.0]

    def test_sigmoid_slope(self):
        x = leaf([0.0])
        T.backward(T.reduce_sum(T.sigmoid(x)))
        assert x.grad.tolist() == [0.25]

    def test_non_scalar_root(self):
        with pytest.raises(ContractError, match="scalar"):
            T.backward(leaf([1.0, 2.0]) * 2.0)

    def test_tape_order_and_single_visit(self):
        x = leaf([1.5])
        y = x * x
        z = y + y
        tape = T.Tape.from_root(T.reduce_sum(z))
        ids = [id(n) for n in tape.nodes]
        assert len(ids) == len(set(ids))
        assert ids.index(id(x)) < ids.index(id(y)) < ids.index(id(z))

    def test_graph_released(self):
        x = leaf([1.0])
        y = T.reduce_sum(x * 2.0)
        T.backward(y)
        assert y._parents == ()

    @pytest.mark.parametrize("seed", range(10))
    def test_mlp_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(-2, 2, (4, 3))
        w1, b1 = rng.uniform(-2, 2, (3, 5)), rng.uniform(-2, 2, 5)
        w2 = rng.uniform(-2, 2, (5, 1))
        y0 = rng.uniform(-2, 2, (4, 1))

        def loss(w1_):
            h = T.tanh(T.matmul(Tensor(x0), w1_) + Tensor(b1))
            return T.reduce_mean(T.absolute(T.matmul(T.sigmoid(h), Tensor(w2)) - Tensor(y0)))

        w = leaf(w1)
        T.backward(loss(w))
        ref = central_diff(lambda v: loss(Tensor(v)).item(), w1)
        np.testing.assert_allclose(w.grad, ref, rtol=1e-4, atol=1e-10)

    def test_gradient_linearity(self, rng):
        x0 = rng.normal(size=(3, 3))

        def f(x):
            return T.reduce_sum(T.tanh(T.matmul(x, x)))

        def g(x):
            return T.reduce_sum(T.softmax(x, -1) * x)

        a, b, c = leaf(x0), leaf(x0), leaf(x0)
        T.backward(f(a))
        T.backward(g(b))
        T.backward(f(c) + g(c))
        np.testing.assert_allclose(c.grad, a.grad + b.grad, rtol=1e-12)

    def test_fault_injection_scales_gradients(self):
        x = leaf([2.0])
        with T.inject_gradient_fault("mul", 2.0):
            T.backward(T.reduce_sum(x * 3.0))
        assert x.grad.tolist() == [6.0]

    def test_no_grad(self):
        x = leaf([1.0])
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad


def test_take_rows_scatters(rng):
    table = leaf(rng.normal(size=(4, 2)))
    T.backward(T.reduce_sum(T.take_rows(table, [1, 1, 3])))
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])
    with pytest.raises(IndexError):
        T.take_rows(table, [4])
